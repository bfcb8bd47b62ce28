//! Spectral graph processing: eigendecomposition of symmetric Laplacians,
//! the graph Fourier transform pair, direct spectral filtering, and the
//! Chebyshev / first-order approximations that avoid eigendecomposition
//! entirely.

use crate::dense::DenseMatrix;
use crate::graph::{Graph, GraphError};
use crate::sparse::CsrMatrix;
use crate::Activation;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Default cap on matrix size for dense eigendecomposition.
pub const DEFAULT_EIGEN_CAP: usize = 3000;
/// Jacobi sweeps stop when the off-diagonal Frobenius norm falls below this
/// fraction of the matrix norm (or absolutely, for tiny matrices).
pub const JACOBI_OFF_DIAG_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric within {tol} (max asymmetry {max_asym})")]
    NotSymmetric { tol: f64, max_asym: f64 },
    #[error("matrix size {n} exceeds eigendecomposition cap {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error(
        "Jacobi iteration failed to converge within {sweeps} sweeps (off-diagonal norm {off})"
    )]
    NoConvergence { sweeps: usize, off: f64 },
    #[error("signal length {got} does not match vertex count {expected}")]
    SignalLength { got: usize, expected: usize },
    #[error("filter has {got} coefficients, expected {expected}")]
    FilterLength { got: usize, expected: usize },
    #[error("Chebyshev filter needs at least one coefficient")]
    EmptyFilter,
    #[error("spectral layer got {got} filters for input channel count {expected}")]
    FilterBankShape { got: usize, expected: usize },
    #[error("power iteration did not converge within {iters} iterations")]
    PowerIterationDiverged { iters: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A vertex-indexed signal: one finite value per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal {
    values: Vec<f64>,
}

impl GraphSignal {
    pub fn new(values: Vec<f64>) -> Result<Self, SpectralError> {
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SpectralError::SignalLength {
                    got: i,
                    expected: values.len(),
                });
            }
        }
        Ok(GraphSignal { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Eigendecomposition of a symmetric matrix: ascending eigenvalues and the
/// matching orthonormal eigenvector columns.
///
/// Sign convention: each eigenvector's first component of magnitude above
/// 1e-12 is made positive, so decompositions are reproducible across runs.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    eigenvalues: Vec<f64>,
    /// n x n matrix whose column k is the eigenvector for eigenvalue k.
    eigenvectors: DenseMatrix,
}

impl Eigensystem {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DenseMatrix {
        &self.eigenvectors
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Reconstructs `U diag(lambda) U^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.n();
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for r in 0..n {
            for c in 0..n {
                scaled.set(r, c, u.get(r, c) * self.eigenvalues[c]);
            }
        }
        scaled
            .matmul(&u.transpose())
            .expect("square matrices multiply")
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn eigensystem(m: &DenseMatrix) -> Result<Eigensystem, SpectralError> {
    eigensystem_with_cap(m, DEFAULT_EIGEN_CAP)
}

pub fn eigensystem_with_cap(m: &DenseMatrix, cap: usize) -> Result<Eigensystem, SpectralError> {
    if m.rows() != m.cols() {
        return Err(SpectralError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    if n > cap {
        return Err(SpectralError::TooLarge { n, cap });
    }
    let sym_tol = 1e-10 * m.frobenius_norm().max(1.0);
    let mut max_asym: f64 = 0.0;
    for r in 0..n {
        for c in (r + 1)..n {
            max_asym = max_asym.max((m.get(r, c) - m.get(c, r)).abs());
        }
    }
    if max_asym > sym_tol {
        return Err(SpectralError::NotSymmetric {
            tol: sym_tol,
            max_asym,
        });
    }

    let mut a = m.clone();
    let mut u = DenseMatrix::identity(n);
    let norm = m.frobenius_norm().max(1.0);
    let target = JACOBI_OFF_DIAG_TOL * norm;

    let mut off = off_diag_norm(&a);
    let mut sweeps = 0;
    while off > target {
        if sweeps >= JACOBI_MAX_SWEEPS {
            return Err(SpectralError::NoConvergence { sweeps, off });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                // Classic Jacobi rotation annihilating a[p][q].
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(&mut a, p, q, c, s);
                // Accumulate the rotation into the eigenvector matrix.
                for r in 0..n {
                    let urp = u.get(r, p);
                    let urq = u.get(r, q);
                    u.set(r, p, c * urp - s * urq);
                    u.set(r, q, s * urp + c * urq);
                }
            }
        }
        off = off_diag_norm(&a);
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut eigenvectors = DenseMatrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        let mut sign = 1.0;
        for r in 0..n {
            let v = u.get(r, old_col);
            if v.abs() > 1e-12 {
                sign = if v < 0.0 { -1.0 } else { 1.0 };
                break;
            }
        }
        for r in 0..n {
            eigenvectors.set(r, new_col, sign * u.get(r, old_col));
        }
    }
    Ok(Eigensystem {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diag_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for r in 0..n {
        for c in (r + 1)..n {
            let v = a.get(r, c);
            s += 2.0 * v * v;
        }
    }
    s.sqrt()
}

/// Applies the symmetric Jacobi rotation with cosine `c`, sine `s` on the
/// (p, q) plane to `a` in place.
fn rotate(a: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let apq = a.get(p, q);
    a.set(p, p, c * c * app - 2.0 * s * c * apq + s * s * aqq);
    a.set(q, q, s * s * app + 2.0 * s * c * apq + c * c * aqq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for r in 0..n {
        if r != p && r != q {
            let arp = a.get(r, p);
            let arq = a.get(r, q);
            a.set(r, p, c * arp - s * arq);
            a.set(p, r, c * arp - s * arq);
            a.set(r, q, s * arp + c * arq);
            a.set(q, r, s * arp + c * arq);
        }
    }
}

/// Graph Fourier transform: projects a vertex signal onto the eigenbasis,
/// `fhat = U^T f`.
pub fn gft(eig: &Eigensystem, f: &GraphSignal) -> Result<GraphSignal, SpectralError> {
    if f.len() != eig.n() {
        return Err(SpectralError::SignalLength {
            got: f.len(),
            expected: eig.n(),
        });
    }
    let ut = eig.eigenvectors.transpose();
    GraphSignal::new(ut.matvec(f.values()).expect("dimensions checked"))
}

/// Inverse graph Fourier transform, `f = U fhat`.
pub fn igft(eig: &Eigensystem, fhat: &GraphSignal) -> Result<GraphSignal, SpectralError> {
    if fhat.len() != eig.n() {
        return Err(SpectralError::SignalLength {
            got: fhat.len(),
            expected: eig.n(),
        });
    }
    GraphSignal::new(
        eig.eigenvectors
            .matvec(fhat.values())
            .expect("dimensions checked"),
    )
}

/// Filters a signal in the spectral domain: `U diag(ghat) U^T f`.
pub fn spectral_convolve(
    eig: &Eigensystem,
    ghat: &[f64],
    f: &GraphSignal,
) -> Result<GraphSignal, SpectralError> {
    if ghat.len() != eig.n() {
        return Err(SpectralError::FilterLength {
            got: ghat.len(),
            expected: eig.n(),
        });
    }
    let fhat = gft(eig, f)?;
    let filtered: Vec<f64> = fhat.values().iter().zip(ghat).map(|(a, g)| a * g).collect();
    igft(eig, &GraphSignal::new(filtered)?)
}

/// One spectral layer: every output channel `j` sums filtered copies of
/// every input channel `i` with its own spectral filter, then applies the
/// activation. `filters[j][i]` holds the n diagonal filter coefficients.
pub fn spectral_layer_forward(
    eig: &Eigensystem,
    h: &DenseMatrix,
    filters: &[Vec<Vec<f64>>],
    activation: Activation,
) -> Result<DenseMatrix, SpectralError> {
    let n = eig.n();
    if h.rows() != n {
        return Err(SpectralError::SignalLength {
            got: h.rows(),
            expected: n,
        });
    }
    let f_in = h.cols();
    let f_out = filters.len();
    let mut out = DenseMatrix::zeros(n, f_out);
    for (j, bank) in filters.iter().enumerate() {
        if bank.len() != f_in {
            return Err(SpectralError::FilterBankShape {
                got: bank.len(),
                expected: f_in,
            });
        }
        let mut acc = vec![0.0; n];
        for (i, ghat) in bank.iter().enumerate() {
            let col: Vec<f64> = (0..n).map(|r| h.get(r, i)).collect();
            let filtered = spectral_convolve(eig, ghat, &GraphSignal::new(col)?)?;
            for (a, v) in acc.iter_mut().zip(filtered.values()) {
                *a += v;
            }
        }
        for (r, v) in acc.into_iter().enumerate() {
            out.set(r, j, activation.apply(v));
        }
    }
    Ok(out)
}

/// Largest eigenvalue of a symmetric matrix by power iteration with a
/// deterministic pseudo-random start vector.
pub fn power_iteration_lambda_max(m: &DenseMatrix) -> Result<f64, SpectralError> {
    if m.rows() != m.cols() {
        return Err(SpectralError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        x[0] = 1.0;
    } else {
        for v in &mut x {
            *v /= norm;
        }
    }
    const MAX_ITERS: usize = 10_000;
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        let y = m.matvec(&x).expect("square");
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ynorm == 0.0 {
            // x is in the null space and the matrix may be zero; the
            // Rayleigh quotient is 0 which is the top eigenvalue iff m = 0.
            return Ok(0.0);
        }
        let mut num = 0.0;
        for (a, b) in x.iter().zip(&y) {
            num += a * b;
        }
        let new_lambda = num; // x is unit: Rayleigh quotient
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ynorm;
        }
        if (new_lambda - lambda).abs() <= 1e-8 * new_lambda.abs().max(1.0) && lambda != 0.0 {
            return Ok(new_lambda);
        }
        lambda = new_lambda;
    }
    Err(SpectralError::PowerIterationDiverged { iters: MAX_ITERS })
}

/// Chebyshev polynomial filter: `sum_k coeffs[k] T_k(Lscaled) f` where
/// `Lscaled = 2 L / lambda_max - I`. When `lambda_max` is `None` it is
/// estimated by power iteration.
pub fn cheb_filter(
    l: &DenseMatrix,
    coeffs: &[f64],
    f: &GraphSignal,
    lambda_max: Option<f64>,
) -> Result<GraphSignal, SpectralError> {
    if coeffs.is_empty() {
        return Err(SpectralError::EmptyFilter);
    }
    if l.rows() != l.cols() {
        return Err(SpectralError::NotSquare {
            rows: l.rows(),
            cols: l.cols(),
        });
    }
    if f.len() != l.rows() {
        return Err(SpectralError::SignalLength {
            got: f.len(),
            expected: l.rows(),
        });
    }
    let lmax = match lambda_max {
        Some(v) => v,
        None => power_iteration_lambda_max(l)?,
    };
    // A zero matrix has lambda_max 0; fall back to scale 1 so Lscaled = -I.
    let scale = if lmax.abs() < 1e-300 { 1.0 } else { 2.0 / lmax };
    let n = l.rows();
    let lscaled_apply = |x: &[f64]| -> Vec<f64> {
        let lx = l.matvec(x).expect("square");
        lx.iter().zip(x).map(|(a, b)| scale * a - b).collect()
    };
    // Three-term recurrence on vectors: T_0 f = f, T_1 f = Lscaled f,
    // T_k f = 2 Lscaled T_{k-1} f - T_{k-2} f.
    let mut t_prev = f.values().to_vec();
    let mut out = vec![0.0; n];
    for (o, v) in out.iter_mut().zip(&t_prev) {
        *o += coeffs[0] * v;
    }
    if coeffs.len() == 1 {
        return GraphSignal::new(out);
    }
    let mut t_cur = lscaled_apply(&t_prev);
    for (o, v) in out.iter_mut().zip(&t_cur) {
        *o += coeffs[1] * v;
    }
    for &c in &coeffs[2..] {
        let lt = lscaled_apply(&t_cur);
        let t_next: Vec<f64> = lt.iter().zip(&t_prev).map(|(a, b)| 2.0 * a - b).collect();
        for (o, v) in out.iter_mut().zip(&t_next) {
            *o += c * v;
        }
        t_prev = t_cur;
        t_cur = t_next;
    }
    GraphSignal::new(out)
}

/// First-order graph convolution operator `Dt^{-1/2} (A + I) Dt^{-1/2}`
/// where `Dt` is the degree matrix of `A + I` (the renormalization trick).
pub fn gcn_norm_adjacency(g: &Graph) -> CsrMatrix {
    let n = g.num_vertices();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * g.num_edges() + n);
    let mut deg = vec![1.0f64; n]; // the added self-loop
    for (idx, &(u, v)) in g.edges().iter().enumerate() {
        let w = g.edge_weight(idx);
        if u == v {
            deg[u] += w;
        } else {
            deg[u] += w;
            deg[v] += w;
        }
    }
    for (idx, &(u, v)) in g.edges().iter().enumerate() {
        let w = g.edge_weight(idx);
        if u == v {
            triplets.push((u, v, w / deg[u]));
        } else {
            let norm = w / (deg[u] * deg[v]).sqrt();
            triplets.push((u, v, norm));
            triplets.push((v, u, norm));
        }
    }
    for (i, &d) in deg.iter().enumerate() {
        // The self-loop added by the trick, normalized like any other edge.
        triplets.push((i, i, 1.0 / d));
    }
    CsrMatrix::from_triplets(n, n, &triplets).expect("triplets are in range")
}
