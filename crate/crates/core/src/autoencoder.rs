//! Graph autoencoders for link prediction: a two-layer convolutional
//! encoder (deterministic or variational), the inner-product decoder, and
//! the weighted reconstruction / KL losses.
//!
//! Losses exist in three forms that must agree: plain reference functions
//! on materialized matrices (used by tests and small-scale evaluation),
//! tape compositions built from elementary ops, and a fused streaming op
//! that never materializes the N x N reconstruction (needed for
//! citation-scale graphs).

use crate::dense::DenseMatrix;
use crate::layers::{gcn_layer, FeatureInput, LayerError};
use crate::sparse::CsrMatrix;
use crate::tape::{CustomOp, Shape, Tape, TapeError, TensorId};
use crate::Activation;
use rayon::prelude::*;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AeError {
    #[error("reconstruction entry at ({row}, {col}) is {value}, outside (0, 1)")]
    EntryOutsideUnitInterval { row: usize, col: usize, value: f64 },
    #[error("reconstruction matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("{what} has shape {got_rows}x{got_cols}, expected {exp_rows}x{exp_cols}")]
    BadShape {
        what: &'static str,
        got_rows: usize,
        got_cols: usize,
        exp_rows: usize,
        exp_cols: usize,
    },
    #[error("positive count {positives} must be in 1..{total}")]
    BadPositiveCount { positives: usize, total: usize },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

type Result<T> = std::result::Result<T, AeError>;

// ----------------------------------------------------------------------
// Encoders
// ----------------------------------------------------------------------

/// Deterministic encoder: `Z = Anorm relu(Anorm X W1) W2`.
pub fn gae_encode(
    tape: &mut Tape,
    anorm: &Arc<CsrMatrix>,
    x: FeatureInput,
    w1: TensorId,
    w2: TensorId,
) -> Result<TensorId> {
    let h1 = gcn_layer(tape, anorm, x, w1, Activation::Relu)?;
    Ok(gcn_layer(
        tape,
        anorm,
        FeatureInput::Dense(h1),
        w2,
        Activation::Identity,
    )?)
}

/// Variational encoder output: the sampled code plus the Gaussian
/// parameters it was drawn from.
pub struct VgaeHeads {
    pub z: TensorId,
    pub mu: TensorId,
    pub logvar: TensorId,
}

/// Log-variances are clamped to this symmetric range before
/// exponentiation so a stray step cannot overflow the reparameterization.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Variational encoder: a shared first layer, separate mean and
/// log-variance heads, and the reparameterization `z = mu + exp(lv/2) * eps`
/// with caller-supplied standard-normal noise (pass zeros to get `z = mu`).
pub fn vgae_encode(
    tape: &mut Tape,
    anorm: &Arc<CsrMatrix>,
    x: FeatureInput,
    w1: TensorId,
    w_mu: TensorId,
    w_logvar: TensorId,
    noise: TensorId,
) -> Result<VgaeHeads> {
    let h1 = gcn_layer(tape, anorm, x, w1, Activation::Relu)?;
    let mu = gcn_layer(
        tape,
        anorm,
        FeatureInput::Dense(h1),
        w_mu,
        Activation::Identity,
    )?;
    let lv_raw = gcn_layer(
        tape,
        anorm,
        FeatureInput::Dense(h1),
        w_logvar,
        Activation::Identity,
    )?;
    let logvar = tape.clamp(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
    let sm = tape.shape(mu);
    let sn = tape.shape(noise);
    if sm != sn {
        return Err(AeError::BadShape {
            what: "noise",
            got_rows: sn.rows,
            got_cols: sn.cols,
            exp_rows: sm.rows,
            exp_cols: sm.cols,
        });
    }
    let half_lv = tape.affine(logvar, 0.5, 0.0)?;
    let std = tape.exp(half_lv)?;
    let scaled_noise = tape.elem_mul(std, noise)?;
    let z = tape.add(mu, scaled_noise)?;
    Ok(VgaeHeads { z, mu, logvar })
}

// ----------------------------------------------------------------------
// Decoder
// ----------------------------------------------------------------------

/// Edge-probability matrix produced by the inner-product decoder; entries
/// are validated to lie strictly inside (0, 1) and be symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedAdjacency {
    ahat: DenseMatrix,
}

impl ReconstructedAdjacency {
    pub fn new(ahat: DenseMatrix) -> Result<Self> {
        for r in 0..ahat.rows() {
            for c in 0..ahat.cols() {
                let v = ahat.get(r, c);
                if !(v > 0.0 && v < 1.0) {
                    return Err(AeError::EntryOutsideUnitInterval {
                        row: r,
                        col: c,
                        value: v,
                    });
                }
            }
        }
        for r in 0..ahat.rows() {
            for c in (r + 1)..ahat.cols() {
                if ahat.get(r, c) != ahat.get(c, r) {
                    return Err(AeError::NotSymmetric { row: r, col: c });
                }
            }
        }
        Ok(ReconstructedAdjacency { ahat })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.ahat
    }
}

/// Probability that an edge connects the two embedded vertices:
/// `sigma(z_u . z_v)`, squeezed away from exact 0/1 so logs stay finite.
pub fn edge_probability(z: &DenseMatrix, u: usize, v: usize) -> f64 {
    let mut dot = 0.0;
    for (a, b) in z.row(u).iter().zip(z.row(v)) {
        dot += a * b;
    }
    let p = 1.0 / (1.0 + (-dot).exp());
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// Inner-product decoder: `Ahat = sigma(Z Z^T)` applied entrywise.
pub fn inner_product_decode(z: &DenseMatrix) -> Result<ReconstructedAdjacency> {
    let n = z.rows();
    let mut ahat = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            ahat.set(i, j, edge_probability(z, i, j));
        }
    }
    ReconstructedAdjacency::new(ahat)
}

/// Tape version of the decoder for small graphs: `sigmoid(Z Z^T)`.
pub fn decode_on_tape(tape: &mut Tape, z: TensorId) -> Result<TensorId> {
    let zt = tape.transpose(z)?;
    let logits = tape.matmul(z, zt)?;
    Ok(tape.sigmoid(logits)?)
}

// ----------------------------------------------------------------------
// Losses (reference forms)
// ----------------------------------------------------------------------

/// Weight to give positive entries so sparse graphs don't collapse to the
/// all-zero reconstruction: `(N^2 - positives) / positives`.
pub fn positive_weight(n: usize, positives: usize) -> Result<f64> {
    let total = n * n;
    if positives == 0 || positives >= total {
        return Err(AeError::BadPositiveCount { positives, total });
    }
    Ok((total - positives) as f64 / positives as f64)
}

/// Weighted binary cross-entropy between a reconstruction and a 0/1 target
/// adjacency, averaged over all N^2 entries; positives are weighted by
/// `pos_weight`.
pub fn gae_loss(
    ahat: &ReconstructedAdjacency,
    target: &DenseMatrix,
    pos_weight: f64,
) -> Result<f64> {
    let m = ahat.matrix();
    if m.rows() != target.rows() || m.cols() != target.cols() {
        return Err(AeError::BadShape {
            what: "target",
            got_rows: target.rows(),
            got_cols: target.cols(),
            exp_rows: m.rows(),
            exp_cols: m.cols(),
        });
    }
    let mut total = 0.0;
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let p = m.get(r, c);
            let y = target.get(r, c);
            total -= if y > 0.5 {
                pos_weight * p.ln()
            } else {
                (1.0 - p).ln()
            };
        }
    }
    Ok(total / (m.rows() * m.cols()) as f64)
}

/// Mean per-vertex KL divergence from the encoded Gaussians to the
/// standard normal: `(1/N) sum_i 1/2 sum_d (mu^2 + e^lv - lv - 1)`.
/// Always non-negative.
pub fn kl_divergence(mu: &DenseMatrix, logvar: &DenseMatrix) -> Result<f64> {
    if mu.rows() != logvar.rows() || mu.cols() != logvar.cols() {
        return Err(AeError::BadShape {
            what: "logvar",
            got_rows: logvar.rows(),
            got_cols: logvar.cols(),
            exp_rows: mu.rows(),
            exp_cols: mu.cols(),
        });
    }
    let mut total = 0.0;
    for (m, lv) in mu.data().iter().zip(logvar.data()) {
        total += m * m + lv.exp() - lv - 1.0;
    }
    Ok(0.5 * total / mu.rows() as f64)
}

/// Variational loss: reconstruction plus KL.
pub fn vgae_loss(
    ahat: &ReconstructedAdjacency,
    target: &DenseMatrix,
    mu: &DenseMatrix,
    logvar: &DenseMatrix,
    pos_weight: f64,
) -> Result<f64> {
    Ok(gae_loss(ahat, target, pos_weight)? + kl_divergence(mu, logvar)?)
}

// ----------------------------------------------------------------------
// Losses (tape forms)
// ----------------------------------------------------------------------

/// Composed-op reconstruction loss for small graphs: decodes the full
/// matrix on the tape and applies weighted BCE against the target (which
/// must contain self-loops if the caller wants the usual `A + I` target).
pub fn recon_loss_dense(
    tape: &mut Tape,
    z: TensorId,
    target: &DenseMatrix,
    pos_weight: f64,
) -> Result<TensorId> {
    let n = tape.shape(z).rows;
    if target.rows() != n || target.cols() != n {
        return Err(AeError::BadShape {
            what: "target",
            got_rows: target.rows(),
            got_cols: target.cols(),
            exp_rows: n,
            exp_cols: n,
        });
    }
    let ahat = decode_on_tape(tape, z)?;
    let y = tape.constant(Shape::new(n, n), target.data().to_vec())?;
    let one_minus_y: Vec<f64> = target.data().iter().map(|v| 1.0 - v).collect();
    let y_neg = tape.constant(Shape::new(n, n), one_minus_y)?;
    let ln_p = tape.log(ahat)?;
    let one_minus_p = tape.affine(ahat, -1.0, 1.0)?;
    let ln_q = tape.log(one_minus_p)?;
    let pos_term = tape.elem_mul(y, ln_p)?;
    let pos_weighted = tape.affine(pos_term, pos_weight, 0.0)?;
    let neg_term = tape.elem_mul(y_neg, ln_q)?;
    let combined = tape.add(pos_weighted, neg_term)?;
    let total = tape.sum_all(combined)?;
    Ok(tape.affine(total, -1.0 / (n * n) as f64, 0.0)?)
}

/// KL divergence as a tape composition over the [N, d] Gaussian heads.
pub fn kl_on_tape(tape: &mut Tape, mu: TensorId, logvar: TensorId) -> Result<TensorId> {
    let n = tape.shape(mu).rows;
    let mu_sq = tape.elem_mul(mu, mu)?;
    let e_lv = tape.exp(logvar)?;
    let neg_lv = tape.affine(logvar, -1.0, -1.0)?;
    let s1 = tape.add(mu_sq, e_lv)?;
    let s2 = tape.add(s1, neg_lv)?;
    let total = tape.sum_all(s2)?;
    Ok(tape.affine(total, 0.5 / n as f64, 0.0)?)
}

/// Stable softplus `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sorted positive-target columns per row: the train edges in both
/// directions plus the diagonal (the usual `A + I` reconstruction target).
#[derive(Debug)]
pub struct AdjacencyTargets {
    n: usize,
    pos: Vec<Vec<usize>>,
}

impl AdjacencyTargets {
    /// Builds from canonical undirected edges; the diagonal is always
    /// positive.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut pos: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(u, v) in edges {
            if u != v {
                pos[u].push(v);
                pos[v].push(u);
            }
        }
        for row in &mut pos {
            row.sort_unstable();
            row.dedup();
        }
        AdjacencyTargets { n, pos }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn positive_count(&self) -> usize {
        self.pos.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.n, self.n);
        for (i, row) in self.pos.iter().enumerate() {
            for &j in row {
                t.set(i, j, 1.0);
            }
        }
        t
    }
}

/// Fused reconstruction loss that streams over all vertex pairs without
/// materializing the N x N reconstruction; forward recomputes row by row
/// (in parallel, with a fixed reduction order so results are
/// bit-deterministic) and backward uses
/// `d loss / d z_i = 2 sum_j g_ij z_j`.
#[derive(Debug)]
struct StreamingReconLoss {
    targets: Arc<AdjacencyTargets>,
    pos_weight: f64,
}

impl StreamingReconLoss {
    fn row_loss(&self, z: &[f64], d: usize, i: usize) -> f64 {
        let n = self.targets.n;
        let zi = &z[i * d..(i + 1) * d];
        let pos_row = &self.targets.pos[i];
        let mut next_pos = 0usize;
        let mut acc = 0.0;
        for j in 0..n {
            let zj = &z[j * d..(j + 1) * d];
            let mut dot = 0.0;
            for (a, b) in zi.iter().zip(zj) {
                dot += a * b;
            }
            let is_pos = next_pos < pos_row.len() && pos_row[next_pos] == j;
            if is_pos {
                next_pos += 1;
                acc += self.pos_weight * softplus(-dot);
            } else {
                acc += softplus(dot);
            }
        }
        acc
    }

    fn row_grad(&self, z: &[f64], d: usize, i: usize, scale: f64) -> Vec<f64> {
        let n = self.targets.n;
        let zi = &z[i * d..(i + 1) * d];
        let pos_row = &self.targets.pos[i];
        let mut next_pos = 0usize;
        let mut grad = vec![0.0; d];
        for j in 0..n {
            let zj = &z[j * d..(j + 1) * d];
            let mut dot = 0.0;
            for (a, b) in zi.iter().zip(zj) {
                dot += a * b;
            }
            let is_pos = next_pos < pos_row.len() && pos_row[next_pos] == j;
            let g = if is_pos {
                next_pos += 1;
                self.pos_weight * (sigmoid(dot) - 1.0)
            } else {
                sigmoid(dot)
            };
            let coeff = 2.0 * scale * g;
            for (o, b) in grad.iter_mut().zip(zj) {
                *o += coeff * b;
            }
        }
        grad
    }
}

impl CustomOp for StreamingReconLoss {
    fn name(&self) -> &'static str {
        "streaming_recon_loss"
    }

    fn backward(
        &self,
        inputs: &[(&[f64], Shape)],
        _output: &[f64],
        out_grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let (z, shape) = inputs[0];
        let n = self.targets.n;
        let d = shape.cols;
        let scale = out_grad[0] / (n * n) as f64;
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| self.row_grad(z, d, i, scale))
            .collect();
        let mut grad = Vec::with_capacity(n * d);
        for row in rows {
            grad.extend(row);
        }
        vec![Some(grad)]
    }
}

/// Appends the streaming reconstruction loss node for `z` against the
/// given targets. Numerically this equals [`recon_loss_dense`] (it uses the
/// softplus form of the same weighted BCE) but uses O(N d) memory.
pub fn recon_loss_streaming(
    tape: &mut Tape,
    z: TensorId,
    targets: &Arc<AdjacencyTargets>,
    pos_weight: f64,
) -> Result<TensorId> {
    let shape = tape.shape(z);
    if shape.rows != targets.n {
        return Err(AeError::BadShape {
            what: "z",
            got_rows: shape.rows,
            got_cols: shape.cols,
            exp_rows: targets.n,
            exp_cols: shape.cols,
        });
    }
    let op = StreamingReconLoss {
        targets: Arc::clone(targets),
        pos_weight,
    };
    let zv = tape.value(z);
    let n = targets.n;
    let d = shape.cols;
    let row_losses: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| op.row_loss(zv, d, i))
        .collect();
    let loss = row_losses.iter().sum::<f64>() / (n * n) as f64;
    Ok(tape.custom(Box::new(op), &[z], Shape::scalar(), vec![loss])?)
}

// ----------------------------------------------------------------------
// Embedding export
// ----------------------------------------------------------------------

/// Final embeddings of a trained autoencoder; variational models also
/// carry the Gaussian parameters.
#[derive(Debug, Clone)]
pub struct LatentEmbedding {
    pub z: DenseMatrix,
    pub mu: Option<DenseMatrix>,
    pub logvar: Option<DenseMatrix>,
}

/// Writes embeddings as CSV with header `vertex_id,dim_0,...,dim_{d-1}`.
pub fn export_embeddings_csv(path: &std::path::Path, emb: &LatentEmbedding) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = emb.z.cols();
    let mut header = String::from("vertex_id");
    for k in 0..d {
        header.push_str(&format!(",dim_{k}"));
    }
    writeln!(f, "{header}")?;
    for r in 0..emb.z.rows() {
        let mut line = r.to_string();
        for c in 0..d {
            line.push_str(&format!(",{}", emb.z.get(r, c)));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::spectral::gcn_norm_adjacency;

    #[test]
    fn decoder_known_values_and_symmetry() {
        let z = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let rec = inner_product_decode(&z).unwrap();
        let m = rec.matrix();
        // z_0 . z_1 = 0 -> sigma(0) = 1/2; z_0 . z_2 = 1 -> sigma(1).
        assert!((m.get(0, 1) - 0.5).abs() < 1e-15);
        assert!((m.get(0, 2) - 0.731_058_578_630_004_9).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn reconstruction_rejects_out_of_range() {
        let m = DenseMatrix::from_rows(&[vec![0.5, 1.0], vec![1.0, 0.5]]).unwrap();
        assert!(matches!(
            ReconstructedAdjacency::new(m),
            Err(AeError::EntryOutsideUnitInterval { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn gae_loss_uniform_half_is_ln2() {
        // Zero embeddings decode to 1/2 everywhere; with pos_weight 1 and
        // any 0/1 target the weighted BCE is exactly ln 2.
        let z = DenseMatrix::zeros(3, 2);
        let rec = inner_product_decode(&z).unwrap();
        let target = DenseMatrix::identity(3);
        let loss = gae_loss(&rec, &target, 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        // Weighting positives by 3: the 3 diagonal entries triple, so the
        // mean becomes (3*3 + 6) * ln2 / 9.
        let loss_w = gae_loss(&rec, &target, 3.0).unwrap();
        assert!((loss_w - (15.0 / 9.0) * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kl_reference_values() {
        let zero = DenseMatrix::zeros(2, 3);
        assert_eq!(kl_divergence(&zero, &zero).unwrap(), 0.0);
        // Single vertex, single dim, mu=1, logvar=0: KL = 1/2.
        let mu = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let lv = DenseMatrix::zeros(1, 1);
        assert!((kl_divergence(&mu, &lv).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_non_negative_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let data: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let lv: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            let mu = DenseMatrix::from_vec(4, 3, data).unwrap();
            let logvar = DenseMatrix::from_vec(4, 3, lv).unwrap();
            assert!(kl_divergence(&mu, &logvar).unwrap() >= 0.0);
        }
    }

    #[test]
    fn positive_weight_matches_formula() {
        // N = 4, 8 positives: (16 - 8) / 8 = 1.
        assert_eq!(positive_weight(4, 8).unwrap(), 1.0);
        assert!(positive_weight(4, 0).is_err());
        assert!(positive_weight(4, 16).is_err());
    }

    #[test]
    fn streaming_loss_matches_dense_composition() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 7;
        let d = 3;
        let edges = [
            (0usize, 1usize),
            (1, 2),
            (2, 3),
            (3, 4),
            (4, 5),
            (5, 6),
            (0, 6),
            (2, 5),
        ];
        let targets = Arc::new(AdjacencyTargets::from_edges(n, &edges));
        let pw = positive_weight(n, targets.positive_count()).unwrap();
        let zdata: Vec<f64> = (0..n * d)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();

        let mut tape = Tape::new();
        let z1 = tape.leaf(Shape::new(n, d), zdata.clone(), true).unwrap();
        let dense_loss = recon_loss_dense(&mut tape, z1, &targets.to_dense(), pw).unwrap();
        tape.backward(dense_loss).unwrap();
        let dense_val = tape.value(dense_loss)[0];
        let dense_grad = tape.grad(z1).unwrap().to_vec();

        let mut tape2 = Tape::new();
        let z2 = tape2.leaf(Shape::new(n, d), zdata, true).unwrap();
        let stream_loss = recon_loss_streaming(&mut tape2, z2, &targets, pw).unwrap();
        tape2.backward(stream_loss).unwrap();
        let stream_val = tape2.value(stream_loss)[0];
        let stream_grad = tape2.grad(z2).unwrap();

        assert!(
            (dense_val - stream_val).abs() < 1e-10,
            "{dense_val} vs {stream_val}"
        );
        for (a, b) in dense_grad.iter().zip(stream_grad) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn vgae_reparameterization() {
        let g = Graph::undirected(3, &[(0, 1), (1, 2)]).unwrap();
        let anorm = Arc::new(gcn_norm_adjacency(&g));
        let x = Arc::new(CsrMatrix::from_dense(&DenseMatrix::identity(3)));
        let build = |noise: Vec<f64>| {
            let mut tape = Tape::new();
            let w1 = tape.leaf(Shape::new(3, 4), vec![0.2; 12], true).unwrap();
            let wm = tape.leaf(Shape::new(4, 2), vec![0.3; 8], true).unwrap();
            let wl = tape.leaf(Shape::new(4, 2), vec![-0.1; 8], true).unwrap();
            let nz = tape.constant(Shape::new(3, 2), noise).unwrap();
            let heads =
                vgae_encode(&mut tape, &anorm, FeatureInput::Sparse(&x), w1, wm, wl, nz).unwrap();
            (
                tape.value(heads.z).to_vec(),
                tape.value(heads.mu).to_vec(),
                tape.value(heads.logvar).to_vec(),
            )
        };
        // Zero noise: z = mu exactly.
        let (z0, mu0, lv0) = build(vec![0.0; 6]);
        assert_eq!(z0, mu0);
        assert!(lv0
            .iter()
            .all(|&v| (-LOGVAR_CLAMP..=LOGVAR_CLAMP).contains(&v)));
        // Unit noise: z = mu + exp(lv / 2).
        let (z1, mu1, lv1) = build(vec![1.0; 6]);
        for ((z, m), lv) in z1.iter().zip(&mu1).zip(&lv1) {
            assert!((z - (m + (lv / 2.0).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_tape_matches_reference() {
        let mu = DenseMatrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.1]]).unwrap();
        let lv = DenseMatrix::from_rows(&[vec![0.3, -0.7], vec![0.0, 1.5]]).unwrap();
        let reference = kl_divergence(&mu, &lv).unwrap();
        let mut tape = Tape::new();
        let m = tape
            .leaf(Shape::new(2, 2), mu.data().to_vec(), true)
            .unwrap();
        let l = tape
            .leaf(Shape::new(2, 2), lv.data().to_vec(), true)
            .unwrap();
        let kl = kl_on_tape(&mut tape, m, l).unwrap();
        assert!((tape.value(kl)[0] - reference).abs() < 1e-12);
    }

    #[test]
    fn dense_gae_loss_tape_matches_reference() {
        let z =
            DenseMatrix::from_rows(&[vec![0.4, -0.2], vec![0.9, 0.3], vec![-0.6, 0.8]]).unwrap();
        let edges = [(0, 1)];
        let targets = AdjacencyTargets::from_edges(3, &edges);
        let pw = 2.5;
        let reference =
            gae_loss(&inner_product_decode(&z).unwrap(), &targets.to_dense(), pw).unwrap();
        let mut tape = Tape::new();
        let zt = tape
            .leaf(Shape::new(3, 2), z.data().to_vec(), true)
            .unwrap();
        let loss = recon_loss_dense(&mut tape, zt, &targets.to_dense(), pw).unwrap();
        assert!((tape.value(loss)[0] - reference).abs() < 1e-10);
    }

    #[test]
    fn embeddings_csv_round_trip_format() {
        let z = DenseMatrix::from_rows(&[vec![1.0, -2.5], vec![0.25, 3.0]]).unwrap();
        let emb = LatentEmbedding {
            z,
            mu: None,
            logvar: None,
        };
        let dir = std::env::temp_dir().join(format!("emb_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("emb.csv");
        export_embeddings_csv(&path, &emb).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "vertex_id,dim_0,dim_1");
        assert_eq!(lines[1], "0,1,-2.5");
        assert_eq!(lines[2], "1,0.25,3");
        std::fs::remove_dir_all(&dir).ok();
    }
}
