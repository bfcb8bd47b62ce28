//! Randomized finite-difference verification of every differentiable
//! operation and layer, with seeded instance generation so a pass is
//! reproducible. Inputs are nudged away from the kinks of piecewise
//! operations (relu, clamp, max) so the central difference measures the
//! true local slope.

use crate::autoencoder::{
    gae_encode, kl_on_tape, recon_loss_dense, recon_loss_streaming, vgae_encode, AdjacencyTargets,
};
use crate::data::random_connected_graph;
use crate::dense::DenseMatrix;
use crate::graph::Graph;
use crate::layers::{
    gcn_layer, mean_aggregation_matrix, output_edge, output_graph, output_vertex, rgnn_run,
    rgnn_transition, sage_mean_layer, sage_pool_layer, FeatureInput,
};
use crate::spectral::gcn_norm_adjacency;
use crate::tape::{
    finite_diff_check, CustomOp, FiniteDiffReport, Shape, Tape, TapeError, TensorId,
};
use crate::training::{cross_entropy_masked, TrainError};
use crate::Activation;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 20;

/// Collected results of a verification suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub reports: Vec<FiniteDiffReport>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }

    /// Report with the largest relative error.
    pub fn worst(&self) -> Option<&FiniteDiffReport> {
        self.reports
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    /// Per-target summary: worst error and pass flag over all instances
    /// sharing a name prefix (everything before `#`).
    pub fn by_target(&self) -> Vec<(String, f64, bool)> {
        let mut out: Vec<(String, f64, bool)> = Vec::new();
        for r in &self.reports {
            let target = r.name.split('#').next().unwrap_or(&r.name).to_string();
            match out.iter_mut().find(|(t, _, _)| *t == target) {
                Some((_, worst, ok)) => {
                    *worst = worst.max(r.max_rel_err);
                    *ok = *ok && r.passed;
                }
                None => out.push((target, r.max_rel_err, r.passed)),
            }
        }
        out
    }
}

// ----------------------------------------------------------------------
// Random instance helpers
// ----------------------------------------------------------------------

fn rand_dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=4), rng.random_range(1..=4))
}

fn rand_vals(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len)
        .map(|_| lo + (hi - lo) * rng.random::<f64>())
        .collect()
}

/// Values strictly away from zero (relu kink).
fn rand_vals_off_zero(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
            sign * (0.05 + 1.95 * rng.random::<f64>())
        })
        .collect()
}

/// Well-separated values (pairwise gaps far above the probe step), for
/// max-style reductions whose winner must not flip under perturbation.
fn rand_vals_separated(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut slots: Vec<usize> = (0..len).collect();
    slots.shuffle(rng);
    let gap = 4.0 / len.max(1) as f64;
    slots
        .into_iter()
        .map(|s| -2.0 + gap * s as f64 + gap * 0.2 * rng.random::<f64>())
        .collect()
}

/// Values kept out of a band around the clamp thresholds.
fn rand_vals_off_clamp(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len)
        .map(|_| loop {
            let v = -2.0 + 4.0 * rng.random::<f64>();
            if (v - lo).abs() > 0.05 && (v - hi).abs() > 0.05 {
                break v;
            }
        })
        .collect()
}

fn rand_csr(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> crate::sparse::CsrMatrix {
    let mut triplets = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.random::<f64>() < 0.6 {
                triplets.push((r, c, -1.0 + 2.0 * rng.random::<f64>()));
            }
        }
    }
    // Keep at least one entry so the operand participates.
    if triplets.is_empty() {
        triplets.push((0, 0, 1.0));
    }
    crate::sparse::CsrMatrix::from_triplets(rows, cols, &triplets).expect("finite triplets")
}

/// Scalarizes `t` as `sum(t * C)` with a fixed random coefficient matrix so
/// that every output element carries a distinct gradient signal; plain
/// summation would hide transposition or permutation mistakes.
fn weighted_sum(
    tape: &mut Tape,
    t: TensorId,
    coeffs: &[f64],
) -> std::result::Result<TensorId, TapeError> {
    let shape = tape.shape(t);
    let c = tape.constant(shape, coeffs.to_vec())?;
    let prod = tape.elem_mul(t, c)?;
    tape.sum_all(prod)
}

// ----------------------------------------------------------------------
// Core-op suite
// ----------------------------------------------------------------------

/// Runs `instances` randomized finite-difference checks for every
/// differentiable tape operation.
pub fn run_op_suite(
    seed: u64,
    instances: usize,
    tol: f64,
) -> std::result::Result<SuiteReport, TapeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f707375); // "opsu"
    let mut reports = Vec::new();

    for k in 0..instances {
        let (m, n) = rand_dims(&mut rng);
        let (_, p) = rand_dims(&mut rng);
        let q = rng.random_range(1..=5);

        // matmul: A[m,n] * B[n,p]
        {
            let coeffs = rand_vals(&mut rng, m * p, -1.0, 1.0);
            let init = vec![
                rand_vals(&mut rng, m * n, -2.0, 2.0),
                rand_vals(&mut rng, n * p, -2.0, 2.0),
            ];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("matmul#{k}"),
                &[Shape::new(m, n), Shape::new(n, p)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.matmul(leaves[0], leaves[1])?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // sparse_matmul: const CSR [m,n] * dense B[n,p]
        {
            let mat = Arc::new(rand_csr(&mut rng, m, n));
            let coeffs = rand_vals(&mut rng, m * p, -1.0, 1.0);
            let init = vec![rand_vals(&mut rng, n * p, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("sparse_matmul#{k}"),
                &[Shape::new(n, p)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.sparse_matmul(&mat, leaves[0])?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // add / elem_mul: [m,n] x [m,n]
        for (name, mul) in [("add", false), ("elem_mul", true)] {
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![
                rand_vals(&mut rng, m * n, -2.0, 2.0),
                rand_vals(&mut rng, m * n, -2.0, 2.0),
            ];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("{name}#{k}"),
                &[Shape::new(m, n), Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = if mul {
                        tape.elem_mul(leaves[0], leaves[1])?
                    } else {
                        tape.add(leaves[0], leaves[1])?
                    };
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // add_row_bias: [m,n] + [1,n]
        {
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![
                rand_vals(&mut rng, m * n, -2.0, 2.0),
                rand_vals(&mut rng, n, -2.0, 2.0),
            ];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("add_row_bias#{k}"),
                &[Shape::new(m, n), Shape::new(1, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.add_row_bias(leaves[0], leaves[1])?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // affine with random slope/offset
        {
            let a = -2.0 + 4.0 * rng.random::<f64>();
            let b = -1.0 + 2.0 * rng.random::<f64>();
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![rand_vals(&mut rng, m * n, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("affine#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.affine(leaves[0], a, b)?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // row_sum / row_mean: [m,n] -> [m,1]
        for name in ["row_sum", "row_mean"] {
            let coeffs = rand_vals(&mut rng, m, -1.0, 1.0);
            let init = vec![rand_vals(&mut rng, m * n, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("{name}#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = if name == "row_sum" {
                        tape.row_sum(leaves[0])?
                    } else {
                        tape.row_mean(leaves[0])?
                    };
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // row_max with well-separated entries
        {
            let coeffs = rand_vals(&mut rng, m, -1.0, 1.0);
            let init = vec![rand_vals_separated(&mut rng, m * n)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("row_max#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.row_max(leaves[0])?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // concat_cols of three blocks
        {
            let widths = [n, p, rng.random_range(1..=3)];
            let total: usize = widths.iter().sum();
            let coeffs = rand_vals(&mut rng, m * total, -1.0, 1.0);
            let shapes: Vec<Shape> = widths.iter().map(|&w| Shape::new(m, w)).collect();
            let init: Vec<Vec<f64>> = widths
                .iter()
                .map(|&w| rand_vals(&mut rng, m * w, -2.0, 2.0))
                .collect();
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("concat_cols#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.concat_cols(leaves)?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // smooth elementwise maps
        for name in ["sigmoid", "tanh", "exp", "softmax_rows"] {
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![rand_vals(&mut rng, m * n, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("{name}#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = match name {
                        "sigmoid" => tape.sigmoid(leaves[0])?,
                        "tanh" => tape.tanh(leaves[0])?,
                        "exp" => tape.exp(leaves[0])?,
                        _ => tape.softmax_rows(leaves[0])?,
                    };
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // relu away from its kink
        {
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![rand_vals_off_zero(&mut rng, m * n)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("relu#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.relu(leaves[0])?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // log on positive inputs
        {
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![rand_vals(&mut rng, m * n, 0.2, 3.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("log#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.log(leaves[0])?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // clamp away from both thresholds
        {
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![rand_vals_off_clamp(&mut rng, m * n, -1.0, 1.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("clamp#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.clamp(leaves[0], -1.0, 1.0)?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // gather_rows with repeated indices (tests grad accumulation)
        {
            let idx: Vec<usize> = (0..q).map(|_| rng.random_range(0..m)).collect();
            let coeffs = rand_vals(&mut rng, q * n, -1.0, 1.0);
            let init = vec![rand_vals(&mut rng, m * n, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("gather_rows#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.gather_rows(leaves[0], &idx)?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // scatter_add_rows with colliding destinations
        {
            let dst: Vec<usize> = (0..q).map(|_| rng.random_range(0..m)).collect();
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![rand_vals(&mut rng, q * n, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("scatter_add_rows#{k}"),
                &[Shape::new(q, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.scatter_add_rows(leaves[0], &dst, m)?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // scatter_max_rows with well-separated values
        {
            let dst: Vec<usize> = (0..q).map(|_| rng.random_range(0..m)).collect();
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![rand_vals_separated(&mut rng, q * n)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("scatter_max_rows#{k}"),
                &[Shape::new(q, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.scatter_max_rows(leaves[0], &dst, m)?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // transpose
        {
            let coeffs = rand_vals(&mut rng, m * n, -1.0, 1.0);
            let init = vec![rand_vals(&mut rng, m * n, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("transpose#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let out = tape.transpose(leaves[0])?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }

        // sum_all / mean_all, scaled so the loss slope is not 1
        for name in ["sum_all", "mean_all"] {
            let slope = 0.5 + rng.random::<f64>();
            let init = vec![rand_vals(&mut rng, m * n, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("{name}#{k}"),
                &[Shape::new(m, n)],
                &init,
                tol,
                |tape, leaves| {
                    let s = if name == "sum_all" {
                        tape.sum_all(leaves[0])?
                    } else {
                        tape.mean_all(leaves[0])?
                    };
                    tape.affine(s, slope, 0.1)
                },
            )?);
        }

        // a deeper composite: sigmoid(A B + bias) reduced
        {
            let coeffs = rand_vals(&mut rng, m * p, -1.0, 1.0);
            let init = vec![
                rand_vals(&mut rng, m * n, -1.5, 1.5),
                rand_vals(&mut rng, n * p, -1.5, 1.5),
                rand_vals(&mut rng, p, -1.0, 1.0),
            ];
            reports.push(finite_diff_check::<_, TapeError>(
                &format!("composite_affine_sigmoid#{k}"),
                &[Shape::new(m, n), Shape::new(n, p), Shape::new(1, p)],
                &init,
                tol,
                |tape, leaves| {
                    let mm = tape.matmul(leaves[0], leaves[1])?;
                    let biased = tape.add_row_bias(mm, leaves[2])?;
                    let out = tape.sigmoid(biased)?;
                    weighted_sum(tape, out, &coeffs)
                },
            )?);
        }
    }

    Ok(SuiteReport { reports })
}

// ----------------------------------------------------------------------
// Layer suite
// ----------------------------------------------------------------------

fn rand_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.random_range(5..=8);
    let extra = rng.random_range(1..=4);
    random_connected_graph(n, extra, rng.random::<u64>()).expect("valid size")
}

/// Runs randomized finite-difference checks for every layer, encoder, and
/// loss, differentiating with respect to all trainable inputs.
pub fn run_layer_suite(
    seed: u64,
    instances: usize,
    tol: f64,
) -> std::result::Result<SuiteReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c797375); // "lysu"
    let mut reports = Vec::new();

    for k in 0..instances {
        let hidden = rng.random_range(2..=4);
        let fv = rng.random_range(1..=3);

        // Recurrent transition on a featureless graph: embedding, weights,
        // bias, and previous state all receive gradients.
        {
            let g = rand_graph(&mut rng);
            let n = g.num_vertices();
            let w_rows = 2 * fv + hidden;
            let coeffs = rand_vals(&mut rng, n * hidden, -1.0, 1.0);
            let shapes = [
                Shape::new(1, fv),
                Shape::new(w_rows, hidden),
                Shape::new(1, hidden),
                Shape::new(n, hidden),
            ];
            let init = vec![
                rand_vals(&mut rng, fv, -1.0, 1.0),
                rand_vals(&mut rng, w_rows * hidden, -0.8, 0.8),
                rand_vals(&mut rng, hidden, -0.5, 0.5),
                rand_vals(&mut rng, n * hidden, -1.0, 1.0),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("rgnn_transition_embed#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let h = rgnn_transition(
                        tape,
                        &g,
                        leaves[3],
                        leaves[1],
                        leaves[2],
                        Some(leaves[0]),
                    )?;
                    Ok(weighted_sum(tape, h, &coeffs)?)
                },
            )?);
        }

        // Recurrent transition with constant vertex and edge features.
        {
            let base = rand_graph(&mut rng);
            let n = base.num_vertices();
            let m = base.num_edges();
            let fe = rng.random_range(1..=2);
            let vf = DenseMatrix::from_vec(n, fv, rand_vals(&mut rng, n * fv, -1.0, 1.0)).unwrap();
            let ef = DenseMatrix::from_vec(m, fe, rand_vals(&mut rng, m * fe, -1.0, 1.0)).unwrap();
            let g = Graph::builder(n)
                .edges(base.edges())
                .vertex_features(vf)
                .edge_features(ef)
                .build()
                .unwrap();
            let w_rows = 2 * fv + fe + hidden;
            let coeffs = rand_vals(&mut rng, n * hidden, -1.0, 1.0);
            let shapes = [
                Shape::new(w_rows, hidden),
                Shape::new(1, hidden),
                Shape::new(n, hidden),
            ];
            let init = vec![
                rand_vals(&mut rng, w_rows * hidden, -0.8, 0.8),
                rand_vals(&mut rng, hidden, -0.5, 0.5),
                rand_vals(&mut rng, n * hidden, -1.0, 1.0),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("rgnn_transition_features#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let h = rgnn_transition(tape, &g, leaves[2], leaves[0], leaves[1], None)?;
                    Ok(weighted_sum(tape, h, &coeffs)?)
                },
            )?);
        }

        // Two unrolled transitions (gradient flows through the loop).
        {
            let g = rand_graph(&mut rng);
            let n = g.num_vertices();
            let w_rows = 2 * fv + hidden;
            let coeffs = rand_vals(&mut rng, n * hidden, -1.0, 1.0);
            let shapes = [
                Shape::new(1, fv),
                Shape::new(w_rows, hidden),
                Shape::new(1, hidden),
            ];
            let init = vec![
                rand_vals(&mut rng, fv, -1.0, 1.0),
                rand_vals(&mut rng, w_rows * hidden, -0.8, 0.8),
                rand_vals(&mut rng, hidden, -0.5, 0.5),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("rgnn_two_steps#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let run = rgnn_run(
                        tape,
                        &g,
                        leaves[1],
                        leaves[2],
                        Some(leaves[0]),
                        hidden,
                        2,
                        None,
                    )?;
                    Ok(weighted_sum(tape, run.h, &coeffs)?)
                },
            )?);
        }

        // Output heads over a random state matrix.
        {
            let g = rand_graph(&mut rng);
            let n = g.num_vertices();
            let m = g.num_edges();
            let out_dim = rng.random_range(1..=3);

            let coeffs_v = rand_vals(&mut rng, n * out_dim, -1.0, 1.0);
            let shapes = [
                Shape::new(1, fv),
                Shape::new(n, hidden),
                Shape::new(fv + hidden, out_dim),
                Shape::new(1, out_dim),
            ];
            let init = vec![
                rand_vals(&mut rng, fv, -1.0, 1.0),
                rand_vals(&mut rng, n * hidden, -1.0, 1.0),
                rand_vals(&mut rng, (fv + hidden) * out_dim, -1.0, 1.0),
                rand_vals(&mut rng, out_dim, -0.5, 0.5),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("output_vertex#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let out =
                        output_vertex(tape, &g, leaves[1], leaves[2], leaves[3], Some(leaves[0]))?;
                    Ok(weighted_sum(tape, out, &coeffs_v)?)
                },
            )?);

            let coeffs_e = rand_vals(&mut rng, m * out_dim, -1.0, 1.0);
            let w_rows = 2 * (fv + hidden);
            let shapes = [
                Shape::new(1, fv),
                Shape::new(n, hidden),
                Shape::new(w_rows, out_dim),
                Shape::new(1, out_dim),
            ];
            let init = vec![
                rand_vals(&mut rng, fv, -1.0, 1.0),
                rand_vals(&mut rng, n * hidden, -1.0, 1.0),
                rand_vals(&mut rng, w_rows * out_dim, -1.0, 1.0),
                rand_vals(&mut rng, out_dim, -0.5, 0.5),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("output_edge#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let out =
                        output_edge(tape, &g, leaves[1], leaves[2], leaves[3], Some(leaves[0]))?;
                    Ok(weighted_sum(tape, out, &coeffs_e)?)
                },
            )?);

            let coeffs_g = rand_vals(&mut rng, out_dim, -1.0, 1.0);
            let shapes = [
                Shape::new(n, hidden),
                Shape::new(hidden, out_dim),
                Shape::new(1, out_dim),
            ];
            let init = vec![
                rand_vals(&mut rng, n * hidden, -1.0, 1.0),
                rand_vals(&mut rng, hidden * out_dim, -1.0, 1.0),
                rand_vals(&mut rng, out_dim, -0.5, 0.5),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("output_graph#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let out = output_graph(tape, &g, leaves[0], leaves[1], leaves[2])?;
                    Ok(weighted_sum(tape, out, &coeffs_g)?)
                },
            )?);
        }

        // First-order convolution layer, dense and sparse input routes.
        {
            let g = rand_graph(&mut rng);
            let n = g.num_vertices();
            let anorm = Arc::new(gcn_norm_adjacency(&g));
            let coeffs = rand_vals(&mut rng, n * hidden, -1.0, 1.0);

            let shapes = [Shape::new(n, fv), Shape::new(fv, hidden)];
            let init = vec![
                rand_vals(&mut rng, n * fv, -1.5, 1.5),
                rand_vals(&mut rng, fv * hidden, -1.0, 1.0),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("gcn_layer_dense#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let out = gcn_layer(
                        tape,
                        &anorm,
                        FeatureInput::Dense(leaves[0]),
                        leaves[1],
                        Activation::Tanh,
                    )?;
                    Ok(weighted_sum(tape, out, &coeffs)?)
                },
            )?);

            let x = Arc::new(rand_csr(&mut rng, n, fv));
            let shapes = [Shape::new(fv, hidden)];
            let init = vec![rand_vals(&mut rng, fv * hidden, -1.0, 1.0)];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("gcn_layer_sparse#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let out = gcn_layer(
                        tape,
                        &anorm,
                        FeatureInput::Sparse(&x),
                        leaves[0],
                        Activation::Tanh,
                    )?;
                    Ok(weighted_sum(tape, out, &coeffs)?)
                },
            )?);
        }

        // Mean-aggregator layer (dense route; the sparse route differs only
        // in using a precomputed constant product).
        {
            let g = rand_graph(&mut rng);
            let n = g.num_vertices();
            let mean_op = Arc::new(mean_aggregation_matrix(&g));
            let coeffs = rand_vals(&mut rng, n * hidden, -1.0, 1.0);
            let shapes = [
                Shape::new(n, fv),
                Shape::new(fv, hidden),
                Shape::new(fv, hidden),
            ];
            let init = vec![
                rand_vals(&mut rng, n * fv, -1.5, 1.5),
                rand_vals(&mut rng, fv * hidden, -1.0, 1.0),
                rand_vals(&mut rng, fv * hidden, -1.0, 1.0),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("sage_mean_layer#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let out = sage_mean_layer(
                        tape,
                        &mean_op,
                        FeatureInput::Dense(leaves[0]),
                        None,
                        leaves[1],
                        leaves[2],
                        Activation::Tanh,
                    )?;
                    Ok(weighted_sum(tape, out, &coeffs)?)
                },
            )?);
        }

        // Pool-aggregator layer. The perceptron bias is offset so no
        // pre-activation sits on the relu kink.
        {
            let g = rand_graph(&mut rng);
            let n = g.num_vertices();
            let pool_dim = rng.random_range(2..=3);
            let coeffs = rand_vals(&mut rng, n * hidden, -1.0, 1.0);
            let shapes = [
                Shape::new(n, fv),
                Shape::new(fv, pool_dim),
                Shape::new(1, pool_dim),
                Shape::new(fv, hidden),
                Shape::new(pool_dim, hidden),
            ];
            let init = vec![
                rand_vals(&mut rng, n * fv, 0.5, 1.5),
                rand_vals(&mut rng, fv * pool_dim, 0.3, 1.0),
                rand_vals(&mut rng, pool_dim, 0.5, 1.0),
                rand_vals(&mut rng, fv * hidden, -1.0, 1.0),
                rand_vals(&mut rng, pool_dim * hidden, -1.0, 1.0),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("sage_pool_layer#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let out = sage_pool_layer(
                        tape,
                        &g,
                        FeatureInput::Dense(leaves[0]),
                        leaves[1],
                        leaves[2],
                        leaves[3],
                        leaves[4],
                        Activation::Identity,
                    )?;
                    Ok(weighted_sum(tape, out, &coeffs)?)
                },
            )?);
        }

        // Autoencoder encoders over a sparse identity-like input. Layer-one
        // weights are kept positive so the internal relu stays off its kink.
        {
            let g = rand_graph(&mut rng);
            let n = g.num_vertices();
            let anorm = Arc::new(gcn_norm_adjacency(&g));
            let x = Arc::new(crate::data::identity_features(n));
            let latent = rng.random_range(2..=3);

            let coeffs = rand_vals(&mut rng, n * latent, -1.0, 1.0);
            let shapes = [Shape::new(n, hidden), Shape::new(hidden, latent)];
            let init = vec![
                rand_vals(&mut rng, n * hidden, 0.2, 1.2),
                rand_vals(&mut rng, hidden * latent, -1.0, 1.0),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("gae_encode#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let z =
                        gae_encode(tape, &anorm, FeatureInput::Sparse(&x), leaves[0], leaves[1])?;
                    Ok(weighted_sum(tape, z, &coeffs)?)
                },
            )?);

            let noise_vals = rand_vals(&mut rng, n * latent, -1.0, 1.0);
            let shapes = [
                Shape::new(n, hidden),
                Shape::new(hidden, latent),
                Shape::new(hidden, latent),
            ];
            let init = vec![
                rand_vals(&mut rng, n * hidden, 0.2, 1.2),
                rand_vals(&mut rng, hidden * latent, -1.0, 1.0),
                rand_vals(&mut rng, hidden * latent, -0.5, 0.5),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("vgae_encode#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    let noise = tape.constant(Shape::new(n, latent), noise_vals.clone())?;
                    let heads = vgae_encode(
                        tape,
                        &anorm,
                        FeatureInput::Sparse(&x),
                        leaves[0],
                        leaves[1],
                        leaves[2],
                        noise,
                    )?;
                    Ok(weighted_sum(tape, heads.z, &coeffs)?)
                },
            )?);
        }

        // Reconstruction losses, dense composition and streaming custom op.
        {
            let g = rand_graph(&mut rng);
            let n = g.num_vertices();
            let latent = rng.random_range(2..=3);
            let targets = Arc::new(AdjacencyTargets::from_edges(n, g.edges()));
            let dense_target = targets.to_dense();
            let pos_weight = 1.0 + 4.0 * rng.random::<f64>();
            let shapes = [Shape::new(n, latent)];
            let init = vec![rand_vals(&mut rng, n * latent, -1.5, 1.5)];

            reports.push(finite_diff_check::<_, TrainError>(
                &format!("recon_loss_dense#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| {
                    Ok(recon_loss_dense(
                        tape,
                        leaves[0],
                        &dense_target,
                        pos_weight,
                    )?)
                },
            )?);

            reports.push(finite_diff_check::<_, TrainError>(
                &format!("recon_loss_streaming#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| Ok(recon_loss_streaming(tape, leaves[0], &targets, pos_weight)?),
            )?);
        }

        // Gaussian divergence term.
        {
            let n = rng.random_range(2..=5);
            let d = rng.random_range(1..=3);
            let shapes = [Shape::new(n, d), Shape::new(n, d)];
            let init = vec![
                rand_vals(&mut rng, n * d, -1.5, 1.5),
                rand_vals(&mut rng, n * d, -1.0, 1.0),
            ];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("kl_divergence#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| Ok(kl_on_tape(tape, leaves[0], leaves[1])?),
            )?);
        }

        // Masked cross-entropy over random logits.
        {
            let rows = rng.random_range(2..=5);
            let classes = rng.random_range(2..=4);
            let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
            let mut mask: Vec<bool> = (0..rows).map(|_| rng.random::<f64>() < 0.7).collect();
            if mask.iter().all(|&b| !b) {
                mask[0] = true;
            }
            let shapes = [Shape::new(rows, classes)];
            let init = vec![rand_vals(&mut rng, rows * classes, -2.0, 2.0)];
            reports.push(finite_diff_check::<_, TrainError>(
                &format!("cross_entropy_masked#{k}"),
                &shapes,
                &init,
                tol,
                |tape, leaves| cross_entropy_masked(tape, leaves[0], &labels, Some(&mask)),
            )?);
        }
    }

    Ok(SuiteReport { reports })
}

// ----------------------------------------------------------------------
// Fault injection
// ----------------------------------------------------------------------

/// Elementwise cube whose hand-written derivative rule is deliberately
/// wrong (it returns `2x^2` instead of `3x^2`). The finite-difference
/// harness must flag it; used to prove the checker can fail.
#[derive(Debug)]
struct CorruptedCube;

impl CustomOp for CorruptedCube {
    fn name(&self) -> &'static str {
        "corrupted_cube"
    }

    fn backward(
        &self,
        inputs: &[(&[f64], Shape)],
        _output: &[f64],
        out_grad: &[f64],
    ) -> Vec<Option<Vec<f64>>> {
        let (x, _) = inputs[0];
        let grad = x
            .iter()
            .zip(out_grad)
            .map(|(&xi, &g)| g * 2.0 * xi * xi)
            .collect();
        vec![Some(grad)]
    }
}

/// Checks the deliberately corrupted derivative rule; the returned report
/// must have `passed == false` for a healthy checker.
pub fn run_corrupted_rule_check(tol: f64) -> std::result::Result<FiniteDiffReport, TapeError> {
    let shapes = [Shape::new(2, 2)];
    let init = vec![vec![0.7, -1.1, 1.6, 0.9]];
    finite_diff_check::<_, TapeError>("corrupted_cube", &shapes, &init, tol, |tape, leaves| {
        let x = tape.value(leaves[0]).to_vec();
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        let out = tape.custom(
            Box::new(CorruptedCube),
            &[leaves[0]],
            Shape::new(2, 2),
            cubed,
        )?;
        tape.sum_all(out)
    })
}
