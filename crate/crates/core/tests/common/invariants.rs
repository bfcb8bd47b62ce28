//! Seeded invariant checks shared by the randomized property suite and
//! the acceptance gate. Setup mistakes panic; violated invariants return
//! `Err` with a description, so callers can report them.

use std::collections::HashSet;
use std::sync::Arc;

use gnn_core::autoencoder::{edge_probability, inner_product_decode, kl_divergence};
use gnn_core::data::{
    random_connected_graph, split_edges, synth_structural_classes, synth_two_clique,
};
use gnn_core::dense::DenseMatrix;
use gnn_core::graph::Graph;
use gnn_core::layers::{
    gcn_layer, mean_aggregation_matrix, rgnn_transition, sage_mean_layer, sage_pool_layer,
    FeatureInput,
};
use gnn_core::spectral::gcn_norm_adjacency;
use gnn_core::tape::{Shape, Tape, TensorId};
use gnn_core::training::{train_graph_classifier, train_link_predictor, TrainConfig};
use gnn_core::Activation;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("shape matches data")
}

fn constant(tape: &mut Tape, m: &DenseMatrix) -> TensorId {
    tape.constant(Shape::new(m.rows(), m.cols()), m.data().to_vec())
        .expect("valid constant")
}

/// A small random connected graph with per-vertex and per-edge features
/// attached (edge feature rows follow the canonical edge order).
fn featured_graph(rng: &mut ChaCha8Rng, fv: usize, fe: usize) -> Graph {
    let n = rng.random_range(4..=10);
    let extra = rng.random_range(0..=4);
    let skeleton = random_connected_graph(n, extra, rng.random()).expect("generator succeeds");
    Graph::builder(n)
        .edges(skeleton.edges())
        .vertex_features(rand_matrix(rng, n, fv))
        .edge_features(rand_matrix(rng, skeleton.num_edges(), fe))
        .build()
        .expect("featured graph builds")
}

fn max_row_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Relabeling the vertices of a graph permutes every layer's output rows
/// the same way and changes nothing else (up to float summation order).
pub fn check_permutation_equivariance(seed: u64) -> Check {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fv, fe, hidden) = (
        rng.random_range(1..=3),
        rng.random_range(1..=2),
        rng.random_range(1..=4),
    );
    let g = featured_graph(&mut rng, fv, fe);
    let n = g.num_vertices();

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let gp = g.relabel(&perm).expect("valid permutation");

    let w_rgnn = rand_matrix(&mut rng, 2 * fv + fe + hidden, hidden);
    let b_rgnn = rand_matrix(&mut rng, 1, hidden);
    let w_gcn = rand_matrix(&mut rng, fv, hidden);
    let w_self = rand_matrix(&mut rng, fv, hidden);
    let w_neigh = rand_matrix(&mut rng, fv, hidden);
    let w_pool = rand_matrix(&mut rng, fv, hidden);
    let b_pool = rand_matrix(&mut rng, 1, hidden);
    let w_from_pool = rand_matrix(&mut rng, hidden, hidden);

    // Forward passes for one graph; returns (rgnn 2-step, gcn, mean, pool).
    let run = |g: &Graph| -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let n = g.num_vertices();
        let h0 = tape
            .constant(Shape::new(n, hidden), vec![0.0; n * hidden])
            .unwrap();
        let w = constant(&mut tape, &w_rgnn);
        let b = constant(&mut tape, &b_rgnn);
        let h1 = rgnn_transition(&mut tape, g, h0, w, b, None).expect("transition runs");
        let h2 = rgnn_transition(&mut tape, g, h1, w, b, None).expect("transition runs");

        let x = constant(&mut tape, g.vertex_features().expect("features attached"));
        let anorm = Arc::new(gcn_norm_adjacency(g));
        let wg = constant(&mut tape, &w_gcn);
        let gcn = gcn_layer(
            &mut tape,
            &anorm,
            FeatureInput::Dense(x),
            wg,
            Activation::Tanh,
        )
        .expect("gcn runs");

        let mean_op = Arc::new(mean_aggregation_matrix(g));
        let ws = constant(&mut tape, &w_self);
        let wn = constant(&mut tape, &w_neigh);
        let mean = sage_mean_layer(
            &mut tape,
            &mean_op,
            FeatureInput::Dense(x),
            None,
            ws,
            wn,
            Activation::Relu,
        )
        .expect("mean layer runs");

        let wp = constant(&mut tape, &w_pool);
        let bp = constant(&mut tape, &b_pool);
        let wfp = constant(&mut tape, &w_from_pool);
        let pool = sage_pool_layer(
            &mut tape,
            g,
            FeatureInput::Dense(x),
            wp,
            bp,
            ws,
            wfp,
            Activation::Identity,
        )
        .expect("pool layer runs");

        [h2, gcn, mean, pool]
            .iter()
            .map(|&t| tape.value(t).to_vec())
            .collect()
    };

    let base = run(&g);
    let permuted = run(&gp);
    let names = [
        "rgnn two-step state",
        "gcn layer",
        "mean-aggregator layer",
        "pool-aggregator layer",
    ];
    for (out_idx, name) in names.iter().enumerate() {
        let a = &base[out_idx];
        let b = &permuted[out_idx];
        for i in 0..n {
            let row_a = &a[i * hidden..(i + 1) * hidden];
            let row_b = &b[perm[i] * hidden..(perm[i] + 1) * hidden];
            let diff = max_row_diff(row_a, row_b);
            if diff > TOL {
                return Err(format!(
                    "{name}: vertex {i} (relabeled {}) differs by {diff:.3e} (seed {seed})",
                    perm[i]
                ));
            }
        }
    }
    Ok(())
}

/// The order (and duplication, and orientation) of the edge list handed to
/// the builder must not affect anything: the canonical graph, the
/// aggregation operators, and every layer output are bit-identical.
pub fn check_aggregation_order_invariance(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fv, hidden) = (rng.random_range(1..=3), rng.random_range(1..=4));
    let n = rng.random_range(4..=10);
    let skeleton = random_connected_graph(n, rng.random_range(0..=4), rng.random()).unwrap();
    let x = rand_matrix(&mut rng, n, fv);

    let mut scrambled: Vec<(usize, usize)> = skeleton.edges().to_vec();
    // Flip half the orientations, append duplicates, then shuffle.
    for (u, v) in scrambled.iter_mut() {
        if rng.random::<f64>() < 0.5 {
            std::mem::swap(u, v);
        }
    }
    let dupes: Vec<(usize, usize)> = scrambled
        .iter()
        .filter(|_| rng.random::<f64>() < 0.4)
        .map(|&(u, v)| (v, u))
        .collect();
    scrambled.extend(dupes);
    scrambled.shuffle(&mut rng);

    let g1 = Graph::builder(n)
        .edges(skeleton.edges())
        .vertex_features(x.clone())
        .build()
        .unwrap();
    let g2 = Graph::builder(n)
        .edges(&scrambled)
        .vertex_features(x)
        .build()
        .unwrap();

    if g1.edges() != g2.edges() {
        return Err(format!("canonical edge lists differ (seed {seed})"));
    }
    if g1.adjacency().data() != g2.adjacency().data() {
        return Err(format!("adjacency matrices differ (seed {seed})"));
    }

    let run = |g: &Graph| -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77656967); // same weights both runs
        let w_rgnn = rand_matrix(&mut rng, 2 * fv + hidden, hidden);
        let b_rgnn = rand_matrix(&mut rng, 1, hidden);
        let w_self = rand_matrix(&mut rng, fv, hidden);
        let w_neigh = rand_matrix(&mut rng, fv, hidden);
        let w_pool = rand_matrix(&mut rng, fv, hidden);
        let b_pool = rand_matrix(&mut rng, 1, hidden);
        let w_from_pool = rand_matrix(&mut rng, hidden, hidden);

        let mut tape = Tape::new();
        let h0 = tape
            .constant(Shape::new(n, hidden), vec![0.0; n * hidden])
            .unwrap();
        let w = constant(&mut tape, &w_rgnn);
        let b = constant(&mut tape, &b_rgnn);
        let h1 = rgnn_transition(&mut tape, g, h0, w, b, None).unwrap();

        let x = constant(&mut tape, g.vertex_features().unwrap());
        let mean_op = Arc::new(mean_aggregation_matrix(g));
        let ws = constant(&mut tape, &w_self);
        let wn = constant(&mut tape, &w_neigh);
        let mean = sage_mean_layer(
            &mut tape,
            &mean_op,
            FeatureInput::Dense(x),
            None,
            ws,
            wn,
            Activation::Relu,
        )
        .unwrap();

        let wp = constant(&mut tape, &w_pool);
        let bp = constant(&mut tape, &b_pool);
        let wfp = constant(&mut tape, &w_from_pool);
        let pool = sage_pool_layer(
            &mut tape,
            g,
            FeatureInput::Dense(x),
            wp,
            bp,
            ws,
            wfp,
            Activation::Identity,
        )
        .unwrap();

        [h1, mean, pool]
            .iter()
            .map(|&t| tape.value(t).to_vec())
            .collect()
    };

    let out1 = run(&g1);
    let out2 = run(&g2);
    for (name, (a, b)) in [
        "rgnn transition",
        "mean-aggregator layer",
        "pool-aggregator layer",
    ]
    .iter()
    .zip(out1.iter().zip(out2.iter()))
    {
        if a != b {
            return Err(format!(
                "{name}: outputs not bit-identical after edge reordering (seed {seed})"
            ));
        }
    }
    Ok(())
}

/// After k state transitions, a vertex's state depends only on inputs
/// within k hops: perturbing a feature farther away leaves it bit-identical,
/// while the perturbed vertex's own state does change.
pub fn check_locality(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(8..=12);
    let k = rng.random_range(1..=3usize);
    let fv = rng.random_range(1..=3);
    let hidden = rng.random_range(1..=4);
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    let x = rand_matrix(&mut rng, n, fv);
    let far = rng.random_range(k + 1..n); // distance from vertex 0 exceeds k
    let mut perturbed = x.data().to_vec();
    for c in 0..fv {
        perturbed[far * fv + c] += 1.0;
    }
    let x2 = DenseMatrix::from_vec(n, fv, perturbed).unwrap();

    let w = rand_matrix(&mut rng, 2 * fv + hidden, hidden);
    let b = rand_matrix(&mut rng, 1, hidden);
    let run = |features: DenseMatrix| -> Vec<f64> {
        let g = Graph::builder(n)
            .edges(&edges)
            .vertex_features(features)
            .build()
            .unwrap();
        let mut tape = Tape::new();
        let mut h = tape
            .constant(Shape::new(n, hidden), vec![0.0; n * hidden])
            .unwrap();
        let wt = constant(&mut tape, &w);
        let bt = constant(&mut tape, &b);
        for _ in 0..k {
            h = rgnn_transition(&mut tape, &g, h, wt, bt, None).unwrap();
        }
        tape.value(h).to_vec()
    };

    let base = run(x);
    let moved = run(x2);
    if base == moved {
        return Err(format!(
            "perturbing vertex {far} changed nothing at all (seed {seed})"
        ));
    }
    for i in 0..n {
        let dist = far.abs_diff(i);
        let same = base[i * hidden..(i + 1) * hidden] == moved[i * hidden..(i + 1) * hidden];
        if dist > k && !same {
            return Err(format!(
                "vertex {i} at distance {dist} > {k} hops changed after perturbing vertex {far} (seed {seed})"
            ));
        }
    }
    Ok(())
}

/// The inner-product decoder is exactly symmetric: the reconstructed
/// adjacency equals its transpose bitwise, and pair scores ignore
/// argument order.
pub fn check_decoder_symmetry(z: &DenseMatrix) -> Check {
    let n = z.rows();
    let decoded = inner_product_decode(z).map_err(|e| e.to_string())?;
    let a = decoded.matrix();
    for i in 0..n {
        for j in 0..n {
            if a.get(i, j) != a.get(j, i) {
                return Err(format!("decoded adjacency asymmetric at ({i}, {j})"));
            }
            if edge_probability(z, i, j) != edge_probability(z, j, i) {
                return Err(format!(
                    "edge probability depends on argument order at ({i}, {j})"
                ));
            }
            let p = a.get(i, j);
            if !(0.0..=1.0).contains(&p) {
                return Err(format!(
                    "decoded entry {p} at ({i}, {j}) is not a probability"
                ));
            }
        }
    }
    Ok(())
}

/// KL divergence from a diagonal Gaussian to the standard normal is
/// nonnegative (up to float rounding of terms that are analytically zero).
pub fn check_kl_nonnegative(mu: &DenseMatrix, logvar: &DenseMatrix) -> Check {
    let kl = kl_divergence(mu, logvar).map_err(|e| e.to_string())?;
    let slack = 1e-12 * (mu.rows() * mu.cols()) as f64;
    if kl < -slack {
        return Err(format!("KL divergence {kl} is negative"));
    }
    // Zero exactly when the posterior already is the standard normal.
    let zeros = DenseMatrix::from_vec(mu.rows(), mu.cols(), vec![0.0; mu.rows() * mu.cols()])
        .expect("shape matches");
    let at_prior = kl_divergence(&zeros, &zeros).map_err(|e| e.to_string())?;
    if at_prior != 0.0 {
        return Err(format!("KL at the prior is {at_prior}, expected exactly 0"));
    }
    Ok(())
}

/// Edge splits never leak: held-out positives leave the training graph,
/// the three positive sets partition the simple edges, and sampled
/// negatives are distinct verified non-edges.
pub fn check_split_leak_freedom(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(10..=30);
    let extra = rng.random_range(0..=2 * n);
    let g = random_connected_graph(n, extra, rng.random()).expect("generator succeeds");
    let fractions = *[(0.85, 0.05, 0.10), (0.6, 0.2, 0.2), (0.7, 0.1, 0.2)]
        .choose(&mut rng)
        .unwrap();
    let split = split_edges(&g, fractions, rng.random()).map_err(|e| e.to_string())?;

    let canon = |(u, v): (usize, usize)| (u.min(v), u.max(v));
    let original: HashSet<(usize, usize)> = g.edges().iter().map(|&e| canon(e)).collect();
    let train: HashSet<(usize, usize)> = split.train_edges.iter().map(|&e| canon(e)).collect();
    let val: HashSet<(usize, usize)> = split.val_pos.iter().map(|&e| canon(e)).collect();
    let test: HashSet<(usize, usize)> = split.test_pos.iter().map(|&e| canon(e)).collect();

    if train.len() + val.len() + test.len() != original.len() {
        return Err(format!(
            "positive sets do not partition the edges (seed {seed})"
        ));
    }
    let mut union = train.clone();
    union.extend(&val);
    union.extend(&test);
    if union != original {
        return Err(format!("positive sets lose or invent edges (seed {seed})"));
    }
    if val.intersection(&train).count() + test.intersection(&train).count() > 0 {
        return Err(format!(
            "held-out positives leaked into the training graph (seed {seed})"
        ));
    }
    if val.intersection(&test).count() > 0 {
        return Err(format!(
            "validation and test positives overlap (seed {seed})"
        ));
    }

    let train_graph_edges: HashSet<(usize, usize)> = split
        .train_graph
        .edges()
        .iter()
        .map(|&e| canon(e))
        .collect();
    if train_graph_edges != train {
        return Err(format!(
            "training graph edges disagree with the train split (seed {seed})"
        ));
    }

    let mut negatives: Vec<(usize, usize)> = Vec::new();
    negatives.extend(split.val_neg.iter().map(|&e| canon(e)));
    negatives.extend(split.test_neg.iter().map(|&e| canon(e)));
    let distinct: HashSet<(usize, usize)> = negatives.iter().copied().collect();
    if distinct.len() != negatives.len() {
        return Err(format!("sampled negatives repeat (seed {seed})"));
    }
    for &(u, v) in &negatives {
        if u == v {
            return Err(format!("negative ({u}, {v}) is a self pair (seed {seed})"));
        }
        if original.contains(&(u, v)) {
            return Err(format!("negative ({u}, {v}) is a real edge (seed {seed})"));
        }
    }
    if split.val_neg.len() != split.val_pos.len() || split.test_neg.len() != split.test_pos.len() {
        return Err(format!(
            "negative sets are not matched one-to-one with positives (seed {seed})"
        ));
    }
    Ok(())
}

/// The same seed reproduces a training run bit-for-bit: identical loss
/// curves, metrics, and embeddings.
pub fn check_training_determinism(seed: u64) -> Check {
    let set = synth_structural_classes(8, seed).expect("generator succeeds");
    let cfg = TrainConfig {
        dataset: "structural-classes".into(),
        model: "rgnn".into(),
        transitions: 2,
        epochs: 2,
        hidden: 4,
        seed,
        ..TrainConfig::default()
    };
    let a = train_graph_classifier(&set, &cfg).map_err(|e| e.to_string())?;
    let b = train_graph_classifier(&set, &cfg).map_err(|e| e.to_string())?;
    if a.epoch_losses != b.epoch_losses {
        return Err(format!(
            "graph-classifier loss curves differ across identical runs (seed {seed})"
        ));
    }
    if a.metrics != b.metrics {
        return Err(format!(
            "graph-classifier metrics differ across identical runs (seed {seed})"
        ));
    }

    let g = synth_two_clique(6, 0.2, seed).expect("generator succeeds");
    let link_cfg = TrainConfig {
        dataset: "two-clique".into(),
        model: "gae".into(),
        epochs: 3,
        hidden: 8,
        latent: 4,
        seed,
        ..TrainConfig::default()
    };
    let (ra, ea) = train_link_predictor(&g, &link_cfg).map_err(|e| e.to_string())?;
    let (rb, eb) = train_link_predictor(&g, &link_cfg).map_err(|e| e.to_string())?;
    if ra.epoch_losses != rb.epoch_losses || ra.metrics != rb.metrics {
        return Err(format!(
            "link-predictor runs differ across identical runs (seed {seed})"
        ));
    }
    if ea.z.data() != eb.z.data() {
        return Err(format!(
            "link-predictor embeddings differ across identical runs (seed {seed})"
        ));
    }
    Ok(())
}

/// BFS component counting agrees with an independent union-find oracle,
/// and the graph's adjacency densifies consistently along both routes.
pub fn check_structure_consistency(n: usize, edges: &[(usize, usize)]) -> Check {
    let g = Graph::builder(n)
        .edges(edges)
        .build()
        .map_err(|e| e.to_string())?;
    let bfs = g.connected_components();
    let oracle = super::oracles::union_find_components(n, edges);
    if bfs != oracle {
        return Err(format!(
            "BFS counts {bfs} components, union-find counts {oracle}"
        ));
    }
    if g.adjacency().data() != g.adjacency_sparse().to_dense().data() {
        return Err("dense and sparse adjacency disagree".into());
    }
    Ok(())
}
