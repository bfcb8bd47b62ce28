//! Reference implementations computed along an independent route from the
//! library code, used to cross-check the hand-written numerics.

use gnn_core::dense::DenseMatrix;

/// Symmetric eigendecomposition via nalgebra, returned as (ascending
/// eigenvalues, column eigenvectors) in the same layout the library uses.
pub fn nalgebra_eigensystem(m: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = m.rows();
    assert_eq!(n, m.cols(), "eigendecomposition needs a square matrix");
    let na = nalgebra::DMatrix::from_fn(n, n, |r, c| m.get(r, c));
    let eig = nalgebra::linalg::SymmetricEigen::new(na);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = vec![vec![0.0; n]; n];
    for (col, &k) in order.iter().enumerate() {
        for (row, vrow) in vectors.iter_mut().enumerate() {
            vrow[col] = eig.eigenvectors[(row, k)];
        }
    }
    (
        values,
        DenseMatrix::from_rows(&vectors).expect("square eigenvector matrix"),
    )
}

/// Area under the ROC curve by the brute-force pairwise definition:
/// P(score(positive) > score(negative)) with ties counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut favorable = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                favorable += 1.0;
            } else if scores[i] == scores[j] {
                favorable += 0.5;
            }
        }
    }
    assert!(
        pairs > 0,
        "AUC needs at least one positive and one negative"
    );
    favorable / pairs as f64
}

/// Average precision as the literal step sum over positives in score
/// order: AP = sum_k (precision at the k-th positive) / num_positives.
/// Ties are broken by original index descending, matching a stable sort
/// by descending score.
pub fn stepwise_average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let total_pos = labels.iter().filter(|&&l| l).count();
    assert!(total_pos > 0, "AP needs at least one positive");
    let mut seen_pos = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if labels[idx] {
            seen_pos += 1;
            sum += seen_pos as f64 / (rank + 1) as f64;
        }
    }
    sum / total_pos as f64
}

/// Connected-component count by union-find with path halving.
pub fn union_find_components(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru] = rv;
        }
    }
    (0..n).filter(|&v| find(&mut parent, v) == v).count()
}

/// Frobenius norm of the elementwise difference between two same-shape
/// matrices.
pub fn frobenius_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Frobenius norm of a matrix.
pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data().iter().map(|x| x * x).sum::<f64>().sqrt()
}
