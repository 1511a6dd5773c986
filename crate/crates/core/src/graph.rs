//! Graph Laplacians used as variation operators for block transforms.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Combinatorial Laplacian `L = D − W` of a weighted undirected graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
}

impl Laplacian {
    /// Builds `L` from a list of weighted edges `(i, j, w)` with `w ≥ 0`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut matrix = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidArgument(format!("edge ({i}, {j}) invalid for {n} vertices")));
            }
            if !(w >= 0.0) {
                return Err(Error::InvalidArgument(format!("edge weight {w} must be non-negative")));
            }
            matrix[(i, j)] -= w;
            matrix[(j, i)] -= w;
            matrix[(i, i)] += w;
            matrix[(j, j)] += w;
        }
        Ok(Self { matrix })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Edges `(i, j, w)` with `i < j` and `w > 0`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = -self.matrix[(i, j)];
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        edges
    }
}

/// Unit-weight 4-connected grid; vertex `r * cols + c` is pixel `(r, c)`.
pub fn grid_laplacian(rows: usize, cols: usize) -> Laplacian {
    assert!(rows >= 1 && cols >= 1, "grid must have at least one vertex");
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1, 1.0));
            }
            if r + 1 < rows {
                edges.push((v, v + cols, 1.0));
            }
        }
    }
    Laplacian::from_edges(rows * cols, &edges).expect("grid edges are valid")
}

/// Unit-weight path graph on `n` vertices; its GFT is the 1-D DCT-II.
pub fn line_laplacian(n: usize) -> Laplacian {
    grid_laplacian(1, n)
}

/// Laplacian quadratic form `xᵀLx`, the total variation of `x` on the graph.
pub fn quadratic_form(lap: &Laplacian, x: &[f64]) -> Result<f64> {
    let n = lap.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: x.len() });
    }
    let m = &lap.matrix;
    let mut acc = 0.0;
    for j in 0..n {
        let col: f64 = (0..n).map(|i| m[(i, j)] * x[i]).sum();
        acc += col * x[j];
    }
    Ok(acc.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_edge() {
        let l = grid_laplacian(1, 2);
        assert_eq!(l.matrix().as_slice(), &[1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn grid_degrees() {
        let l = grid_laplacian(8, 8);
        let m = l.matrix();
        assert_eq!(m[(9, 9)], 4.0);
        assert_eq!(m[(0, 0)], 2.0);
        assert_eq!(m[(63, 63)], 2.0);
        assert_eq!(m[(1, 1)], 3.0);
        assert_eq!(l.edges().len(), 2 * 8 * 7);
        for i in 0..64 {
            assert_eq!(m.row(i).sum(), 0.0);
            for j in 0..64 {
                assert_eq!(m[(i, j)], m[(j, i)]);
                if i != j {
                    assert!(m[(i, j)] <= 0.0);
                }
            }
        }
    }

    #[test]
    fn grid_spectrum_is_product_of_paths() {
        let l = grid_laplacian(8, 8);
        let mut got: Vec<f64> = l.matrix().clone().symmetric_eigenvalues().iter().copied().collect();
        got.sort_by(f64::total_cmp);
        let path = |p: usize| 2.0 - 2.0 * (p as f64 * std::f64::consts::PI / 8.0).cos();
        let mut expected: Vec<f64> = (0..8).flat_map(|p| (0..8).map(move |r| path(p) + path(r))).collect();
        expected.sort_by(f64::total_cmp);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-10, "{g} vs {e}");
        }
    }

    #[test]
    fn quadratic_form_examples() {
        let l = grid_laplacian(1, 2);
        assert_eq!(quadratic_form(&l, &[0.0, 1.0]).unwrap(), 1.0);
        let l = grid_laplacian(4, 4);
        assert_eq!(quadratic_form(&l, &[3.5; 16]).unwrap(), 0.0);
        assert!(matches!(quadratic_form(&l, &[0.0; 3]), Err(Error::DimensionMismatch { expected: 16, actual: 3 })));
    }

    #[test]
    fn quadratic_form_matches_edge_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = grid_laplacian(4, 4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-10.0..10.0)).collect();
            // enumerate grid edges directly rather than through the matrix
            let mut edge_sum = 0.0;
            for r in 0..4 {
                for c in 0..4 {
                    let v = r * 4 + c;
                    if c < 3 {
                        edge_sum += (x[v] - x[v + 1]).powi(2);
                    }
                    if r < 3 {
                        edge_sum += (x[v] - x[v + 4]).powi(2);
                    }
                }
            }
            let q = quadratic_form(&l, &x).unwrap();
            assert!((q - edge_sum).abs() < 1e-12 * edge_sum.max(1.0));
        }
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Laplacian::from_edges(3, &[(0, 3, 1.0)]).is_err());
        assert!(Laplacian::from_edges(3, &[(1, 1, 1.0)]).is_err());
        assert!(Laplacian::from_edges(3, &[(0, 1, -1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn variation_is_shift_invariant(x in proptest::collection::vec(-100.0f64..100.0, 64), c in -50.0f64..50.0) {
            let l = grid_laplacian(8, 8);
            let q = quadratic_form(&l, &x).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            prop_assert!(q >= 0.0);
            prop_assert!((quadratic_form(&l, &shifted).unwrap() - q).abs() < 1e-9 * q.max(1.0));
        }
    }
}
