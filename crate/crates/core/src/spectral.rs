//! Combinatorial graph Laplacians and the Dirichlet energy of a cost matrix
//! viewed as a signal on the Cartesian product graph.

use ndarray::Array2;

use crate::error::{GwError, Result};
use crate::geometry::WeightedGraph;

/// Combinatorial Laplacian L = diag(adjacency row sums) - adjacency.
#[derive(Debug, Clone)]
pub struct Laplacian {
    pub matrix: Array2<f64>,
}

impl Laplacian {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

pub fn laplacian(graph: &WeightedGraph) -> Result<Laplacian> {
    let adj = graph.adjacency();
    let n = adj.nrows();
    for i in 0..n {
        for j in 0..n {
            if (adj[[i, j]] - adj[[j, i]]).abs() > 1e-12 {
                return Err(GwError::invalid(format!(
                    "adjacency asymmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut matrix = -adj.clone();
    for i in 0..n {
        matrix[[i, i]] = adj.row(i).sum();
    }
    Ok(Laplacian { matrix })
}

/// Dirichlet energy trace(C^T L_X C) + trace(C L_Y C^T) of the cost C on the
/// product graph; the NM x NM product Laplacian is never materialized.
pub fn dirichlet_energy(lx: &Laplacian, ly: &Laplacian, cost: &Array2<f64>) -> Result<f64> {
    check_shapes(lx, ly, cost)?;
    // trace(C^T L C) = <C, L C>; trace(C L' C^T) = <C, C L'>.
    let left = lx.matrix.dot(cost);
    let right = cost.dot(&ly.matrix);
    let ex: f64 = cost.iter().zip(left.iter()).map(|(c, l)| c * l).sum();
    let ey: f64 = cost.iter().zip(right.iter()).map(|(c, r)| c * r).sum();
    Ok(ex + ey)
}

/// Gradient of the Dirichlet energy with respect to C: 2 (L_X C + C L_Y).
pub fn dirichlet_energy_grad(
    lx: &Laplacian,
    ly: &Laplacian,
    cost: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_shapes(lx, ly, cost)?;
    Ok(2.0 * (lx.matrix.dot(cost) + cost.dot(&ly.matrix)))
}

fn check_shapes(lx: &Laplacian, ly: &Laplacian, cost: &Array2<f64>) -> Result<()> {
    let (n, m) = cost.dim();
    if lx.matrix.dim() != (n, n) || ly.matrix.dim() != (m, m) {
        return Err(GwError::shape(
            format!("L_X {n}x{n}, L_Y {m}x{m}"),
            format!("{:?}, {:?}", lx.matrix.dim(), ly.matrix.dim()),
            "dirichlet_energy",
        ));
    }
    Ok(())
}
