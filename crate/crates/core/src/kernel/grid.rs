use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Even partition of the unit square into `n1 × n2` cells.
///
/// Locations are cell centres in row-major order: index `r * n2 + c` sits at
/// `((c + 0.5) / n2, (r + 0.5) / n1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid2D {
    pub n1: usize,
    pub n2: usize,
}

impl Grid2D {
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return arg_err(format!("grid sides must be positive, got {n1}x{n2}"));
        }
        Ok(Self { n1, n2 })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn p(&self) -> usize {
        self.n1 * self.n2
    }

    /// λ(Δs_j) = 1/p.
    pub fn cell_measure(&self) -> f64 {
        1.0 / self.p() as f64
    }

    pub fn location(&self, j: usize) -> [f64; 2] {
        let (r, c) = (j / self.n2, j % self.n2);
        [
            (c as f64 + 0.5) / self.n2 as f64,
            (r as f64 + 0.5) / self.n1 as f64,
        ]
    }

    pub fn locations(&self) -> Vec<[f64; 2]> {
        (0..self.p()).map(|j| self.location(j)).collect()
    }

    /// Row/column of a flat index.
    pub fn cell(&self, j: usize) -> (usize, usize) {
        (j / self.n2, j % self.n2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_sums_to_one() {
        let g = Grid2D::new(3, 5).unwrap();
        assert_eq!(g.p(), 15);
        let total: f64 = (0..g.p()).map(|_| g.cell_measure()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn locations_are_distinct_and_inside() {
        let g = Grid2D::new(4, 3).unwrap();
        let locs = g.locations();
        for (a, la) in locs.iter().enumerate() {
            assert!(la.iter().all(|&x| x > 0.0 && x < 1.0));
            for lb in &locs[a + 1..] {
                assert!(la != lb);
            }
        }
    }

    #[test]
    fn rejects_empty_grid() {
        assert!(Grid2D::new(0, 4).is_err());
    }
}
