//! Discrete per-vehicle action grid used by the softmax actors.
//!
//! Each task type takes one of 5 offload ratios and 6 resource fractions. A
//! vehicle action is one grid point per type, indexed in mixed radix with
//! type 0 as the least significant digit and, within a type, α varying fastest.

use super::LearnerError;

pub const OMEGA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const ALPHA_GRID: [f64; 6] = [0.005, 0.02, 0.04, 0.06, 0.08, 0.1];
const PER_TYPE: usize = OMEGA_GRID.len() * ALPHA_GRID.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Codebook {
    k: usize,
}

impl Codebook {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn n_types(&self) -> usize {
        self.k
    }

    /// `(5 · 6)^K`.
    pub fn size(&self) -> usize {
        PER_TYPE.pow(self.k as u32)
    }

    pub fn decode(&self, index: usize) -> Result<(Vec<f64>, Vec<f64>), LearnerError> {
        if index >= self.size() {
            return Err(LearnerError::CodebookIndex {
                index,
                size: self.size(),
            });
        }
        let mut rest = index;
        let mut omega = Vec::with_capacity(self.k);
        let mut alpha = Vec::with_capacity(self.k);
        for _ in 0..self.k {
            let digit = rest % PER_TYPE;
            rest /= PER_TYPE;
            omega.push(OMEGA_GRID[digit / ALPHA_GRID.len()]);
            alpha.push(ALPHA_GRID[digit % ALPHA_GRID.len()]);
        }
        Ok((omega, alpha))
    }

    /// Index of an action whose entries lie exactly on the grid.
    pub fn encode(&self, omega: &[f64], alpha: &[f64]) -> Result<usize, LearnerError> {
        if omega.len() != self.k || alpha.len() != self.k {
            return Err(LearnerError::Shape(format!(
                "codebook over {} types got {} omega and {} alpha entries",
                self.k,
                omega.len(),
                alpha.len()
            )));
        }
        let mut index = 0;
        for j in (0..self.k).rev() {
            let wi = OMEGA_GRID.iter().position(|&g| g == omega[j]);
            let ai = ALPHA_GRID.iter().position(|&g| g == alpha[j]);
            let (Some(wi), Some(ai)) = (wi, ai) else {
                return Err(LearnerError::OffGrid {
                    omega: omega[j],
                    alpha: alpha[j],
                });
            };
            index = index * PER_TYPE + wi * ALPHA_GRID.len() + ai;
        }
        Ok(index)
    }

    /// Decoded action as one feature vector: ω entries then α entries.
    pub fn features(&self, index: usize) -> Result<Vec<f64>, LearnerError> {
        let (mut w, a) = self.decode(index)?;
        w.extend(a);
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_index_is_the_smallest_point() {
        let (w, a) = Codebook::new(3).decode(0).unwrap();
        assert_eq!(w, vec![0.0; 3]);
        assert_eq!(a, vec![0.005; 3]);
    }

    #[test]
    fn size_counts_the_grid() {
        assert_eq!(Codebook::new(3).size(), 27000);
        assert_eq!(Codebook::new(1).size(), 30);
    }

    #[test]
    fn round_trip_every_index() {
        for k in 1..=3 {
            let cb = Codebook::new(k);
            for i in 0..cb.size() {
                let (w, a) = cb.decode(i).unwrap();
                assert_eq!(cb.encode(&w, &a).unwrap(), i);
            }
        }
    }

    #[test]
    fn out_of_range_and_off_grid() {
        let cb = Codebook::new(2);
        assert!(matches!(cb.decode(900), Err(LearnerError::CodebookIndex { .. })));
        assert!(cb.encode(&[0.3, 0.0], &[0.02, 0.02]).is_err());
    }
}
