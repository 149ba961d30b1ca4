//! Axis-aligned boxes, seeded uniform sampling, and Cartesian grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::State;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config("box bounds must be non-empty and equal length".into()));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("invalid box interval [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[-half, half]` on every axis.
    pub fn symmetric(n: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; n], vec![half; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &State) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> State {
        State::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(lo, hi)| rng.gen_range(*lo..=*hi)),
        )
    }

    /// All `2ⁿ` vertices.
    pub fn corners(&self) -> Vec<State> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                State::from_fn(n, |i, _| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] })
            })
            .collect()
    }
}

/// Deterministic uniform draws from a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub bounds: SearchBox,
    pub samples: usize,
    pub seed: u64,
}

impl SampleConfig {
    pub fn new(bounds: SearchBox, samples: usize, seed: u64) -> Self {
        Self { bounds, samples, seed }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn draw(&self) -> Vec<State> {
        let mut rng = self.rng();
        (0..self.samples).map(|_| self.bounds.sample(&mut rng)).collect()
    }
}

/// Regular grid over a box, at least eight nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub bounds: SearchBox,
    pub resolution: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: SearchBox, resolution: Vec<usize>) -> Result<Self> {
        if resolution.len() != bounds.dim() {
            return Err(Error::Config("grid resolution must match box dimension".into()));
        }
        if let Some(r) = resolution.iter().find(|&&r| r < 8) {
            return Err(Error::Config(format!("grid needs at least 8 points per axis, got {r}")));
        }
        Ok(Self { bounds, resolution })
    }

    pub fn uniform(bounds: SearchBox, per_axis: usize) -> Result<Self> {
        let n = bounds.dim();
        Self::new(bounds, vec![per_axis; n])
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.bounds.dim())
            .map(|i| (self.bounds.upper[i] - self.bounds.lower[i]) / (self.resolution[i] - 1) as f64)
            .collect()
    }

    /// Multi-index of a flat node index; axis 0 varies fastest.
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        self.resolution
            .iter()
            .map(|&r| {
                let i = flat % r;
                flat /= r;
                i
            })
            .collect()
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().rev().zip(self.resolution.iter().rev()).fold(0, |acc, (&i, &r)| acc * r + i)
    }

    pub fn node(&self, flat: usize) -> State {
        let idx = self.unflatten(flat);
        let h = self.spacing();
        State::from_fn(self.bounds.dim(), |i, _| self.bounds.lower[i] + idx[i] as f64 * h[i])
    }

    /// Flat indices of the up to `3ⁿ − 1` surrounding nodes.
    pub fn neighbours(&self, flat: usize) -> Vec<usize> {
        let idx = self.unflatten(flat);
        let n = idx.len();
        let mut out = Vec::new();
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let mut cand = Vec::with_capacity(n);
            let mut valid = true;
            let mut centre = true;
            for (i, &base) in idx.iter().enumerate() {
                let off = (c % 3) as isize - 1;
                c /= 3;
                if off != 0 {
                    centre = false;
                }
                let v = base as isize + off;
                if v < 0 || v >= self.resolution[i] as isize {
                    valid = false;
                    break;
                }
                cand.push(v as usize);
            }
            if valid && !centre {
                out.push(self.flatten(&cand));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_indexing_round_trips() {
        let g = Grid::new(SearchBox::new(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap(), vec![9, 10]).unwrap();
        for flat in [0, 5, 17, 89] {
            assert_eq!(g.flatten(&g.unflatten(flat)), flat);
        }
        assert_eq!(g.node(0).as_slice(), &[-1.0, 0.0]);
        assert_eq!(g.node(g.len() - 1).as_slice(), &[1.0, 3.0]);
        assert_eq!(g.neighbours(0).len(), 3);
        assert_eq!(g.neighbours(g.flatten(&[4, 4])).len(), 8);
    }

    #[test]
    fn coarse_grid_rejected() {
        let b = SearchBox::symmetric(2, 1.0).unwrap();
        assert!(Grid::uniform(b, 7).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let cfg = SampleConfig::new(SearchBox::symmetric(3, 2.0).unwrap(), 50, 11);
        let a = cfg.draw();
        assert_eq!(a, cfg.draw());
        assert!(a.iter().all(|x| cfg.bounds.contains(x)));
    }

    #[test]
    fn corners_of_unit_square() {
        let b = SearchBox::symmetric(2, 1.0).unwrap();
        assert_eq!(b.corners().len(), 4);
    }
}
