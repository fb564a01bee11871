//! Square-lattice Ising geometry and energies with periodic boundaries.
//!
//! Units are J = k_B = 1. Energies returned by [`total_energy`] are per site
//! and lie in `[-2, 2]`; [`flip_delta`] returns a total (not per-site) change.

use crate::error::{Error, Result};

/// One ±1 configuration on an `L x L` torus, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    side: usize,
    spins: Vec<i8>,
}

impl SpinConfig {
    pub fn new(side: usize, spins: Vec<i8>) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidParameter("side length must be positive".into()));
        }
        if spins.len() != side * side {
            return Err(Error::DimensionMismatch {
                expected: side * side,
                got: spins.len(),
            });
        }
        if let Some((index, &value)) = spins.iter().enumerate().find(|(_, &s)| s != 1 && s != -1) {
            return Err(Error::InvalidSpin {
                index,
                value: value as i64,
            });
        }
        Ok(Self { side, spins })
    }

    pub fn uniform(side: usize, spin: i8) -> Self {
        assert!(spin == 1 || spin == -1);
        Self {
            side,
            spins: vec![spin; side * side],
        }
    }

    /// `+1` where `row + col` is even.
    pub fn checkerboard(side: usize) -> Self {
        let spins = (0..side * side)
            .map(|k| if (k / side + k % side) % 2 == 0 { 1 } else { -1 })
            .collect();
        Self { side, spins }
    }

    /// Build from a ±1 vector of floats (as produced by RBM sampling).
    pub fn from_signs(side: usize, values: &[f64]) -> Result<Self> {
        let spins = values.iter().map(|&x| if x > 0.0 { 1 } else { -1 }).collect();
        Self::new(side, spins)
    }

    pub(crate) fn from_raw_unchecked(side: usize, spins: Vec<i8>) -> Self {
        debug_assert_eq!(spins.len(), side * side);
        Self { side, spins }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        self.spins.len()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.spins[row * self.side + col]
    }

    pub fn flip(&mut self, site: usize) {
        self.spins[site] = -self.spins[site];
    }

    pub(crate) fn spins_mut(&mut self) -> &mut [i8] {
        &mut self.spins
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.spins.iter().map(|&s| s as f64).collect()
    }

    /// `sum over bonds of s_i s_j`, each site contributing its right and down bond.
    pub fn bond_sum(&self) -> i64 {
        let l = self.side;
        let s = &self.spins;
        let mut acc = 0i64;
        for r in 0..l {
            let down = ((r + 1) % l) * l;
            let row = r * l;
            for c in 0..l {
                let here = s[row + c] as i64;
                let right = s[row + (c + 1) % l] as i64;
                acc += here * (right + s[down + c] as i64);
            }
        }
        acc
    }

    pub fn energy_per_site(&self) -> f64 {
        -(self.bond_sum() as f64) / self.n_sites() as f64
    }

    pub fn magnetization(&self) -> f64 {
        self.spins.iter().map(|&s| s as i64).sum::<i64>() as f64 / self.n_sites() as f64
    }

    /// Sum of the four nearest neighbours of `site` (wraparound duplicates kept).
    #[inline]
    pub(crate) fn neighbour_sum(&self, site: usize) -> i32 {
        let l = self.side;
        let (r, c) = (site / l, site % l);
        let s = &self.spins;
        s[r * l + (c + 1) % l] as i32
            + s[r * l + (c + l - 1) % l] as i32
            + s[((r + 1) % l) * l + c] as i32
            + s[((r + l - 1) % l) * l + c] as i32
    }
}

/// Neighbour table of an `L x L` torus.
#[derive(Debug, Clone)]
pub struct LatticeGeometry {
    side: usize,
    neighbours: Vec<[usize; 4]>,
}

impl LatticeGeometry {
    pub fn new(side: usize) -> Result<Self> {
        if side < 2 {
            return Err(Error::InvalidParameter(format!(
                "lattice side must be at least 2, got {side}"
            )));
        }
        let l = side;
        let neighbours = (0..l * l)
            .map(|k| {
                let (r, c) = (k / l, k % l);
                [
                    r * l + (c + 1) % l,
                    r * l + (c + l - 1) % l,
                    ((r + 1) % l) * l + c,
                    ((r + l - 1) % l) * l + c,
                ]
            })
            .collect();
        Ok(Self { side, neighbours })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        self.side * self.side
    }

    /// Right, left, down, up.
    pub fn neighbours(&self, site: usize) -> &[usize; 4] {
        &self.neighbours[site]
    }
}

/// Energy per site, `-(1/N_v) sum_<ij> s_i s_j`.
pub fn total_energy(config: &SpinConfig) -> f64 {
    config.energy_per_site()
}

/// Total energy change from flipping `site`: `2 s_site sum_nbr s_j`.
pub fn flip_delta(config: &SpinConfig, site: usize) -> Result<f64> {
    if site >= config.n_sites() {
        return Err(Error::SiteOutOfRange {
            site,
            n_sites: config.n_sites(),
        });
    }
    Ok(2.0 * config.spins[site] as f64 * config.neighbour_sum(site) as f64)
}
