//! Eigen-analysis of `W W^T` and classification of eigenvector patterns.
//!
//! `W W^T` does not depend on the basis chosen for the hidden units, so its
//! eigenvectors (reshaped to `L x L` images) show what spatial patterns a
//! trained machine stores. A pattern counts as non-random when its
//! nearest-neighbour autocorrelation `S = sum_<ij> u_i u_j` lies outside
//! three standard deviations of `S` for uniformly random unit vectors.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::RbmModel;
use crate::rng::{self, tag};

pub const DEFAULT_NULL_DRAWS: usize = 10_000;
pub const DEFAULT_NULL_SEED: u64 = 0x5EED_0F_A11;
pub const SIGMA_THRESHOLD: f64 = 3.0;
pub const DEFAULT_HEAD_EXCLUDED: usize = 5;
/// Eigenvalues at or below this fraction of the largest are numerically zero.
pub const RELATIVE_ZERO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternClass {
    NonRandom,
    RandomLike,
}

impl PatternClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternClass::NonRandom => "non-random",
            PatternClass::RandomLike => "random-like",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternClassification {
    pub statistic: f64,
    pub class: PatternClass,
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub side: usize,
    /// Descending by absolute value.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors (row-major `L x L`), sign fixed so the entry of
    /// largest magnitude is positive.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Frobenius norm of `W W^T - U diag(lambda) U^T`, relative to `||W W^T||`.
    pub relative_residual: f64,
    pub zero_threshold: f64,
    pub classification: Option<Vec<PatternClassification>>,
}

impl SpectralReport {
    pub fn rank(&self) -> usize {
        self.eigenvalues
            .iter()
            .filter(|l| l.abs() > self.zero_threshold)
            .count()
    }
}

/// Symmetric eigendecomposition of `W W^T`.
pub fn weight_spectrum(model: &RbmModel) -> Result<SpectralReport> {
    let n_v = model.n_visible();
    let side = (n_v as f64).sqrt().round() as usize;
    if side * side != n_v {
        return Err(Error::InvalidParameter(format!(
            "N_v = {n_v} is not a square lattice"
        )));
    }
    let w = model.weights();
    let wm = DMatrix::from_fn(n_v, model.n_hidden(), |i, a| w[[i, a]]);
    let gram = &wm * wm.transpose();
    let eig = SymmetricEigen::new(gram.clone());

    let mut order: Vec<usize> = (0..n_v).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| {
            let col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                col.into_iter().map(|x| -x).collect()
            } else {
                col
            }
        })
        .collect();

    let recomposed = eig.recompose();
    let norm = gram.norm();
    let relative_residual = if norm > 0.0 {
        (&gram - recomposed).norm() / norm
    } else {
        0.0
    };
    let largest = eigenvalues.first().map_or(0.0, |l| l.abs());
    Ok(SpectralReport {
        side,
        eigenvalues,
        eigenvectors,
        relative_residual,
        zero_threshold: largest * RELATIVE_ZERO,
        classification: None,
    })
}

/// `sum over bonds (right and down of every site) of u_i u_j` on the torus.
pub fn structure_statistic(u: &[f64], side: usize) -> f64 {
    let l = side;
    let mut s = 0.0;
    for r in 0..l {
        for c in 0..l {
            let here = u[r * l + c];
            s += here * (u[r * l + (c + 1) % l] + u[((r + 1) % l) * l + c]);
        }
    }
    s
}

/// Spread of the structure statistic over random unit vectors on one lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullModel {
    pub side: usize,
    pub draws: usize,
    pub seed: u64,
    /// Root-mean-square of `S` about zero.
    pub sigma: f64,
}

impl NullModel {
    /// Tabulated once per `(side, draws, seed)` and cached for the process.
    pub fn new(side: usize, draws: usize, seed: u64) -> Self {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize, u64), f64>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(&sigma) = cache.lock().unwrap().get(&(side, draws, seed)) {
            return Self {
                side,
                draws,
                seed,
                sigma,
            };
        }
        let sigma = null_sigma(side, draws, seed);
        cache.lock().unwrap().insert((side, draws, seed), sigma);
        Self {
            side,
            draws,
            seed,
            sigma,
        }
    }

    pub fn standard(side: usize) -> Self {
        Self::new(side, DEFAULT_NULL_DRAWS, DEFAULT_NULL_SEED)
    }

    pub fn threshold(&self) -> f64 {
        SIGMA_THRESHOLD * self.sigma
    }
}

fn null_sigma(side: usize, draws: usize, seed: u64) -> f64 {
    let n = side * side;
    let mut rng = rng::stream(seed, &[tag::SPECTRAL_NULL, side as u64]);
    let mut u = vec![0.0; n];
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        u.iter_mut()
            .for_each(|x| *x = StandardNormal.sample(&mut rng));
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        sum_sq += structure_statistic(&u, side).powi(2);
    }
    (sum_sq / draws as f64).sqrt()
}

/// Non-random iff `|S| > 3 sigma_null`.
pub fn classify_pattern(u: &[f64], null: &NullModel) -> Result<PatternClassification> {
    if u.len() != null.side * null.side {
        return Err(Error::DimensionMismatch {
            expected: null.side * null.side,
            got: u.len(),
        });
    }
    let statistic = structure_statistic(u, null.side);
    let class = if statistic.abs() > null.threshold() {
        PatternClass::NonRandom
    } else {
        PatternClass::RandomLike
    };
    Ok(PatternClassification { statistic, class })
}

pub fn classify_report(report: &mut SpectralReport, null: &NullModel) -> Result<()> {
    let classes = report
        .eigenvectors
        .iter()
        .map(|u| classify_pattern(u, null))
        .collect::<Result<Vec<_>>>()?;
    report.classification = Some(classes);
    Ok(())
}

/// Fraction of the top `n_hidden` eigenvectors classified non-random.
pub fn nonrandom_ratio(report: &SpectralReport, n_hidden: usize) -> Result<f64> {
    let classes = report
        .classification
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("report has not been classified".into()))?;
    if n_hidden == 0 || n_hidden > classes.len() {
        return Err(Error::InvalidParameter(format!(
            "n_hidden must be in 1..={}, got {n_hidden}",
            classes.len()
        )));
    }
    let count = classes[..n_hidden]
        .iter()
        .filter(|c| c.class == PatternClass::NonRandom)
        .count();
    Ok(count as f64 / n_hidden as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    /// `lambda_k / lambda_{k+1}` for consecutive pairs among the top `N_h`.
    pub ratios: Vec<f64>,
    /// Index of the first eigenvalue below the largest gap.
    pub largest_gap_at: usize,
    pub largest_gap_ratio: f64,
    /// Coefficient of variation of the top `N_h` eigenvalues after dropping
    /// the first `head` ones; `None` if fewer than two remain.
    pub tail_cv: Option<f64>,
}

pub fn eigenvalue_gap_profile(eigenvalues: &[f64], n_hidden: usize, head: usize) -> Result<GapProfile> {
    if n_hidden < 2 || n_hidden > eigenvalues.len() {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= n_hidden <= {}, got {n_hidden}",
            eigenvalues.len()
        )));
    }
    let top: Vec<f64> = eigenvalues[..n_hidden].iter().map(|l| l.abs()).collect();
    let ratios: Vec<f64> = top.windows(2).map(|w| w[0] / w[1]).collect();
    let (k, &largest) = ratios
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let tail = &top[head.min(n_hidden)..];
    let tail_cv = (tail.len() >= 2).then(|| {
        let (m, s) = crate::thermometer::mean_std(tail);
        s / m
    });
    Ok(GapProfile {
        ratios,
        largest_gap_at: k + 1,
        largest_gap_ratio: largest,
        tail_cv,
    })
}

/// Binary PGM (P5) with values mapped affinely from `[min, max]` to `[0, 255]`.
pub fn to_pgm(u: &[f64], side: usize) -> Vec<u8> {
    let (lo, hi) = u
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(u.iter().map(|&x| {
        if hi > lo {
            ((x - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    out
}
