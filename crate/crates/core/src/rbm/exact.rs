//! Exact quantities for tiny machines by enumerating every joint `(v, h)`.
//!
//! Nothing here uses the closed-form `tanh` conditionals: all probabilities
//! come from `exp(-Phi)` summed over explicit states, so these routines can
//! serve as an independent check on the fast paths in the parent module.
//! States are indexed by bit patterns, bit `k` set meaning unit `k` is `+1`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use super::{Gradient, RbmModel};
use crate::error::{Error, Result};

/// Largest `N_v + N_h` accepted.
pub const ENUMERATION_LIMIT: usize = 20;

#[inline]
fn sign(bits: usize, k: usize) -> f64 {
    if bits >> k & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

pub fn state_to_signs(bits: usize, n: usize) -> Vec<f64> {
    (0..n).map(|k| sign(bits, k)).collect()
}

pub fn signs_to_state(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .fold(0, |acc, (k, _)| acc | 1 << k)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Empirical distribution `q(v)` over visible states.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDistribution {
    n_visible: usize,
    probs: Vec<(usize, f64)>,
}

impl DataDistribution {
    pub fn from_samples<S: AsRef<[f64]>>(n_visible: usize, samples: &[S]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("data samples"));
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for s in samples {
            let s = s.as_ref();
            if s.len() != n_visible {
                return Err(Error::DimensionMismatch {
                    expected: n_visible,
                    got: s.len(),
                });
            }
            *counts.entry(signs_to_state(s)).or_default() += 1;
        }
        let n = samples.len() as f64;
        let probs = counts.into_iter().map(|(s, c)| (s, c as f64 / n)).collect();
        Ok(Self { n_visible, probs })
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    /// `(state, probability)` pairs with nonzero probability.
    pub fn support(&self) -> &[(usize, f64)] {
        &self.probs
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().map(|(_, p)| p * p.ln()).sum::<f64>()
    }
}

/// Table of `-Phi(v, h)` over all joint states, `v` major.
struct JointTable {
    nv: usize,
    nh: usize,
    log_weights: Vec<f64>,
    log_z: f64,
}

impl JointTable {
    fn build(model: &RbmModel) -> Result<Self> {
        let (nv, nh) = (model.n_visible(), model.n_hidden());
        if nv + nh > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                units: nv + nh,
                limit: ENUMERATION_LIMIT,
            });
        }
        let w = model.weights();
        let bv = model.visible_bias();
        let bh = model.hidden_bias();
        let mut log_weights = Vec::with_capacity(1 << (nv + nh));
        for vs in 0..1usize << nv {
            for hs in 0..1usize << nh {
                let mut neg_phi = 0.0;
                for i in 0..nv {
                    let vi = sign(vs, i);
                    neg_phi += bv[i] * vi;
                    for a in 0..nh {
                        neg_phi += vi * w[[i, a]] * sign(hs, a);
                    }
                }
                for a in 0..nh {
                    neg_phi += bh[a] * sign(hs, a);
                }
                log_weights.push(neg_phi);
            }
        }
        let log_z = log_sum_exp(log_weights.iter().copied());
        Ok(Self {
            nv,
            nh,
            log_weights,
            log_z,
        })
    }

    fn row(&self, vs: usize) -> &[f64] {
        let n = 1 << self.nh;
        &self.log_weights[vs * n..(vs + 1) * n]
    }

    /// `P(h | v)` over all hidden states.
    fn hidden_conditional(&self, vs: usize) -> Vec<f64> {
        let row = self.row(vs);
        let lz = log_sum_exp(row.iter().copied());
        row.iter().map(|x| (x - lz).exp()).collect()
    }

    /// `E[h | v]` from the enumerated conditional.
    fn hidden_mean(&self, vs: usize) -> Vec<f64> {
        let p = self.hidden_conditional(vs);
        (0..self.nh)
            .map(|a| p.iter().enumerate().map(|(hs, pr)| pr * sign(hs, a)).sum())
            .collect()
    }

    /// `P(v | h)` over all visible states.
    fn visible_conditional(&self, hs: usize) -> Vec<f64> {
        let n = 1 << self.nh;
        let col = |vs: usize| self.log_weights[vs * n + hs];
        let lz = log_sum_exp((0..1usize << self.nv).map(col));
        (0..1usize << self.nv).map(|vs| (col(vs) - lz).exp()).collect()
    }

    fn visible_log_marginal(&self, vs: usize) -> f64 {
        log_sum_exp(self.row(vs).iter().copied()) - self.log_z
    }
}

pub fn log_partition(model: &RbmModel) -> Result<f64> {
    Ok(JointTable::build(model)?.log_z)
}

/// `p~(v)` for every visible state.
pub fn visible_marginal(model: &RbmModel) -> Result<Vec<f64>> {
    let t = JointTable::build(model)?;
    Ok((0..1usize << t.nv)
        .map(|vs| t.visible_log_marginal(vs).exp())
        .collect())
}

fn check_data(model: &RbmModel, data: &DataDistribution) -> Result<()> {
    if data.n_visible != model.n_visible() {
        return Err(Error::DimensionMismatch {
            expected: model.n_visible(),
            got: data.n_visible,
        });
    }
    Ok(())
}

/// `KL(q || p~) = sum_v q(v) ln(q(v) / p~(v))`.
pub fn kl_divergence(model: &RbmModel, data: &DataDistribution) -> Result<f64> {
    check_data(model, data)?;
    let t = JointTable::build(model)?;
    Ok(data
        .probs
        .iter()
        .map(|&(vs, q)| q * (q.ln() - t.visible_log_marginal(vs)))
        .sum())
}

/// Exact gradient of the mean log-likelihood `sum_v q(v) ln p~(v)`, i.e.
/// `-dKL/dtheta`: data moments minus model moments.
pub fn exact_loglik_gradient(model: &RbmModel, data: &DataDistribution) -> Result<Gradient> {
    check_data(model, data)?;
    let t = JointTable::build(model)?;
    let (nv, nh) = (t.nv, t.nh);
    let mut g = Gradient::zeros(nv, nh);

    for &(vs, q) in &data.probs {
        let hm = t.hidden_mean(vs);
        for i in 0..nv {
            let vi = sign(vs, i);
            g.visible[i] += q * vi;
            for a in 0..nh {
                g.weights[[i, a]] += q * vi * hm[a];
            }
        }
        for a in 0..nh {
            g.hidden[a] += q * hm[a];
        }
    }

    let n = 1usize << nh;
    for vs in 0..1usize << nv {
        for hs in 0..n {
            let p = (t.log_weights[vs * n + hs] - t.log_z).exp();
            for i in 0..nv {
                let vi = sign(vs, i);
                g.visible[i] -= p * vi;
                for a in 0..nh {
                    g.weights[[i, a]] -= p * vi * sign(hs, a);
                }
            }
            for a in 0..nh {
                g.hidden[a] -= p * sign(hs, a);
            }
        }
    }
    Ok(g)
}

/// Expectation of the CD-1 statistic over `v ~ q`, `h ~ P(h|v)`, `v~ ~ P(v~|h)`.
pub fn expected_cd1_update(model: &RbmModel, data: &DataDistribution) -> Result<Gradient> {
    check_data(model, data)?;
    let t = JointTable::build(model)?;
    let (nv, nh) = (t.nv, t.nh);
    let n_vis = 1usize << nv;
    let n_hid = 1usize << nh;

    let hidden_means: Vec<Vec<f64>> = (0..n_vis).map(|vs| t.hidden_mean(vs)).collect();
    let visible_given_h: Vec<Vec<f64>> = (0..n_hid).map(|hs| t.visible_conditional(hs)).collect();

    let mut g = Gradient::zeros(nv, nh);
    for &(vs, q) in &data.probs {
        let hm = &hidden_means[vs];
        for i in 0..nv {
            let vi = sign(vs, i);
            g.visible[i] += q * vi;
            for a in 0..nh {
                g.weights[[i, a]] += q * vi * hm[a];
            }
        }
        for a in 0..nh {
            g.hidden[a] += q * hm[a];
        }
        // Distribution of v~ after one v -> h -> v~ pass from vs.
        let ph = t.hidden_conditional(vs);
        let mut pv_recon = vec![0.0; n_vis];
        for (hs, &p_h) in ph.iter().enumerate() {
            for (acc, &p_v) in pv_recon.iter_mut().zip(&visible_given_h[hs]) {
                *acc += p_h * p_v;
            }
        }
        for (rs, &pr) in pv_recon.iter().enumerate() {
            let w = q * pr;
            let hr = &hidden_means[rs];
            for i in 0..nv {
                let vi = sign(rs, i);
                g.visible[i] -= w * vi;
                for a in 0..nh {
                    g.weights[[i, a]] -= w * vi * hr[a];
                }
            }
            for a in 0..nh {
                g.hidden[a] -= w * hr[a];
            }
        }
    }
    Ok(g)
}

/// Model with one scalar parameter shifted; index order matches [`Gradient::flatten`].
pub fn perturbed(model: &RbmModel, index: usize, delta: f64) -> RbmModel {
    let (nv, nh) = (model.n_visible(), model.n_hidden());
    let mut w: Array2<f64> = model.weights().clone();
    let mut bv: Array1<f64> = model.visible_bias().clone();
    let mut bh: Array1<f64> = model.hidden_bias().clone();
    if index < nv * nh {
        w[[index / nh, index % nh]] += delta;
    } else if index < nv * nh + nv {
        bv[index - nv * nh] += delta;
    } else {
        bh[index - nv * nh - nv] += delta;
    }
    RbmModel::from_parts(w, bv, bh).expect("shapes preserved")
}
