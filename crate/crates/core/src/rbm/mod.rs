//! Binary (±1) restricted Boltzmann machine.
//!
//! Energy `Phi(v, h) = -v^T W h - b_v . v - b_h . h` with `v in {-1,+1}^N_v`,
//! `h in {-1,+1}^N_h`. Conditionals factorize and have means
//! `<h> = tanh(W^T v + b_h)` and `<v> = tanh(W h + b_v)`; a ±1 sample with a
//! given mean `m` is `+1` with probability `(1 + m) / 2`.

pub mod exact;
mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use train::{train, train_on, EpochRecord, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct RbmModel {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
}

impl RbmModel {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            weights: Array2::zeros((n_visible, n_hidden)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    /// Weights drawn from `N(0, (0.01 / sqrt(N_v))^2)`, zero biases.
    pub fn initialized(n_visible: usize, n_hidden: usize, rng: &mut Rng) -> Self {
        let std = 0.01 / (n_visible as f64).sqrt();
        Self::gaussian(n_visible, n_hidden, std, rng)
    }

    /// i.i.d. `N(0, std^2)` weights, zero biases.
    pub fn gaussian(n_visible: usize, n_hidden: usize, std: f64, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let weights = Array2::from_shape_simple_fn((n_visible, n_hidden), || normal.sample(rng));
        Self {
            weights,
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        }
    }

    pub fn from_parts(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self> {
        let (nv, nh) = weights.dim();
        if visible_bias.len() != nv {
            return Err(Error::DimensionMismatch {
                expected: nv,
                got: visible_bias.len(),
            });
        }
        if hidden_bias.len() != nh {
            return Err(Error::DimensionMismatch {
                expected: nh,
                got: hidden_bias.len(),
            });
        }
        let model = Self {
            weights,
            visible_bias,
            hidden_bias,
        };
        if !model.is_finite() {
            return Err(Error::InvalidParameter("non-finite RBM parameter".into()));
        }
        Ok(model)
    }

    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    /// `N_v x N_h`.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn visible_bias(&self) -> &Array1<f64> {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &Array1<f64> {
        &self.hidden_bias
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|x| x.is_finite())
            && self.visible_bias.iter().all(|x| x.is_finite())
            && self.hidden_bias.iter().all(|x| x.is_finite())
    }

    /// `Phi(v, h)`.
    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        self.check_visible(v.len())?;
        self.check_hidden(h.len())?;
        let v = ArrayView1::from(v);
        let h = ArrayView1::from(h);
        Ok(-v.dot(&self.weights.dot(&h)) - self.visible_bias.dot(&v) - self.hidden_bias.dot(&h))
    }

    pub fn hidden_expectation(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_visible(v.len())?;
        let act = ArrayView1::from(v).dot(&self.weights) + &self.hidden_bias;
        Ok(act.mapv(f64::tanh).to_vec())
    }

    pub fn visible_expectation(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_hidden(h.len())?;
        let act = self.weights.dot(&ArrayView1::from(h)) + &self.visible_bias;
        Ok(act.mapv(f64::tanh).to_vec())
    }

    /// One stochastic `v -> h -> v~` pass.
    pub fn reconstruct(&self, v: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let h = sample_binary(&self.hidden_expectation(v)?, rng);
        Ok(sample_binary(&self.visible_expectation(&h)?, rng))
    }

    /// Row-wise `tanh(V W + b_h)` for a batch `B x N_v`.
    pub fn hidden_expectation_batch(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let mut act = v.dot(&self.weights);
        act += &self.hidden_bias;
        act.mapv_inplace(tanh);
        act
    }

    /// Row-wise `tanh(H W^T + b_v)` for a batch `B x N_h`.
    pub fn visible_expectation_batch(&self, h: ArrayView2<f64>) -> Array2<f64> {
        let mut act = h.dot(&self.weights.t());
        act += &self.visible_bias;
        act.mapv_inplace(tanh);
        act
    }

    /// Batched stochastic reconstruction, rows consumed in order from `rng`.
    pub fn reconstruct_batch(&self, v: ArrayView2<f64>, rng: &mut Rng) -> Array2<f64> {
        let mut h = self.hidden_expectation_batch(v);
        sample_binary_inplace(&mut h, rng);
        let mut out = self.visible_expectation_batch(h.view());
        sample_binary_inplace(&mut out, rng);
        out
    }

    fn check_visible(&self, len: usize) -> Result<()> {
        if len != self.n_visible() {
            return Err(Error::DimensionMismatch {
                expected: self.n_visible(),
                got: len,
            });
        }
        Ok(())
    }

    fn check_hidden(&self, len: usize) -> Result<()> {
        if len != self.n_hidden() {
            return Err(Error::DimensionMismatch {
                expected: self.n_hidden(),
                got: len,
            });
        }
        Ok(())
    }

    fn apply(&mut self, step: &Gradient) {
        self.weights += &step.weights;
        self.visible_bias += &step.visible;
        self.hidden_bias += &step.hidden;
    }
}

/// `tanh` through a single `exp`; libm's version goes via `expm1` and
/// dominated training profiles. Absolute error stays below ~2e-16.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    if x.abs() > 19.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

/// Draw `+1` with probability `(1 + m) / 2` for each mean `m`.
pub fn sample_binary(expectations: &[f64], rng: &mut Rng) -> Vec<f64> {
    expectations
        .iter()
        .map(|&m| draw_sign(m, rng))
        .collect()
}

#[inline]
fn draw_sign(mean: f64, rng: &mut Rng) -> f64 {
    if rng.gen::<f64>() < 0.5 * (1.0 + mean) {
        1.0
    } else {
        -1.0
    }
}

fn sample_binary_inplace(a: &mut Array2<f64>, rng: &mut Rng) {
    a.iter_mut().for_each(|m| *m = draw_sign(*m, rng));
}

/// Parameter-shaped container for gradients, updates and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Array2<f64>,
    pub visible: Array1<f64>,
    pub hidden: Array1<f64>,
}

impl Gradient {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            weights: Array2::zeros((n_visible, n_hidden)),
            visible: Array1::zeros(n_visible),
            hidden: Array1::zeros(n_hidden),
        }
    }

    pub fn zeros_like(model: &RbmModel) -> Self {
        Self::zeros(model.n_visible(), model.n_hidden())
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        (&self.weights * &other.weights).sum()
            + self.visible.dot(&other.visible)
            + self.hidden.dot(&other.hidden)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Weights row-major, then visible, then hidden.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(self.visible.iter())
            .chain(self.hidden.iter())
            .copied()
            .collect()
    }
}

/// Heavy-ball momentum state; starts at zero.
pub type Velocity = Gradient;

/// What one CD-1 step computed.
#[derive(Debug, Clone)]
pub struct Cd1Step {
    /// Minibatch-averaged `<v h>_data - <v~ h~>_recon` etc.
    pub gradient: Gradient,
    /// The sampled reconstructions `v~`, one row per input.
    pub reconstruction: Array2<f64>,
}

/// CD-1 statistics for a `B x N_v` minibatch, without touching the model.
///
/// Positive phase uses `<h|v>`; the negative phase samples `h ~ P(h|v)`,
/// `v~ ~ P(v|h)` and uses `<h|v~>`.
pub fn cd1_gradient(model: &RbmModel, batch: ArrayView2<f64>, rng: &mut Rng) -> Result<Cd1Step> {
    let b = batch.nrows();
    if b == 0 {
        return Err(Error::EmptyInput("minibatch"));
    }
    if batch.ncols() != model.n_visible() {
        return Err(Error::DimensionMismatch {
            expected: model.n_visible(),
            got: batch.ncols(),
        });
    }
    let h_data = model.hidden_expectation_batch(batch);
    let mut h_sample = h_data.clone();
    sample_binary_inplace(&mut h_sample, rng);
    let mut recon = model.visible_expectation_batch(h_sample.view());
    sample_binary_inplace(&mut recon, rng);
    let h_recon = model.hidden_expectation_batch(recon.view());

    let scale = 1.0 / b as f64;
    let mut weights = batch.t().dot(&h_data);
    weights -= &recon.t().dot(&h_recon);
    weights *= scale;
    let visible = (&batch - &recon).sum_axis(Axis(0)) * scale;
    let hidden = (&h_data - &h_recon).sum_axis(Axis(0)) * scale;
    Ok(Cd1Step {
        gradient: Gradient {
            weights,
            visible,
            hidden,
        },
        reconstruction: recon,
    })
}

/// `velocity <- mu * velocity + eps * g; model += velocity`.
pub fn cd1_update(
    model: &mut RbmModel,
    batch: ArrayView2<f64>,
    learning_rate: f64,
    momentum: f64,
    velocity: &mut Velocity,
    rng: &mut Rng,
) -> Result<Cd1Step> {
    let step = cd1_gradient(model, batch, rng)?;
    let g = &step.gradient;
    Zip::from(&mut velocity.weights)
        .and(&g.weights)
        .for_each(|u, &d| *u = momentum * *u + learning_rate * d);
    Zip::from(&mut velocity.visible)
        .and(&g.visible)
        .for_each(|u, &d| *u = momentum * *u + learning_rate * d);
    Zip::from(&mut velocity.hidden)
        .and(&g.hidden)
        .for_each(|u, &d| *u = momentum * *u + learning_rate * d);
    model.apply(velocity);
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    fn random_model(nv: usize, nh: usize, seed: u64) -> RbmModel {
        let mut rng = stream(seed, &[]);
        let mut m = RbmModel::gaussian(nv, nh, 0.7, &mut rng);
        let normal = Normal::new(0.0, 0.3).unwrap();
        m.visible_bias.mapv_inplace(|_| normal.sample(&mut rng));
        m.hidden_bias.mapv_inplace(|_| normal.sample(&mut rng));
        m
    }

    fn signs(bits: usize, n: usize) -> Vec<f64> {
        (0..n).map(|k| if bits >> k & 1 == 1 { 1.0 } else { -1.0 }).collect()
    }

    /// `sum_h h P(h|v)` with `P(h|v) ~ exp(-Phi(v, h))` by enumeration.
    fn enumerated_hidden_mean(m: &RbmModel, v: &[f64]) -> Vec<f64> {
        let nh = m.n_hidden();
        let mut z = 0.0;
        let mut acc = vec![0.0; nh];
        for bits in 0..1usize << nh {
            let h = signs(bits, nh);
            let w = (-m.energy(v, &h).unwrap()).exp();
            z += w;
            acc.iter_mut().zip(&h).for_each(|(a, hv)| *a += w * hv);
        }
        acc.into_iter().map(|a| a / z).collect()
    }

    fn enumerated_visible_mean(m: &RbmModel, h: &[f64]) -> Vec<f64> {
        let nv = m.n_visible();
        let mut z = 0.0;
        let mut acc = vec![0.0; nv];
        for bits in 0..1usize << nv {
            let v = signs(bits, nv);
            let w = (-m.energy(&v, h).unwrap()).exp();
            z += w;
            acc.iter_mut().zip(&v).for_each(|(a, vv)| *a += w * vv);
        }
        acc.into_iter().map(|a| a / z).collect()
    }

    #[test]
    fn zero_model_expectations_vanish() {
        let m = RbmModel::zeros(5, 3);
        assert_eq!(m.hidden_expectation(&[1.0; 5]).unwrap(), vec![0.0; 3]);
        assert_eq!(m.visible_expectation(&[-1.0; 3]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn single_term_expectations() {
        let b = 0.37;
        let w = array![[b, -b]];
        let m = RbmModel::from_parts(w, Array1::zeros(1), Array1::zeros(2)).unwrap();
        let h = m.hidden_expectation(&[1.0]).unwrap();
        assert_eq!(h, vec![b.tanh(), (-b).tanh()]);
        let v = m.visible_expectation(&[1.0, -1.0]).unwrap();
        assert_eq!(v, vec![(2.0 * b).tanh()]);
        let m1 = RbmModel::from_parts(array![[b]], Array1::zeros(1), Array1::zeros(1)).unwrap();
        assert_eq!(m1.visible_expectation(&[1.0]).unwrap(), vec![b.tanh()]);
    }

    #[test]
    fn expectations_match_enumeration() {
        for seed in 0..5 {
            let m = random_model(4, 2, seed);
            for bits in 0..16 {
                let v = signs(bits, 4);
                let fast = m.hidden_expectation(&v).unwrap();
                let slow = enumerated_hidden_mean(&m, &v);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3), "{a} vs {b}");
                }
            }
            for bits in 0..4 {
                let h = signs(bits, 2);
                let fast = m.visible_expectation(&h).unwrap();
                let slow = enumerated_visible_mean(&m, &h);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn conditional_factorizes_over_hidden_units() {
        let m = random_model(5, 3, 17);
        let v = signs(0b10110, 5);
        let means = m.hidden_expectation(&v).unwrap();
        let z: f64 = (0..8)
            .map(|bits| (-m.energy(&v, &signs(bits, 3)).unwrap()).exp())
            .sum();
        for bits in 0..8 {
            let h = signs(bits, 3);
            let joint = (-m.energy(&v, &h).unwrap()).exp() / z;
            let product: f64 = h
                .iter()
                .zip(&means)
                .map(|(hv, mu)| 0.5 * (1.0 + hv * mu))
                .product();
            assert!((joint - product).abs() < 1e-13);
        }
    }

    #[test]
    fn spin_flip_covariance() {
        let mut rng = stream(4, &[]);
        let m = RbmModel::gaussian(6, 3, 0.8, &mut rng);
        let neg = RbmModel::from_parts(
            -m.weights.clone(),
            Array1::zeros(6),
            Array1::zeros(3),
        )
        .unwrap();
        let v = signs(0b101101, 6);
        let nv: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(
            neg.hidden_expectation(&nv).unwrap(),
            m.hidden_expectation(&v).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_errors() {
        let m = RbmModel::zeros(4, 2);
        assert!(m.hidden_expectation(&[1.0; 3]).is_err());
        assert!(m.visible_expectation(&[1.0; 3]).is_err());
        assert!(cd1_gradient(&m, Array2::zeros((2, 3)).view(), &mut stream(0, &[])).is_err());
        assert!(cd1_gradient(&m, Array2::zeros((0, 4)).view(), &mut stream(0, &[])).is_err());
    }

    #[test]
    fn sample_binary_statistics() {
        let mut rng = stream(21, &[]);
        assert!(sample_binary(&[1.0; 1000], &mut rng).iter().all(|&x| x == 1.0));
        assert!(sample_binary(&[-1.0; 1000], &mut rng).iter().all(|&x| x == -1.0));
        let n = 100_000;
        let draws = sample_binary(&vec![0.5; n], &mut rng);
        let freq = draws.iter().filter(|&&x| x == 1.0).count() as f64 / n as f64;
        // sd of the frequency is sqrt(0.75 * 0.25 / 1e5) ~ 0.00137
        assert!((freq - 0.75).abs() < 0.005, "{freq}");
        let draws = sample_binary(&vec![0.0; n], &mut rng);
        let freq = draws.iter().filter(|&&x| x == 1.0).count() as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.005, "{freq}");
    }

    #[test]
    fn zero_model_reconstructs_noise() {
        let m = RbmModel::zeros(49, 9);
        let mut rng = stream(2, &[]);
        let n = 2000;
        let mut total = 0.0;
        for _ in 0..n {
            total += m.reconstruct(&[1.0; 49], &mut rng).unwrap().iter().sum::<f64>();
        }
        let mean = total / (n * 49) as f64;
        // sd of the mean is 1 / sqrt(98000) ~ 0.0032
        assert!(mean.abs() < 0.015, "{mean}");
    }

    #[test]
    fn reconstruct_is_deterministic() {
        let m = random_model(9, 4, 3);
        let v = signs(0b110010011, 9);
        let a = m.reconstruct(&v, &mut stream(5, &[1])).unwrap();
        let b = m.reconstruct(&v, &mut stream(5, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fast_tanh_matches_libm() {
        let mut x = -25.0;
        while x < 25.0 {
            assert!((tanh(x) - x.tanh()).abs() < 4e-16, "{x}");
            x += 0.00731;
        }
        assert_eq!(tanh(0.0), 0.0);
    }

    #[test]
    fn cd1_hand_arithmetic_two_by_one() {
        let m = RbmModel::from_parts(
            array![[0.3], [-0.2]],
            array![0.1, -0.05],
            array![0.02],
        )
        .unwrap();
        let v = [1.0, -1.0];
        let batch = Array2::from_shape_vec((1, 2), v.to_vec()).unwrap();
        let eps = 1e-3;
        let mut model = m.clone();
        let mut vel = Velocity::zeros_like(&m);
        let step = cd1_update(&mut model, batch.view(), eps, 0.0, &mut vel, &mut stream(8, &[]))
            .unwrap();
        let vt = [step.reconstruction[[0, 0]], step.reconstruction[[0, 1]]];
        let h_data = (v[0] * 0.3 + v[1] * -0.2 + 0.02f64).tanh();
        let h_rec = (vt[0] * 0.3 + vt[1] * -0.2 + 0.02f64).tanh();
        for i in 0..2 {
            let dw = model.weights[[i, 0]] - m.weights[[i, 0]];
            let expected = eps * (v[i] * h_data - vt[i] * h_rec);
            assert!((dw - expected).abs() < 1e-15, "{dw} vs {expected}");
            let db = model.visible_bias[i] - m.visible_bias[i];
            assert!((db - eps * (v[i] - vt[i])).abs() < 1e-15);
        }
        let dbh = model.hidden_bias[0] - m.hidden_bias[0];
        assert!((dbh - eps * (h_data - h_rec)).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let m = random_model(3, 2, 9);
        let batch = Array2::from_elem((1, 3), 1.0);
        let mut model = m.clone();
        let mut vel = Velocity::zeros_like(&m);
        let mut rng = stream(1, &[]);
        let s1 = cd1_update(&mut model, batch.view(), 0.1, 0.5, &mut vel, &mut rng).unwrap();
        let after_first = model.clone();
        let s2 = cd1_update(&mut model, batch.view(), 0.1, 0.5, &mut vel, &mut rng).unwrap();
        let expected = &s1.gradient.weights * 0.05 + &s2.gradient.weights * 0.1;
        let got = &model.weights - &after_first.weights;
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
