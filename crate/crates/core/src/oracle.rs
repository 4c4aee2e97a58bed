//! Diagonal Gaussian mixture with closed-form perturbed density and score.
//!
//! Under a kernel `N(α x₀, σ² I)` a component `N(μ, diag v)` becomes
//! `N(α μ, diag(α² v + σ²))`, so every quantity stays analytic.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::density::{check_rows, NoiseConditionalDensity};
use crate::grid::{levels, rescale_value};
use crate::sde::{MarginalKernel, SdeSpec};
use crate::stats::{logsumexp, normal_cdf};
use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureOracle<S = f64> {
    dims: usize,
    weights: Vec<S>,
    /// `K × d`, row per component.
    means: Vec<S>,
    /// `K × d` diagonal variances.
    variances: Vec<S>,
}

impl<S: Real> GaussianMixtureOracle<S> {
    pub fn new(weights: Vec<S>, means: Vec<S>, variances: Vec<S>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.is_empty() || !means.len().is_multiple_of(k) || variances.len() != means.len() {
            return Err(Error::invalid("oracle", "need K weights and K × d means and variances"));
        }
        let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if weights.iter().any(|w| !(w.as_f64() > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("oracle", format!("weights must be positive and sum to 1, got {total}")));
        }
        if variances.iter().any(|v| !(v.as_f64() > 0.0)) {
            return Err(Error::invalid("oracle", "variances must be positive"));
        }
        Ok(Self {
            dims: means.len() / k,
            weights,
            means,
            variances,
        })
    }

    pub fn isotropic(weights: Vec<S>, means: Vec<S>, variance: S) -> Result<Self> {
        let n = means.len();
        Self::new(weights, means, vec![variance; n])
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    /// Flat `K × d`.
    pub fn means(&self) -> &[S] {
        &self.means
    }

    fn mean(&self, j: usize) -> &[S] {
        &self.means[j * self.dims..(j + 1) * self.dims]
    }

    fn var(&self, j: usize) -> &[S] {
        &self.variances[j * self.dims..(j + 1) * self.dims]
    }

    fn check_point(&self, x: &[S]) -> Result<()> {
        if x.len() != self.dims {
            return Err(Error::shape("oracle", format!("expected {} coordinates, got {}", self.dims, x.len())));
        }
        Ok(())
    }

    /// `log w_j + log N(x; α μ_j, α² v_j + σ²)` for every component.
    fn component_terms(&self, x: &[S], k: MarginalKernel) -> Vec<S> {
        let (a, s2) = (S::lit(k.mean_scale), S::lit(k.std * k.std));
        let half_ln_2pi = S::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        (0..self.components())
            .map(|j| {
                let mut acc = self.weights[j].ln();
                for ((&xi, &m), &v) in x.iter().zip(self.mean(j)).zip(self.var(j)) {
                    let tv = a * a * v + s2;
                    let r = xi - a * m;
                    acc -= S::lit(0.5) * r * r / tv + S::lit(0.5) * tv.ln() + half_ln_2pi;
                }
                acc
            })
            .collect()
    }

    pub fn log_density_with_kernel(&self, x: &[S], k: MarginalKernel) -> Result<S> {
        self.check_point(x)?;
        Ok(logsumexp(&self.component_terms(x, k)))
    }

    pub fn perturbed_log_density(&self, x: &[S], t: f64, spec: &SdeSpec) -> Result<S> {
        self.log_density_with_kernel(x, spec.marginal(t)?)
    }

    /// Posterior component probabilities given `x_t`.
    pub fn responsibilities(&self, x: &[S], t: f64, spec: &SdeSpec) -> Result<Vec<S>> {
        self.check_point(x)?;
        let terms = self.component_terms(x, spec.marginal(t)?);
        let z = logsumexp(&terms);
        Ok(terms.into_iter().map(|l| (l - z).exp()).collect())
    }

    pub fn score_with_kernel(&self, x: &[S], k: MarginalKernel) -> Result<Vec<S>> {
        self.check_point(x)?;
        let terms = self.component_terms(x, k);
        let z = logsumexp(&terms);
        let (a, s2) = (S::lit(k.mean_scale), S::lit(k.std * k.std));
        let mut out = vec![S::zero(); self.dims];
        for (j, l) in terms.into_iter().enumerate() {
            let r = (l - z).exp();
            for (i, o) in out.iter_mut().enumerate() {
                let tv = a * a * self.var(j)[i] + s2;
                *o += r * (a * self.mean(j)[i] - x[i]) / tv;
            }
        }
        Ok(out)
    }

    /// `∇ₓ log p_t(x)`.
    pub fn score(&self, x: &[S], t: f64, spec: &SdeSpec) -> Result<Vec<S>> {
        self.score_with_kernel(x, spec.marginal(t)?)
    }

    /// `n` exact draws from `p_t`, flat `n × d`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, t: f64, spec: &SdeSpec, rng: &mut R) -> Result<Vec<S>> {
        let k = spec.marginal(t)?;
        let cum: Vec<f64> = self
            .weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w.as_f64();
                Some(*acc)
            })
            .collect();
        let mut out = Vec::with_capacity(n * self.dims);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
            let j = cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1);
            for i in 0..self.dims {
                let sd = (k.mean_scale * k.mean_scale * self.var(j)[i].as_f64() + k.std * k.std).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                out.push(S::lit(k.mean_scale * self.mean(j)[i].as_f64() + sd * z));
            }
        }
        Ok(out)
    }

    /// Exact log mass of the integer cell `values` under `p_t`, with bins
    /// `[x_v − δ, x_v + δ]` open at both extremes.
    pub fn log_prob_discretized(&self, values: &[u8], bit_depth: u8, t: f64, spec: &SdeSpec) -> Result<S> {
        if values.len() != self.dims {
            return Err(Error::shape("oracle", format!("expected {} values, got {}", self.dims, values.len())));
        }
        let k = spec.marginal(t)?;
        let top = levels(bit_depth) - 1;
        let delta = 1.0 / top as f64;
        let terms: Vec<f64> = (0..self.components())
            .map(|j| {
                let mut acc = self.weights[j].as_f64().ln();
                for (i, &v) in values.iter().enumerate() {
                    let m = k.mean_scale * self.mean(j)[i].as_f64();
                    let sd = (k.mean_scale * k.mean_scale * self.var(j)[i].as_f64() + k.std * k.std).sqrt();
                    let x = rescale_value::<f64>(v, bit_depth);
                    let lo = if v == 0 { f64::NEG_INFINITY } else { (x - delta - m) / sd };
                    let hi = if v as usize == top { f64::INFINITY } else { (x + delta - m) / sd };
                    acc += gaussian_interval_mass(lo, hi).ln();
                }
                acc
            })
            .collect();
        Ok(S::lit(logsumexp(&terms)))
    }
}

/// `Φ(hi) − Φ(lo)`, evaluated in whichever tail keeps precision.
fn gaussian_interval_mass(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        normal_cdf(-lo) - normal_cdf(-hi)
    } else {
        normal_cdf(hi) - normal_cdf(lo)
    }
}

/// An oracle paired with the forward process that perturbs it.
#[derive(Clone, Debug)]
pub struct OracleDensity<S = f64> {
    pub oracle: GaussianMixtureOracle<S>,
    pub spec: SdeSpec,
}

impl<S: Real> NoiseConditionalDensity<S> for OracleDensity<S> {
    fn dims(&self) -> usize {
        self.oracle.dims
    }

    fn log_density_continuous_rows(&self, x: &[S], ts: &[f64], _: Option<&[usize]>) -> Result<Vec<S>> {
        check_rows(x.len(), self.oracle.dims, ts.len())?;
        x.chunks(self.oracle.dims)
            .zip(ts)
            .map(|(r, &t)| self.oracle.perturbed_log_density(r, t, &self.spec))
            .collect()
    }

    fn log_density_discretized_rows(
        &self,
        values: &[u8],
        bit_depth: u8,
        ts: &[f64],
        _: Option<&[usize]>,
    ) -> Result<Vec<S>> {
        check_rows(values.len(), self.oracle.dims, ts.len())?;
        values
            .chunks(self.oracle.dims)
            .zip(ts)
            .map(|(r, &t)| self.oracle.log_prob_discretized(r, bit_depth, t, &self.spec))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn oracle() -> GaussianMixtureOracle<f64> {
        GaussianMixtureOracle::new(
            vec![0.2, 0.5, 0.3],
            vec![-0.5, 0.3, 0.4, 0.4, 0.0, -0.6],
            vec![0.02, 0.05, 0.01, 0.03, 0.04, 0.02],
        )
        .unwrap()
    }

    #[test]
    fn score_matches_finite_differences() {
        let o = oracle();
        let spec = SdeSpec::vp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let t = rng.random_range(0.0..spec.horizon);
            let s = o.score(&x, t, &spec).unwrap();
            let h = 1e-6;
            for i in 0..2 {
                let (mut xp, mut xm) = (x, x);
                xp[i] += h;
                xm[i] -= h;
                let num = (o.perturbed_log_density(&xp, t, &spec).unwrap()
                    - o.perturbed_log_density(&xm, t, &spec).unwrap())
                    / (2.0 * h);
                assert!((num - s[i]).abs() <= 1e-6 * num.abs().max(1.0), "{num} vs {}", s[i]);
            }
        }
    }

    #[test]
    fn symmetric_midpoint_has_zero_score() {
        let o = GaussianMixtureOracle::<f64>::isotropic(vec![0.5, 0.5], vec![-0.4, 0.4, 0.4, -0.4], 0.03).unwrap();
        for kind in crate::SdeKind::ALL {
            let spec = SdeSpec::new(kind);
            let s = o.score(&[0.0, 0.0], 0.5 * spec.horizon, &spec).unwrap();
            assert!(s.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn single_gaussian_closed_form() {
        let o = GaussianMixtureOracle::new(vec![1.0], vec![0.3], vec![0.04]).unwrap();
        let spec = SdeSpec::vp();
        let t = 0.07;
        let k = spec.marginal(t).unwrap();
        let tv = k.mean_scale.powi(2) * 0.04 + k.std.powi(2);
        let x = 0.11;
        let m = k.mean_scale * 0.3;
        let expect = -0.5 * (x - m).powi(2) / tv - 0.5 * (2.0 * std::f64::consts::PI * tv).ln();
        assert!((o.perturbed_log_density(&[x], t, &spec).unwrap() - expect).abs() < 1e-12);
        assert!((o.score(&[x], t, &spec).unwrap()[0] - (m - x) / tv).abs() < 1e-12);
    }

    #[test]
    fn vp_long_horizon_approaches_standard_normal() {
        let o = oracle();
        let spec = SdeSpec::vp().with_horizon(1.0);
        for x in [[0.0, 0.0], [1.0, -0.5], [-2.0, 0.3]] {
            let lp = o.perturbed_log_density(&x, 1.0, &spec).unwrap();
            let std = -0.5 * (x[0] * x[0] + x[1] * x[1]) - (2.0 * std::f64::consts::PI).ln();
            assert!((lp - std).abs() < 2e-2, "{lp} vs {std}");
        }
    }

    #[test]
    fn sampler_matches_density_in_bins() {
        let o = GaussianMixtureOracle::new(vec![0.4, 0.6], vec![-0.3, 0.5], vec![0.02, 0.05]).unwrap();
        let spec = SdeSpec::vp();
        let t = 0.05;
        let n = 200_000;
        let xs = o.sample(n, t, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (lo, w) = (-1.0, 0.2);
        for b in 0..10 {
            let (a, c) = (lo + w * b as f64, lo + w * (b + 1) as f64);
            let frac = xs.iter().filter(|&&x| x >= a && x < c).count() as f64 / n as f64;
            // Simpson quadrature of the density over the bin
            let m = 200;
            let h = (c - a) / m as f64;
            let f = |x: f64| o.perturbed_log_density(&[x], t, &spec).unwrap().exp();
            let mut s = f(a) + f(c);
            for i in 1..m {
                s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            let p = s * h / 3.0;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((frac - p).abs() < 5.0 * se + 1e-9, "bin {b}: {frac} vs {p}");
        }
    }

    #[test]
    fn discretized_masses_sum_to_one() {
        let o = oracle();
        let spec = SdeSpec::vp();
        for t in [0.0, 0.05] {
            let mut total = 0.0;
            for a in 0..8u8 {
                for b in 0..8u8 {
                    total += o.log_prob_discretized(&[a, b], 3, t, &spec).unwrap().exp();
                }
            }
            assert!((total - 1.0).abs() < 1e-12, "{total}");
        }
    }

    #[test]
    fn validation() {
        assert!(GaussianMixtureOracle::new(vec![0.5, 0.4], vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixtureOracle::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(oracle().score(&[0.0], 0.0, &SdeSpec::vp()).is_err());
    }
}
