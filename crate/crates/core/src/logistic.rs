//! Per-dimension logistic mixtures: density, CDF, discretized bin mass and
//! sampling, evaluated directly on scalars.

use rand::Rng;

use crate::stats::logsumexp;
use crate::grid::levels;
use crate::{Error, Real, Result};

/// Conditional mixture parameters for all `d` dimensions of one sample,
/// stored dimension-major: entries `k·K .. (k+1)·K` belong to dimension `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams<S = f64> {
    components: usize,
    pub logits: Vec<S>,
    pub means: Vec<S>,
    pub log_scales: Vec<S>,
}

/// Mixture for a single dimension.
#[derive(Clone, Copy, Debug)]
pub struct Mixture1d<'a, S> {
    pub logits: &'a [S],
    pub means: &'a [S],
    pub log_scales: &'a [S],
}

impl<S: Real> MixtureParams<S> {
    pub fn new(components: usize, logits: Vec<S>, means: Vec<S>, log_scales: Vec<S>) -> Result<Self> {
        if components == 0
            || logits.is_empty()
            || !logits.len().is_multiple_of(components)
            || means.len() != logits.len()
            || log_scales.len() != logits.len()
        {
            return Err(Error::invalid(
                "mixture params",
                format!(
                    "K = {components} with {} / {} / {} entries",
                    logits.len(),
                    means.len(),
                    log_scales.len()
                ),
            ));
        }
        Ok(Self {
            components,
            logits,
            means,
            log_scales,
        })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dims(&self) -> usize {
        self.logits.len() / self.components
    }

    pub fn dim(&self, k: usize) -> Mixture1d<'_, S> {
        let r = k * self.components..(k + 1) * self.components;
        Mixture1d {
            logits: &self.logits[r.clone()],
            means: &self.means[r.clone()],
            log_scales: &self.log_scales[r],
        }
    }

    /// `Σ_k log p_k(x_k)` for continuous `x` on the rescaled domain.
    pub fn log_pdf(&self, x: &[S]) -> S {
        (0..self.dims()).map(|k| self.dim(k).log_pdf(x[k])).sum()
    }

    /// `Σ_k log P_k(v_k)` for integer values at `bit_depth`.
    pub fn log_prob_discrete(&self, values: &[u8], bit_depth: u8) -> S {
        (0..self.dims()).map(|k| self.dim(k).log_bin_prob(values[k], bit_depth)).sum()
    }
}

/// `log σ(x)`, stable.
fn log_sigmoid<S: Real>(x: S) -> S {
    -(-x).softplus()
}

impl<S: Real> Mixture1d<'_, S> {
    pub fn components(&self) -> usize {
        self.logits.len()
    }

    fn log_weights(&self) -> Vec<S> {
        let z = logsumexp(self.logits);
        self.logits.iter().map(|&l| l - z).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights().iter().map(|w| w.as_f64().exp()).collect()
    }

    pub fn log_pdf(&self, x: S) -> S {
        let terms: Vec<S> = self
            .log_weights()
            .iter()
            .zip(self.means.iter().zip(self.log_scales))
            .map(|(&w, (&m, &ls))| {
                let z = (x - m) * (-ls).exp();
                w - z - ls - S::lit(2.0) * (-z).softplus()
            })
            .collect();
        logsumexp(&terms)
    }

    pub fn cdf(&self, x: S) -> S {
        self.log_weights()
            .iter()
            .zip(self.means.iter().zip(self.log_scales))
            .map(|(&w, (&m, &ls))| w.exp() * ((x - m) * (-ls).exp()).sigmoid())
            .sum()
    }

    /// Log mass of the bin of integer value `v`: the interval
    /// `[x_v − δ, x_v + δ]` with `δ = 1/(L−1)`, open-ended at both extremes.
    pub fn log_bin_prob(&self, v: u8, bit_depth: u8) -> S {
        let top = levels(bit_depth) - 1;
        let x = crate::grid::rescale_value::<S>(v, bit_depth);
        let delta = S::lit(1.0 / top as f64);
        let terms: Vec<S> = self
            .log_weights()
            .iter()
            .zip(self.means.iter().zip(self.log_scales))
            .map(|(&w, (&m, &ls))| {
                let inv_s = (-ls).exp();
                let c = x - m;
                let lp = if top == 0 {
                    S::zero()
                } else if v == 0 {
                    log_sigmoid((c + delta) * inv_s)
                } else if v as usize == top {
                    log_sigmoid(-(c - delta) * inv_s)
                } else {
                    // log[σ(a) − σ(b)] = log σ(a) + log(1 − σ(b)) + log(1 − e^{b−a})
                    let (a, b) = ((c + delta) * inv_s, (c - delta) * inv_s);
                    log_sigmoid(a) + log_sigmoid(-b) + (S::lit(2.0) * delta * inv_s).log1mexp()
                };
                w + lp
            })
            .collect();
        logsumexp(&terms)
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let w = self.weights();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, p) in w.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        w.len() - 1
    }

    /// Draws from the continuous mixture by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> S {
        let j = self.pick_component(rng);
        let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
        let logit = u.ln() - (-u).ln_1p();
        self.means[j] + self.log_scales[j].exp() * S::lit(logit)
    }

    /// Draws an integer value from the discretized mixture: a continuous
    /// draw binned to the nearest grid point and clamped.
    pub fn sample_discrete<R: Rng + ?Sized>(&self, bit_depth: u8, rng: &mut R) -> u8 {
        crate::grid::snap_value(self.sample(rng), bit_depth)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn mix() -> MixtureParams<f64> {
        MixtureParams::new(
            3,
            vec![0.2, -0.5, 1.0, 0.0, 0.0, 0.0],
            vec![-0.6, 0.1, 0.7, 0.0, 0.3, -0.3],
            vec![-1.5, -2.0, -1.0, -0.5, -3.0, -2.5],
        )
        .unwrap()
    }

    #[test]
    fn pdf_integrates_to_one() {
        let m = mix();
        for k in 0..2 {
            let d = m.dim(k);
            // trapezoid on a wide fine grid
            let (lo, hi, n) = (-40.0, 40.0, 400_000);
            let h = (hi - lo) / n as f64;
            let s: f64 = (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    w * d.log_pdf(lo + h * i as f64).exp()
                })
                .sum::<f64>()
                * h;
            assert!((s - 1.0).abs() < 1e-6, "{s}");
        }
    }

    #[test]
    fn pdf_is_cdf_derivative() {
        let d = mix();
        let d = d.dim(0);
        for &x in &[-0.9, -0.2, 0.4, 1.3] {
            let h = 1e-6;
            let num = (d.cdf(x + h) - d.cdf(x - h)) / (2.0 * h);
            assert!((num - d.log_pdf(x).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn bin_masses_sum_to_one_and_match_cdf() {
        let m = mix();
        for b in 1..=5u8 {
            for k in 0..2 {
                let d = m.dim(k);
                let probs: Vec<f64> = (0..levels(b)).map(|v| d.log_bin_prob(v as u8, b).exp()).collect();
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let delta = 1.0 / (levels(b) - 1) as f64;
                for v in 1..levels(b) - 1 {
                    let x = crate::grid::rescale_value::<f64>(v as u8, b);
                    let via_cdf = d.cdf(x + delta) - d.cdf(x - delta);
                    assert!((probs[v] - via_cdf).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn one_bit_symmetric_component_gives_half() {
        let m = MixtureParams::<f64>::new(1, vec![0.0], vec![0.0], vec![0.0]).unwrap();
        assert!((m.dim(0).log_bin_prob(0, 1).exp() - 0.5).abs() < 1e-15);
        assert!((m.dim(0).log_bin_prob(1, 1).exp() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tight_component_at_grid_point_has_mass_near_one() {
        let x = crate::grid::rescale_value::<f64>(5, 3);
        let m = MixtureParams::new(1, vec![0.0], vec![x], vec![-7.0]).unwrap();
        assert!(m.dim(0).log_bin_prob(5, 3).exp() > 1.0 - 1e-12);
    }

    #[test]
    fn sampler_matches_cdf_kolmogorov_smirnov() {
        let m = mix();
        let d = m.dim(0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = d.cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn sampling_is_deterministic_and_point_mass_returns_mean() {
        let m = mix();
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..10).map(|_| m.dim(1).sample(&mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..10).map(|_| m.dim(1).sample(&mut r)).collect()
        };
        assert_eq!(a, b);
        let p = MixtureParams::<f64>::new(2, vec![0.0, -1e9], vec![0.42, -0.9], vec![-30.0, 0.0]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            assert!((p.dim(0).sample(&mut r) - 0.42).abs() < 1e-9);
        }
    }

    #[test]
    fn discrete_sampler_frequencies_match_bin_masses() {
        let m = mix();
        let d = m.dim(0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[d.sample_discrete(3, &mut rng) as usize] += 1;
        }
        for (v, &c) in counts.iter().enumerate() {
            let p = d.log_bin_prob(v as u8, 3).exp();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 5.0 * se + 1e-9, "v={v}");
        }
    }

    #[test]
    fn rejects_inconsistent_lengths() {
        assert!(MixtureParams::new(2, vec![0.0; 4], vec![0.0; 3], vec![0.0; 4]).is_err());
        assert!(MixtureParams::<f64>::new(0, vec![], vec![], vec![]).is_err());
    }
}
