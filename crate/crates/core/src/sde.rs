//! Forward diffusions (VE, VP, sub-VP) on the rescaled pixel domain.
//!
//! Time runs over `[0, T]` and every schedule is written in terms of the
//! normalized time `t / T`, so `T` only stretches the clock:
//!
//! | kind   | drift f(x,t)  | diffusion g(t)                               | α(t)        | σ²(t)                              |
//! |--------|---------------|----------------------------------------------|-------------|------------------------------------|
//! | VE     | 0             | σ_min r^{t/T} √(2 ln r / T), r = σ_max/σ_min | 1           | σ_min² (r^{2t/T} − 1)              |
//! | VP     | −½β(t)x       | √β(t)                                        | e^{−B(t)/2} | (1 − e^{−B(t)}) · scale²           |
//! | sub-VP | −½β(t)x       | √(β(t)(1 − e^{−2B(t)}))                      | e^{−B(t)/2} | (1 − e^{−B(t)})² · scale²          |
//!
//! with β(t) = β_min + (t/T)(β_max − β_min) and B(t) = ∫₀ᵗ β.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::grid::Dataset;
use crate::stats::{folded_normal_mean, neumaier_sum, stream_rng};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SdeKind {
    #[serde(rename = "ve")]
    Ve,
    #[serde(rename = "vp")]
    Vp,
    #[serde(rename = "subvp")]
    SubVp,
}

impl SdeKind {
    pub const ALL: [SdeKind; 3] = [SdeKind::Ve, SdeKind::Vp, SdeKind::SubVp];

    pub fn name(self) -> &'static str {
        match self {
            SdeKind::Ve => "ve",
            SdeKind::Vp => "vp",
            SdeKind::SubVp => "subvp",
        }
    }

    /// Default horizons: 0.5 (VE), 0.1 (VP), 0.025 (sub-VP).
    pub fn default_horizon(self) -> f64 {
        match self {
            SdeKind::Ve => 0.5,
            SdeKind::Vp => 0.1,
            SdeKind::SubVp => 0.025,
        }
    }
}

impl std::str::FromStr for SdeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ve" => Ok(SdeKind::Ve),
            "vp" => Ok(SdeKind::Vp),
            "subvp" | "sub-vp" | "sub_vp" => Ok(SdeKind::SubVp),
            other => Err(Error::invalid("sde", format!("unknown kind '{other}' (ve, vp, subvp)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeSpec {
    pub kind: SdeKind,
    #[serde(default = "defaults::sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "defaults::sigma_max")]
    pub sigma_max: f64,
    #[serde(default = "defaults::beta_min")]
    pub beta_min: f64,
    #[serde(default = "defaults::beta_max")]
    pub beta_max: f64,
    pub horizon: f64,
    /// Half-range of the rescaled pixel domain; data live in [-1, 1].
    #[serde(default = "defaults::data_scale")]
    pub data_scale: f64,
}

mod defaults {
    pub fn sigma_min() -> f64 {
        0.01
    }
    pub fn sigma_max() -> f64 {
        50.0
    }
    pub fn beta_min() -> f64 {
        0.1
    }
    pub fn beta_max() -> f64 {
        20.0
    }
    pub fn data_scale() -> f64 {
        1.0
    }
}

/// Gaussian perturbation kernel `x_t | x_0 ~ N(α x_0, σ² I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginalKernel {
    pub mean_scale: f64,
    pub std: f64,
}

impl SdeSpec {
    pub fn new(kind: SdeKind) -> Self {
        Self {
            kind,
            sigma_min: defaults::sigma_min(),
            sigma_max: defaults::sigma_max(),
            beta_min: defaults::beta_min(),
            beta_max: defaults::beta_max(),
            horizon: kind.default_horizon(),
            data_scale: defaults::data_scale(),
        }
    }

    pub fn ve() -> Self {
        Self::new(SdeKind::Ve)
    }
    pub fn vp() -> Self {
        Self::new(SdeKind::Vp)
    }
    pub fn subvp() -> Self {
        Self::new(SdeKind::SubVp)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("sde spec", d));
        if !(self.horizon > 0.0 && self.horizon <= 1.0) {
            return bad(format!("horizon {} not in (0, 1]", self.horizon));
        }
        if !(self.data_scale > 0.0) {
            return bad(format!("data_scale {} not positive", self.data_scale));
        }
        match self.kind {
            SdeKind::Ve if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) => {
                bad(format!("need 0 < sigma_min < sigma_max, got {} / {}", self.sigma_min, self.sigma_max))
            }
            SdeKind::Vp | SdeKind::SubVp if !(self.beta_min > 0.0 && self.beta_min < self.beta_max) => {
                bad(format!("need 0 < beta_min < beta_max, got {} / {}", self.beta_min, self.beta_max))
            }
            _ => Ok(()),
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            })
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (t / self.horizon) * (self.beta_max - self.beta_min)
    }

    /// `B(t) = ∫₀ᵗ β(s) ds`.
    pub fn integrated_beta(&self, t: f64) -> f64 {
        self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2.0 * self.horizon)
    }

    fn sigma_ratio(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    pub fn drift<S: Real>(&self, x: &[S], t: f64) -> Result<Vec<S>> {
        self.check_time(t)?;
        Ok(match self.kind {
            SdeKind::Ve => vec![S::zero(); x.len()],
            SdeKind::Vp | SdeKind::SubVp => {
                let c = S::lit(-0.5 * self.beta(t));
                x.iter().map(|&v| c * v).collect()
            }
        })
    }

    pub fn diffusion(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.kind {
            SdeKind::Ve => {
                let r = self.sigma_ratio();
                self.sigma_min * r.powf(t / self.horizon) * (2.0 * r.ln() / self.horizon).sqrt()
            }
            SdeKind::Vp => self.beta(t).sqrt(),
            SdeKind::SubVp => {
                let b = self.integrated_beta(t);
                (self.beta(t) * -(-2.0 * b).exp_m1()).sqrt()
            }
        })
    }

    pub fn marginal(&self, t: f64) -> Result<MarginalKernel> {
        self.check_time(t)?;
        Ok(match self.kind {
            SdeKind::Ve => {
                let r = self.sigma_ratio();
                let var = self.sigma_min * self.sigma_min * (2.0 * (t / self.horizon) * r.ln()).exp_m1();
                MarginalKernel {
                    mean_scale: 1.0,
                    std: var.max(0.0).sqrt(),
                }
            }
            SdeKind::Vp => {
                let b = self.integrated_beta(t);
                MarginalKernel {
                    mean_scale: (-0.5 * b).exp(),
                    std: (-(-b).exp_m1()).sqrt() * self.data_scale,
                }
            }
            SdeKind::SubVp => {
                let b = self.integrated_beta(t);
                MarginalKernel {
                    mean_scale: (-0.5 * b).exp(),
                    std: -(-b).exp_m1() * self.data_scale,
                }
            }
        })
    }

    /// `α(t) x₀ + σ(t) z` with fresh standard normal `z`.
    pub fn perturb<S: Real, R: Rng + ?Sized>(&self, x0: &[S], t: f64, rng: &mut R) -> Result<Vec<S>> {
        let k = self.marginal(t)?;
        let (a, s) = (S::lit(k.mean_scale), S::lit(k.std));
        Ok(x0
            .iter()
            .map(|&v| {
                let z: f64 = rng.sample(StandardNormal);
                a * v + s * S::lit(z)
            })
            .collect())
    }

    /// Size of one integer pixel step in rescaled units.
    pub fn pixel_unit(&self, bit_depth: u8) -> f64 {
        2.0 / ((1u32 << bit_depth) - 1) as f64
    }

    /// `E|x_t − x_0|` per coordinate in integer pixel units, averaged over
    /// the dataset. Exact: each coordinate is a shifted folded normal.
    pub fn avg_abs_perturbation(&self, t: f64, reference: &Dataset) -> Result<f64> {
        let k = self.marginal(t)?;
        let (hist, total) = value_histogram(reference)?;
        let unit = self.pixel_unit(reference.bit_depth());
        let terms = hist.iter().enumerate().filter(|(_, &c)| c > 0).map(|(v, &c)| {
            let x0 = crate::grid::rescale_value::<f64>(v as u8, reference.bit_depth());
            c as f64 * folded_normal_mean((k.mean_scale - 1.0) * x0, k.std)
        });
        Ok(neumaier_sum(terms) / total as f64 / unit)
    }

    /// Monte Carlo estimate of [`Self::avg_abs_perturbation`] with `draws`
    /// noise draws per coordinate.
    pub fn avg_abs_perturbation_mc(&self, t: f64, reference: &Dataset, draws: usize, seed: u64) -> Result<f64> {
        let k = self.marginal(t)?;
        if reference.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let unit = self.pixel_unit(reference.bit_depth());
        let per_sample: Vec<f64> = (0..reference.len())
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let x0: Vec<f64> = reference.rescaled_row(i);
                neumaier_sum((0..draws).flat_map(|_| {
                    x0.iter()
                        .map(|&x| {
                            let z: f64 = rng.sample(StandardNormal);
                            ((k.mean_scale - 1.0) * x + k.std * z).abs()
                        })
                        .collect::<Vec<_>>()
                }))
            })
            .collect();
        let n = (reference.len() * reference.dim() * draws) as f64;
        Ok(neumaier_sum(per_sample) / n / unit)
    }

    /// Standard deviation of `x_t − x_0` over all pixels, in pixel units.
    pub fn perturbation_std(&self, t: f64, reference: &Dataset) -> Result<f64> {
        let k = self.marginal(t)?;
        let (hist, total) = value_histogram(reference)?;
        let xs: Vec<(f64, f64)> = hist
            .iter()
            .enumerate()
            .map(|(v, &c)| (crate::grid::rescale_value::<f64>(v as u8, reference.bit_depth()), c as f64))
            .collect();
        let mean = xs.iter().map(|(x, c)| x * c).sum::<f64>() / total as f64;
        let var = xs.iter().map(|(x, c)| c * (x - mean).powi(2)).sum::<f64>() / total as f64;
        let shift = k.mean_scale - 1.0;
        Ok((shift * shift * var + k.std * k.std).sqrt() / self.pixel_unit(reference.bit_depth()))
    }

    /// Smallest `t` on a uniform grid of `points` over `[0, T]` where the
    /// average absolute perturbation reaches one pixel unit.
    pub fn crossover_time(&self, reference: &Dataset, points: usize) -> Result<Option<f64>> {
        for i in 0..points {
            let t = self.horizon * i as f64 / (points - 1).max(1) as f64;
            if self.avg_abs_perturbation(t, reference)? >= 1.0 {
                return Ok(Some(t));
            }
        }
        Ok(None)
    }
}

fn value_histogram(reference: &Dataset) -> Result<(Vec<u64>, u64)> {
    if reference.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hist = vec![0u64; 1usize << reference.bit_depth()];
    for &v in reference.values() {
        hist[v as usize] += 1;
    }
    Ok((hist, reference.values().len() as u64))
}

/// Result of searching the schedule so that the per-pixel perturbation
/// standard deviation at `t = T` hits a target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub spec: SdeSpec,
    pub target_std: f64,
    pub achieved_std: f64,
    /// Which field was searched: `horizon`, or `sigma_max` for VE (whose
    /// marginal at `t = T` does not depend on `T`).
    pub searched: String,
    pub reachable: bool,
}

/// Default target: a std of 10 in 8-bit units, rescaled to `bit_depth`.
pub fn default_calibration_target(bit_depth: u8) -> f64 {
    10.0 * ((1u32 << bit_depth) - 1) as f64 / 255.0
}

pub fn calibrate_horizon(base: &SdeSpec, reference: &Dataset, target_std: f64) -> Result<Calibration> {
    base.validate()?;
    if !(target_std > 0.0) {
        return Err(Error::invalid("calibration target", format!("{target_std}")));
    }
    let eval = |spec: &SdeSpec| spec.perturbation_std(spec.horizon, reference);
    let (mut lo, mut hi, searched) = match base.kind {
        SdeKind::Ve => (base.sigma_min * (1.0 + 1e-9), 1e4, "sigma_max"),
        SdeKind::Vp | SdeKind::SubVp => (1e-9, 1.0, "horizon"),
    };
    let with = |v: f64| {
        let mut s = base.clone();
        match base.kind {
            SdeKind::Ve => s.sigma_max = v,
            _ => s.horizon = v,
        }
        s
    };
    let reachable = eval(&with(lo))? <= target_std && eval(&with(hi))? >= target_std;
    if reachable {
        for _ in 0..200 {
            let mid = if base.kind == SdeKind::Ve { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if eval(&with(mid))? < target_std {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let best = if reachable {
        0.5 * (lo + hi)
    } else if eval(&with(hi))? < target_std {
        hi
    } else {
        lo
    };
    let spec = with(best);
    Ok(Calibration {
        achieved_std: eval(&spec)?,
        spec,
        target_std,
        searched: searched.to_string(),
        reachable,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::datasets::{generate, GeneratorParams};

    fn toy() -> Dataset {
        generate("textured-patches-8x8", &GeneratorParams { count: 50, bit_depth: 3, seed: 2 }).unwrap()
    }

    #[test]
    fn ve_has_no_drift() {
        let s = SdeSpec::ve();
        assert_eq!(s.drift(&[1.0, -3.0], 0.3).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn vp_drift_with_beta_two() {
        let mut s = SdeSpec::vp();
        s.beta_min = 2.0;
        s.beta_max = 20.0;
        assert_eq!(s.beta(0.0), 2.0);
        assert_eq!(s.drift(&[1.0, -1.0], 0.0).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn subvp_drift_at_horizon_matches_hand_value() {
        let s = SdeSpec::subvp();
        let x = [0.3f64, -0.8, 1.2];
        let d = s.drift(&x, s.horizon).unwrap();
        // beta(T) = beta_max = 20
        for (di, xi) in d.iter().zip(x) {
            assert!((di - (-10.0 * xi)).abs() < 1e-12);
        }
    }

    #[test]
    fn diffusion_values() {
        let sub = SdeSpec::subvp();
        assert_eq!(sub.diffusion(0.0).unwrap(), 0.0);
        let mut vp = SdeSpec::vp();
        vp.beta_min = 4.0;
        assert_eq!(vp.diffusion(0.0).unwrap(), 2.0);
        let ve = SdeSpec::ve();
        let expect = 50.0 * (2.0 * (5000.0f64).ln() / 0.5).sqrt();
        assert!((ve.diffusion(0.5).unwrap() - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn diffusion_matches_marginal_variance_growth() {
        // d/dt [σ² / α²]·α² consistency: for VE, g² = dσ²/dt
        let ve = SdeSpec::ve();
        let (t, h) = (0.2, 1e-6);
        let v = |t| ve.marginal(t).unwrap().std.powi(2);
        let num = (v(t + h) - v(t - h)) / (2.0 * h);
        let g = ve.diffusion(t).unwrap();
        assert!((num - g * g).abs() < 1e-5 * g * g);
        // VP: dσ²/dt = β(t)(1 − σ²) on unit data scale
        let vp = SdeSpec::vp();
        let t = 0.04;
        let v = |t| vp.marginal(t).unwrap().std.powi(2);
        let num = (v(t + h) - v(t - h)) / (2.0 * h);
        assert!((num - vp.beta(t) * (1.0 - v(t))).abs() < 1e-6);
    }

    #[test]
    fn kernel_at_zero_is_identity() {
        for kind in SdeKind::ALL {
            let k = SdeSpec::new(kind).marginal(0.0).unwrap();
            assert_eq!(k.mean_scale, 1.0);
            assert_eq!(k.std, 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = [0.25, -1.0, 0.5];
        for kind in SdeKind::ALL {
            assert_eq!(SdeSpec::new(kind).perturb(&x0, 0.0, &mut rng).unwrap(), x0.to_vec());
        }
    }

    #[test]
    fn vp_alpha_half_at_ln4() {
        let s = SdeSpec::vp().with_horizon(1.0);
        // solve B(t) = ln 4
        let (a, b, c) = ((s.beta_max - s.beta_min) / (2.0 * s.horizon), s.beta_min, -(4.0f64).ln());
        let t = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        assert!(t <= s.horizon);
        assert!((s.marginal(t).unwrap().mean_scale - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sigma_nondecreasing_and_subvp_below_vp() {
        for kind in SdeKind::ALL {
            let s = SdeSpec::new(kind);
            let mut prev = -1.0;
            for i in 0..1000 {
                let k = s.marginal(s.horizon * i as f64 / 999.0).unwrap();
                assert!(k.std >= prev);
                prev = k.std;
                if kind != SdeKind::Ve {
                    assert!(k.mean_scale <= 1.0);
                }
            }
        }
        let (vp, sub) = (SdeSpec::vp(), SdeSpec::subvp().with_horizon(0.1));
        for i in 0..100 {
            let t = 0.1 * i as f64 / 99.0;
            assert!(sub.marginal(t).unwrap().std <= vp.marginal(t).unwrap().std);
        }
    }

    #[test]
    fn out_of_range_time_rejected() {
        let s = SdeSpec::vp();
        assert!(matches!(s.drift(&[0.0], 0.2), Err(Error::TimeOutOfRange { .. })));
        assert!(s.diffusion(-1e-9).is_err());
        assert!(s.marginal(f64::NAN).is_err());
    }

    #[test]
    fn perturb_moments_monte_carlo() {
        let s = SdeSpec::vp();
        let t = 0.06;
        let k = s.marginal(t).unwrap();
        let x0 = vec![0.4; 100_000];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xt = s.perturb(&x0, t, &mut rng).unwrap();
        let resid: Vec<f64> = xt.iter().map(|v| v - k.mean_scale * 0.4).collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((std - k.std).abs() < 0.02 * k.std);
        let se = k.std / (resid.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn ve_one_pixel_sigma_gives_folded_normal_constant() {
        let data = toy();
        let s = SdeSpec::ve();
        let unit = s.pixel_unit(3);
        let r: f64 = s.sigma_max / s.sigma_min;
        // σ(t)² = σ_min²(r^{2t/T} − 1) = unit²
        let t = s.horizon * (1.0 + (unit / s.sigma_min).powi(2)).ln() / (2.0 * r.ln());
        let v = s.avg_abs_perturbation(t, &data).unwrap();
        assert!((v - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-9, "{v}");
        assert_eq!(s.avg_abs_perturbation(0.0, &data).unwrap(), 0.0);
    }

    #[test]
    fn avg_abs_perturbation_monotone_and_matches_monte_carlo() {
        let data = toy();
        for kind in SdeKind::ALL {
            let s = SdeSpec::new(kind);
            let mut prev = -1.0;
            for i in 0..200 {
                let v = s.avg_abs_perturbation(s.horizon * i as f64 / 199.0, &data).unwrap();
                assert!(v >= prev, "{kind:?}");
                prev = v;
            }
        }
        let s = SdeSpec::vp();
        let t = 0.5 * s.horizon;
        let exact = s.avg_abs_perturbation(t, &data).unwrap();
        let mc = s.avg_abs_perturbation_mc(t, &data, 200, 3).unwrap();
        assert!((exact - mc).abs() < 0.02 * exact, "{exact} vs {mc}");
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let empty = Dataset::new(vec![2], 3, vec![], None).unwrap();
        assert!(matches!(
            SdeSpec::vp().avg_abs_perturbation(0.01, &empty),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn calibration_hits_target() {
        let data = toy();
        for kind in SdeKind::ALL {
            let c = calibrate_horizon(&SdeSpec::new(kind), &data, 1.5).unwrap();
            assert!(c.reachable, "{kind:?}");
            assert!((c.achieved_std - 1.5).abs() < 1e-6, "{kind:?} {}", c.achieved_std);
            c.spec.validate().unwrap();
        }
        assert!((default_calibration_target(8) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let mut s = SdeSpec::vp();
        s.horizon = 1.5;
        assert!(s.validate().is_err());
        let mut s = SdeSpec::ve();
        s.sigma_min = 60.0;
        assert!(s.validate().is_err());
        let mut s = SdeSpec::subvp();
        s.beta_max = 0.05;
        assert!(s.validate().is_err());
        assert_eq!("subvp".parse::<SdeKind>().unwrap(), SdeKind::SubVp);
        assert!("xx".parse::<SdeKind>().is_err());
    }
}
