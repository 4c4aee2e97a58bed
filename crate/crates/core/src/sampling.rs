//! Direct ancestral sampling, reverse-SDE refinement with an optional
//! Langevin corrector, the two-phase sampler and raster-prefix completion.
//!
//! Batch entry points run `n` independent chains; chain `i` draws all of
//! its randomness from its own stream, so without the corrector a chain's
//! trajectory depends only on the seed and its index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::UniformDensity;
use crate::grid::{levels, rescale_value, snap_value, Dataset, DiscreteGrid};
use crate::logistic::MixtureParams;
use crate::model::NcDensityModel;
use crate::oracle::{GaussianMixtureOracle, OracleDensity};
use crate::sde::SdeSpec;
use crate::stats::stream_rng;
use crate::{Error, Real, Result};

/// Norm (rescaled units) beyond which a chain is reported as diverged.
pub const DIVERGENCE_NORM: f64 = 1e3;

const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub t_start: f64,
    pub steps: usize,
    #[serde(default)]
    pub corrector_steps: usize,
    #[serde(default = "SamplerConfig::default_snr")]
    pub snr: f64,
    /// Omit the noise increment of the final predictor step.
    #[serde(default = "SamplerConfig::default_denoise")]
    pub denoise_final: bool,
    pub seed: u64,
}

impl SamplerConfig {
    fn default_snr() -> f64 {
        0.16
    }

    fn default_denoise() -> bool {
        true
    }

    pub fn new(t_start: f64, seed: u64) -> Self {
        Self {
            t_start,
            steps: 100,
            corrector_steps: 0,
            snr: Self::default_snr(),
            denoise_final: Self::default_denoise(),
            seed,
        }
    }

    pub fn validate(&self, spec: &SdeSpec) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("sampler config", d));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.t_start > 0.0 && self.t_start <= spec.horizon) {
            return bad(format!("t_start {} not in (0, {}]", self.t_start, spec.horizon));
        }
        if self.corrector_steps > 0 && !(self.snr > 0.0) {
            return bad("snr must be positive when the corrector is enabled".into());
        }
        Ok(())
    }
}

/// The default start scale: the first of `points` grid times at which the
/// average per-pixel perturbation reaches one pixel unit, or `T` if none.
pub fn default_t_start(spec: &SdeSpec, reference: &Dataset, points: usize) -> Result<f64> {
    Ok(spec.crossover_time(reference, points)?.unwrap_or(spec.horizon))
}

/// `∇ₓ log p_t(x)` for flat `n × d` batches.
pub trait ScoreSource<S: Real = f64>: Sync {
    fn dims(&self) -> usize;
    fn score_rows(&self, x: &[S], ts: &[f64], classes: Option<&[usize]>) -> Result<Vec<S>>;
}

impl<S: Real> ScoreSource<S> for NcDensityModel<S> {
    fn dims(&self) -> usize {
        NcDensityModel::dims(self)
    }

    fn score_rows(&self, x: &[S], ts: &[f64], classes: Option<&[usize]>) -> Result<Vec<S>> {
        NcDensityModel::score_rows(self, x, ts, classes)
    }
}

impl<S: Real> ScoreSource<S> for OracleDensity<S> {
    fn dims(&self) -> usize {
        self.oracle.dims()
    }

    fn score_rows(&self, x: &[S], ts: &[f64], _classes: Option<&[usize]>) -> Result<Vec<S>> {
        let d = self.oracle.dims();
        let mut out = Vec::with_capacity(x.len());
        for (row, &t) in x.chunks(d).zip(ts) {
            out.extend(self.oracle.score(row, t, &self.spec)?);
        }
        Ok(out)
    }
}

/// The score of the uniform density: zero everywhere.
impl<S: Real> ScoreSource<S> for UniformDensity {
    fn dims(&self) -> usize {
        self.dims
    }

    fn score_rows(&self, x: &[S], _ts: &[f64], _classes: Option<&[usize]>) -> Result<Vec<S>> {
        Ok(vec![S::zero(); x.len()])
    }
}

/// One random stream per chain.
pub fn chain_rngs(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n as u64).map(|i| stream_rng(seed, i)).collect()
}

fn check_classes(classes: Option<&[usize]>, n: usize) -> Result<()> {
    match classes {
        Some(c) if c.len() != n => Err(Error::shape("sampler", format!("{} classes for {n} chains", c.len()))),
        _ => Ok(()),
    }
}

/// Applies `f` to row chunks in parallel and concatenates the results in
/// order.
fn chunked<S: Real, T: Send>(
    x: &[S],
    d: usize,
    ts: &[f64],
    classes: Option<&[usize]>,
    f: impl Fn(&[S], &[f64], Option<&[usize]>) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let parts = (0..ts.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let r = c * CHUNK..((c + 1) * CHUNK).min(ts.len());
            f(&x[r.start * d..r.end * d], &ts[r.clone()], classes.map(|cl| &cl[r]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

fn batched_scores<S: Real, Src: ScoreSource<S> + ?Sized>(
    src: &Src,
    x: &[S],
    ts: &[f64],
    classes: Option<&[usize]>,
) -> Result<Vec<S>> {
    chunked(x, src.dims(), ts, classes, |x, t, c| src.score_rows(x, t, c))
}

/// Fixed conditioning coordinates: the first `len` values of every chain.
struct Prefix<'a, S> {
    len: usize,
    /// Flat `n × len`.
    values: &'a [S],
}

/// Sequential coordinate-wise draws. Returns rescaled values and, when
/// `discrete`, the drawn bins.
fn ancestral_core<S: Real>(
    model: &NcDensityModel<S>,
    t: f64,
    rngs: &mut [ChaCha8Rng],
    classes: Option<&[usize]>,
    prefix: Option<Prefix<'_, S>>,
    discrete: bool,
) -> Result<(Vec<S>, Vec<u8>)> {
    let n = rngs.len();
    let d = model.dims();
    let b = model.arch().bit_depth;
    check_classes(classes, n)?;
    let mut x = vec![S::zero(); n * d];
    let mut bins = if discrete { vec![0u8; n * d] } else { Vec::new() };
    let start = match &prefix {
        Some(p) => {
            if p.len > d || p.values.len() != n * p.len {
                return Err(Error::shape("ancestral prefix", format!("{} values for {n} × {}", p.values.len(), p.len)));
            }
            for i in 0..n {
                x[i * d..i * d + p.len].copy_from_slice(&p.values[i * p.len..(i + 1) * p.len]);
                if discrete {
                    for k in 0..p.len {
                        bins[i * d + k] = snap_value(p.values[i * p.len + k], b);
                    }
                }
            }
            p.len
        }
        None => 0,
    };
    let ts = vec![t; n];
    for k in start..d {
        let params: Vec<MixtureParams<S>> =
            chunked(&x, d, &ts, classes, |x, t, c| model.conditional_params_rows(x, t, c))?;
        for (i, (p, rng)) in params.iter().zip(rngs.iter_mut()).enumerate() {
            let m = p.dim(k);
            if discrete {
                let v = m.sample_discrete(b, rng);
                bins[i * d + k] = v;
                x[i * d + k] = rescale_value(v, b);
            } else {
                x[i * d + k] = m.sample(rng);
            }
        }
    }
    Ok((x, bins))
}

/// `n` continuous draws from `p_{θ,t}`, flat `n × d`.
pub fn ancestral_continuous<S: Real>(
    model: &NcDensityModel<S>,
    t: f64,
    rngs: &mut [ChaCha8Rng],
    classes: Option<&[usize]>,
) -> Result<Vec<S>> {
    model.arch().check_time(t)?;
    Ok(ancestral_core(model, t, rngs, classes, None, false)?.0)
}

/// `n` direct draws from the discretized `p_{θ,0}`.
pub fn ancestral_discrete<S: Real>(
    model: &NcDensityModel<S>,
    rngs: &mut [ChaCha8Rng],
    classes: Option<&[usize]>,
) -> Result<Dataset> {
    let (_, bins) = ancestral_core(model, 0.0, rngs, classes, None, true)?;
    to_dataset(model, bins, classes)
}

/// A single ancestral draw.
#[derive(Clone, Debug, PartialEq)]
pub enum AncestralDraw<S = f64> {
    Grid(DiscreteGrid),
    Continuous(Vec<S>),
}

/// One draw from `p_{θ,t}`: a grid at `t = 0`, a continuous vector
/// otherwise.
pub fn ancestral_sample<S: Real, R: Rng + ?Sized>(
    model: &NcDensityModel<S>,
    t: f64,
    rng: &mut R,
    class: Option<usize>,
) -> Result<AncestralDraw<S>> {
    model.arch().check_time(t)?;
    let mut rngs = chain_rngs(rng.random(), 1);
    let cls = class.map(|c| vec![c]);
    if t == 0.0 {
        let d = ancestral_discrete(model, &mut rngs, cls.as_deref())?;
        Ok(AncestralDraw::Grid(d.grid(0)))
    } else {
        Ok(AncestralDraw::Continuous(ancestral_continuous(model, t, &mut rngs, cls.as_deref())?))
    }
}

fn to_dataset<S: Real>(model: &NcDensityModel<S>, bins: Vec<u8>, classes: Option<&[usize]>) -> Result<Dataset> {
    let a = model.arch();
    Dataset::new(a.grid_dims.clone(), a.bit_depth, bins, classes.map(<[usize]>::to_vec))
}

/// Langevin step size rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LangevinStep {
    /// `ε = 2 (r ‖z‖ / ‖s‖)²` per step with both norms averaged over the
    /// chains, so the corrector couples chains. A vanishing score gives
    /// `ε = 0`.
    Snr(f64),
    Fixed(f64),
}

fn norm<S: Real>(v: &[S]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

fn check_divergence<S: Real>(x: &[S], d: usize, step: usize) -> Result<()> {
    for row in x.chunks(d) {
        let nrm = norm(row);
        if !(nrm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence { step, norm: nrm });
        }
    }
    Ok(())
}

fn gaussians(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// `steps` Langevin updates `x ← x + ε s + √(2ε) z` at condition `t`.
pub fn langevin_correct<S: Real, Src: ScoreSource<S> + ?Sized>(
    src: &Src,
    x: &mut [S],
    t: f64,
    steps: usize,
    rule: LangevinStep,
    rngs: &mut [ChaCha8Rng],
    classes: Option<&[usize]>,
) -> Result<()> {
    let d = src.dims();
    let n = rngs.len();
    if x.len() != n * d {
        return Err(Error::shape("langevin", format!("{} values for {n} × {d}", x.len())));
    }
    check_classes(classes, n)?;
    match rule {
        LangevinStep::Snr(r) | LangevinStep::Fixed(r) if !(r > 0.0) => {
            return Err(Error::invalid("langevin step", format!("{r} must be positive")));
        }
        _ => {}
    }
    let ts = vec![t; n];
    for step in 0..steps {
        let s = batched_scores(src, x, &ts, classes)?;
        let z: Vec<Vec<f64>> = rngs.iter_mut().map(|rng| gaussians(rng, d)).collect();
        let eps = match rule {
            LangevinStep::Fixed(e) => e,
            LangevinStep::Snr(r) => {
                let sn = s.chunks(d).map(norm).sum::<f64>() / n as f64;
                let zn = z.iter().map(|z| norm(z)).sum::<f64>() / n as f64;
                if sn == 0.0 {
                    0.0
                } else {
                    2.0 * (r * zn / sn).powi(2)
                }
            }
        };
        let noise = (2.0 * eps).sqrt();
        for (i, zi) in z.iter().enumerate() {
            for k in 0..d {
                let xi = &mut x[i * d + k];
                *xi = S::lit(xi.as_f64() + eps * s[i * d + k].as_f64() + noise * zi[k]);
            }
        }
        check_divergence(x, d, step)?;
    }
    Ok(())
}

/// Prefix of every chain held at the (re-noised) observation during
/// refinement; `values` are rescaled clean values, flat `n × len`.
pub struct ClampedPrefix<'a, S> {
    pub len: usize,
    pub values: &'a [S],
}

fn clamp_prefix<S: Real>(
    x: &mut [S],
    d: usize,
    prefix: &ClampedPrefix<'_, S>,
    t: f64,
    spec: &SdeSpec,
    rngs: &mut [ChaCha8Rng],
) -> Result<()> {
    if prefix.len == 0 {
        return Ok(());
    }
    let k = spec.marginal(t)?;
    for (i, rng) in rngs.iter_mut().enumerate() {
        for j in 0..prefix.len {
            let x0 = prefix.values[i * prefix.len + j];
            x[i * d + j] = if t == 0.0 {
                x0
            } else {
                let z: f64 = rng.sample(StandardNormal);
                S::lit(k.mean_scale * x0.as_f64() + k.std * z)
            };
        }
    }
    Ok(())
}

/// Euler-Maruyama integration of the reverse SDE
/// `dx = [f(x,t) − g(t)² s(x,t)] dt + g(t) dw̄` from `t_start` to 0 in
/// `config.steps` uniform steps, with `config.corrector_steps` Langevin
/// corrections before each predictor step.
#[allow(clippy::too_many_arguments)]
pub fn reverse_sde_refine<S: Real, Src: ScoreSource<S> + ?Sized>(
    src: &Src,
    x: &mut [S],
    t_start: f64,
    spec: &SdeSpec,
    config: &SamplerConfig,
    rngs: &mut [ChaCha8Rng],
    classes: Option<&[usize]>,
    prefix: Option<&ClampedPrefix<'_, S>>,
) -> Result<()> {
    let d = src.dims();
    let n = rngs.len();
    if x.len() != n * d {
        return Err(Error::shape("refine", format!("{} values for {n} × {d}", x.len())));
    }
    check_classes(classes, n)?;
    let mut cfg = config.clone();
    cfg.t_start = t_start;
    cfg.validate(spec)?;
    if let Some((i, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid("refine start", format!("non-finite value at {i}")));
    }
    if let Some(p) = prefix {
        if p.len > d || p.values.len() != n * p.len {
            return Err(Error::shape("refine prefix", format!("{} values for {n} × {}", p.values.len(), p.len)));
        }
    }
    let dt = t_start / cfg.steps as f64;
    for step in 0..cfg.steps {
        let t = t_start - step as f64 * dt;
        let t_next = if step + 1 == cfg.steps { 0.0 } else { t_start - (step + 1) as f64 * dt };
        if cfg.corrector_steps > 0 {
            langevin_correct(src, x, t, cfg.corrector_steps, LangevinStep::Snr(cfg.snr), rngs, classes)?;
            if let Some(p) = prefix {
                clamp_prefix(x, d, p, t, spec, rngs)?;
            }
        }
        let ts = vec![t; n];
        let s = batched_scores(src, x, &ts, classes)?;
        let g = spec.diffusion(t)?;
        let last = step + 1 == cfg.steps;
        for (i, rng) in rngs.iter_mut().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            let f = spec.drift(row, t)?;
            let z = gaussians(rng, d);
            let noise = if last && cfg.denoise_final { 0.0 } else { g * dt.sqrt() };
            for k in 0..d {
                let drift = f[k].as_f64() - g * g * s[i * d + k].as_f64();
                row[k] = S::lit(row[k].as_f64() - drift * dt + noise * z[k]);
            }
        }
        if let Some(p) = prefix {
            clamp_prefix(x, d, p, t_next, spec, rngs)?;
        }
        check_divergence(x, d, step)?;
    }
    Ok(())
}

/// Rounds rescaled values to the nearest bin (ties to even) and clamps.
pub fn snap<S: Real>(x: &[S], bit_depth: u8) -> Vec<u8> {
    x.iter().map(|&v| snap_value(v, bit_depth)).collect()
}

/// Noisy ancestral draws at `config.t_start`, refined to `t = 0` with the
/// model's own score and snapped to the grid.
pub fn two_phase_sample<S: Real>(
    model: &NcDensityModel<S>,
    spec: &SdeSpec,
    config: &SamplerConfig,
    n: usize,
    classes: Option<&[usize]>,
) -> Result<Dataset> {
    config.validate(spec)?;
    check_classes(classes, n)?;
    let mut rngs = chain_rngs(config.seed, n);
    let mut x = ancestral_continuous(model, config.t_start, &mut rngs, classes)?;
    reverse_sde_refine(model, &mut x, config.t_start, spec, config, &mut rngs, classes, None)?;
    to_dataset(model, snap(&x, model.arch().bit_depth), classes)
}

/// `n` direct draws from `p_{θ,0}` with the sampler seed.
pub fn direct_sample<S: Real>(
    model: &NcDensityModel<S>,
    seed: u64,
    n: usize,
    classes: Option<&[usize]>,
) -> Result<Dataset> {
    ancestral_discrete(model, &mut chain_rngs(seed, n), classes)
}

/// A grid with a known raster-order prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialGrid {
    dims: Vec<usize>,
    bit_depth: u8,
    prefix: Vec<u8>,
}

impl PartialGrid {
    pub fn new(dims: Vec<usize>, bit_depth: u8, prefix: Vec<u8>) -> Result<Self> {
        let total: usize = dims.iter().product();
        if prefix.len() > total {
            return Err(Error::shape("partial grid", format!("prefix of {} exceeds {total} values", prefix.len())));
        }
        let top = levels(bit_depth) as i64 - 1;
        if let Some((index, &v)) = prefix.iter().enumerate().find(|(_, &v)| v as i64 > top) {
            return Err(Error::ValueOutOfRange {
                index,
                value: v as i64,
                max: top,
            });
        }
        Ok(Self {
            dims,
            bit_depth,
            prefix,
        })
    }

    /// From a full-length mask of observed values; observed entries must
    /// form a contiguous prefix.
    pub fn from_observed(dims: Vec<usize>, bit_depth: u8, observed: &[Option<u8>]) -> Result<Self> {
        let total: usize = dims.iter().product();
        if observed.len() != total {
            return Err(Error::shape("partial grid", format!("{} entries for {total} values", observed.len())));
        }
        let gap = observed.iter().position(Option::is_none).unwrap_or(total);
        if let Some(j) = observed[gap..].iter().position(Option::is_some) {
            return Err(Error::NonContiguousPrefix {
                gap,
                observed: gap + j,
            });
        }
        Self::new(dims, bit_depth, observed[..gap].iter().map(|v| v.expect("prefix")).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn prefix(&self) -> &[u8] {
        &self.prefix
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionMode {
    #[default]
    Direct,
    TwoPhase,
}

/// `n` completions of `partial`. The prefix is copied into every output
/// unchanged; the suffix is drawn directly from `p_{θ,0}` or by the
/// two-phase sampler with the prefix re-clamped after every step.
pub fn complete_image<S: Real>(
    model: &NcDensityModel<S>,
    spec: &SdeSpec,
    partial: &PartialGrid,
    mode: CompletionMode,
    config: &SamplerConfig,
    n: usize,
    class: Option<usize>,
) -> Result<Dataset> {
    let a = model.arch();
    if partial.dims != a.grid_dims || partial.bit_depth != a.bit_depth {
        return Err(Error::shape(
            "complete",
            format!(
                "partial grid {:?} at {} bits vs model {:?} at {} bits",
                partial.dims, partial.bit_depth, a.grid_dims, a.bit_depth
            ),
        ));
    }
    let b = a.bit_depth;
    let d = model.dims();
    let p = partial.prefix.len();
    let classes = class.map(|c| vec![c; n]);
    let cls = classes.as_deref();
    let clean: Vec<S> = partial.prefix.iter().map(|&v| rescale_value(v, b)).collect();
    let clean_all: Vec<S> = (0..n).flat_map(|_| clean.iter().copied()).collect();
    let mut rngs = chain_rngs(config.seed, n);
    let mut bins = match mode {
        CompletionMode::Direct => {
            let pre = Prefix {
                len: p,
                values: &clean_all,
            };
            ancestral_core(model, 0.0, &mut rngs, cls, Some(pre), true)?.1
        }
        CompletionMode::TwoPhase => {
            config.validate(spec)?;
            let guard = ClampedPrefix {
                len: p,
                values: &clean_all,
            };
            let mut noisy = vec![S::zero(); n * d];
            clamp_prefix(&mut noisy, d, &guard, config.t_start, spec, &mut rngs)?;
            let noisy_prefix: Vec<S> = noisy.chunks(d).flat_map(|r| r[..p].iter().copied()).collect();
            let pre = Prefix {
                len: p,
                values: &noisy_prefix,
            };
            let (mut x, _) = ancestral_core(model, config.t_start, &mut rngs, cls, Some(pre), false)?;
            reverse_sde_refine(model, &mut x, config.t_start, spec, config, &mut rngs, cls, Some(&guard))?;
            snap(&x, b)
        }
    };
    for row in bins.chunks_mut(d) {
        row[..p].copy_from_slice(&partial.prefix);
    }
    to_dataset(model, bins, cls)
}

/// Component weights and means recovered from refined oracle samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecovery {
    pub kind: String,
    pub samples: usize,
    pub steps: usize,
    pub weights: Vec<f64>,
    /// Flat `K × d`.
    pub means: Vec<f64>,
    pub max_weight_error: f64,
    pub max_mean_error: f64,
}

/// Draws `n` exact samples of the oracle's `p_T`, refines them to `t = 0`
/// with the oracle score and assigns each to the nearest component mean.
pub fn oracle_recovery(
    oracle: &GaussianMixtureOracle<f64>,
    spec: &SdeSpec,
    config: &SamplerConfig,
    n: usize,
) -> Result<MixtureRecovery> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let src = OracleDensity {
        oracle: oracle.clone(),
        spec: spec.clone(),
    };
    let t = config.t_start;
    let mut x = oracle.sample(n, t, spec, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    reverse_sde_refine(&src, &mut x, t, spec, config, &mut chain_rngs(config.seed, n), None, None)?;
    let (d, k) = (oracle.dims(), oracle.components());
    let centres = oracle.means();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * d];
    for row in x.chunks(d) {
        let dist = |j: usize| -> f64 { row.iter().zip(&centres[j * d..(j + 1) * d]).map(|(a, b)| (a - b).powi(2)).sum() };
        let j = (0..k).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).expect("at least one component");
        counts[j] += 1;
        for (s, v) in sums[j * d..(j + 1) * d].iter_mut().zip(row) {
            *s += v;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let means: Vec<f64> = sums
        .chunks(d)
        .zip(&counts)
        .flat_map(|(s, &c)| s.iter().map(move |v| if c > 0 { v / c as f64 } else { f64::NAN }))
        .collect();
    let max_abs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let max_mean_error = if means.iter().all(|m| m.is_finite()) { max_abs(&means, centres) } else { f64::INFINITY };
    Ok(MixtureRecovery {
        kind: spec.kind.name().to_string(),
        samples: n,
        steps: config.steps,
        max_weight_error: max_abs(&weights, oracle.weights()),
        weights,
        means,
        max_mean_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelArch;
    use crate::stats::total_variation;

    fn peaked_model(seed: u64) -> NcDensityModel<f64> {
        let mut a = ModelArch::new(vec![2], 3, 0.1);
        a.hidden = vec![12];
        a.components = 3;
        a.fourier_features = 2;
        let mut m = NcDensityModel::new(a, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for i in 0..m.blocks().len() {
            let name = m.blocks()[i].name.clone();
            if name == "layer0.weight" {
                m.block_data_mut(i).iter_mut().for_each(|w| *w *= 4.0);
            }
            if name == "head.mean.weight" {
                m.block_data_mut(i).iter_mut().for_each(|w| *w *= 3.0);
            }
            if name == "head.log_scale.bias" {
                m.block_data_mut(i).iter_mut().for_each(|b| *b = -2.0);
            }
        }
        m
    }

    fn exhaustive(m: &NcDensityModel<f64>) -> Vec<f64> {
        let l = 8u8;
        let mut p = Vec::new();
        for a in 0..l {
            for b in 0..l {
                p.push(m.log_density_discretized(&[a, b], 0.0, None).unwrap().exp());
            }
        }
        p
    }

    fn histogram(data: &Dataset) -> Vec<f64> {
        let l = levels(data.bit_depth());
        let mut h = vec![0.0; l * l];
        for i in 0..data.len() {
            let r = data.row(i);
            h[r[0] as usize * l + r[1] as usize] += 1.0 / data.len() as f64;
        }
        h
    }

    #[test]
    fn ancestral_histogram_matches_enumeration() {
        let m = peaked_model(1);
        let p = exhaustive(&m);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let s = direct_sample(&m, 3, 10_000, None).unwrap();
        let tv = total_variation(&histogram(&s), &p);
        assert!(tv < 0.03, "tv {tv}");
    }

    #[test]
    fn delta_like_model_returns_mode() {
        let mut a = ModelArch::new(vec![1], 3, 0.1);
        a.components = 1;
        a.hidden = vec![4];
        a.fourier_features = 1;
        let mut m = NcDensityModel::<f64>::zeroed(a).unwrap();
        let names: Vec<String> = m.blocks().iter().map(|b| b.name.clone()).collect();
        for (i, n) in names.iter().enumerate() {
            if n == "head.mean.bias" {
                m.block_data_mut(i)[0] = rescale_value(5, 3);
            }
            if n == "head.log_scale.bias" {
                m.block_data_mut(i)[0] = -7.0;
            }
        }
        let s = direct_sample(&m, 0, 200, None).unwrap();
        assert!(s.values().iter().all(|&v| v == 5));
        match ancestral_sample(&m, 0.05, &mut ChaCha8Rng::seed_from_u64(1), None).unwrap() {
            AncestralDraw::Continuous(x) => assert!((x[0] - rescale_value::<f64>(5, 3)).abs() < 0.05),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn samplers_are_deterministic_and_chain_local() {
        let m = peaked_model(2);
        let spec = SdeSpec::vp();
        let mut c = SamplerConfig::new(0.05, 9);
        c.steps = 10;
        let a = two_phase_sample(&m, &spec, &c, 40, None).unwrap();
        let small = two_phase_sample(&m, &spec, &c, 10, None).unwrap();
        assert_eq!(small.values(), &a.values()[..20]);
        c.corrector_steps = 1;
        let a = two_phase_sample(&m, &spec, &c, 40, None).unwrap();
        assert_eq!(a, two_phase_sample(&m, &spec, &c, 40, None).unwrap());
        assert_eq!(direct_sample(&m, 4, 30, None).unwrap(), direct_sample(&m, 4, 30, None).unwrap());
    }

    #[test]
    fn two_phase_limit_and_range() {
        let m = peaked_model(3);
        let spec = SdeSpec::vp();
        let mut c = SamplerConfig::new(1e-6, 5);
        c.steps = 1;
        let s = two_phase_sample(&m, &spec, &c, 5000, None).unwrap();
        assert!(s.values().iter().all(|&v| v < 8));
        let tv = total_variation(&histogram(&s), &exhaustive(&m));
        assert!(tv < 0.05, "tv {tv}");
    }

    #[test]
    fn zero_score_single_step_adds_only_noise() {
        let spec = SdeSpec::ve();
        let u = UniformDensity { dims: 3 };
        let n = 20_000;
        let t = 0.01;
        let mut c = SamplerConfig::new(t, 0);
        c.steps = 1;
        c.denoise_final = false;
        let start = [0.2, -0.1, 0.4];
        let mut x: Vec<f64> = (0..n).flat_map(|_| start).collect();
        reverse_sde_refine(&u, &mut x, t, &spec, &c, &mut chain_rngs(1, n), None, None).unwrap();
        let g = spec.diffusion(t).unwrap();
        let var = g * g * t;
        for k in 0..3 {
            let col: Vec<f64> = x.iter().skip(k).step_by(3).map(|v| v - start[k]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|e| e * e).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 * (var / n as f64).sqrt());
            assert!((v / var - 1.0).abs() < 0.05, "{v} vs {var}");
        }
    }

    fn two_gauss() -> GaussianMixtureOracle<f64> {
        GaussianMixtureOracle::isotropic(vec![0.3, 0.7], vec![-0.5, -0.4, 0.45, 0.5], 0.01).unwrap()
    }

    fn refined_stats(spec: &SdeSpec, steps: usize, n: usize, seed: u64) -> (f64, [f64; 4]) {
        let o = two_gauss();
        let d = OracleDensity {
            oracle: o.clone(),
            spec: spec.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = o.sample(n, spec.horizon, spec, &mut rng).unwrap();
        let mut c = SamplerConfig::new(spec.horizon, seed);
        c.steps = steps;
        reverse_sde_refine(&d, &mut x, spec.horizon, spec, &c, &mut chain_rngs(seed, n), None, None).unwrap();
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 2];
        for r in x.chunks(2) {
            let c = if (r[0] + 0.5).powi(2) + (r[1] + 0.4).powi(2) < (r[0] - 0.45).powi(2) + (r[1] - 0.5).powi(2) {
                0
            } else {
                1
            };
            counts[c] += 1;
            sums[2 * c] += r[0];
            sums[2 * c + 1] += r[1];
        }
        let means = [
            sums[0] / counts[0] as f64,
            sums[1] / counts[0] as f64,
            sums[2] / counts[1] as f64,
            sums[3] / counts[1] as f64,
        ];
        (counts[0] as f64 / n as f64, means)
    }

    #[test]
    fn oracle_refinement_recovers_mixture() {
        for spec in [SdeSpec::ve(), SdeSpec::vp(), SdeSpec::subvp()] {
            let (w, m) = refined_stats(&spec, 100, 10_000, 7);
            assert!((w - 0.3).abs() < 0.03, "{:?} weight {w}", spec.kind);
            for (a, b) in m.iter().zip([-0.5, -0.4, 0.45, 0.5]) {
                assert!((a - b).abs() < 0.05, "{:?} means {m:?}", spec.kind);
            }
        }
    }

    #[test]
    fn recovery_report_matches_manual_assignment() {
        let spec = SdeSpec::vp();
        let (w, m) = refined_stats(&spec, 40, 2000, 3);
        let mut c = SamplerConfig::new(spec.horizon, 3);
        c.steps = 40;
        let r = oracle_recovery(&two_gauss(), &spec, &c, 2000).unwrap();
        assert_eq!(r.weights[0], w);
        assert_eq!(r.means, m.to_vec());
        assert!((r.max_weight_error - (w - 0.3).abs()).abs() < 1e-12);
    }

    #[test]
    fn halving_step_size_is_within_noise() {
        let spec = SdeSpec::vp();
        let n = 10_000;
        let (w1, m1) = refined_stats(&spec, 50, n, 8);
        let (w2, m2) = refined_stats(&spec, 100, n, 8);
        let se_w = (2.0 * 0.21 / n as f64).sqrt();
        assert!((w1 - w2).abs() < 4.0 * se_w, "{w1} {w2}");
        for (a, b) in m1.iter().zip(&m2) {
            assert!((a - b).abs() < 0.02, "{m1:?} {m2:?}");
        }
    }

    fn std_gaussian() -> OracleDensity<f64> {
        OracleDensity {
            oracle: GaussianMixtureOracle::isotropic(vec![1.0], vec![0.0, 0.0], 1.0).unwrap(),
            spec: SdeSpec::ve(),
        }
    }

    fn pooled_variance(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn langevin_reaches_unit_variance() {
        let o = std_gaussian();
        let n = 10_000;
        let mut x = vec![0.0; 2 * n];
        langevin_correct(&o, &mut x, 0.0, 500, LangevinStep::Fixed(0.02), &mut chain_rngs(2, n), None).unwrap();
        let v = pooled_variance(&x);
        assert!((v - 1.0).abs() < 0.03, "fixed {v}");
        let o16 = OracleDensity {
            oracle: GaussianMixtureOracle::isotropic(vec![1.0], vec![0.0; 16], 1.0).unwrap(),
            spec: SdeSpec::ve(),
        };
        let mut x = vec![0.5; 16 * 2000];
        langevin_correct(&o16, &mut x, 0.0, 1500, LangevinStep::Snr(0.05), &mut chain_rngs(3, 2000), None).unwrap();
        let v = pooled_variance(&x);
        assert!((v - 1.0).abs() < 0.03, "snr {v}");
    }

    #[test]
    fn langevin_zero_score_is_random_walk_and_zero_steps_identity() {
        let u = UniformDensity { dims: 2 };
        let n = 20_000;
        let (eps, m) = (0.01, 25);
        let mut x = vec![0.0; 2 * n];
        langevin_correct(&u, &mut x, 0.0, m, LangevinStep::Fixed(eps), &mut chain_rngs(4, n), None).unwrap();
        let v = pooled_variance(&x);
        let expect = 2.0 * eps * m as f64;
        assert!((v / expect - 1.0).abs() < 0.04, "{v} vs {expect}");
        let mut y = vec![0.3; 4];
        langevin_correct(&u, &mut y, 0.0, 0, LangevinStep::Fixed(eps), &mut chain_rngs(5, 2), None).unwrap();
        assert_eq!(y, vec![0.3; 4]);
    }

    #[test]
    fn divergence_reports_step() {
        struct Explode;
        impl ScoreSource<f64> for Explode {
            fn dims(&self) -> usize {
                1
            }
            fn score_rows(&self, x: &[f64], _: &[f64], _: Option<&[usize]>) -> Result<Vec<f64>> {
                Ok(x.iter().map(|v| 1e4 * v.signum().max(0.5)).collect())
            }
        }
        let mut x = vec![0.1];
        let c = SamplerConfig::new(0.5, 0);
        match reverse_sde_refine(&Explode, &mut x, 0.5, &SdeSpec::ve(), &c, &mut chain_rngs(0, 1), None, None) {
            Err(Error::Divergence { step, norm }) => assert!(step < 100 && norm > DIVERGENCE_NORM),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let spec = SdeSpec::vp();
        assert!(SamplerConfig::new(0.2, 0).validate(&spec).is_err());
        assert!(SamplerConfig::new(0.0, 0).validate(&spec).is_err());
        let mut c = SamplerConfig::new(0.05, 0);
        c.steps = 0;
        assert!(c.validate(&spec).is_err());
        let mut c = SamplerConfig::new(0.05, 0);
        c.corrector_steps = 1;
        c.snr = 0.0;
        assert!(c.validate(&spec).is_err());
    }

    #[test]
    fn partial_grid_contiguity() {
        assert!(PartialGrid::from_observed(vec![2, 2], 3, &[Some(1), Some(2), None, None]).is_ok());
        match PartialGrid::from_observed(vec![2, 2], 3, &[Some(1), None, Some(2), None]) {
            Err(Error::NonContiguousPrefix { gap, observed }) => assert_eq!((gap, observed), (1, 2)),
            other => panic!("{other:?}"),
        }
        assert!(PartialGrid::new(vec![2], 3, vec![1, 9]).is_err());
    }

    #[test]
    fn completion_preserves_prefix_and_full_prefix_is_identity() {
        let m = peaked_model(4);
        let spec = SdeSpec::vp();
        let c = SamplerConfig::new(0.05, 1);
        for mode in [CompletionMode::Direct, CompletionMode::TwoPhase] {
            let full = PartialGrid::new(vec![2], 3, vec![6, 1]).unwrap();
            let out = complete_image(&m, &spec, &full, mode, &c, 5, None).unwrap();
            assert!(out.values().chunks(2).all(|r| r == [6, 1]));
            let half = PartialGrid::new(vec![2], 3, vec![2]).unwrap();
            let out = complete_image(&m, &spec, &half, mode, &c, 50, None).unwrap();
            assert!(out.values().chunks(2).all(|r| r[0] == 2 && r[1] < 8));
        }
    }

    #[test]
    fn empty_prefix_matches_unconditional_sampling() {
        let m = peaked_model(5);
        let empty = PartialGrid::new(vec![2], 3, vec![]).unwrap();
        let c = SamplerConfig::new(0.05, 6);
        let a = complete_image(&m, &SdeSpec::vp(), &empty, CompletionMode::Direct, &c, 100, None).unwrap();
        assert_eq!(a, direct_sample(&m, 6, 100, None).unwrap());
    }

    #[test]
    fn completion_conditionals_match_enumeration() {
        let m = peaked_model(6);
        let p = exhaustive(&m);
        let c = SamplerConfig::new(0.05, 2);
        for a in [1u8, 4, 6] {
            let row: Vec<f64> = p[a as usize * 8..(a as usize + 1) * 8].to_vec();
            let z: f64 = row.iter().sum();
            let cond: Vec<f64> = row.iter().map(|v| v / z).collect();
            let partial = PartialGrid::new(vec![2], 3, vec![a]).unwrap();
            let out = complete_image(&m, &SdeSpec::vp(), &partial, CompletionMode::Direct, &c, 10_000, None).unwrap();
            let mut h = vec![0.0; 8];
            for r in out.values().chunks(2) {
                h[r[1] as usize] += 1e-4;
            }
            let tv = total_variation(&h, &cond);
            assert!(tv < 0.05, "prefix {a}: tv {tv}");
        }
    }
}
