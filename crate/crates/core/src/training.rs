//! Maximum-likelihood and noise-conditional objectives, and the Adam loop.
//!
//! Losses are reported in nats per dimension. The noise-conditional loss
//! draws one `t ∼ μ` per sample: samples with `t = 0` contribute their
//! discretized log-likelihood, the others are rescaled, perturbed with the
//! forward kernel and contribute a continuous log density.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::density::{mean_bpd, NoiseConditionalDensity};
use crate::grid::Dataset;
use crate::model::{Dropout, NcDensityModel};
use crate::sanity::{delta_logp_pairs, perturb_dataset, PiSpec};
use crate::sde::SdeSpec;
use crate::stats::neumaier_sum;
use crate::{Error, Real, Result};

/// Distribution of the conditioning time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuSpec {
    /// Uniform over `[0, T]` of the diffusion.
    Uniform,
    /// Finite set of times with normalized weights.
    Discrete { scales: Vec<f64>, weights: Vec<f64> },
}

impl MuSpec {
    pub fn point_mass_zero() -> Self {
        MuSpec::Discrete {
            scales: vec![0.0],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        match self {
            MuSpec::Uniform => Ok(()),
            MuSpec::Discrete { scales, weights } => {
                let bad = |d: String| Err(Error::invalid("mu", d));
                if scales.is_empty() || scales.len() != weights.len() {
                    return bad("need one weight per scale".into());
                }
                if let Some(t) = scales.iter().find(|&&t| !(t >= 0.0 && t <= horizon)) {
                    return bad(format!("scale {t} outside [0, {horizon}]"));
                }
                let total: f64 = weights.iter().sum();
                if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return bad(format!("weights must be nonnegative and sum to 1, got {total}"));
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> f64 {
        match self {
            MuSpec::Uniform => rng.random::<f64>() * horizon,
            MuSpec::Discrete { scales, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (&t, &w) in scales.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return t;
                    }
                }
                *scales.last().expect("validated nonempty")
            }
        }
    }
}

/// Gradients aligned with the model's parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients<S = f64> {
    pub blocks: Vec<Vec<S>>,
}

impl<S: Real> ModelGradients<S> {
    pub fn global_norm(&self) -> S {
        neumaier_sum(self.blocks.iter().flatten().map(|&g| g * g)).sqrt()
    }
}

#[derive(Clone, Debug)]
struct Plan<S> {
    discrete: Vec<usize>,
    /// (batch index, t, perturbed rescaled row)
    continuous: Vec<(usize, f64, Vec<S>)>,
}

fn draw_plan<S: Real, R: Rng + ?Sized>(
    batch: &Dataset,
    spec: &SdeSpec,
    mu: &MuSpec,
    rng: &mut R,
) -> Result<Plan<S>> {
    let mut plan = Plan {
        discrete: Vec::new(),
        continuous: Vec::new(),
    };
    for i in 0..batch.len() {
        let t = mu.sample(spec.horizon, rng);
        if t == 0.0 {
            plan.discrete.push(i);
        } else {
            let x0: Vec<S> = batch.rescaled_row(i);
            plan.continuous.push((i, t, spec.perturb(&x0, t, rng)?));
        }
    }
    Ok(plan)
}

fn check_nonempty(batch: &Dataset) -> Result<()> {
    if batch.is_empty() {
        Err(Error::EmptyDataset)
    } else {
        Ok(())
    }
}

fn first_bad<S: Real>(per_dim: &[S], d: usize, rows: &[(usize, f64)]) -> Result<()> {
    match per_dim.iter().position(|v| !v.is_finite()) {
        Some(p) => {
            let (sample, t) = rows[p / d];
            Err(Error::NonFiniteLoss {
                sample,
                t,
                value: per_dim[p].as_f64(),
            })
        }
        None => Ok(()),
    }
}

fn loss_from_plan<S: Real>(
    model: &NcDensityModel<S>,
    batch: &Dataset,
    plan: &Plan<S>,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<(S, ModelGradients<S>)> {
    let d = model.dims();
    let n = batch.len();
    let mut tape = Tape::new();
    let pv = model.register_params(&mut tape, true);
    let mut parts = Vec::new();
    if !plan.discrete.is_empty() {
        let sub = batch.subset(&plan.discrete);
        let ts = vec![0.0; sub.len()];
        let per_dim = model.discretized_graph(&mut tape, &pv, sub.values(), &ts, sub.labels(), dropout.as_deref_mut())?;
        let rows: Vec<(usize, f64)> = plan.discrete.iter().map(|&i| (i, 0.0)).collect();
        first_bad(tape.value(per_dim).data(), d, &rows)?;
        parts.push(tape.sum(per_dim)?);
    }
    if !plan.continuous.is_empty() {
        let m = plan.continuous.len();
        let x: Vec<S> = plan.continuous.iter().flat_map(|(_, _, r)| r.iter().copied()).collect();
        let ts: Vec<f64> = plan.continuous.iter().map(|&(_, t, _)| t).collect();
        let classes: Option<Vec<usize>> = batch
            .labels()
            .map(|l| plan.continuous.iter().map(|&(i, _, _)| l[i]).collect());
        let xv = tape.constant(Tensor::matrix(m, d, x));
        let per_dim = model.continuous_graph(&mut tape, &pv, xv, &ts, classes.as_deref(), dropout)?;
        let rows: Vec<(usize, f64)> = plan.continuous.iter().map(|&(i, t, _)| (i, t)).collect();
        first_bad(tape.value(per_dim).data(), d, &rows)?;
        parts.push(tape.sum(per_dim)?);
    }
    let total = match parts.as_slice() {
        [a] => *a,
        [a, b] => tape.add(*a, *b)?,
        _ => unreachable!("nonempty batch"),
    };
    let loss = tape.scale(total, S::lit(-1.0 / (n * d) as f64))?;
    let value = tape.value(loss).item();
    let grads = tape.backward_from(loss, &Tensor::scalar(S::one()))?;
    let mut params = grads.into_params();
    let blocks = model
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| match params.remove(&i) {
            Some(g) => g.into_data(),
            None => vec![S::zero(); b.data.len()],
        })
        .collect();
    Ok((value, ModelGradients { blocks }))
}

/// Mean negative discretized log-likelihood per dimension.
pub fn mle_loss<S: Real>(model: &NcDensityModel<S>, batch: &Dataset) -> Result<(S, ModelGradients<S>)> {
    check_nonempty(batch)?;
    let plan = Plan {
        discrete: (0..batch.len()).collect(),
        continuous: Vec::new(),
    };
    loss_from_plan(model, batch, &plan, None)
}

pub fn ncml_loss<S: Real, R: Rng + ?Sized>(
    model: &NcDensityModel<S>,
    batch: &Dataset,
    spec: &SdeSpec,
    mu: &MuSpec,
    rng: &mut R,
) -> Result<(S, ModelGradients<S>)> {
    ncml_loss_with_dropout(model, batch, spec, mu, rng, None)
}

fn ncml_loss_with_dropout<S: Real, R: Rng + ?Sized>(
    model: &NcDensityModel<S>,
    batch: &Dataset,
    spec: &SdeSpec,
    mu: &MuSpec,
    rng: &mut R,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<(S, ModelGradients<S>)> {
    check_nonempty(batch)?;
    mu.validate(spec.horizon)?;
    let plan = draw_plan(batch, spec, mu, rng)?;
    loss_from_plan(model, batch, &plan, dropout)
}

/// The noise-conditional loss value for any density (no gradients), using
/// the same draws as [`ncml_loss`] for a given generator state.
pub fn ncml_loss_value<S: Real, D: NoiseConditionalDensity<S> + ?Sized, R: Rng + ?Sized>(
    density: &D,
    batch: &Dataset,
    spec: &SdeSpec,
    mu: &MuSpec,
    rng: &mut R,
) -> Result<f64> {
    check_nonempty(batch)?;
    mu.validate(spec.horizon)?;
    let plan: Plan<S> = draw_plan(batch, spec, mu, rng)?;
    let mut lls = Vec::with_capacity(batch.len());
    if !plan.discrete.is_empty() {
        let sub = batch.subset(&plan.discrete);
        let ts = vec![0.0; sub.len()];
        lls.extend(density.log_density_discretized_rows(sub.values(), sub.bit_depth(), &ts, sub.labels())?);
    }
    if !plan.continuous.is_empty() {
        let x: Vec<S> = plan.continuous.iter().flat_map(|(_, _, r)| r.iter().copied()).collect();
        let ts: Vec<f64> = plan.continuous.iter().map(|&(_, t, _)| t).collect();
        let classes: Option<Vec<usize>> = batch
            .labels()
            .map(|l| plan.continuous.iter().map(|&(i, _, _)| l[i]).collect());
        lls.extend(density.log_density_continuous_rows(&x, &ts, classes.as_deref())?);
    }
    Ok(-neumaier_sum(lls.iter().map(|v| v.as_f64())) / (batch.len() * batch.dim()) as f64)
}

/// Standard normal draws shared across objectives: one `n × d` block per
/// scale of a finite `μ`.
#[derive(Clone, Debug)]
pub struct NoiseDraws {
    pub per_scale: Vec<Vec<f64>>,
}

impl NoiseDraws {
    pub fn new<R: Rng + ?Sized>(scales: usize, batch: &Dataset, rng: &mut R) -> Self {
        let m = batch.len() * batch.dim();
        Self {
            per_scale: (0..scales)
                .map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect())
                .collect(),
        }
    }
}

/// Per-scale mean negative log-likelihood per dimension with shared draws.
fn per_scale_losses<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(
    density: &D,
    batch: &Dataset,
    spec: &SdeSpec,
    scales: &[f64],
    draws: &NoiseDraws,
) -> Result<Vec<f64>> {
    check_nonempty(batch)?;
    if draws.per_scale.len() != scales.len() {
        return Err(Error::invalid("noise draws", "one block per scale required"));
    }
    let (n, d) = (batch.len(), batch.dim());
    let x0: Vec<f64> = batch.rescaled();
    scales
        .iter()
        .zip(&draws.per_scale)
        .map(|(&t, z)| {
            let ts = vec![t; n];
            let ll: Vec<S> = if t == 0.0 {
                density.log_density_discretized_rows(batch.values(), batch.bit_depth(), &ts, batch.labels())?
            } else {
                let k = spec.marginal(t)?;
                let x: Vec<S> = x0
                    .iter()
                    .zip(z)
                    .map(|(&x, &z)| S::lit(k.mean_scale * x + k.std * z))
                    .collect();
                density.log_density_continuous_rows(&x, &ts, batch.labels())?
            };
            Ok(-neumaier_sum(ll.iter().map(|v| v.as_f64())) / (n * d) as f64)
        })
        .collect()
}

fn discrete_mu(mu: &MuSpec, horizon: f64) -> Result<(&[f64], &[f64])> {
    mu.validate(horizon)?;
    match mu {
        MuSpec::Discrete { scales, weights } => Ok((scales, weights)),
        MuSpec::Uniform => Err(Error::invalid("mu", "a finite set of scales is required")),
    }
}

/// Exact expectation over a finite `μ`: `Σ_t μ(t) L_t`.
pub fn ncml_expectation_loss<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(
    density: &D,
    batch: &Dataset,
    spec: &SdeSpec,
    mu: &MuSpec,
    draws: &NoiseDraws,
) -> Result<f64> {
    let (scales, weights) = discrete_mu(mu, spec.horizon)?;
    let l = per_scale_losses(density, batch, spec, scales, draws)?;
    Ok(neumaier_sum(l.iter().zip(weights).map(|(l, w)| l * w)))
}

/// MLE term plus `Σ_{t≠0} λ_t L_t` with `λ_t = μ(t)/μ(0)`.
pub fn regularized_form_loss<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(
    density: &D,
    batch: &Dataset,
    spec: &SdeSpec,
    mu: &MuSpec,
    draws: &NoiseDraws,
) -> Result<f64> {
    let (scales, weights) = discrete_mu(mu, spec.horizon)?;
    let mu0: f64 = scales.iter().zip(weights).filter(|(&t, _)| t == 0.0).map(|(_, w)| w).sum();
    if !(mu0 > 0.0) {
        return Err(Error::invalid("mu", "μ(0) must be positive for the regularized form"));
    }
    let l = per_scale_losses(density, batch, spec, scales, draws)?;
    Ok(neumaier_sum(l.iter().zip(weights).map(|(l, w)| l * (w / mu0))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub seed: u64,
    pub sde: SdeSpec,
    pub mu: MuSpec,
    /// Evaluate every this many steps (0 disables periodic evaluation).
    pub eval_every: usize,
    /// Times at which Δ log p is logged.
    pub probe_ts: Vec<f64>,
    pub eval_pi: f64,
    /// Call the checkpoint hook every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(sde: SdeSpec, mu: MuSpec) -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            dropout: 0.0,
            seed: 0,
            sde,
            mu,
            eval_every: 0,
            probe_ts: Vec::new(),
            eval_pi: 1.0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("train config", d));
        self.sde.validate()?;
        self.mu.validate(self.sde.horizon)?;
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.clip_norm > 0.0) || !(self.eps > 0.0) {
            return bad("learning_rate ≥ 0, clip_norm > 0 and eps > 0 required".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam moments must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if let Some(t) = self.probe_ts.iter().find(|&&t| !(t >= 0.0 && t <= self.sde.horizon)) {
            return bad(format!("probe t {t} outside [0, {}]", self.sde.horizon));
        }
        if !(0.0..=1.0).contains(&self.eval_pi) {
            return bad(format!("eval_pi {} not in [0, 1]", self.eval_pi));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S = f64> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    step: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(model: &NcDensityModel<S>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<S>> = model.blocks().iter().map(|b| vec![S::zero(); b.data.len()]).collect();
        Self {
            lr: S::lit(lr),
            beta1: S::lit(beta1),
            beta2: S::lit(beta2),
            eps: S::lit(eps),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, model: &mut NcDensityModel<S>, grads: &ModelGradients<S>) {
        self.step += 1;
        let one = S::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        let trainable: Vec<bool> = model.blocks().iter().map(|b| b.trainable).collect();
        for (i, g) in grads.blocks.iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = model.block_data_mut(i);
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (one - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (one - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales gradients so their global norm is at most `max_norm`.
pub fn clip_gradients<S: Real>(grads: &mut ModelGradients<S>, max_norm: f64) -> S {
    let norm = grads.global_norm();
    let max = S::lit(max_norm);
    if norm > max {
        let c = max / norm;
        for g in grads.blocks.iter_mut().flatten() {
            *g *= c;
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean batch loss since the previous row (nats per dimension).
    pub loss: f64,
    pub bpd_t0: f64,
    pub delta_logp: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<MetricsRow>,
    /// Loss of every step.
    pub losses: Vec<f64>,
    pub probe_ts: Vec<f64>,
}

impl TrainReport {
    pub fn write_metrics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "step,loss,bpd_t0")?;
        for t in &self.probe_ts {
            write!(w, ",delta_logp_t{t}")?;
        }
        writeln!(w)?;
        for r in &self.metrics {
            write!(w, "{},{},{}", r.step, r.loss, r.bpd_t0)?;
            for d in &r.delta_logp {
                write!(w, ",{d}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Seed offset for the evaluation corruption, so it differs from training
/// batches drawn under the same seed.
const EVAL_PI_STREAM: u64 = 0x5EED_0E7A;

pub type CheckpointHook<'a, S> = &'a mut dyn FnMut(&NcDensityModel<S>, usize) -> Result<()>;

/// Runs `config.steps` Adam updates on minibatches drawn with replacement.
///
/// On a non-finite loss or parameter update the model is restored to the
/// last state handed to the checkpoint hook (or the initial state) and the
/// error is returned.
pub fn train<S: Real>(
    model: &mut NcDensityModel<S>,
    data: &Dataset,
    eval: &Dataset,
    config: &TrainConfig,
    mut checkpoint: Option<CheckpointHook<'_, S>>,
) -> Result<TrainReport> {
    config.validate()?;
    check_nonempty(data)?;
    let evaluating = config.eval_every > 0;
    if evaluating {
        check_nonempty(eval)?;
    }
    let perturbed = if evaluating && !config.probe_ts.is_empty() {
        Some(perturb_dataset(eval, &PiSpec::new(config.eval_pi, config.seed ^ EVAL_PI_STREAM)?)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model, config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut last_good = model.clone();
    let mut report = TrainReport {
        metrics: Vec::new(),
        losses: Vec::with_capacity(config.steps),
        probe_ts: config.probe_ts.clone(),
    };
    let mut window = Vec::new();
    for step in 1..=config.steps {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..data.len())).collect();
        let batch = data.subset(&idx);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut dropout = Dropout {
            rate: config.dropout,
            rng: &mut drop_rng,
        };
        let dr = (config.dropout > 0.0).then_some(&mut dropout);
        let (loss, mut grads) = match ncml_loss_with_dropout(model, &batch, &config.sde, &config.mu, &mut rng, dr) {
            Ok(v) => v,
            Err(e) => {
                *model = last_good;
                return Err(e);
            }
        };
        clip_gradients(&mut grads, config.clip_norm);
        adam.update(model, &grads);
        if !model.params_finite() {
            *model = last_good;
            return Err(Error::NonFiniteParameters { step });
        }
        report.losses.push(loss.as_f64());
        window.push(loss.as_f64());
        if evaluating && (step % config.eval_every == 0 || step == config.steps) {
            let bpd_t0 = mean_bpd(&*model, eval, 0.0)?;
            let delta_logp = match &perturbed {
                Some(p) => config
                    .probe_ts
                    .iter()
                    .map(|&t| Ok(delta_logp_pairs(&*model, eval, p, t)?.delta_bpd))
                    .collect::<Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            report.metrics.push(MetricsRow {
                step,
                loss: neumaier_sum(window.iter().copied()) / window.len() as f64,
                bpd_t0,
                delta_logp,
            });
            window.clear();
        }
        let due = config.checkpoint_every > 0 && step % config.checkpoint_every == 0;
        if due || step == config.steps {
            if let Some(hook) = checkpoint.as_deref_mut() {
                hook(model, step)?;
            }
            last_good = model.clone();
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate, GeneratorParams};
    use crate::density::UniformDensity;
    use crate::model::ModelArch;
    use crate::oracle::{GaussianMixtureOracle, OracleDensity};

    fn toy(n: usize) -> Dataset {
        generate(
            "mixture-rings-2d",
            &GeneratorParams {
                count: n,
                bit_depth: 3,
                seed: 1,
            },
        )
        .unwrap()
        .with_labels(None)
        .unwrap()
    }

    fn model(seed: u64) -> NcDensityModel<f64> {
        let mut a = ModelArch::new(vec![2], 3, 0.1);
        a.hidden = vec![16];
        a.components = 3;
        a.fourier_features = 2;
        NcDensityModel::new(a, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn point_mass_at_zero_equals_mle_bit_exactly() {
        let m = model(1);
        let batch = toy(32);
        let (a, ga) = mle_loss(&m, &batch).unwrap();
        let (b, gb) = ncml_loss(
            &m,
            &batch,
            &SdeSpec::vp(),
            &MuSpec::point_mass_zero(),
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn uniform_density_loss_is_bits_times_ln2() {
        let batch = toy(16);
        let u = UniformDensity { dims: 2 };
        let l = ncml_loss_value::<f64, _, _>(
            &u,
            &batch,
            &SdeSpec::vp(),
            &MuSpec::point_mass_zero(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut a = ModelArch::new(vec![2], 3, 0.1);
        a.hidden = vec![3];
        a.components = 2;
        a.fourier_features = 1;
        let m = NcDensityModel::<f64>::new(a, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let batch = toy(6);
        let spec = SdeSpec::vp();
        let mu = MuSpec::Discrete {
            scales: vec![0.0, 0.05],
            weights: vec![0.5, 0.5],
        };
        let (_, g) = ncml_loss(&m, &batch, &spec, &mu, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for (bi, block) in m.blocks().iter().enumerate() {
            for j in 0..block.data.len() {
                let eval = |delta: f64| {
                    let mut p = m.clone();
                    p.block_data_mut(bi)[j] += delta;
                    ncml_loss(&p, &batch, &spec, &mu, &mut ChaCha8Rng::seed_from_u64(4)).unwrap().0
                };
                let num = (eval(h) - eval(-h)) / (2.0 * h);
                let a = if block.trainable { g.blocks[bi][j] } else { 0.0 };
                if !block.trainable {
                    assert_eq!(g.blocks[bi][j], 0.0);
                    continue;
                }
                worst = worst.max(crate::autodiff::relative_error(a, num));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn expectation_and_regularized_forms_agree() {
        let m = model(5);
        let batch = toy(20);
        let spec = SdeSpec::vp();
        for (scales, weights) in [
            (vec![0.0], vec![1.0]),
            (vec![0.0, 0.05], vec![0.5, 0.5]),
            (vec![0.0, 0.02, 0.09], vec![0.2, 0.3, 0.5]),
        ] {
            let mu = MuSpec::Discrete {
                scales: scales.clone(),
                weights: weights.clone(),
            };
            let draws = NoiseDraws::new(scales.len(), &batch, &mut ChaCha8Rng::seed_from_u64(6));
            let e = ncml_expectation_loss(&m, &batch, &spec, &mu, &draws).unwrap();
            let r = regularized_form_loss(&m, &batch, &spec, &mu, &draws).unwrap();
            assert!(((e / weights[0]) - r).abs() <= 1e-12 * r.abs(), "{e} {r}");
            if scales.len() == 1 {
                assert_eq!(r.to_bits(), mle_loss(&m, &batch).unwrap().0.to_bits());
            }
        }
        let no_zero = MuSpec::Discrete {
            scales: vec![0.01, 0.05],
            weights: vec![0.5, 0.5],
        };
        let draws = NoiseDraws::new(2, &batch, &mut ChaCha8Rng::seed_from_u64(6));
        assert!(regularized_form_loss(&m, &batch, &spec, &no_zero, &draws).is_err());
    }

    #[test]
    fn oracle_substitution_matches_quadrature() {
        // one-dimensional data point, oracle density, uniform μ
        let o = GaussianMixtureOracle::new(vec![0.3, 0.7], vec![-0.4, 0.5], vec![0.02, 0.05]).unwrap();
        let spec = SdeSpec::vp();
        let dens = OracleDensity { oracle: o.clone(), spec: spec.clone() };
        let n = 20_000;
        let batch = Dataset::new(vec![1], 3, vec![5; n], None).unwrap();
        let x0 = crate::grid::rescale_value::<f64>(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let est = ncml_loss_value::<f64, _, _>(&dens, &batch, &spec, &MuSpec::Uniform, &mut rng).unwrap();
        // E_t E_z[−log q_t(α x0 + σ z)] by midpoint in t and Simpson in z
        let (nt, nz, zmax) = (400, 400, 8.0);
        let hz = 2.0 * zmax / nz as f64;
        let mut acc = Vec::new();
        let mut sq = Vec::new();
        for i in 0..nt {
            let t = spec.horizon * (i as f64 + 0.5) / nt as f64;
            let k = spec.marginal(t).unwrap();
            let (mut s1, mut s2) = (0.0, 0.0);
            for j in 0..=nz {
                let z = -zmax + hz * j as f64;
                let w = if j == 0 || j == nz { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let v = -o.perturbed_log_density(&[k.mean_scale * x0 + k.std * z], t, &spec).unwrap();
                s1 += w * phi * v;
                s2 += w * phi * v * v;
            }
            acc.push(s1 * hz / 3.0);
            sq.push(s2 * hz / 3.0);
        }
        let mean = acc.iter().sum::<f64>() / nt as f64;
        let second = sq.iter().sum::<f64>() / nt as f64;
        let se = ((second - mean * mean) / n as f64).sqrt();
        assert!((est - mean).abs() < 4.0 * se, "{est} vs {mean} (se {se})");
    }

    fn config(steps: usize, mu: MuSpec) -> TrainConfig {
        let mut c = TrainConfig::new(SdeSpec::vp(), mu);
        c.steps = steps;
        c.batch_size = 32;
        c.learning_rate = 5e-3;
        c.seed = 11;
        c.eval_every = steps / 2;
        c.probe_ts = vec![0.05, 0.1];
        c
    }

    #[test]
    fn loss_decreases_on_toy_data() {
        let data = toy(2000);
        let mut m = model(2);
        let r = train(&mut m, &data, &data.take(200), &config(500, MuSpec::Uniform), None).unwrap();
        let first: f64 = r.losses[..50].iter().sum::<f64>() / 50.0;
        let last: f64 = r.losses[450..].iter().sum::<f64>() / 50.0;
        assert!(last < first - 0.03, "{first} → {last}");
        assert_eq!(r.metrics.len(), 2);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = toy(100);
        let mut m = model(3);
        let before = m.clone();
        let mut c = config(20, MuSpec::Uniform);
        c.learning_rate = 0.0;
        c.dropout = 0.2;
        train(&mut m, &data, &data, &c, None).unwrap();
        for (a, b) in m.blocks().iter().zip(before.blocks()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy(300);
        let run = || {
            let mut m = model(4);
            let mut buf = Vec::new();
            let mut calls = Vec::new();
            let mut hook = |_: &NcDensityModel<f64>, s: usize| {
                calls.push(s);
                Ok(())
            };
            let mut c = config(40, MuSpec::Uniform);
            c.checkpoint_every = 10;
            c.dropout = 0.1;
            train(&mut m, &data, &data.take(50), &c, Some(&mut hook))
                .unwrap()
                .write_metrics_csv(&mut buf)
                .unwrap();
            (buf, calls)
        };
        let (a, calls) = run();
        assert_eq!(a, run().0);
        assert_eq!(calls, vec![10, 20, 30, 40]);
        assert!(String::from_utf8(a).unwrap().starts_with("step,loss,bpd_t0,delta_logp_t0.05,delta_logp_t0.1\n"));
    }

    #[test]
    fn non_finite_parameters_abort_and_restore() {
        let data = toy(100);
        let mut m = model(5);
        let mut c = config(10, MuSpec::point_mass_zero());
        c.learning_rate = f64::MAX;
        let before = m.clone();
        let err = train(&mut m, &data, &data, &c, None).unwrap_err();
        assert!(err.is_numeric(), "{err}");
        for (a, b) in m.blocks().iter().zip(before.blocks()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = config(10, MuSpec::Uniform);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = config(10, MuSpec::Uniform);
        c.probe_ts = vec![0.5];
        assert!(c.validate().is_err());
        let bad_mu = MuSpec::Discrete {
            scales: vec![0.0, 0.05],
            weights: vec![0.7, 0.7],
        };
        assert!(config(10, bad_mu).validate().is_err());
    }
}
