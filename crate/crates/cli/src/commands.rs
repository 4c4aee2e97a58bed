use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use ncml_core::checkpoint::{self, CheckpointMeta};
use ncml_core::density::mean_bpd;
use ncml_core::grid::{levels, save_grid_file, write_atomic, write_pnm_mosaic};
use ncml_core::oracle::GaussianMixtureOracle;
use ncml_core::sampling::{
    complete_image, default_t_start, direct_sample, oracle_recovery, two_phase_sample, PartialGrid, SamplerConfig,
};
use ncml_core::sanity::{robustness_sweep, PiSpec};
use ncml_core::sde::{calibrate_horizon, default_calibration_target};
use ncml_core::stats::stream_rng;
use ncml_core::training::train;
use ncml_core::{Dataset, Model64, SdeKind, SdeSpec};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, SampleMode};
use crate::error::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.ncml";

/// Mosaic exports show at most this many samples.
const MOSAIC_LIMIT: usize = 64;

/// Joint histograms are reported only for grids with at most this many cells.
const HISTOGRAM_CELLS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init = 1,
    Sampler = 2,
    Completion = 3,
    SanityPi = 4,
    SdeStats = 5,
    Oracle = 6,
}

/// Independent seed for one use of the run seed.
pub fn purpose_seed(seed: u64, purpose: Purpose) -> u64 {
    mix(seed, purpose as u64)
}

/// splitmix64 finaliser of `seed` offset by `k`.
fn mix(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Run {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    command: &'static str,
}

impl Run {
    pub fn new(cfg: ExperimentConfig, command: &'static str) -> Result<Self, CliError> {
        let out = cfg.out.clone();
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
        Ok(Self { cfg, out, command })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        write_atomic(&p, bytes)?;
        Ok(p)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write_grids(&self, stem: &str, data: &Dataset) -> Result<(), CliError> {
        save_grid_file(&self.path(&format!("{stem}.grid")), data)?;
        if data.is_empty() {
            return Ok(());
        }
        let shown = data.take(data.len().min(MOSAIC_LIMIT));
        let ext = if data.dims().len() == 3 && data.dims()[2] == 3 { "ppm" } else { "pgm" };
        let mut buf = Vec::new();
        if write_pnm_mosaic(&mut buf, &shown).is_ok() {
            self.write(&format!("{stem}.{ext}"), &buf)?;
        }
        Ok(())
    }

    /// Appends a timestamped line to the sidecar log, the only output that
    /// differs between identical runs.
    pub fn log(&self, status: &str) {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(self.path("run.log")) {
            let _ = writeln!(f, "{secs} {} seed={} {status}", self.command, self.cfg.seed);
        }
    }

    fn checkpoint(&self) -> Result<(Model64, CheckpointMeta), CliError> {
        let p = self
            .cfg
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::config("no checkpoint given (--checkpoint or config 'checkpoint')"))?;
        Ok(checkpoint::load::<f64>(p)?)
    }

    /// Configured SDE if any field is set, else the checkpoint's, else VP.
    fn spec_for(&self, meta: Option<&CheckpointMeta>) -> Result<SdeSpec, CliError> {
        if self.cfg.sde.is_set() {
            return self.cfg.sde.spec();
        }
        Ok(meta.and_then(|m| m.sde.clone()).unwrap_or_else(SdeSpec::vp))
    }

    /// Evaluation data: `eval_dataset`, else `dataset`.
    fn evaluation_data(&self) -> Result<Dataset, CliError> {
        match &self.cfg.eval_dataset {
            Some(src) => src.load(),
            None => self.cfg.dataset(),
        }
    }

    fn sampler_config(&self, spec: &SdeSpec, reference: Option<&Dataset>, seed: u64) -> Result<SamplerConfig, CliError> {
        let s = &self.cfg.sampler;
        let t_start = match (s.t_start, reference) {
            (Some(t), _) => t,
            (None, Some(r)) => default_t_start(spec, r, s.crossover_points)?,
            (None, None) => spec.horizon,
        };
        let mut c = SamplerConfig::new(t_start, seed);
        c.steps = s.steps;
        c.corrector_steps = s.corrector_steps;
        c.snr = s.snr;
        c.denoise_final = s.denoise_final;
        c.validate(spec)?;
        Ok(c)
    }
}

fn class_labels(model: &Model64, class: Option<usize>, n: usize) -> Result<Option<Vec<usize>>, CliError> {
    match (model.arch().class_count, class) {
        (None, None) => Ok(None),
        (None, Some(_)) => Err(CliError::config("--class given for an unconditional model")),
        (Some(c), Some(k)) if k >= c => Err(CliError::config(format!("class {k} out of range for {c} classes"))),
        (Some(_), Some(k)) => Ok(Some(vec![k; n])),
        (Some(c), None) => Ok(Some((0..n).map(|i| i % c).collect())),
    }
}

/// Counts of every joint cell in raster order with the first coordinate
/// most significant, or `None` when the grid is too large.
pub fn cell_histogram(data: &Dataset) -> Option<Vec<u64>> {
    let l = levels(data.bit_depth());
    let cells = (0..data.dim()).try_fold(1usize, |acc, _| acc.checked_mul(l).filter(|&c| c <= HISTOGRAM_CELLS))?;
    let mut h = vec![0u64; cells];
    for i in 0..data.len() {
        let idx = data.row(i).iter().fold(0usize, |acc, &v| acc * l + v as usize);
        h[idx] += 1;
    }
    Some(h)
}

fn dim_means(data: &Dataset) -> Vec<f64> {
    let d = data.dim();
    let mut m = vec![0.0; d];
    for i in 0..data.len() {
        for (a, &v) in m.iter_mut().zip(data.row(i)) {
            *a += v as f64;
        }
    }
    m.iter().map(|s| s / data.len().max(1) as f64).collect()
}

pub fn generate(run: &Run) -> Result<String, CliError> {
    let data = run.cfg.dataset()?;
    run.write_grids("dataset", &data)?;
    let summary = json!({
        "count": data.len(),
        "dims": data.dims(),
        "bit_depth": data.bit_depth(),
        "labelled": data.labels().is_some(),
        "dim_means": dim_means(&data),
    });
    run.write_json("dataset.json", &summary)?;
    Ok(format!("wrote {} samples to {}", data.len(), run.path("dataset.grid").display()))
}

pub fn train_cmd(run: &Run) -> Result<String, CliError> {
    let cfg = &run.cfg;
    let data = cfg.dataset()?;
    let eval = cfg.eval_dataset(&data)?;
    let spec = cfg.sde.spec()?;
    let tc = cfg.train_config(&spec);
    let arch = cfg.model.arch(&data, spec.horizon)?;
    let mut model = Model64::new(arch, &mut stream_rng(purpose_seed(cfg.seed, Purpose::Init), 0))?;
    let ckpt = run.path(CHECKPOINT_FILE);
    let meta = |step: usize| CheckpointMeta {
        sde: Some(spec.clone()),
        step: step as u64,
        seed: cfg.seed,
    };
    let mut hook = |m: &Model64, step: usize| checkpoint::save(&ckpt, m, &meta(step));
    let report = train(&mut model, &data, &eval, &tc, Some(&mut hook))?;
    checkpoint::save(&ckpt, &model, &meta(tc.steps))?;
    let mut csv = Vec::new();
    report.write_metrics_csv(&mut csv)?;
    run.write("metrics.csv", &csv)?;
    let mut losses = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        losses.push_str(&format!("{},{l}\n", i + 1));
    }
    run.write("losses.csv", losses.as_bytes())?;
    let last = report.metrics.last();
    let summary = json!({
        "steps": tc.steps,
        "sde": spec,
        "mu": cfg.mu,
        "parameters": model.parameter_count(),
        "probe_ts": report.probe_ts,
        "final_bpd_t0": last.map(|r| r.bpd_t0),
        "final_delta_logp": last.map(|r| r.delta_logp.clone()),
    });
    run.write_json("train.json", &summary)?;
    Ok(format!("trained {} steps; checkpoint {}", tc.steps, ckpt.display()))
}

pub fn eval_nll(run: &Run) -> Result<String, CliError> {
    let (model, meta) = run.checkpoint()?;
    let spec = run.spec_for(Some(&meta))?;
    let data = run.evaluation_data()?;
    let grid = run.cfg.sanity_grid(&spec);
    let mut csv = String::from("t,bpd\n");
    let mut rows = Vec::new();
    for &t in &grid {
        let b = mean_bpd(&model, &data, t)?;
        csv.push_str(&format!("{t},{b}\n"));
        rows.push(json!({"t": t, "bpd": b}));
    }
    run.write("nll.csv", csv.as_bytes())?;
    run.write_json("nll.json", &json!({"samples": data.len(), "rows": rows}))?;
    Ok(csv.trim_end().to_string())
}

pub fn sanity_test(run: &Run) -> Result<String, CliError> {
    let (model, meta) = run.checkpoint()?;
    let spec = run.spec_for(Some(&meta))?;
    let data = run.evaluation_data()?;
    let pi = PiSpec::new(run.cfg.sanity.pi, purpose_seed(run.cfg.seed, Purpose::SanityPi))?;
    let report = robustness_sweep(&model, &data, &pi, &run.cfg.sanity_grid(&spec))?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    run.write("sanity.csv", &csv)?;
    run.write("sanity.json", format!("{}\n", report.to_json()).as_bytes())?;
    Ok(String::from_utf8_lossy(&csv).trim_end().to_string())
}

pub fn sde_stats(run: &Run) -> Result<String, CliError> {
    let data = run.cfg.dataset()?;
    let kinds: Vec<SdeKind> = match run.cfg.sde.kind {
        Some(k) => vec![k],
        None => SdeKind::ALL.to_vec(),
    };
    let s = &run.cfg.sde_stats;
    let seed = purpose_seed(run.cfg.seed, Purpose::SdeStats);
    let mut csv = String::from("kind,t,mean_scale,std,avg_abs_pixels,avg_abs_mc_pixels,perturbation_std_pixels\n");
    let mut crossovers = serde_json::Map::new();
    for kind in kinds {
        let mut section = run.cfg.sde.clone();
        section.kind = Some(kind);
        let spec = section.spec()?;
        for &t in &crate::config::even_grid(spec.horizon, s.points) {
            let k = spec.marginal(t)?;
            let mc = if s.mc_draws > 0 {
                spec.avg_abs_perturbation_mc(t, &data, s.mc_draws, seed)?.to_string()
            } else {
                String::new()
            };
            csv.push_str(&format!(
                "{},{t},{},{},{},{mc},{}\n",
                kind.name(),
                k.mean_scale,
                k.std,
                spec.avg_abs_perturbation(t, &data)?,
                spec.perturbation_std(t, &data)?
            ));
        }
        crossovers.insert(kind.name().into(), json!(spec.crossover_time(&data, run.cfg.sampler.crossover_points)?));
    }
    run.write("sde_stats.csv", csv.as_bytes())?;
    run.write_json("sde_stats.json", &json!({"crossover_time": crossovers}))?;
    Ok(format!("wrote {}", run.path("sde_stats.csv").display()))
}

pub fn sample(run: &Run) -> Result<String, CliError> {
    let (model, meta) = run.checkpoint()?;
    let spec = run.spec_for(Some(&meta))?;
    let s = &run.cfg.sampler;
    let reference = match &run.cfg.dataset {
        Some(src) if s.t_start.is_none() => Some(src.load()?),
        _ => None,
    };
    let seed = purpose_seed(run.cfg.seed, Purpose::Sampler);
    let classes = class_labels(&model, s.class, s.count)?;
    let (samples, config) = match s.mode {
        SampleMode::Direct => (direct_sample(&model, seed, s.count, classes.as_deref())?, None),
        SampleMode::TwoPhase => {
            let c = run.sampler_config(&spec, reference.as_ref(), seed)?;
            (two_phase_sample(&model, &spec, &c, s.count, classes.as_deref())?, Some(c))
        }
    };
    run.write_grids("samples", &samples)?;
    let summary = json!({
        "mode": s.mode,
        "count": samples.len(),
        "sde": spec.kind.name(),
        "t_start": config.as_ref().map(|c| c.t_start),
        "steps": config.as_ref().map(|c| c.steps),
        "corrector_steps": config.as_ref().map(|c| c.corrector_steps),
        "class": s.class,
        "dim_means": dim_means(&samples),
        "cell_histogram": cell_histogram(&samples),
    });
    run.write_json("samples.json", &summary)?;
    Ok(format!("wrote {} samples to {}", samples.len(), run.path("samples.grid").display()))
}

pub fn complete(run: &Run) -> Result<String, CliError> {
    let (model, meta) = run.checkpoint()?;
    let spec = run.spec_for(Some(&meta))?;
    let data = run.evaluation_data()?;
    let c = &run.cfg.complete;
    let d = model.dims();
    let p = c.prefix_len.unwrap_or(d / 2);
    if p > d {
        return Err(CliError::config(format!("prefix_len {p} exceeds {d} dimensions")));
    }
    let rows = c.rows.min(data.len());
    let seed = purpose_seed(run.cfg.seed, Purpose::Completion);
    let mut sampler = run.sampler_config(&spec, Some(&data), seed)?;
    let mut observed = Vec::with_capacity(rows * d);
    let mut values = Vec::with_capacity(rows * c.per_row * d);
    for i in 0..rows {
        let row = data.row(i);
        let class = run.cfg.sampler.class.or(data.label(i).filter(|_| model.arch().class_count.is_some()));
        let partial = PartialGrid::new(data.dims().to_vec(), data.bit_depth(), row[..p].to_vec())?;
        sampler.seed = mix(seed, i as u64);
        let out = complete_image(&model, &spec, &partial, c.mode, &sampler, c.per_row, class)?;
        observed.extend(row[..p].iter().copied().chain(std::iter::repeat_n(0, d - p)));
        values.extend_from_slice(out.values());
    }
    let obs = Dataset::new(data.dims().to_vec(), data.bit_depth(), observed, None)?;
    let comp = Dataset::new(data.dims().to_vec(), data.bit_depth(), values, None)?;
    run.write_grids("observed", &obs)?;
    run.write_grids("completions", &comp)?;
    let summary = json!({
        "mode": c.mode,
        "rows": rows,
        "per_row": c.per_row,
        "prefix_len": p,
        "t_start": sampler.t_start,
        "steps": sampler.steps,
    });
    run.write_json("complete.json", &summary)?;
    Ok(format!("wrote {} completions to {}", comp.len(), run.path("completions.grid").display()))
}

pub fn calibrate(run: &Run) -> Result<String, CliError> {
    let data = run.cfg.dataset()?;
    let base = run.cfg.sde.spec()?;
    let target = run
        .cfg
        .calibration
        .target_std
        .unwrap_or_else(|| default_calibration_target(data.bit_depth()));
    let c = calibrate_horizon(&base, &data, target)?;
    run.write_json("calibration.json", &c)?;
    if !c.reachable {
        return Err(CliError::numeric(
            "calibration_unreachable",
            format!("target std {target} not reachable by searching {}", c.searched),
        ));
    }
    Ok(serde_json::to_string(&c).expect("calibration serializes"))
}

pub fn verify_oracle(run: &Run) -> Result<String, CliError> {
    let o = &run.cfg.oracle;
    let oracle = GaussianMixtureOracle::isotropic(o.weights.clone(), o.means.clone(), o.variance)?;
    let spec = run.cfg.sde.spec()?;
    let mut sampler = run.sampler_config(&spec, None, purpose_seed(run.cfg.seed, Purpose::Oracle))?;
    sampler.t_start = run.cfg.sampler.t_start.unwrap_or(spec.horizon);
    let r = oracle_recovery(&oracle, &spec, &sampler, o.samples)?;
    let pass = r.max_weight_error <= o.weight_tol && r.max_mean_error <= o.mean_tol;
    let report = json!({
        "recovery": r,
        "target_weights": o.weights,
        "target_means": o.means,
        "weight_tol": o.weight_tol,
        "mean_tol": o.mean_tol,
        "pass": pass,
    });
    run.write_json("oracle.json", &report)?;
    let line = serde_json::to_string(&report).expect("report serializes");
    if pass {
        Ok(line)
    } else {
        Err(CliError::numeric("oracle_tolerance", line))
    }
}
