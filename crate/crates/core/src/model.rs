//! Masked autoregressive network with a logistic-mixture head per
//! dimension, conditioned on a Fourier embedding of the diffusion time and
//! optionally on a class label.
//!
//! Hidden unit `j` of a layer of width `H` has degree `⌊j·d/H⌋`. Every layer
//! reads `concat(e, h)`, with the time/class embedding `e` first, so each
//! connectivity mask is a prefix of its input columns: a unit of degree `m`
//! sees the embedding, and either inputs `x_{<m}` (first layer) or the
//! previous layer's units of degree `≤ m`. The head of dimension `k` sees
//! hidden units of degree `≤ k`. Consequently the mixture parameters of
//! dimension `k` depend on `x_{<k}`, `t` and the class only.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AffineMask, Tape, Tensor, Var};
use crate::density::{check_rows, NoiseConditionalDensity};
use crate::grid::{levels, rescale_value};
use crate::logistic::MixtureParams;
use crate::{Error, Real, Result};

pub const DEFAULT_LOG_SCALE_MIN: f64 = -7.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    /// Spatial shape of one sample, e.g. `[8, 8, 1]` or `[2]`.
    pub grid_dims: Vec<usize>,
    pub bit_depth: u8,
    /// Widths of the masked hidden layers.
    pub hidden: Vec<usize>,
    /// Logistic components per dimension.
    pub components: usize,
    /// Number of random frequencies; the embedding has twice this width.
    pub fourier_features: usize,
    /// Standard deviation of the log-frequencies.
    pub fourier_log_std: f64,
    #[serde(default)]
    pub class_count: Option<usize>,
    /// Time is fed to the network as `t / horizon`.
    pub horizon: f64,
    #[serde(default = "default_log_scale_min")]
    pub log_scale_min: f64,
}

fn default_log_scale_min() -> f64 {
    DEFAULT_LOG_SCALE_MIN
}

impl ModelArch {
    pub fn new(grid_dims: Vec<usize>, bit_depth: u8, horizon: f64) -> Self {
        Self {
            grid_dims,
            bit_depth,
            hidden: vec![128],
            components: 5,
            fourier_features: 8,
            fourier_log_std: 1.0,
            class_count: None,
            horizon,
            log_scale_min: DEFAULT_LOG_SCALE_MIN,
        }
    }

    pub fn dims(&self) -> usize {
        self.grid_dims.iter().product()
    }

    pub fn embed_width(&self) -> usize {
        2 * self.fourier_features
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { t, horizon: self.horizon })
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("model arch", d));
        if self.grid_dims.is_empty() || self.dims() == 0 {
            return bad(format!("grid dims {:?}", self.grid_dims));
        }
        if !(1..=8).contains(&self.bit_depth) {
            return bad(format!("bit depth {}", self.bit_depth));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.components == 0 || self.fourier_features == 0 {
            return bad("components and fourier_features must be positive".into());
        }
        if self.class_count == Some(0) {
            return bad("class_count must be positive".into());
        }
        if !(self.horizon > 0.0) || !self.fourier_log_std.is_finite() || !self.log_scale_min.is_finite() {
            return bad("horizon, fourier_log_std and log_scale_min must be finite, horizon > 0".into());
        }
        Ok(())
    }
}

/// Named parameter array. Non-trainable blocks (the Fourier frequencies)
/// are fixed at initialization and never receive gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock<S = f64> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
    pub trainable: bool,
}

impl<S: Real> ParamBlock<S> {
    fn tensor(&self) -> Tensor<S> {
        Tensor::new(self.shape.clone(), self.data.clone()).expect("block shape")
    }
}

#[derive(Clone, Debug)]
struct Layout {
    freq: usize,
    class: Option<usize>,
    layers: Vec<(usize, usize)>,
    /// logits, means, log-scales: (weight, bias)
    heads: [(usize, usize); 3],
    layer_masks: Vec<Arc<AffineMask>>,
    head_mask: Arc<AffineMask>,
}

pub(crate) fn hidden_degrees(d: usize, width: usize) -> Vec<usize> {
    (0..width).map(|j| j * d / width).collect()
}

fn build_layout(arch: &ModelArch) -> (Vec<(String, Vec<usize>, bool)>, Layout) {
    let (d, e, k) = (arch.dims(), arch.embed_width(), arch.components);
    let mut specs = vec![("fourier.freq".to_string(), vec![arch.fourier_features, 1], false)];
    let class = arch.class_count.map(|c| {
        specs.push(("class.embed".to_string(), vec![e, c], true));
        specs.len() - 1
    });
    let mut layers = Vec::new();
    let mut layer_masks = Vec::new();
    let mut prev_deg: Option<Vec<usize>> = None;
    let mut prev_width = d;
    for (l, &h) in arch.hidden.iter().enumerate() {
        let deg = hidden_degrees(d, h);
        let prefix: Vec<usize> = deg
            .iter()
            .map(|&m| {
                e + match &prev_deg {
                    None => m,
                    Some(p) => p.partition_point(|&q| q <= m),
                }
            })
            .collect();
        layer_masks.push(Arc::new(AffineMask::from_prefixes(e + prev_width, &prefix)));
        specs.push((format!("layer{l}.weight"), vec![h, e + prev_width], true));
        specs.push((format!("layer{l}.bias"), vec![h], true));
        layers.push((specs.len() - 2, specs.len() - 1));
        prev_deg = Some(deg);
        prev_width = h;
    }
    let head_prefix: Vec<usize> = (0..d * k)
        .map(|r| {
            let dim = r / k;
            e + match &prev_deg {
                None => dim,
                Some(p) => p.partition_point(|&q| q <= dim),
            }
        })
        .collect();
    let head_mask = Arc::new(AffineMask::from_prefixes(e + prev_width, &head_prefix));
    let mut heads = [(0, 0); 3];
    for (i, name) in ["logit", "mean", "log_scale"].iter().enumerate() {
        specs.push((format!("head.{name}.weight"), vec![d * k, e + prev_width], true));
        specs.push((format!("head.{name}.bias"), vec![d * k], true));
        heads[i] = (specs.len() - 2, specs.len() - 1);
    }
    (
        specs,
        Layout {
            freq: 0,
            class,
            layers,
            heads,
            layer_masks,
            head_mask,
        },
    )
}

/// Head outputs on a tape, each `[n, d·K]` dimension-major.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub logits: Var,
    pub means: Var,
    pub log_scales: Var,
}

/// Inverted dropout applied after every hidden layer during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

#[derive(Clone, Debug)]
pub struct NcDensityModel<S = f64> {
    arch: ModelArch,
    blocks: Vec<ParamBlock<S>>,
    layout: Layout,
}

impl<S: Real> NcDensityModel<S> {
    /// Random initialization. Masked-out weights are stored as zero.
    pub fn new<R: Rng + ?Sized>(arch: ModelArch, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeroed(arch)?;
        let arch = model.arch.clone();
        let layout = model.layout.clone();
        model.blocks[layout.freq].data = (0..arch.fourier_features)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                S::lit((arch.fourier_log_std * z).exp())
            })
            .collect();
        if let Some(c) = layout.class {
            for v in &mut model.blocks[c].data {
                let z: f64 = rng.sample(StandardNormal);
                *v = S::lit(0.5 * z);
            }
        }
        let fill = |block: &mut ParamBlock<S>, mask: &AffineMask, gain: f64, rng: &mut R| {
            let cols = block.shape[1];
            for o in 0..mask.outputs() {
                let std = gain / (mask.fan_in(o).max(1) as f64).sqrt();
                for &(a, b) in mask.runs(o) {
                    for i in a..b {
                        let z: f64 = rng.sample(StandardNormal);
                        block.data[o * cols + i] = S::lit(std * z);
                    }
                }
            }
        };
        for (l, &(w, _)) in layout.layers.iter().enumerate() {
            fill(&mut model.blocks[w], &layout.layer_masks[l], 1.0, rng);
        }
        for &(w, _) in &layout.heads {
            fill(&mut model.blocks[w], &layout.head_mask, 0.5, rng);
        }
        let k = arch.components;
        let mean_bias = layout.heads[1].1;
        for (r, v) in model.blocks[mean_bias].data.iter_mut().enumerate() {
            let c = r % k;
            *v = S::lit(if k > 1 { -0.8 + 1.6 * c as f64 / (k - 1) as f64 } else { 0.0 });
        }
        // start every component near scale 0.3
        let gap = (0.3f64).ln() - arch.log_scale_min;
        let raw = arch.log_scale_min + gap.exp_m1().ln();
        model.blocks[layout.heads[2].1].data.fill(S::lit(raw));
        Ok(model)
    }

    /// All parameters zero (frequencies included).
    pub fn zeroed(arch: ModelArch) -> Result<Self> {
        arch.validate()?;
        let (specs, layout) = build_layout(&arch);
        let blocks = specs
            .into_iter()
            .map(|(name, shape, trainable)| ParamBlock {
                data: vec![S::zero(); shape.iter().product()],
                name,
                shape,
                trainable,
            })
            .collect();
        Ok(Self { arch, blocks, layout })
    }

    /// Rebuilds a model from flat block data in declaration order.
    pub fn from_blocks(arch: ModelArch, data: Vec<Vec<S>>) -> Result<Self> {
        let mut model = Self::zeroed(arch)?;
        if data.len() != model.blocks.len() {
            return Err(Error::invalid(
                "model blocks",
                format!("expected {} blocks, got {}", model.blocks.len(), data.len()),
            ));
        }
        for (b, v) in model.blocks.iter_mut().zip(data) {
            if v.len() != b.data.len() {
                return Err(Error::invalid(
                    "model blocks",
                    format!("block {} expects {} values, got {}", b.name, b.data.len(), v.len()),
                ));
            }
            b.data = v;
        }
        Ok(model)
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn blocks(&self) -> &[ParamBlock<S>] {
        &self.blocks
    }

    /// Mutable access to block data; shapes are fixed.
    pub fn block_data_mut(&mut self, index: usize) -> &mut [S] {
        &mut self.blocks[index].data
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.trainable).map(|b| b.data.len()).sum()
    }

    pub fn params_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<T: Real>(&self) -> NcDensityModel<T> {
        NcDensityModel {
            arch: self.arch.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    data: b.data.iter().map(|v| T::lit(v.as_f64())).collect(),
                    trainable: b.trainable,
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn dims(&self) -> usize {
        self.arch.dims()
    }

    /// Puts every block on `tape`: trainable blocks as parameters with id
    /// equal to the block index when `track` is set, constants otherwise.
    pub fn register_params(&self, tape: &mut Tape<S>, track: bool) -> Vec<Var> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                if track && b.trainable {
                    tape.param(i, b.tensor())
                } else {
                    tape.constant(b.tensor())
                }
            })
            .collect()
    }

    fn check_batch(&self, n: usize, ts: &[f64], classes: Option<&[usize]>) -> Result<()> {
        if n != ts.len() {
            return Err(Error::shape("model batch", format!("{n} rows but {} times", ts.len())));
        }
        for &t in ts {
            self.arch.check_time(t)?;
        }
        if let (Some(cls), Some(count)) = (classes, self.arch.class_count) {
            if cls.len() != n {
                return Err(Error::shape("model batch", format!("{n} rows but {} classes", cls.len())));
            }
            if let Some(&c) = cls.iter().find(|&&c| c >= count) {
                return Err(Error::invalid("class", format!("{c} not below {count}")));
            }
        }
        Ok(())
    }

    /// Builds the head outputs for the rows of `x` (`[n, d]`). Class labels
    /// are ignored by unconditional models.
    pub fn heads_graph(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
        ts: &[f64],
        classes: Option<&[usize]>,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<HeadVars> {
        let n = ts.len();
        self.check_batch(n, ts, classes)?;
        let lay = &self.layout;
        let h = self.arch.horizon;
        let tau = tape.constant(Tensor::column(ts.iter().map(|&t| S::lit(t / h)).collect()));
        let arg = tape.affine(tau, params[lay.freq], None, None)?;
        let arg = tape.scale(arg, S::lit(2.0 * PI))?;
        let (s, c) = (tape.sin(arg)?, tape.cos(arg)?);
        let mut e = tape.concat(s, c)?;
        if let (Some(ci), Some(cls)) = (lay.class, classes) {
            let count = self.arch.class_count.unwrap_or(0);
            let mut onehot = vec![S::zero(); n * count];
            for (r, &k) in cls.iter().enumerate() {
                onehot[r * count + k] = S::one();
            }
            let oh = tape.constant(Tensor::matrix(n, count, onehot));
            let ce = tape.affine(oh, params[ci], None, None)?;
            e = tape.add(e, ce)?;
        }
        let mut hid = x;
        for (l, &(w, b)) in lay.layers.iter().enumerate() {
            let inp = tape.concat(e, hid)?;
            let pre = tape.affine(inp, params[w], Some(params[b]), Some(lay.layer_masks[l].clone()))?;
            hid = tape.tanh(pre)?;
            if let Some(dr) = dropout.as_deref_mut() {
                if dr.rate > 0.0 {
                    let width = self.arch.hidden[l];
                    let keep = 1.0 - dr.rate;
                    let mask: Vec<S> = (0..n * width)
                        .map(|_| {
                            if dr.rng.random_bool(keep) {
                                S::lit(1.0 / keep)
                            } else {
                                S::zero()
                            }
                        })
                        .collect();
                    let m = tape.constant(Tensor::matrix(n, width, mask));
                    hid = tape.mul(hid, m)?;
                }
            }
        }
        let inp = tape.concat(e, hid)?;
        let mut out = [x; 3];
        for (i, &(w, b)) in lay.heads.iter().enumerate() {
            out[i] = tape.affine(inp, params[w], Some(params[b]), Some(lay.head_mask.clone()))?;
        }
        let min = S::lit(self.arch.log_scale_min);
        let shifted = tape.shift(out[2], -min)?;
        let soft = tape.softplus(shifted)?;
        let log_scales = tape.shift(soft, min)?;
        Ok(HeadVars {
            logits: out[0],
            means: out[1],
            log_scales,
        })
    }

    fn log_weights(&self, tape: &mut Tape<S>, logits: Var) -> Result<Var> {
        let k = self.arch.components;
        let lse = tape.logsumexp_groups(logits, k)?;
        let rep = tape.repeat_interleave(lse, k)?;
        tape.sub(logits, rep)
    }

    /// Per-dimension continuous log densities `[n, d]` for rows `x: [n, d]`.
    pub fn continuous_graph(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        x: Var,
        ts: &[f64],
        classes: Option<&[usize]>,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let k = self.arch.components;
        let hv = self.heads_graph(tape, params, x, ts, classes, dropout)?;
        let xr = tape.repeat_interleave(x, k)?;
        let c = tape.sub(xr, hv.means)?;
        let nls = tape.neg(hv.log_scales)?;
        let inv = tape.exp(nls)?;
        let z = tape.mul(c, inv)?;
        let nz = tape.neg(z)?;
        let sp = tape.softplus(nz)?;
        let sp2 = tape.scale(sp, S::lit(2.0))?;
        let a = tape.sub(nz, hv.log_scales)?;
        let logpdf = tape.sub(a, sp2)?;
        let lw = self.log_weights(tape, hv.logits)?;
        let joint = tape.add(lw, logpdf)?;
        tape.logsumexp_groups(joint, k)
    }

    /// Per-dimension discretized log probabilities `[n, d]` for integer
    /// rows `values` (flat `n × d`).
    pub fn discretized_graph(
        &self,
        tape: &mut Tape<S>,
        params: &[Var],
        values: &[u8],
        ts: &[f64],
        classes: Option<&[usize]>,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let (d, k, b) = (self.dims(), self.arch.components, self.arch.bit_depth);
        let n = ts.len();
        check_rows(values.len(), d, n)?;
        let top = levels(b) - 1;
        if let Some(i) = values.iter().position(|&v| v as usize > top) {
            return Err(Error::ValueOutOfRange {
                index: i,
                value: values[i] as i64,
                max: top as i64,
            });
        }
        let x = tape.constant(Tensor::matrix(n, d, values.iter().map(|&v| rescale_value(v, b)).collect()));
        let hv = self.heads_graph(tape, params, x, ts, classes, dropout)?;
        let rep = |f: &dyn Fn(u8) -> S| -> Vec<S> {
            values.iter().flat_map(|&v| std::iter::repeat_n(f(v), k)).collect()
        };
        let xr = tape.constant(Tensor::matrix(n, d * k, rep(&|v| rescale_value(v, b))));
        let ma = tape.constant(Tensor::matrix(n, d * k, rep(&|v| S::lit((v as usize != top) as u8 as f64))));
        let mb = tape.constant(Tensor::matrix(n, d * k, rep(&|v| S::lit((v != 0) as u8 as f64))));
        let mm = tape.constant(Tensor::matrix(
            n,
            d * k,
            rep(&|v| S::lit((v != 0 && v as usize != top) as u8 as f64)),
        ));
        let delta = S::lit(1.0 / top as f64);
        let c = tape.sub(xr, hv.means)?;
        let nls = tape.neg(hv.log_scales)?;
        let inv = tape.exp(nls)?;
        let cp = tape.shift(c, delta)?;
        let a = tape.mul(cp, inv)?;
        let cm = tape.shift(c, -delta)?;
        let bb = tape.mul(cm, inv)?;
        let na = tape.neg(a)?;
        let spa = tape.softplus(na)?;
        let la = tape.neg(spa)?;
        let spb = tape.softplus(bb)?;
        let lb = tape.neg(spb)?;
        let w = tape.scale(inv, S::lit(2.0) * delta)?;
        let lm = tape.log1mexp(w)?;
        let ta = tape.mul(la, ma)?;
        let tb = tape.mul(lb, mb)?;
        let tm = tape.mul(lm, mm)?;
        let s1 = tape.add(ta, tb)?;
        let logprob = tape.add(s1, tm)?;
        let lw = self.log_weights(tape, hv.logits)?;
        let joint = tape.add(lw, logprob)?;
        tape.logsumexp_groups(joint, k)
    }

    fn first_non_finite(&self, per_dim: &[S]) -> Result<()> {
        let d = self.dims();
        match per_dim.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteDensity {
                sample: i / d,
                dim: i % d,
            }),
            None => Ok(()),
        }
    }

    fn row_sums(&self, per_dim: &[S]) -> Vec<S> {
        per_dim.chunks(self.dims()).map(|r| r.iter().copied().sum()).collect()
    }

    /// Mixture parameters for every row of `x` (flat `n × d`).
    pub fn conditional_params_rows(
        &self,
        x: &[S],
        ts: &[f64],
        classes: Option<&[usize]>,
    ) -> Result<Vec<MixtureParams<S>>> {
        let d = self.dims();
        check_rows(x.len(), d, ts.len())?;
        let mut tape = Tape::new();
        let pv = self.register_params(&mut tape, false);
        let xv = tape.constant(Tensor::matrix(ts.len(), d, x.to_vec()));
        let hv = self.heads_graph(&mut tape, &pv, xv, ts, classes, None)?;
        let w = d * self.arch.components;
        let (l, m, s) = (
            tape.value(hv.logits).data(),
            tape.value(hv.means).data(),
            tape.value(hv.log_scales).data(),
        );
        (0..ts.len())
            .map(|r| {
                let rg = r * w..(r + 1) * w;
                MixtureParams::new(
                    self.arch.components,
                    l[rg.clone()].to_vec(),
                    m[rg.clone()].to_vec(),
                    s[rg].to_vec(),
                )
            })
            .collect()
    }

    pub fn conditional_params(&self, x: &[S], t: f64, class: Option<usize>) -> Result<MixtureParams<S>> {
        let cls = class.map(|c| vec![c]);
        Ok(self.conditional_params_rows(x, &[t], cls.as_deref())?.remove(0))
    }

    /// Per-dimension continuous log densities, flat `n × d`.
    pub fn log_density_continuous_per_dim(
        &self,
        x: &[S],
        ts: &[f64],
        classes: Option<&[usize]>,
    ) -> Result<Vec<S>> {
        let d = self.dims();
        check_rows(x.len(), d, ts.len())?;
        let mut tape = Tape::new();
        let pv = self.register_params(&mut tape, false);
        let xv = tape.constant(Tensor::matrix(ts.len(), d, x.to_vec()));
        let out = self.continuous_graph(&mut tape, &pv, xv, ts, classes, None)?;
        let v = tape.value(out).data().to_vec();
        self.first_non_finite(&v)?;
        Ok(v)
    }

    pub fn log_density_discretized_per_dim(
        &self,
        values: &[u8],
        ts: &[f64],
        classes: Option<&[usize]>,
    ) -> Result<Vec<S>> {
        let mut tape = Tape::new();
        let pv = self.register_params(&mut tape, false);
        let out = self.discretized_graph(&mut tape, &pv, values, ts, classes, None)?;
        let v = tape.value(out).data().to_vec();
        self.first_non_finite(&v)?;
        Ok(v)
    }

    pub fn log_density_continuous(&self, x: &[S], t: f64, class: Option<usize>) -> Result<S> {
        let cls = class.map(|c| vec![c]);
        Ok(self.row_sums(&self.log_density_continuous_per_dim(x, &[t], cls.as_deref())?)[0])
    }

    pub fn log_density_discretized(&self, values: &[u8], t: f64, class: Option<usize>) -> Result<S> {
        let cls = class.map(|c| vec![c]);
        Ok(self.row_sums(&self.log_density_discretized_per_dim(values, &[t], cls.as_deref())?)[0])
    }

    /// `∇ₓ log p_t(x)` for every row, flat `n × d`.
    pub fn score_rows(&self, x: &[S], ts: &[f64], classes: Option<&[usize]>) -> Result<Vec<S>> {
        let d = self.dims();
        check_rows(x.len(), d, ts.len())?;
        let mut tape = Tape::new();
        let pv = self.register_params(&mut tape, false);
        let xv = tape.input(Tensor::matrix(ts.len(), d, x.to_vec()));
        let per_dim = self.continuous_graph(&mut tape, &pv, xv, ts, classes, None)?;
        self.first_non_finite(tape.value(per_dim).data())?;
        let total = tape.sum(per_dim)?;
        let grads = tape.backward_from(total, &Tensor::scalar(S::one()))?;
        Ok(grads.into_input(0)?.into_data())
    }

    pub fn score(&self, x: &[S], t: f64, class: Option<usize>) -> Result<Vec<S>> {
        let cls = class.map(|c| vec![c]);
        self.score_rows(x, &[t], cls.as_deref())
    }
}

impl<S: Real> NoiseConditionalDensity<S> for NcDensityModel<S> {
    fn dims(&self) -> usize {
        self.arch.dims()
    }

    fn log_density_continuous_rows(&self, x: &[S], ts: &[f64], classes: Option<&[usize]>) -> Result<Vec<S>> {
        Ok(self.row_sums(&self.log_density_continuous_per_dim(x, ts, classes)?))
    }

    fn log_density_discretized_rows(
        &self,
        values: &[u8],
        bit_depth: u8,
        ts: &[f64],
        classes: Option<&[usize]>,
    ) -> Result<Vec<S>> {
        if bit_depth != self.arch.bit_depth {
            return Err(Error::invalid(
                "bit depth",
                format!("model uses {}, data has {bit_depth}", self.arch.bit_depth),
            ));
        }
        Ok(self.row_sums(&self.log_density_discretized_per_dim(values, ts, classes)?))
    }
}
