//! Least-significant-bit corruption `p_π` and the Δ log p robustness metric.
//!
//! Each coordinate is independently incremented with probability `π/2`,
//! decremented with probability `π/2` and left alone otherwise; results are
//! clamped to the valid range, so boundary values change with probability
//! `π/2` only.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{mean_bpd, NoiseConditionalDensity};
use crate::grid::{levels, Dataset, DiscreteGrid};
use crate::stats::stream_rng;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPolicy {
    #[default]
    Clamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiSpec {
    pub pi: f64,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
    pub seed: u64,
}

impl PiSpec {
    pub fn new(pi: f64, seed: u64) -> Result<Self> {
        let s = Self {
            pi,
            boundary: BoundaryPolicy::Clamp,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.pi) {
            Ok(())
        } else {
            Err(Error::invalid("pi", format!("{} not in [0, 1]", self.pi)))
        }
    }
}

/// Applies the ±1 corruption to `values` in place.
pub fn perturb_values<R: Rng + ?Sized>(values: &mut [u8], bit_depth: u8, pi: f64, rng: &mut R) {
    let top = (levels(bit_depth) - 1) as u8;
    for v in values {
        let u: f64 = rng.random();
        if u < 0.5 * pi {
            *v = v.saturating_add(1).min(top);
        } else if u < pi {
            *v = v.saturating_sub(1);
        }
    }
}

pub fn perturb_pi<R: Rng + ?Sized>(grid: &DiscreteGrid, pi: f64, rng: &mut R) -> DiscreteGrid {
    let mut values = grid.values().to_vec();
    perturb_values(&mut values, grid.bit_depth(), pi, rng);
    DiscreteGrid::new(grid.dims().to_vec(), grid.bit_depth(), values).expect("perturbation stays in range")
}

/// Corrupts every sample; sample `i` draws from its own stream of
/// `spec.seed`, so the result does not depend on evaluation order.
pub fn perturb_dataset(data: &Dataset, spec: &PiSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = data.dim();
    let mut values = data.values().to_vec();
    for (i, row) in values.chunks_mut(d).enumerate() {
        perturb_values(row, data.bit_depth(), spec.pi, &mut stream_rng(spec.seed, i as u64));
    }
    data.with_values(values)
}

/// Clean and corrupted mean bpd at `t` together with their absolute gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaLogP {
    pub t: f64,
    pub nll_clean_bpd: f64,
    pub nll_pi_bpd: f64,
    pub delta_bpd: f64,
}

pub fn delta_from_means(t: f64, nll_clean_bpd: f64, nll_pi_bpd: f64) -> DeltaLogP {
    DeltaLogP {
        t,
        nll_clean_bpd,
        nll_pi_bpd,
        delta_bpd: (nll_clean_bpd - nll_pi_bpd).abs(),
    }
}

/// Δ log p between a clean dataset and an already corrupted copy, both
/// evaluated with the discretized density at `t`.
pub fn delta_logp_pairs<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(
    density: &D,
    clean: &Dataset,
    perturbed: &Dataset,
    t: f64,
) -> Result<DeltaLogP> {
    if clean.is_empty() || perturbed.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(delta_from_means(t, mean_bpd(density, clean, t)?, mean_bpd(density, perturbed, t)?))
}

pub fn delta_logp<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(
    density: &D,
    data: &Dataset,
    spec: &PiSpec,
    t: f64,
) -> Result<DeltaLogP> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let perturbed = perturb_dataset(data, spec)?;
    delta_logp_pairs(density, data, &perturbed, t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub pi: f64,
    pub rows: Vec<DeltaLogP>,
}

impl RobustnessReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,nll_clean_bpd,nll_pi_bpd,delta_bpd")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.t, r.nll_clean_bpd, r.nll_pi_bpd, r.delta_bpd)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Δ log p on a grid of conditioning times; the corrupted copy is drawn
/// once and shared by every `t`.
pub fn robustness_sweep<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(
    density: &D,
    data: &Dataset,
    spec: &PiSpec,
    t_grid: &[f64],
) -> Result<RobustnessReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let perturbed = perturb_dataset(data, spec)?;
    let rows = t_grid
        .iter()
        .map(|&t| delta_logp_pairs(density, data, &perturbed, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessReport { pi: spec.pi, rows })
}
