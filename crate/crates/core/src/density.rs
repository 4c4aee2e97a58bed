//! The interface shared by learned models and analytic oracles, plus
//! dataset-level likelihood evaluation.

use rayon::prelude::*;

use crate::grid::Dataset;
use crate::stats::neumaier_sum;
use crate::{Error, Real, Result};

/// Rows evaluated per parallel work item.
pub const EVAL_CHUNK: usize = 64;

/// A family `p_t` of densities over `d` rescaled coordinates, indexed by
/// diffusion time. Row `i` of every batch call is evaluated at `ts[i]`.
pub trait NoiseConditionalDensity<S: Real = f64>: Sync {
    fn dims(&self) -> usize;

    /// `log p_t(x)` for flat `n × d` rescaled rows.
    fn log_density_continuous_rows(&self, x: &[S], ts: &[f64], classes: Option<&[usize]>) -> Result<Vec<S>>;

    /// `log P_t(v)` of the discretized density for flat `n × d` integer rows.
    fn log_density_discretized_rows(
        &self,
        values: &[u8],
        bit_depth: u8,
        ts: &[f64],
        classes: Option<&[usize]>,
    ) -> Result<Vec<S>>;
}

/// Uniform over the value grid (or over `[−1, 1]^d` for continuous input).
#[derive(Clone, Copy, Debug)]
pub struct UniformDensity {
    pub dims: usize,
}

impl<S: Real> NoiseConditionalDensity<S> for UniformDensity {
    fn dims(&self) -> usize {
        self.dims
    }

    fn log_density_continuous_rows(&self, x: &[S], ts: &[f64], _: Option<&[usize]>) -> Result<Vec<S>> {
        check_rows(x.len(), self.dims, ts.len())?;
        let inside = S::lit(-(self.dims as f64) * std::f64::consts::LN_2);
        Ok(x.chunks(self.dims)
            .map(|r| {
                if r.iter().all(|v| v.abs() <= S::one()) {
                    inside
                } else {
                    S::neg_infinity()
                }
            })
            .collect())
    }

    fn log_density_discretized_rows(
        &self,
        values: &[u8],
        bit_depth: u8,
        ts: &[f64],
        _: Option<&[usize]>,
    ) -> Result<Vec<S>> {
        check_rows(values.len(), self.dims, ts.len())?;
        let lp = S::lit(-(self.dims as f64) * bit_depth as f64 * std::f64::consts::LN_2);
        Ok(vec![lp; ts.len()])
    }
}

pub(crate) fn check_rows(len: usize, d: usize, n: usize) -> Result<()> {
    if len != n * d {
        return Err(Error::shape(
            "density rows",
            format!("{len} values for {n} rows of {d} dimensions"),
        ));
    }
    Ok(())
}

pub fn bits_per_dim_discrete(log_likelihood: f64, dims: usize) -> f64 {
    -log_likelihood / (dims as f64 * std::f64::consts::LN_2)
}

/// Continuous log density on `[−1, 1]` expressed per integer pixel unit.
pub fn bits_per_dim_continuous(log_likelihood: f64, dims: usize, bit_depth: u8) -> f64 {
    let d = dims as f64;
    let jac = (2.0 / ((1u32 << bit_depth) - 1) as f64).ln();
    -(log_likelihood + d * jac) / (d * std::f64::consts::LN_2)
}

/// Per-sample discretized log likelihoods at time `t`, evaluated in
/// parallel chunks; the result order and values do not depend on the
/// thread count.
pub fn discretized_log_likelihoods<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(
    density: &D,
    data: &Dataset,
    t: f64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = data.dim();
    let n = data.len();
    let chunks: Vec<Result<Vec<f64>>> = (0..n.div_ceil(EVAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let (lo, hi) = (c * EVAL_CHUNK, ((c + 1) * EVAL_CHUNK).min(n));
            let ts = vec![t; hi - lo];
            let classes = data.labels().map(|l| &l[lo..hi]);
            let ll = density
                .log_density_discretized_rows(&data.values()[lo * d..hi * d], data.bit_depth(), &ts, classes)
                .map_err(|e| offset_sample(e, lo))?;
            Ok(ll.into_iter().map(|v| v.as_f64()).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn offset_sample(e: Error, lo: usize) -> Error {
    match e {
        Error::NonFiniteDensity { sample, dim } => Error::NonFiniteDensity { sample: sample + lo, dim },
        other => other,
    }
}

/// Per-sample bits per dimension of the discretized density at `t`.
pub fn per_sample_bpd<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(
    density: &D,
    data: &Dataset,
    t: f64,
) -> Result<Vec<f64>> {
    let d = data.dim();
    Ok(discretized_log_likelihoods(density, data, t)?
        .into_iter()
        .map(|ll| bits_per_dim_discrete(ll, d))
        .collect())
}

pub fn mean_bpd<S: Real, D: NoiseConditionalDensity<S> + ?Sized>(density: &D, data: &Dataset, t: f64) -> Result<f64> {
    let v = per_sample_bpd(density, data, t)?;
    Ok(neumaier_sum(v.iter().copied()) / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_density_bits_equal_bit_depth() {
        let data = Dataset::new(vec![3], 4, vec![0, 5, 15, 1, 2, 3], None).unwrap();
        let u = UniformDensity { dims: 3 };
        let bpd = mean_bpd::<f64, _>(&u, &data, 0.0).unwrap();
        assert!((bpd - 4.0).abs() < 1e-12);
    }

    #[test]
    fn continuous_bpd_of_uniform_matches_discrete() {
        // uniform on [-1, 1]^d spans L−1 pixel units per axis
        let (d, b) = (4usize, 8u8);
        let ll = -(d as f64) * std::f64::consts::LN_2;
        let bpd = bits_per_dim_continuous(ll, d, b);
        assert!((bpd - (255.0f64).log2()).abs() < 1e-12);
        assert!((bits_per_dim_discrete(-(d as f64) * 8.0 * std::f64::consts::LN_2, d) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn row_count_is_checked() {
        let u = UniformDensity { dims: 2 };
        let r: Result<Vec<f64>> = u.log_density_discretized_rows(&[0, 1, 2], 2, &[0.0], None);
        assert!(r.is_err());
        let empty = Dataset::new(vec![2], 2, vec![], None).unwrap();
        assert!(matches!(mean_bpd::<f64, _>(&u, &empty, 0.0), Err(Error::EmptyDataset)));
    }
}
