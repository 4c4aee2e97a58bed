//! Deterministic toy datasets on small discrete grids.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{levels, Dataset};
use crate::{Error, Result};

pub const GENERATORS: [&str; 3] = ["checkerboard-2d", "mixture-rings-2d", "textured-patches-8x8"];

/// Ring radii of `mixture-rings-2d` on the unit square, centred at 0.5.
pub const RING_RADII: [f64; 2] = [0.18, 0.4];

/// Oriented sinusoid classes of `textured-patches-8x8`.
pub const TEXTURE_CLASSES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub count: usize,
    pub bit_depth: u8,
    pub seed: u64,
}

pub fn generate(name: &str, params: &GeneratorParams) -> Result<Dataset> {
    if !(2..=4).contains(&params.bit_depth) {
        return Err(Error::invalid(
            "generator bit depth",
            format!("{} not in 2..=4", params.bit_depth),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    match name {
        "checkerboard-2d" => Ok(checkerboard(params, &mut rng)),
        "mixture-rings-2d" => Ok(rings(params, &mut rng)),
        "textured-patches-8x8" => Ok(textures(params, &mut rng)),
        other => Err(Error::UnknownGenerator {
            name: other.to_string(),
            available: GENERATORS.join(", "),
        }),
    }
}

/// Uniform over the cells `(a, b)` with `a + b` even.
fn checkerboard(p: &GeneratorParams, rng: &mut ChaCha8Rng) -> Dataset {
    let l = levels(p.bit_depth);
    let mut values = Vec::with_capacity(2 * p.count);
    for _ in 0..p.count {
        let a = rng.random_range(0..l);
        let b = 2 * rng.random_range(0..l / 2) + a % 2;
        values.extend([a as u8, b as u8]);
    }
    Dataset::new(vec![2], p.bit_depth, values, None).expect("valid checkerboard")
}

/// Exact probability of every cell under the checkerboard law, row-major
/// over `(a, b)`.
pub fn checkerboard_pmf(bit_depth: u8) -> Vec<f64> {
    let l = levels(bit_depth);
    let cells = (l * l / 2) as f64;
    (0..l * l)
        .map(|i| if (i / l + i % l).is_multiple_of(2) { 1.0 / cells } else { 0.0 })
        .collect()
}

fn unit_to_value(u: f64, l: usize) -> u8 {
    ((u * l as f64).floor() as isize).clamp(0, l as isize - 1) as u8
}

/// Points on one of two concentric circles with equal probability and
/// uniform angle, quantized on the unit square; labels are ring indices.
fn rings(p: &GeneratorParams, rng: &mut ChaCha8Rng) -> Dataset {
    let l = levels(p.bit_depth);
    let mut values = Vec::with_capacity(2 * p.count);
    let mut labels = Vec::with_capacity(p.count);
    for _ in 0..p.count {
        let ring = rng.random_range(0..RING_RADII.len());
        let theta = rng.random_range(0.0..2.0 * PI);
        let r = RING_RADII[ring];
        values.push(unit_to_value(0.5 + r * theta.cos(), l));
        values.push(unit_to_value(0.5 + r * theta.sin(), l));
        labels.push(ring);
    }
    Dataset::new(vec![2], p.bit_depth, values, Some(labels)).expect("valid rings")
}

/// Exact marginal law of either coordinate of `mixture-rings-2d`: each
/// ring contributes the arcsine law of `0.5 + r cos θ`.
pub fn rings_marginal_pmf(bit_depth: u8) -> Vec<f64> {
    let l = levels(bit_depth);
    let cdf = |u: f64| -> f64 {
        RING_RADII
            .iter()
            .map(|&r| {
                let c = ((u - 0.5) / r).clamp(-1.0, 1.0);
                1.0 - c.acos() / PI
            })
            .sum::<f64>()
            / RING_RADII.len() as f64
    };
    (0..l)
        .map(|v| {
            let lo = if v == 0 { 0.0 } else { cdf(v as f64 / l as f64) };
            let hi = if v == l - 1 { 1.0 } else { cdf((v + 1) as f64 / l as f64) };
            hi - lo
        })
        .collect()
}

/// Exact joint law of `mixture-rings-2d`, row-major over `(a, b)`. Along
/// each circle the cell is constant between consecutive grid-line
/// crossings, so the arc lengths between sorted crossing angles give the
/// cell masses.
pub fn rings_pmf(bit_depth: u8) -> Vec<f64> {
    let l = levels(bit_depth);
    let mut pmf = vec![0.0; l * l];
    for &r in &RING_RADII {
        let mut cuts = vec![0.0, 2.0 * PI];
        for k in 1..l {
            let c = (k as f64 / l as f64 - 0.5) / r;
            if c.abs() < 1.0 {
                let a = c.acos();
                let s = c.asin();
                cuts.extend([a, 2.0 * PI - a, s.rem_euclid(2.0 * PI), PI - s]);
            }
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let a = unit_to_value(0.5 + r * mid.cos(), l) as usize;
            let b = unit_to_value(0.5 + r * mid.sin(), l) as usize;
            pmf[a * l + b] += (w[1] - w[0]) / (2.0 * PI * RING_RADII.len() as f64);
        }
    }
    pmf
}

/// 8×8 single-channel patches of an oriented sinusoid with random
/// frequency, phase, contrast and brightness. Contrast is moderate so the
/// wave never clips. Labels are the orientation (horizontal, vertical,
/// diagonal, anti-diagonal).
fn textures(p: &GeneratorParams, rng: &mut ChaCha8Rng) -> Dataset {
    const SIDE: usize = 8;
    let l = levels(p.bit_depth);
    let top = (l - 1) as f64;
    let dirs = [(0.0, 1.0), (1.0, 0.0), (0.5f64.sqrt(), 0.5f64.sqrt()), (0.5f64.sqrt(), -(0.5f64.sqrt()))];
    let mut values = Vec::with_capacity(p.count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(p.count);
    for _ in 0..p.count {
        let class = rng.random_range(0..TEXTURE_CLASSES);
        let freq = rng.random_range(0.08..0.25);
        let phase = rng.random_range(0.0..2.0 * PI);
        let amp = rng.random_range(0.15..0.3);
        let mean = rng.random_range(0.4..0.6);
        let (dx, dy) = dirs[class];
        for y in 0..SIDE {
            for x in 0..SIDE {
                let s = (2.0 * PI * freq * (dx * x as f64 + dy * y as f64) + phase).sin();
                values.push(((mean + amp * s) * top).round() as u8);
            }
        }
        labels.push(class);
    }
    Dataset::new(vec![SIDE, SIDE, 1], p.bit_depth, values, Some(labels)).expect("valid textures")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(count: usize, b: u8, seed: u64) -> GeneratorParams {
        GeneratorParams {
            count,
            bit_depth: b,
            seed,
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        for name in GENERATORS {
            let a = generate(name, &params(50, 3, 1)).unwrap();
            let b = generate(name, &params(50, 3, 1)).unwrap();
            let c = generate(name, &params(50, 3, 2)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn unknown_name_lists_generators() {
        match generate("spirals", &params(1, 3, 0)) {
            Err(Error::UnknownGenerator { available, .. }) => {
                for g in GENERATORS {
                    assert!(available.contains(g));
                }
            }
            other => panic!("{other:?}"),
        }
        assert!(generate("checkerboard-2d", &params(1, 5, 0)).is_err());
    }

    #[test]
    fn checkerboard_only_even_cells_and_chi_square() {
        let b = 2;
        let data = generate("checkerboard-2d", &params(40_000, b, 3)).unwrap();
        let l = levels(b);
        let mut counts = vec![0usize; l * l];
        for i in 0..data.len() {
            let r = data.row(i);
            assert_eq!((r[0] + r[1]) % 2, 0);
            counts[r[0] as usize * l + r[1] as usize] += 1;
        }
        let pmf = checkerboard_pmf(b);
        let chi: f64 = counts
            .iter()
            .zip(&pmf)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&c, &p)| {
                let e = p * data.len() as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 7 degrees of freedom; 99.9% quantile ≈ 24.3
        assert!(chi < 24.3, "chi² {chi}");
    }

    #[test]
    fn ring_marginals_match_arcsine_law() {
        let b = 3;
        let data = generate("mixture-rings-2d", &params(40_000, b, 4)).unwrap();
        let pmf = rings_marginal_pmf(b);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for axis in 0..2 {
            let mut counts = vec![0usize; levels(b)];
            for i in 0..data.len() {
                counts[data.row(i)[axis] as usize] += 1;
            }
            let n = data.len() as f64;
            let (chi, dof) = counts.iter().zip(&pmf).filter(|(_, &p)| p > 0.0).fold((0.0, 0), |(s, k), (&c, &p)| {
                (s + (c as f64 - p * n).powi(2) / (p * n), k + 1)
            });
            // dof − 1 ≤ 7; 99.9% quantile for 7 dof ≈ 24.3
            assert!(dof <= 8 && chi < 24.3, "axis {axis} chi² {chi}");
        }
        assert!(data.labels().unwrap().iter().all(|&l| l < 2));
    }

    #[test]
    fn ring_joint_law_matches_marginals_and_samples() {
        let b = 3;
        let l = levels(b);
        let joint = rings_pmf(b);
        assert!((joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let marginal = rings_marginal_pmf(b);
        for a in 0..l {
            let row: f64 = joint[a * l..(a + 1) * l].iter().sum();
            let col: f64 = (0..l).map(|k| joint[k * l + a]).sum();
            assert!((row - marginal[a]).abs() < 1e-12 && (col - marginal[a]).abs() < 1e-12);
        }
        let data = generate("mixture-rings-2d", &params(40_000, b, 6)).unwrap();
        let mut counts = vec![0.0; l * l];
        for i in 0..data.len() {
            let r = data.row(i);
            counts[r[0] as usize * l + r[1] as usize] += 1.0;
        }
        let n = data.len() as f64;
        let chi: f64 = counts
            .iter()
            .zip(&joint)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&c, &p)| (c - p * n).powi(2) / (p * n))
            .sum();
        let cells = joint.iter().filter(|&&p| p > 0.0).count();
        assert!(counts.iter().zip(&joint).all(|(&c, &p)| p > 0.0 || c == 0.0));
        // generous bound: mean cells − 1, sd √(2(cells − 1))
        assert!(chi < (cells - 1) as f64 + 5.0 * (2.0 * (cells - 1) as f64).sqrt(), "chi² {chi} over {cells} cells");
    }

    #[test]
    fn textures_cover_classes_and_value_range() {
        let data = generate("textured-patches-8x8", &params(400, 4, 5)).unwrap();
        assert_eq!(data.dims(), &[8, 8, 1]);
        let labels = data.labels().unwrap();
        for c in 0..TEXTURE_CLASSES {
            assert!(labels.iter().filter(|&&l| l == c).count() > 50);
        }
        assert!(data.values().iter().any(|&v| v <= 2));
        assert!(data.values().iter().any(|&v| v >= 13));
    }
}
