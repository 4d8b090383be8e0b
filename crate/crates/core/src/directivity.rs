//! Frequency-invariant target directivity patterns.
//!
//! Two families are supported: differential-array (DMA) polynomials in the
//! cosine of the look-angle offset, and user-defined step patterns over
//! azimuth. Every pattern carries an attenuation floor applied to the gain
//! magnitude; the sign of the raw gain is kept.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Doa};

/// Default floor: 40 dB maximum attenuation.
pub const DEFAULT_FLOOR: f64 = 0.01;

const COEFFICIENT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternShape {
    /// Coefficients a_0..a_J of Σ a_j cos^j(φ-φs) cos^j(θ-θs).
    Dma { coefficients: Vec<f64> },
    /// Sorted (azimuth in degrees, linear gain) steps relative to the
    /// steering azimuth. The gain holds until the next breakpoint and wraps
    /// around 360°.
    Piecewise { breakpoints: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectivityPattern {
    pub shape: PatternShape,
    pub steering: Doa,
    /// Minimum gain magnitude. Zero disables clamping.
    pub floor: f64,
}

/// First-, third- and sixth-order coefficient sets.
pub fn dma_coefficients(order: usize) -> Option<Vec<f64>> {
    match order {
        1 => Some(vec![0.5, 0.5]),
        3 => Some(vec![0.0, 1.0 / 6.0, 0.5, 1.0 / 3.0]),
        6 => Some(vec![
            1.0 / 49.0,
            8.0 / 49.0,
            8.0 / 49.0,
            -48.0 / 49.0,
            -48.0 / 49.0,
            64.0 / 49.0,
            64.0 / 49.0,
        ]),
        _ => None,
    }
}

fn horner(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, a| acc * x + a)
}

fn clamp_magnitude(raw: f64, floor: f64) -> f64 {
    if raw.abs() >= floor {
        raw
    } else if raw < 0.0 {
        -floor
    } else {
        floor
    }
}

fn check_floor(floor: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::invalid(format!("floor must lie in [0, 1], got {floor}")));
    }
    Ok(())
}

/// Builds a DMA pattern of the given order. The coefficients must sum to one.
pub fn dma_pattern(order: usize, coefficients: &[f64], steering: Doa, floor: f64) -> Result<DirectivityPattern> {
    if coefficients.len() != order + 1 {
        return Err(Error::invalid(format!(
            "order {order} needs {} coefficients, got {}",
            order + 1,
            coefficients.len()
        )));
    }
    let sum: f64 = coefficients.iter().sum();
    if (sum - 1.0).abs() > COEFFICIENT_SUM_TOL {
        return Err(Error::invalid(format!("DMA coefficients must sum to 1, got {sum}")));
    }
    check_floor(floor)?;
    Ok(DirectivityPattern {
        shape: PatternShape::Dma {
            coefficients: coefficients.to_vec(),
        },
        steering,
        floor,
    })
}

/// Builds a step pattern from (azimuth degrees, gain) breakpoints.
pub fn piecewise_pattern(breakpoints: &[(f64, f64)], steering: Doa, floor: f64) -> Result<DirectivityPattern> {
    if breakpoints.is_empty() {
        return Err(Error::invalid("piecewise pattern needs at least one breakpoint"));
    }
    check_floor(floor)?;
    for w in breakpoints.windows(2) {
        if !(w[0].0 < w[1].0) {
            return Err(Error::invalid("breakpoints must be strictly increasing in azimuth"));
        }
    }
    for &(az, gain) in breakpoints {
        if !(0.0..360.0).contains(&az) {
            return Err(Error::invalid(format!("breakpoint azimuth {az} outside [0, 360)")));
        }
        if !(floor..=1.0).contains(&gain) {
            return Err(Error::invalid(format!("breakpoint gain {gain} outside [{floor}, 1]")));
        }
    }
    Ok(DirectivityPattern {
        shape: PatternShape::Piecewise {
            breakpoints: breakpoints.to_vec(),
        },
        steering,
        floor,
    })
}

impl DirectivityPattern {
    /// Named presets: `dma1`, `dma3`, `dma6`, `omni`, `two_lobe`, `step`.
    pub fn preset(name: &str, steering: Doa) -> Result<Self> {
        let floor = DEFAULT_FLOOR;
        match name {
            "dma1" | "dma3" | "dma6" => {
                let order: usize = name[3..].parse().expect("preset order");
                dma_pattern(order, &dma_coefficients(order).expect("table order"), steering, floor)
            }
            "omni" => piecewise_pattern(&[(0.0, 1.0)], steering, floor),
            // Mainlobes of 20° (centered on the steering direction) and 30°
            // (centered 90° away) at 0 dB, floor elsewhere.
            "two_lobe" => piecewise_pattern(
                &[(0.0, 1.0), (10.0, floor), (75.0, 1.0), (105.0, floor), (350.0, 1.0)],
                steering,
                floor,
            ),
            // Symmetric staircase: 0, -6, -12, -20 dB, null region around 180°.
            "step" => piecewise_pattern(
                &[
                    (0.0, 1.0),
                    (30.0, 0.5),
                    (60.0, 0.25),
                    (90.0, 0.1),
                    (150.0, floor),
                    (210.0, 0.1),
                    (270.0, 0.25),
                    (300.0, 0.5),
                    (330.0, 1.0),
                ],
                steering,
                floor,
            ),
            other => Err(Error::invalid(format!("unknown pattern preset '{other}'"))),
        }
    }

    pub fn with_steering(&self, steering: Doa) -> Self {
        DirectivityPattern {
            steering,
            ..self.clone()
        }
    }

    pub fn with_floor(&self, floor: f64) -> Result<Self> {
        check_floor(floor)?;
        Ok(DirectivityPattern { floor, ..self.clone() })
    }

    /// Gain before the floor is applied.
    pub fn evaluate_raw(&self, theta: f64, phi: f64) -> f64 {
        match &self.shape {
            PatternShape::Dma { coefficients } => {
                let x = (phi - self.steering.elevation).cos() * (theta - self.steering.azimuth).cos();
                // Normalizing by p(1) evaluated the same way makes the
                // steering-direction gain exactly one.
                horner(coefficients, x) / horner(coefficients, 1.0)
            }
            PatternShape::Piecewise { breakpoints } => {
                let rel = wrap_angle(theta - self.steering.azimuth).to_degrees();
                let idx = breakpoints.partition_point(|&(az, _)| az <= rel + 1e-9);
                if idx == 0 {
                    breakpoints[breakpoints.len() - 1].1
                } else {
                    breakpoints[idx - 1].1
                }
            }
        }
    }

    /// Floor-clamped gain at azimuth `theta` and elevation `phi` (radians).
    pub fn evaluate(&self, theta: f64, phi: f64) -> f64 {
        clamp_magnitude(self.evaluate_raw(theta, phi), self.floor)
    }

    pub fn evaluate_doa(&self, doa: Doa) -> f64 {
        self.evaluate(doa.azimuth, doa.elevation)
    }

    /// Theoretical directivity factor (linear) of the floor-clamped pattern.
    ///
    /// Azimuth uses `360/resolution_deg` uniform midpoints; elevation uses
    /// `180/resolution_deg` Gauss-Legendre nodes in sin φ, which carries the
    /// cos φ area weight. Averaging over azimuth leaves only even powers of
    /// cos φ in a DMA pattern, so the unclamped integral is exact.
    pub fn theoretical_df_with(&self, resolution_deg: f64) -> f64 {
        let n_az = (360.0 / resolution_deg).round() as usize;
        let n_el = (180.0 / resolution_deg).round() as usize;
        let d_az = 2.0 * PI / n_az as f64;
        let mut weighted = 0.0;
        let mut total = 0.0;
        for (mu, w) in gauss_legendre(n_el) {
            let phi = mu.asin();
            let mut ring = 0.0;
            for i in 0..n_az {
                let theta = (i as f64 + 0.5) * d_az;
                let g = self.evaluate(theta, phi);
                ring += g * g;
            }
            weighted += w * ring;
            total += w * n_az as f64;
        }
        total / weighted
    }

    pub fn theoretical_df(&self) -> f64 {
        self.theoretical_df_with(1.0)
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

pub fn db_from_linear_power(x: f64) -> f64 {
    10.0 * x.log10()
}
