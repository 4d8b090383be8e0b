//! Baseline directional filters.
//!
//! The least-squares beamformer fits `w^H d(θ)` to the target pattern over
//! an angle grid, per frequency, subject to a unit response in the steering
//! direction. Robustness is enforced by diagonal loading: the loading factor
//! is bisected until the white noise gain sits within 0.01 dB above the
//! requested minimum.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::{far_field_delays, ArrayGeometry, Doa, SPEED_OF_SOUND};
use crate::signal::{Mask, Spectrogram, BIN_HZ, NUM_BINS};

/// Largest magnitude of a beamformer-equivalent mask (+20 dB).
pub const MASK_CLIP: f64 = 10.0;
/// Accepted WNG overshoot above the constraint, dB.
pub const WNG_TOLERANCE_DB: f64 = 0.01;
const MIN_LOADING: f64 = 1e-9;
const MAX_LOADING: f64 = 1e12;

/// Plane-wave steering vector: `exp(-j 2π f τ_q)` per microphone.
pub fn steering_vector(array: &ArrayGeometry, doa: Doa, freq: f64) -> Vec<Complex64> {
    far_field_delays(array, doa, SPEED_OF_SOUND)
        .into_iter()
        .map(|tau| Complex64::from_polar(1.0, -2.0 * PI * freq * tau))
        .collect()
}

/// STFT bin center frequencies.
pub fn stft_frequencies() -> Vec<f64> {
    (0..NUM_BINS).map(|k| k as f64 * BIN_HZ).collect()
}

/// `n` azimuths evenly spaced over the circle, radians.
pub fn angle_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerWeights {
    pub freqs: Vec<f64>,
    /// `weights[f][q]`.
    pub weights: Vec<Vec<Complex64>>,
    pub steering: Doa,
    /// Achieved WNG per frequency, dB.
    pub wng_db: Vec<f64>,
    /// Mean squared deviation from the target pattern per frequency.
    pub residual: Vec<f64>,
    pub loading: Vec<f64>,
}

impl BeamformerWeights {
    pub fn num_mics(&self) -> usize {
        self.weights.first().map_or(0, |w| w.len())
    }

    /// Reference-microphone-only filter (omnidirectional response).
    pub fn reference_only(freqs: Vec<f64>, q: usize, reference: usize) -> Self {
        let mut w = vec![Complex64::new(0.0, 0.0); q];
        w[reference] = Complex64::new(1.0, 0.0);
        let n = freqs.len();
        BeamformerWeights {
            freqs,
            weights: vec![w; n],
            steering: Doa::new(0.0, 0.0),
            wng_db: vec![0.0; n],
            residual: vec![f64::NAN; n],
            loading: vec![0.0; n],
        }
    }

    /// Frequency-averaged pattern residual.
    pub fn mean_residual(&self) -> f64 {
        self.residual.iter().sum::<f64>() / self.residual.len() as f64
    }

    /// Weights as an F × Q array.
    pub fn to_array(&self) -> Array2<Complex64> {
        let q = self.num_mics();
        Array2::from_shape_fn((self.freqs.len(), q), |(f, i)| self.weights[f][i])
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// White noise gain `|w^H d|² / (w^H w)` in dB.
pub fn wng(weights: &[Complex64], array: &ArrayGeometry, freq: f64, steering: Doa) -> Result<f64> {
    let norm2: f64 = weights.iter().map(|w| w.norm_sqr()).sum();
    if norm2 == 0.0 {
        return Err(Error::Undefined("WNG of all-zero weights".into()));
    }
    let d = steering_vector(array, steering, freq);
    Ok(10.0 * (inner(weights, &d).norm_sqr() / norm2).log10())
}

/// Response `w^H d(θ)` at each azimuth (radians, in-plane).
pub fn beampattern(weights: &[Complex64], array: &ArrayGeometry, freq: f64, angles: &[f64]) -> Vec<Complex64> {
    angles
        .iter()
        .map(|&a| inner(weights, &steering_vector(array, Doa::new(a, 0.0), freq)))
        .collect()
}

struct FrequencyProblem {
    a: DMatrix<Complex64>,
    b: DVector<Complex64>,
    ds: DVector<Complex64>,
    dirs: Vec<Vec<Complex64>>,
    target: Vec<f64>,
}

impl FrequencyProblem {
    fn new(array: &ArrayGeometry, pattern: &DirectivityPattern, freq: f64, angles: &[f64]) -> Self {
        let q = array.num_mics();
        let n = angles.len() as f64;
        let mut a = DMatrix::zeros(q, q);
        let mut b = DVector::zeros(q);
        let mut dirs = Vec::with_capacity(angles.len());
        let mut target = Vec::with_capacity(angles.len());
        for &theta in angles {
            let d = steering_vector(array, Doa::new(theta, 0.0), freq);
            let lam = pattern.evaluate(theta, 0.0);
            for i in 0..q {
                b[i] += d[i] * lam / n;
                for j in 0..q {
                    a[(i, j)] += d[i] * d[j].conj() / n;
                }
            }
            dirs.push(d);
            target.push(lam);
        }
        let ds = DVector::from_vec(steering_vector(array, pattern.steering, freq));
        FrequencyProblem { a, b, ds, dirs, target }
    }

    /// Constrained minimizer for loading `mu`.
    fn solve(&self, mu: f64) -> Option<Vec<Complex64>> {
        let q = self.ds.len();
        let r = &self.a + DMatrix::<Complex64>::identity(q, q) * Complex64::new(mu, 0.0);
        let chol = r.cholesky()?;
        let rb = chol.solve(&self.b);
        let rd = chol.solve(&self.ds);
        let denom = self.ds.dotc(&rd);
        let nu = (Complex64::new(1.0, 0.0) - self.ds.dotc(&rb)) / denom;
        let w = rb + rd * nu;
        Some(w.iter().cloned().collect())
    }

    fn wng_db(&self, w: &[Complex64]) -> f64 {
        let ds: Vec<Complex64> = self.ds.iter().cloned().collect();
        let norm2: f64 = w.iter().map(|x| x.norm_sqr()).sum();
        10.0 * (inner(w, &ds).norm_sqr() / norm2).log10()
    }

    fn residual(&self, w: &[Complex64]) -> f64 {
        self.dirs
            .iter()
            .zip(&self.target)
            .map(|(d, &lam)| (inner(w, d) - lam).norm_sqr())
            .sum::<f64>()
            / self.dirs.len() as f64
    }
}

fn design_one(problem: &FrequencyProblem, wng_min_db: f64, q: usize) -> Result<(Vec<Complex64>, f64)> {
    let limit = 10.0 * (q as f64).log10();
    if wng_min_db >= limit - 1e-9 {
        // Only delay-and-sum reaches the bound.
        let w = problem.ds.iter().map(|d| d / q as f64).collect();
        return Ok((w, f64::INFINITY));
    }
    let at = |mu: f64| -> Result<(Vec<Complex64>, f64)> {
        let w = problem
            .solve(mu)
            .ok_or_else(|| Error::Design(format!("singular system at loading {mu:e}")))?;
        let g = problem.wng_db(&w);
        Ok((w, g))
    };
    let (w0, g0) = at(MIN_LOADING)?;
    if g0 >= wng_min_db {
        return Ok((w0, MIN_LOADING));
    }
    let mut hi = 1e-6;
    let mut hi_sol = at(hi)?;
    while hi_sol.1 < wng_min_db {
        hi *= 10.0;
        if hi > MAX_LOADING {
            return Err(Error::Design(format!("WNG {wng_min_db} dB not reached by loading")));
        }
        hi_sol = at(hi)?;
    }
    let mut lo = MIN_LOADING;
    for _ in 0..200 {
        if hi_sol.1 <= wng_min_db + WNG_TOLERANCE_DB {
            break;
        }
        let mid = (lo * hi).sqrt();
        let sol = at(mid)?;
        if sol.1 >= wng_min_db {
            hi = mid;
            hi_sol = sol;
        } else {
            lo = mid;
        }
    }
    Ok((hi_sol.0, hi))
}

/// Least-squares beamformer design with a minimum-WNG constraint.
///
/// `angles` are in-plane azimuths in radians; `freqs` in Hz.
pub fn design_ls_beamformer(
    array: &ArrayGeometry,
    pattern: &DirectivityPattern,
    freqs: &[f64],
    angles: &[f64],
    wng_min_db: f64,
) -> Result<BeamformerWeights> {
    let q = array.num_mics();
    let limit = 10.0 * (q as f64).log10();
    if wng_min_db > limit + 1e-9 {
        return Err(Error::Design(format!(
            "WNG constraint {wng_min_db} dB exceeds the {q}-microphone bound {limit:.2} dB"
        )));
    }
    if angles.is_empty() || freqs.is_empty() {
        return Err(Error::invalid("design grids must be non-empty"));
    }
    let per_freq: Vec<(Vec<Complex64>, f64, f64, f64)> = freqs
        .par_iter()
        .map(|&f| {
            let problem = FrequencyProblem::new(array, pattern, f, angles);
            let (w, mu) = design_one(&problem, wng_min_db, q)?;
            let g = problem.wng_db(&w);
            let res = problem.residual(&w);
            Ok((w, g, res, mu))
        })
        .collect::<Result<_>>()?;
    let mut out = BeamformerWeights {
        freqs: freqs.to_vec(),
        weights: Vec::with_capacity(freqs.len()),
        steering: pattern.steering,
        wng_db: Vec::with_capacity(freqs.len()),
        residual: Vec::with_capacity(freqs.len()),
        loading: Vec::with_capacity(freqs.len()),
    };
    for (w, g, r, mu) in per_freq {
        out.weights.push(w);
        out.wng_db.push(g);
        out.residual.push(r);
        out.loading.push(mu);
    }
    Ok(out)
}

/// Lowest frequency at which the beampattern has a secondary lobe within
/// `level_db` of the steering response, at least `min_separation_deg`
/// away from the steering direction. `None` if no frequency qualifies.
pub fn grating_lobe_onset(
    weights: &BeamformerWeights,
    array: &ArrayGeometry,
    level_db: f64,
    min_separation_deg: f64,
) -> Option<f64> {
    let angles = angle_grid(360);
    let steer = weights.steering.azimuth_deg();
    weights
        .freqs
        .iter()
        .zip(&weights.weights)
        .find(|(&f, w)| has_grating_lobe(w, array, f, &angles, steer, level_db, min_separation_deg))
        .map(|(&f, _)| f)
}

fn has_grating_lobe(
    w: &[Complex64],
    array: &ArrayGeometry,
    freq: f64,
    angles: &[f64],
    steer_deg: f64,
    level_db: f64,
    min_separation_deg: f64,
) -> bool {
    let mag: Vec<f64> = beampattern(w, array, freq, angles).iter().map(|c| c.norm()).collect();
    let main = inner(w, &steering_vector(array, Doa::from_degrees(steer_deg), freq)).norm();
    let thresh = main * 10f64.powf(-level_db / 20.0);
    let n = mag.len();
    (0..n).any(|i| {
        let prev = mag[(i + n - 1) % n];
        let next = mag[(i + 1) % n];
        let deg = angles[i].to_degrees();
        mag[i] >= prev
            && mag[i] > next
            && mag[i] >= thresh
            && crate::geometry::angular_distance_deg(deg, steer_deg) >= min_separation_deg
    })
}

/// Real oracle mask: per bin, the target pattern's magnitude in the
/// direction of the source whose direct-path stem is strongest there.
pub fn oracle_parametric_mask(
    direct_specs: &[Spectrogram],
    doas: &[Doa],
    pattern: &DirectivityPattern,
) -> Result<Mask> {
    if direct_specs.is_empty() {
        return Err(Error::OracleUnavailable("no direct-path stems".into()));
    }
    if direct_specs.len() != doas.len() {
        return Err(Error::OracleUnavailable(format!(
            "{} stems but {} DOAs",
            direct_specs.len(),
            doas.len()
        )));
    }
    let gains: Vec<f64> = doas.iter().map(|&d| pattern.evaluate_doa(d).abs()).collect();
    oracle_mask_with(direct_specs, |n, _| gains[n])
}

/// Oracle mask for sources whose DOA changes over time: `doa_at(n, t)`
/// gives source `n`'s direction in frame `t`.
pub fn oracle_mask_tracks<D>(direct_specs: &[Spectrogram], pattern: &DirectivityPattern, doa_at: D) -> Result<Mask>
where
    D: Fn(usize, usize) -> Doa,
{
    if direct_specs.is_empty() {
        return Err(Error::OracleUnavailable("no direct-path stems".into()));
    }
    oracle_mask_with(direct_specs, |n, t| pattern.evaluate_doa(doa_at(n, t)).abs())
}

fn oracle_mask_with<G: Fn(usize, usize) -> f64>(direct_specs: &[Spectrogram], gain: G) -> Result<Mask> {
    let shape = direct_specs[0].shape();
    for s in direct_specs {
        if s.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: vec![shape.0, shape.1],
                found: vec![s.num_bins(), s.num_frames()],
            });
        }
    }
    let mut g = Array2::zeros(shape);
    for ((f, t), v) in g.indexed_iter_mut() {
        let mut best = 0;
        let mut best_mag = -1.0;
        for (n, s) in direct_specs.iter().enumerate() {
            let m = s.bins[[f, t]].norm_sqr();
            if m > best_mag {
                best_mag = m;
                best = n;
            }
        }
        *v = gain(best, t);
    }
    Ok(Mask::from_real(&g))
}

fn check_shape(mask: &Mask, spec: &Spectrogram) -> Result<()> {
    if mask.shape() != spec.shape() {
        let (f, t) = spec.shape();
        let (mf, mt) = mask.shape();
        return Err(Error::ShapeMismatch {
            expected: vec![f, t],
            found: vec![mf, mt],
        });
    }
    Ok(())
}

/// Elementwise product of a mask with the reference spectrogram.
pub fn apply_mask(mask: &Mask, reference: &Spectrogram) -> Result<Spectrogram> {
    check_shape(mask, reference)?;
    Ok(reference.with_bins(&reference.bins * &mask.values))
}

/// `out[f, t] = w[f]^H y[f, t]`.
pub fn apply_beamformer(weights: &BeamformerWeights, mic_specs: &[Spectrogram]) -> Result<Spectrogram> {
    let q = weights.num_mics();
    if mic_specs.len() != q {
        return Err(Error::ShapeMismatch {
            expected: vec![q],
            found: vec![mic_specs.len()],
        });
    }
    let shape = mic_specs[0].shape();
    if mic_specs.iter().any(|s| s.shape() != shape) || weights.freqs.len() != shape.0 {
        return Err(Error::ShapeMismatch {
            expected: vec![weights.freqs.len(), shape.1],
            found: vec![shape.0, shape.1],
        });
    }
    let mut out = Array2::zeros(shape);
    for ((f, t), v) in out.indexed_iter_mut() {
        *v = (0..q)
            .map(|i| weights.weights[f][i].conj() * mic_specs[i].bins[[f, t]])
            .sum();
    }
    Ok(mic_specs[0].with_bins(out))
}

/// Mask equivalent of a linear filter output: `out / reference`, with the
/// magnitude clipped at [`MASK_CLIP`]. Bins where the reference is zero
/// get a zero mask.
pub fn beamformer_mask(output: &Spectrogram, reference: &Spectrogram) -> Result<Mask> {
    if output.shape() != reference.shape() {
        let (f, t) = reference.shape();
        return Err(Error::ShapeMismatch {
            expected: vec![f, t],
            found: vec![output.num_bins(), output.num_frames()],
        });
    }
    let mut m = Array2::zeros(output.shape());
    for ((idx, v), r) in m.indexed_iter_mut().zip(reference.bins.iter()) {
        let o = output.bins[idx];
        if r.norm() == 0.0 {
            *v = Complex64::new(0.0, 0.0);
            continue;
        }
        let ratio = o / r;
        *v = if ratio.norm() > MASK_CLIP {
            ratio * (MASK_CLIP / ratio.norm())
        } else {
            ratio
        };
    }
    Ok(Mask::new(m))
}
