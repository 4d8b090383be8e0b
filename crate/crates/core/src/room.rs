//! Shoebox room impulse responses by the image-source method.
//!
//! Images are enumerated per axis: along an axis of length `L` the image
//! with index `n` lies at `n·L + s` for even `n` and `(n+1)·L − s` for odd
//! `n`, and has undergone `|n|` wall reflections. An order-`k` simulation
//! keeps `|n| <= k` on every axis, i.e. `(2k+1)^3` images. All walls share
//! one real, positive reflection coefficient derived from RT60 (see
//! [`ReflectionModel`]). Fractional arrival times are rendered with an 81-tap
//! Hann-windowed sinc kernel, and responses with reflections pass through a
//! 100 Hz high-pass.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::{norm, sub, wrap_angle, Doa, Point3, SPEED_OF_SOUND};
use crate::SAMPLE_RATE;

/// Half-length of the fractional-delay kernel in samples (81 taps total).
pub const KERNEL_HALF_TAPS: i64 = 40;
/// Half-width of the window that separates the direct path from the
/// reverberant tail, in seconds.
pub const DIRECT_HALF_WINDOW: f64 = 0.0025;

/// How the uniform wall reflection coefficient is derived from RT60.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionModel {
    /// `sqrt(1 - α)` with Sabine's `α`.
    Sabine,
    /// Reflection coefficient tuned so that the image model's own
    /// energy decay fits the requested RT60.
    #[default]
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Length, width, height in meters.
    pub dimensions: [f64; 3],
    /// Reverberation time in seconds. Zero means no reflections.
    pub rt60: f64,
    #[serde(default)]
    pub reflection: ReflectionModel,
}

impl RoomSpec {
    pub fn new(dimensions: [f64; 3], rt60: f64) -> Self {
        RoomSpec {
            dimensions,
            rt60,
            reflection: ReflectionModel::default(),
        }
    }

    pub fn with_reflection(mut self, model: ReflectionModel) -> Self {
        self.reflection = model;
        self
    }

    /// Wall reflection coefficient under this room's reflection model.
    pub fn reflection_coefficient(&self) -> Result<f64> {
        match self.reflection {
            ReflectionModel::Sabine => rt60_to_reflection(self),
            ReflectionModel::Calibrated => calibrated_reflection(self),
        }
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [l, w, h] = self.dimensions;
        2.0 * (l * w + l * h + w * h)
    }

    /// Uniform Sabine absorption coefficient for the requested RT60.
    pub fn absorption(&self) -> f64 {
        0.161 * self.volume() / (self.surface() * self.rt60)
    }

    pub fn contains(&self, p: Point3) -> bool {
        p.iter().zip(&self.dimensions).all(|(&x, &l)| x > 0.0 && x < l)
    }

    /// Per-axis image order that covers one RT60 of propagation along the
    /// shortest room dimension.
    pub fn auto_max_order(&self) -> usize {
        if self.rt60 <= 0.0 {
            return 0;
        }
        let min_dim = self.dimensions.iter().cloned().fold(f64::INFINITY, f64::min);
        (SPEED_OF_SOUND * self.rt60 / min_dim).ceil() as usize + 1
    }
}

/// Acoustic surroundings of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Enclosure {
    FreeField,
    Shoebox(RoomSpec),
}

impl Enclosure {
    pub fn rt60(&self) -> f64 {
        match self {
            Enclosure::FreeField => 0.0,
            Enclosure::Shoebox(r) => r.rt60,
        }
    }

    pub fn auto_max_order(&self) -> usize {
        match self {
            Enclosure::FreeField => 0,
            Enclosure::Shoebox(r) => r.auto_max_order(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub samples: Vec<f64>,
    /// Propagation time of the direct path in seconds.
    pub direct_delay: f64,
}

impl ImpulseResponse {
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }
}

/// Uniform wall reflection coefficient `sqrt(1 - α)` with Sabine's `α`.
pub fn rt60_to_reflection(room: &RoomSpec) -> Result<f64> {
    if !(room.rt60 > 0.0) {
        return Err(Error::invalid(format!("RT60 must be positive, got {}", room.rt60)));
    }
    if room.dimensions.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::invalid("room dimensions must be positive"));
    }
    let alpha = room.absorption();
    if alpha >= 1.0 {
        return Err(Error::InfeasibleRoom {
            rt60: room.rt60,
            absorption: alpha,
        });
    }
    Ok((1.0 - alpha).sqrt())
}

/// Reflection coefficient for which the decay of the image model matches
/// `room.rt60`.
///
/// Reflected images of a source near the room center are binned by
/// reflection count and 1 ms arrival slot, so the energy envelope for any
/// `β` is a cheap weighted sum. The same Schroeder fit used by
/// [`estimate_t60`] is bracketed by an upward scan in `β` and refined by
/// bisection.
pub fn calibrated_reflection(room: &RoomSpec) -> Result<f64> {
    let sabine = rt60_to_reflection(room)?;
    let order = room.auto_max_order();
    let len = rir_length(room.rt60, 0.0);
    let slot = SAMPLE_RATE as usize / 1000;
    let n_slots = len.div_ceil(slot);
    let center = room.dimensions.map(|l| l / 2.0);
    let receiver = room.dimensions.map(|l| l / 2.0 + 0.37 * l / 4.0);
    let max_refl = 3 * order;
    let mut hist = vec![vec![0.0; n_slots]; max_refl + 1];
    for im in image_sources(room, center, order) {
        let d = norm(sub(im.position, receiver));
        let t = (d / SPEED_OF_SOUND * SAMPLE_RATE as f64 / slot as f64) as usize;
        if t < n_slots && im.reflections > 0 {
            hist[im.reflections as usize][t] += 1.0 / (d * d);
        }
    }
    let fit = |beta: f64| -> Option<f64> {
        let b2 = beta * beta;
        let mut env = vec![0.0; n_slots];
        let mut g = 1.0;
        for row in &hist {
            for (e, h) in env.iter_mut().zip(row) {
                *e += g * h;
            }
            g *= b2;
        }
        estimate_t60_from_energy(&env, SAMPLE_RATE as f64 / slot as f64)
    };
    let reaches = |beta: f64| fit(beta).is_some_and(|t| t >= room.rt60);
    // The fitted decay is monotone in β only away from both extremes, where
    // a handful of early images or the finite response length dominate.
    // Sabine's coefficient sits just below the solution for shoebox rooms.
    let step = 0.01;
    let mut hi = 0.9 * sabine;
    while reaches(hi) && hi > 0.5 * sabine {
        hi -= step;
    }
    while !reaches(hi) {
        hi += step;
        if hi >= 1.0 {
            return Err(Error::invalid(format!(
                "no reflection coefficient reaches RT60 {} s in room {:?}",
                room.rt60, room.dimensions
            )));
        }
    }
    let mut lo = hi - step;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if reaches(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Point3,
    pub reflections: u32,
}

fn axis_images(length: f64, s: f64, order: usize) -> Vec<(f64, u32)> {
    let k = order as i64;
    (-k..=k)
        .map(|n| {
            let pos = if n % 2 == 0 {
                n as f64 * length + s
            } else {
                (n + 1) as f64 * length - s
            };
            (pos, n.unsigned_abs() as u32)
        })
        .collect()
}

/// Every image of `source` up to per-axis order `max_order`.
pub fn image_sources(room: &RoomSpec, source: Point3, max_order: usize) -> Vec<ImageSource> {
    let xs = axis_images(room.dimensions[0], source[0], max_order);
    let ys = axis_images(room.dimensions[1], source[1], max_order);
    let zs = axis_images(room.dimensions[2], source[2], max_order);
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &(x, rx) in &xs {
        for &(y, ry) in &ys {
            for &(z, rz) in &zs {
                out.push(ImageSource {
                    position: [x, y, z],
                    reflections: rx + ry + rz,
                });
            }
        }
    }
    out
}

/// Hann-windowed sinc taps for an arrival at fractional sample `tau`.
/// Returns the sample index of the first tap; taps cover
/// `round(tau) ± KERNEL_HALF_TAPS`.
fn fractional_kernel(tau: f64, taps: &mut [f64; 2 * KERNEL_HALF_TAPS as usize + 1]) -> i64 {
    let center = tau.round() as i64;
    let delta = center as f64 - tau;
    let half = KERNEL_HALF_TAPS as f64 + 1.0;
    // sin(π(k+δ)) = (-1)^k sin(πδ); the window cosine advances by a fixed
    // rotation per tap.
    let sin_pd = (PI * delta).sin();
    let step = PI / half;
    let (step_s, step_c) = step.sin_cos();
    let start = (-KERNEL_HALF_TAPS as f64 + delta) * step;
    let (mut ws, mut wc) = start.sin_cos();
    for (i, tap) in taps.iter_mut().enumerate() {
        let k = i as i64 - KERNEL_HALF_TAPS;
        let t = k as f64 + delta;
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            sign * sin_pd / (PI * t)
        };
        *tap = 0.5 * (1.0 + wc) * sinc;
        let c = wc * step_c - ws * step_s;
        ws = ws * step_c + wc * step_s;
        wc = c;
    }
    center - KERNEL_HALF_TAPS
}

fn add_scaled(buf: &mut [f64], first: i64, taps: &[f64], amplitude: f64) {
    for (i, &tap) in taps.iter().enumerate() {
        let n = first + i as i64;
        if n >= 0 && (n as usize) < buf.len() {
            buf[n as usize] += amplitude * tap;
        }
    }
}

/// Allen-Berkley 100 Hz high-pass. With all-positive reflection
/// coefficients the image sum builds up a slowly decaying low-frequency
/// component that would otherwise dominate the late response.
fn highpass_in_place(x: &mut [f64]) {
    let w = 2.0 * PI * 100.0 / SAMPLE_RATE as f64;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
        y2 = y1;
        y1 = y0;
    }
}

fn rir_length(rt60: f64, distance: f64) -> usize {
    let secs = (1.2 * rt60).max(distance / SPEED_OF_SOUND + 0.01);
    (secs * SAMPLE_RATE as f64).ceil() as usize
}

fn check_inside(enclosure: &Enclosure, source: Point3, receiver: Point3) -> Result<()> {
    if let Enclosure::Shoebox(room) = enclosure {
        if !room.contains(source) {
            return Err(Error::invalid(format!("source {source:?} is not inside the room")));
        }
        if !room.contains(receiver) {
            return Err(Error::invalid(format!("receiver {receiver:?} is not inside the room")));
        }
    }
    Ok(())
}

/// Renders one response per gain channel. `gains(doa, out)` writes the
/// receiver gain of every channel for an arrival from `doa`.
fn render_images<G: FnMut(Doa, &mut [f64])>(
    enclosure: &Enclosure,
    source: Point3,
    receiver: Point3,
    max_order: usize,
    channels: usize,
    mut gains: G,
) -> Result<Vec<ImpulseResponse>> {
    check_inside(enclosure, source, receiver)?;
    let fs = SAMPLE_RATE as f64;
    let distance = norm(sub(source, receiver));
    if distance <= 0.0 {
        return Err(Error::invalid("source and receiver coincide"));
    }
    let len = rir_length(enclosure.rt60(), distance);
    let mut bufs = vec![vec![0.0; len]; channels];
    let mut g = vec![0.0; channels];
    let mut taps = [0.0; 2 * KERNEL_HALF_TAPS as usize + 1];
    let direct_delay = distance / SPEED_OF_SOUND;

    match enclosure {
        Enclosure::FreeField => {
            gains(Doa::between(receiver, source), &mut g);
            let first = fractional_kernel(direct_delay * fs, &mut taps);
            for (buf, gc) in bufs.iter_mut().zip(&g) {
                add_scaled(buf, first, &taps, gc / (4.0 * PI * distance));
            }
        }
        Enclosure::Shoebox(room) => {
            let beta = if room.rt60 > 0.0 { cached_reflection(room)? } else { 0.0 };
            let max_dist = (len as f64 + KERNEL_HALF_TAPS as f64) / fs * SPEED_OF_SOUND;
            let max_dist2 = max_dist * max_dist;
            let axes: Vec<Vec<(f64, u32)>> = (0..3)
                .map(|a| {
                    axis_images(room.dimensions[a], source[a], max_order)
                        .into_iter()
                        .map(|(p, r)| (p - receiver[a], r))
                        .collect()
                })
                .collect();
            let max_refl = 3 * max_order + 1;
            let beta_pow: Vec<f64> = (0..=max_refl).map(|r| beta.powi(r as i32)).collect();
            for &(dx, rx) in &axes[0] {
                let dx2 = dx * dx;
                if dx2 > max_dist2 {
                    continue;
                }
                for &(dy, ry) in &axes[1] {
                    let dxy2 = dx2 + dy * dy;
                    if dxy2 > max_dist2 {
                        continue;
                    }
                    for &(dz, rz) in &axes[2] {
                        let d2 = dxy2 + dz * dz;
                        if d2 > max_dist2 {
                            continue;
                        }
                        let refl = beta_pow[(rx + ry + rz) as usize];
                        if refl == 0.0 {
                            continue;
                        }
                        let d = d2.sqrt();
                        let horiz = (dx * dx + dy * dy).sqrt();
                        let doa = Doa::new(wrap_angle(dy.atan2(dx)), dz.atan2(horiz));
                        gains(doa, &mut g);
                        let first = fractional_kernel(d / SPEED_OF_SOUND * fs, &mut taps);
                        for (buf, gc) in bufs.iter_mut().zip(&g) {
                            add_scaled(buf, first, &taps, refl * gc / (4.0 * PI * d));
                        }
                    }
                }
            }
            if beta > 0.0 && max_order > 0 {
                bufs.iter_mut().for_each(|b| highpass_in_place(b));
            }
        }
    }
    Ok(bufs
        .into_iter()
        .map(|samples| ImpulseResponse { samples, direct_delay })
        .collect())
}

/// Reflection coefficients are memoized per room: calibration costs far
/// more than a single response.
fn cached_reflection(room: &RoomSpec) -> Result<f64> {
    type Key = ([u64; 3], u64, ReflectionModel);
    static CACHE: OnceLock<Mutex<HashMap<Key, f64>>> = OnceLock::new();
    let key = (room.dimensions.map(f64::to_bits), room.rt60.to_bits(), room.reflection);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&b) = cache.lock().unwrap().get(&key) {
        return Ok(b);
    }
    let b = room.reflection_coefficient()?;
    cache.lock().unwrap().insert(key, b);
    Ok(b)
}

/// Impulse response between an omnidirectional source and microphone.
pub fn simulate_rir(enclosure: &Enclosure, source: Point3, mic: Point3, max_order: usize) -> Result<ImpulseResponse> {
    let mut out = render_images(enclosure, source, mic, max_order, 1, |_, g| g[0] = 1.0)?;
    Ok(out.remove(0))
}

/// Impulse response of a virtual directional microphone: identical image
/// set to [`simulate_rir`], each path weighted by the pattern gain in its
/// arrival direction.
pub fn simulate_vdm_rir(
    enclosure: &Enclosure,
    source: Point3,
    vdm_position: Point3,
    pattern: &DirectivityPattern,
    max_order: usize,
) -> Result<ImpulseResponse> {
    let mut out = simulate_vdm_rirs(
        enclosure,
        source,
        vdm_position,
        std::slice::from_ref(pattern),
        max_order,
    )?;
    Ok(out.remove(0))
}

/// [`simulate_vdm_rir`] for several patterns in one pass over the images.
pub fn simulate_vdm_rirs(
    enclosure: &Enclosure,
    source: Point3,
    vdm_position: Point3,
    patterns: &[DirectivityPattern],
    max_order: usize,
) -> Result<Vec<ImpulseResponse>> {
    render_images(enclosure, source, vdm_position, max_order, patterns.len(), |doa, g| {
        for (gi, p) in g.iter_mut().zip(patterns) {
            *gi = p.evaluate_doa(doa);
        }
    })
}

/// Sample range `[start, end)` treated as direct path for an arrival at
/// `direct_delay` seconds.
pub fn direct_window(direct_delay: f64, len: usize) -> (usize, usize) {
    let fs = SAMPLE_RATE as f64;
    let center = (direct_delay * fs).round() as i64;
    let half = (DIRECT_HALF_WINDOW * fs).round() as i64;
    let start = (center - half).clamp(0, len as i64) as usize;
    let end = (center + half + 1).clamp(0, len as i64) as usize;
    (start, end)
}

/// Splits a response into its direct-path part and everything else. The two
/// parts add back to the input exactly.
pub fn split_direct_reverb(rir: &ImpulseResponse, direct_delay: f64) -> (ImpulseResponse, ImpulseResponse) {
    let (start, end) = direct_window(direct_delay, rir.samples.len());
    let mut direct = vec![0.0; rir.samples.len()];
    let mut reverb = rir.samples.clone();
    for i in start..end {
        direct[i] = rir.samples[i];
        reverb[i] = 0.0;
    }
    (
        ImpulseResponse {
            samples: direct,
            direct_delay: rir.direct_delay,
        },
        ImpulseResponse {
            samples: reverb,
            direct_delay: rir.direct_delay,
        },
    )
}

/// Schroeder backward-integrated energy decay curve in dB, normalized to
/// 0 dB at the first sample.
pub fn energy_decay_curve(samples: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = samples
        .iter()
        .rev()
        .map(|x| {
            acc += x * x;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|e| 10.0 * (e / total).log10()).collect()
}

/// Reverberation time from a line fit to the energy decay curve between
/// -5 dB and -25 dB, extrapolated to -60 dB.
pub fn estimate_t60(samples: &[f64]) -> Option<f64> {
    let energy: Vec<f64> = samples.iter().map(|x| x * x).collect();
    estimate_t60_from_energy(&energy, SAMPLE_RATE as f64)
}

fn estimate_t60_from_energy(energy: &[f64], rate: f64) -> Option<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = energy
        .iter()
        .rev()
        .map(|e| {
            acc += e;
            acc
        })
        .collect();
    edc.reverse();
    let total = *edc.first()?;
    if !(total > 0.0) {
        return None;
    }
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if (-25.0..=-5.0).contains(&db) {
            let t = i as f64 / rate;
            n += 1.0;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
        }
    }
    if n < 2.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if !(slope < 0.0) {
        return None;
    }
    Some(-60.0 / slope)
}
