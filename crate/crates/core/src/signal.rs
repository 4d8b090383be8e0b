//! STFT analysis/synthesis, loudness, sensor noise and bandpass probing.
//!
//! Framing: 512-sample frames, hop 256, square-root periodic Hann window on
//! both analysis and synthesis. Signals are zero-padded by half a frame at
//! the start, so frame `t` is centered on sample `256·t`, and enough frames
//! are taken that every input sample sees two overlapping frames. A signal
//! of `N` samples yields `ceil(N/256) + 1` frames.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

pub const FRAME_LEN: usize = 512;
pub const HOP: usize = 256;
pub const NUM_BINS: usize = FRAME_LEN / 2 + 1;
/// Frequency spacing of STFT bins, Hz.
pub const BIN_HZ: f64 = SAMPLE_RATE as f64 / FRAME_LEN as f64;
/// Candidate clips quieter than this are rejected by corpus selection.
pub const LOUDNESS_GATE_DBFS: f64 = -42.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// F × T complex bins.
    pub bins: Array2<Complex64>,
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    /// Length of the time signal this spectrogram was computed from.
    pub signal_len: usize,
}

/// Complex time-frequency gain, F × T.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Array2<Complex64>,
}

impl Spectrogram {
    pub fn num_bins(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.bins.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bins.dim()
    }

    /// Same framing metadata, new bins.
    pub fn with_bins(&self, bins: Array2<Complex64>) -> Self {
        Spectrogram {
            bins,
            sample_rate: self.sample_rate,
            frame_len: self.frame_len,
            hop: self.hop,
            signal_len: self.signal_len,
        }
    }

    pub fn power(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm_sqr())
    }

    /// Time-domain energy implied by the bins: one-sided spectra counted
    /// twice except DC and Nyquist, scaled by 1/N. With the COLA window pair
    /// this equals the energy of the signal.
    pub fn energy(&self) -> f64 {
        let f = self.num_bins();
        let mut total = 0.0;
        for (k, row) in self.bins.outer_iter().enumerate() {
            let w = if k == 0 || k == f - 1 { 1.0 } else { 2.0 };
            total += w * row.iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
        total / self.frame_len as f64
    }
}

impl Mask {
    pub fn new(values: Array2<Complex64>) -> Self {
        Mask { values }
    }

    pub fn ones(bins: usize, frames: usize) -> Self {
        Mask {
            values: Array2::from_elem((bins, frames), Complex64::new(1.0, 0.0)),
        }
    }

    pub fn constant(bins: usize, frames: usize, gain: f64) -> Self {
        Mask {
            values: Array2::from_elem((bins, frames), Complex64::new(gain, 0.0)),
        }
    }

    pub fn from_real(gains: &Array2<f64>) -> Self {
        Mask {
            values: gains.mapv(|g| Complex64::new(g, 0.0)),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// True when every entry has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.values.iter().all(|c| c.im == 0.0)
    }
}

/// Number of frames produced for a signal of `len` samples.
pub fn num_frames(len: usize) -> usize {
    len.div_ceil(HOP) + 1
}

fn window() -> &'static [f64] {
    static WINDOW: OnceLock<Vec<f64>> = OnceLock::new();
    WINDOW.get_or_init(|| {
        (0..FRAME_LEN)
            .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME_LEN as f64).cos()).sqrt())
            .collect()
    })
}

fn plans() -> &'static (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    static PLANS: OnceLock<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)> = OnceLock::new();
    PLANS.get_or_init(|| {
        let mut planner = FftPlanner::new();
        (planner.plan_fft_forward(FRAME_LEN), planner.plan_fft_inverse(FRAME_LEN))
    })
}

pub fn stft(signal: &[f64], sample_rate: u32) -> Result<Spectrogram> {
    if sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "STFT expects {SAMPLE_RATE} Hz input, got {sample_rate} Hz"
        )));
    }
    let frames = num_frames(signal.len());
    let win = window();
    let (fwd, _) = plans();
    let pad = FRAME_LEN / 2;
    let mut bins = Array2::zeros((NUM_BINS, frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len()];
    for t in 0..frames {
        let start = (t * HOP) as i64 - pad as i64;
        for (n, b) in buf.iter_mut().enumerate() {
            let idx = start + n as i64;
            let x = if idx >= 0 && (idx as usize) < signal.len() {
                signal[idx as usize]
            } else {
                0.0
            };
            *b = Complex64::new(x * win[n], 0.0);
        }
        fwd.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..NUM_BINS {
            bins[[k, t]] = buf[k];
        }
    }
    Ok(Spectrogram {
        bins,
        sample_rate,
        frame_len: FRAME_LEN,
        hop: HOP,
        signal_len: signal.len(),
    })
}

pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    if spec.frame_len != FRAME_LEN || spec.hop != HOP || spec.num_bins() != NUM_BINS {
        return Err(Error::invalid(format!(
            "unsupported framing: frame {}, hop {}, {} bins",
            spec.frame_len,
            spec.hop,
            spec.num_bins()
        )));
    }
    if spec.num_frames() != num_frames(spec.signal_len) {
        return Err(Error::invalid(format!(
            "{} frames inconsistent with signal length {}",
            spec.num_frames(),
            spec.signal_len
        )));
    }
    let win = window();
    let (_, inv) = plans();
    let pad = FRAME_LEN / 2;
    let mut out = vec![0.0; spec.signal_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); FRAME_LEN];
    let mut scratch = vec![Complex64::new(0.0, 0.0); inv.get_inplace_scratch_len()];
    let scale = 1.0 / FRAME_LEN as f64;
    for t in 0..spec.num_frames() {
        for k in 0..NUM_BINS {
            buf[k] = spec.bins[[k, t]];
        }
        // DC and Nyquist of a real frame are real.
        buf[0].im = 0.0;
        buf[NUM_BINS - 1].im = 0.0;
        for k in NUM_BINS..FRAME_LEN {
            buf[k] = buf[FRAME_LEN - k].conj();
        }
        inv.process_with_scratch(&mut buf, &mut scratch);
        let start = (t * HOP) as i64 - pad as i64;
        for n in 0..FRAME_LEN {
            let idx = start + n as i64;
            if idx >= 0 && (idx as usize) < out.len() {
                out[idx as usize] += buf[n].re * scale * win[n];
            }
        }
    }
    Ok(out)
}

pub fn stft_multi(channels: &[Vec<f64>]) -> Result<Vec<Spectrogram>> {
    channels.iter().map(|c| stft(c, SAMPLE_RATE)).collect()
}

pub fn energy(signal: &[f64]) -> f64 {
    signal.iter().map(|x| x * x).sum()
}

pub fn mean_power(signal: &[f64]) -> f64 {
    if signal.is_empty() {
        0.0
    } else {
        energy(signal) / signal.len() as f64
    }
}

/// RMS level in dBFS (full scale = 1.0). `-inf` for silence.
pub fn loudness_dbfs(signal: &[f64]) -> f64 {
    10.0 * mean_power(signal).log10()
}

/// Gain that brings `signal` to `target_dbfs`.
pub fn loudness_gain(signal: &[f64], target_dbfs: f64) -> Result<f64> {
    let p = mean_power(signal);
    if !(p > 0.0) {
        return Err(Error::DegenerateSignal(
            "cannot normalize the loudness of a silent signal".into(),
        ));
    }
    Ok(10f64.powf((target_dbfs - 10.0 * p.log10()) / 20.0))
}

pub fn normalize_loudness(signal: &[f64], target_dbfs: f64) -> Result<Vec<f64>> {
    let g = loudness_gain(signal, target_dbfs)?;
    Ok(signal.iter().map(|x| x * g).collect())
}

/// Corpus selection gate for candidate clips.
pub fn passes_loudness_gate(signal: &[f64]) -> bool {
    loudness_dbfs(signal) >= LOUDNESS_GATE_DBFS
}

/// Adds independent white Gaussian noise to every channel.
///
/// The per-channel noise power is the mean clean power over channels divided
/// by `10^(snr_db/10)`; each channel's realization is rescaled so its sample
/// power hits that value exactly. An infinite SNR leaves the channels
/// untouched. Returns the noisy channels and the noise power.
pub fn add_sensor_noise(channels: &[Vec<f64>], snr_db: f64, seed: u64) -> Result<(Vec<Vec<f64>>, f64)> {
    if channels.is_empty() {
        return Err(Error::invalid("sensor noise needs at least one channel"));
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR is NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok((channels.to_vec(), 0.0));
    }
    let clean = channels.iter().map(|c| mean_power(c)).sum::<f64>() / channels.len() as f64;
    let noise_power = clean / 10f64.powf(snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(channels.len());
    for ch in channels {
        let mut n: Vec<f64> = (0..ch.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = mean_power(&n);
        let g = if p > 0.0 { (noise_power / p).sqrt() } else { 0.0 };
        n.iter_mut().for_each(|v| *v *= g);
        out.push(ch.iter().zip(&n).map(|(x, v)| x + v).collect());
    }
    Ok((out, noise_power))
}

/// Closed frequency interval in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub fn new(lo_hz: f64, hi_hz: f64) -> Self {
        Band { lo_hz, hi_hz }
    }

    pub fn centered(center_hz: f64, bandwidth_hz: f64) -> Result<Self> {
        if !(center_hz > 0.0 && center_hz < SAMPLE_RATE as f64 / 2.0) {
            return Err(Error::invalid(format!(
                "band center {center_hz} Hz outside (0, {}) Hz",
                SAMPLE_RATE / 2
            )));
        }
        if !(bandwidth_hz > 0.0) {
            return Err(Error::invalid("bandwidth must be positive"));
        }
        Ok(Band::new(
            center_hz - bandwidth_hz / 2.0,
            center_hz + bandwidth_hz / 2.0,
        ))
    }

    pub fn full() -> Self {
        Band::new(0.0, SAMPLE_RATE as f64 / 2.0)
    }

    pub fn contains_bin(&self, k: usize) -> bool {
        let f = k as f64 * BIN_HZ;
        f >= self.lo_hz - 1e-9 && f <= self.hi_hz + 1e-9
    }
}

/// Bins retained by a union of bands.
pub fn band_bins(bands: &[Band]) -> Vec<bool> {
    (0..NUM_BINS).map(|k| bands.iter().any(|b| b.contains_bin(k))).collect()
}

/// Zeroes every bin outside the union of `bands`.
pub fn bandpass_spectrogram(spec: &Spectrogram, bands: &[Band]) -> Result<Spectrogram> {
    let keep = band_bins(bands);
    if !keep.iter().any(|&k| k) {
        return Err(Error::invalid(format!("bands {bands:?} retain no STFT bin")));
    }
    let mut bins = spec.bins.clone();
    for (k, mut row) in bins.outer_iter_mut().enumerate() {
        if !keep[k] {
            row.fill(Complex64::new(0.0, 0.0));
        }
    }
    Ok(spec.with_bins(bins))
}

/// STFT-domain brick-wall bandpass over a union of bands.
pub fn bandpass(signal: &[f64], bands: &[Band]) -> Result<Vec<f64>> {
    let spec = stft(signal, SAMPLE_RATE)?;
    istft(&bandpass_spectrogram(&spec, bands)?)
}

/// Convolves one signal with many kernels, reusing the signal's spectrum.
pub struct FftConvolver {
    spectrum: Vec<Complex64>,
    signal_len: usize,
    max_kernel_len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftConvolver {
    pub fn new(signal: &[f64], max_kernel_len: usize) -> Self {
        let n = (signal.len() + max_kernel_len.max(1)).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut spectrum: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        spectrum.resize(n, Complex64::new(0.0, 0.0));
        fwd.process(&mut spectrum);
        FftConvolver {
            spectrum,
            signal_len: signal.len(),
            max_kernel_len,
            fwd,
            inv,
        }
    }

    /// Linear convolution with `kernel`, truncated to `out_len` samples.
    pub fn convolve(&self, kernel: &[f64], out_len: usize) -> Vec<f64> {
        assert!(kernel.len() <= self.max_kernel_len, "kernel longer than planned");
        if self.signal_len == 0 || kernel.iter().all(|&k| k == 0.0) {
            return vec![0.0; out_len];
        }
        let n = self.spectrum.len();
        let mut buf: Vec<Complex64> = kernel.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        buf.resize(n, Complex64::new(0.0, 0.0));
        self.fwd.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inv.process(&mut buf);
        let full = self.signal_len + kernel.len() - 1;
        let scale = 1.0 / n as f64;
        (0..out_len)
            .map(|i| if i < full { buf[i].re * scale } else { 0.0 })
            .collect()
    }
}

/// Linear convolution of `a` and `b`, truncated to `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    FftConvolver::new(a, b.len()).convolve(b, out_len)
}

/// Trims or zero-pads to exactly `len` samples.
pub fn fit_length(signal: &[f64], len: usize) -> Vec<f64> {
    let mut out = signal[..signal.len().min(len)].to_vec();
    out.resize(len, 0.0);
    out
}

/// Deterministic speech-like test signal: voiced syllables with a gliding
/// fundamental and harmonics up to Nyquist, short noise bursts for
/// fricative energy, and pauses between phrases.
pub fn synthetic_speech(len: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE as f64;
    let nyq = fs / 2.0;
    let mut out = vec![0.0; len];
    let base_f0: f64 = rng.gen_range(95.0..230.0);
    let mut pos = 0usize;
    let mut phase = 0.0f64;
    while pos < len {
        let phrase_syll = rng.gen_range(3..8);
        for _ in 0..phrase_syll {
            let dur = (rng.gen_range(0.12..0.3) * fs) as usize;
            let f_start = base_f0 * rng.gen_range(0.85..1.2);
            let f_end = base_f0 * rng.gen_range(0.8..1.15);
            let tilt = rng.gen_range(0.7..1.1);
            let formant = rng.gen_range(400.0..2600.0);
            let fricative = rng.gen_bool(0.35);
            for i in 0..dur {
                let n = pos + i;
                if n >= len {
                    break;
                }
                let u = i as f64 / dur as f64;
                let env = (PI * u).sin().powf(0.6);
                let f0 = f_start + (f_end - f_start) * u;
                phase += 2.0 * PI * f0 / fs;
                let mut v = 0.0;
                let mut h = 1;
                while h as f64 * f0 < nyq {
                    let fh = h as f64 * f0;
                    let shape = 1.0 + 2.0 * (-((fh - formant) / 500.0).powi(2)).exp();
                    v += shape * (h as f64 * phase).sin() / (h as f64).powf(tilt);
                    h += 1;
                }
                let mut s = 0.2 * v * env;
                if fricative && u > 0.7 {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    s += 0.15 * noise * (PI * (u - 0.7) / 0.3).sin();
                }
                out[n] += s;
            }
            pos += dur + (rng.gen_range(0.01..0.06) * fs) as usize;
            if pos >= len {
                break;
            }
        }
        pos += (rng.gen_range(0.1..0.4) * fs) as usize;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn tone(freq: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        (num / energy(b)).sqrt()
    }

    #[test]
    fn framing_of_four_seconds() {
        let s = stft(&vec![0.0; 64000], SAMPLE_RATE).unwrap();
        assert_eq!(s.num_bins(), 257);
        assert_eq!(s.num_frames(), 251);
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
        assert_eq!(num_frames(64000), 251);
        assert_eq!(num_frames(1), 2);
    }

    #[test]
    fn rejects_other_rates() {
        assert!(matches!(stft(&[0.0; 10], 44100), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn round_trip() {
        for (len, seed) in [(64000, 1), (1000, 2), (257, 3), (1, 4)] {
            let x = noise(len, seed);
            let y = istft(&stft(&x, SAMPLE_RATE).unwrap()).unwrap();
            assert_eq!(y.len(), len);
            assert!(rel_err(&y, &x) < 1e-6);
        }
    }

    #[test]
    fn zero_spectrogram_gives_zero_signal() {
        let mut s = stft(&noise(5000, 9), SAMPLE_RATE).unwrap();
        s.bins.fill(Complex64::new(0.0, 0.0));
        assert!(istft(&s).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn istft_rejects_inconsistent_metadata() {
        let mut s = stft(&noise(5000, 9), SAMPLE_RATE).unwrap();
        s.signal_len = 9000;
        assert!(istft(&s).is_err());
        let mut s = stft(&noise(5000, 9), SAMPLE_RATE).unwrap();
        s.hop = 128;
        assert!(istft(&s).is_err());
    }

    #[test]
    fn tone_lands_on_bin_32() {
        let s = stft(&tone(1000.0, 16000), SAMPLE_RATE).unwrap();
        let p = s.power();
        let per_bin: Vec<f64> = p.outer_iter().map(|r| r.sum()).collect();
        let peak = per_bin
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 32);
        let near: f64 = per_bin[30..=34].iter().sum();
        let frac = near / per_bin.iter().sum::<f64>();
        // sqrt-Hann sidelobes leak a fraction of a percent
        assert!(frac > 0.995, "{frac}");
    }

    #[test]
    fn parseval() {
        let x = noise(20000, 5);
        let s = stft(&x, SAMPLE_RATE).unwrap();
        assert_abs_diff_eq!(s.energy() / energy(&x), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn loudness_scaling() {
        let x: Vec<f64> = tone(440.0, 16000);
        let quiet = normalize_loudness(&x, -40.0).unwrap();
        assert_abs_diff_eq!(loudness_dbfs(&quiet), -40.0, epsilon = 1e-9);
        let g = loudness_gain(&quiet, -30.0).unwrap();
        assert_abs_diff_eq!(20.0 * g.log10(), 10.0, epsilon = 1e-9);
        let again = loudness_gain(&normalize_loudness(&x, -30.0).unwrap(), -30.0).unwrap();
        assert_abs_diff_eq!(again, 1.0, epsilon = 1e-9);
        assert!(matches!(
            normalize_loudness(&[0.0; 10], -30.0),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn loudness_gate() {
        let x = tone(300.0, 8000);
        assert!(passes_loudness_gate(&normalize_loudness(&x, -41.0).unwrap()));
        assert!(!passes_loudness_gate(&normalize_loudness(&x, -43.0).unwrap()));
        assert!(!passes_loudness_gate(&[0.0; 100]));
    }

    #[test]
    fn sensor_noise_level_and_determinism() {
        let chans: Vec<Vec<f64>> = (0..4).map(|q| noise(16000, q)).collect();
        let (noisy, p) = add_sensor_noise(&chans, 30.0, 7).unwrap();
        let clean = chans.iter().map(|c| mean_power(c)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(p, clean / 1000.0, epsilon = 1e-15);
        for (n, c) in noisy.iter().zip(&chans) {
            let resid: Vec<f64> = n.iter().zip(c).map(|(a, b)| a - b).collect();
            let snr = 10.0 * (clean / mean_power(&resid)).log10();
            assert_abs_diff_eq!(snr, 30.0, epsilon = 0.1);
        }
        let (again, _) = add_sensor_noise(&chans, 30.0, 7).unwrap();
        assert_eq!(again, noisy);
        let (other, _) = add_sensor_noise(&chans, 30.0, 8).unwrap();
        assert_ne!(other, noisy);
        let (same, p) = add_sensor_noise(&chans, f64::INFINITY, 7).unwrap();
        assert_eq!(same, chans);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn sensor_noise_is_uncorrelated_across_channels() {
        let chans = vec![vec![0.0; 50000], vec![0.0; 50000]];
        let mut chans = chans;
        chans[0][0] = 1.0;
        let (noisy, _) = add_sensor_noise(&chans, 0.0, 3).unwrap();
        let a = &noisy[0];
        let b = &noisy[1];
        let corr: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (energy(a) * energy(b)).sqrt();
        assert!(corr.abs() < 0.02);
    }

    #[test]
    fn bandpass_bins() {
        let b = Band::centered(1000.0, 500.0).unwrap();
        let keep = band_bins(&[b]);
        let kept: Vec<usize> = (0..NUM_BINS).filter(|&k| keep[k]).collect();
        assert_eq!(kept, (24..=40).collect::<Vec<_>>());
        let union = band_bins(&[Band::centered(7000.0, 500.0).unwrap(), Band::new(0.0, 5600.0)]);
        assert!(union[0] && union[179] && !union[180] && union[224] && !union[208]);
    }

    #[test]
    fn bandpass_rejections() {
        assert!(Band::centered(0.0, 500.0).is_err());
        assert!(Band::centered(8000.0, 500.0).is_err());
        assert!(bandpass(&[0.0; 1000], &[Band::new(100.0, 110.0)]).is_err());
        assert!(bandpass(&[0.0; 1000], &[]).is_err());
    }

    #[test]
    fn bandpass_full_band_is_identity() {
        let x = noise(16000, 11);
        let y = bandpass(&x, &[Band::full()]).unwrap();
        assert!(rel_err(&y, &x) < 1e-6);
    }

    #[test]
    fn bandpass_disjoint_support() {
        let x = tone(1000.0, 16000);
        let y = bandpass(&x, &[Band::centered(7000.0, 500.0).unwrap()]).unwrap();
        assert!(loudness_dbfs(&y) < -60.0);
        let z = bandpass(&x, &[Band::centered(1000.0, 500.0).unwrap()]).unwrap();
        let e = rel_err(&z[1000..15000], &x[1000..15000]);
        assert!(e < 5e-3, "{e}");
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let a = noise(300, 1);
        let b = noise(50, 2);
        let c = fft_convolve(&a, &b, 400);
        for n in 0..400 {
            let mut s = 0.0;
            for k in 0..b.len() {
                if n >= k && n - k < a.len() {
                    s += a[n - k] * b[k];
                }
            }
            assert_abs_diff_eq!(c[n], s, epsilon = 1e-10);
        }
        assert_eq!(fft_convolve(&a, &b, 10).len(), 10);
    }

    #[test]
    fn synthetic_speech_is_broadband_and_deterministic() {
        let x = synthetic_speech(64000, 3);
        assert_eq!(x, synthetic_speech(64000, 3));
        assert_ne!(x, synthetic_speech(64000, 4));
        assert!(loudness_dbfs(&x) > -40.0);
        let s = stft(&x, SAMPLE_RATE).unwrap();
        let p = s.power();
        let low: f64 = p.slice(ndarray::s![1..64, ..]).sum();
        let high: f64 = p.slice(ndarray::s![192..256, ..]).sum();
        assert!(high > 0.0 && high / low > 1e-4);
        // pauses give silent frames
        let silent = (0..s.num_frames()).filter(|&t| p.column(t).sum() < 1e-12).count();
        assert!(silent > 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn mask_is_linear(alpha in -10.0f64..10.0, seed in 0u64..1000) {
            let x = noise(2000, seed);
            let xs: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            let a = stft(&x, SAMPLE_RATE).unwrap();
            let b = stft(&xs, SAMPLE_RATE).unwrap();
            let m = Mask::constant(a.num_bins(), a.num_frames(), 0.3);
            let ma = &a.bins * &m.values;
            let mb = &b.bins * &m.values;
            for (u, v) in ma.iter().zip(mb.iter()) {
                prop_assert!((u * alpha - v).norm() < 1e-9 * (1.0 + v.norm()));
            }
        }
    }
}
