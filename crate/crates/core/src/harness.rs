//! Evaluation pipeline and scripted analyses: mask evaluation over a
//! manifest, bandpass probing, aperture/SNR sweeps, and the moving
//! interferer and stereo demos.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, DatasetConfig, PatternConfig};
use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::filters::{
    angle_grid, apply_beamformer, apply_mask, beamformer_mask, design_ls_beamformer, oracle_mask_tracks,
    oracle_parametric_mask, stft_frequencies, BeamformerWeights,
};
use crate::geometry::{add, build_array, ArrayGeometry, Doa, Point3};
use crate::io::{
    load_scene, manifest_dir, read_tensor, read_wav, write_wav, write_wav_channels, Manifest, SceneRecord, TensorRole,
};
use crate::metrics::{
    estimate_power_pattern, power_ratios, sdr, stereo_level_difference, write_csv, DfAccumulator, EvalReport, LossSums,
    PatternObservation, SdrSummary,
};
use crate::room::{simulate_rir, simulate_vdm_rir, Enclosure};
use crate::scene::candidate_grid;
use crate::signal::{
    add_sensor_noise, bandpass, fft_convolve, fit_length, istft, loudness_gain, stft, synthetic_speech, Band, Mask,
    Spectrogram, HOP, NUM_BINS,
};
use crate::SAMPLE_RATE;

fn default_wng() -> f64 {
    -15.0
}

/// Where masks come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSource {
    Oracle,
    Ls {
        #[serde(default = "default_wng")]
        wng_min_db: f64,
    },
    /// NDFM masks at `dir/scene_{k:05}_steer_{m:03}.ndfm`.
    External {
        dir: PathBuf,
    },
}

impl FilterSource {
    pub fn label(&self) -> String {
        match self {
            FilterSource::Oracle => "oracle".into(),
            FilterSource::Ls { .. } => "ls".into(),
            FilterSource::External { .. } => "external".into(),
        }
    }
}

pub fn mask_path(dir: &Path, scene: usize, steering: usize) -> PathBuf {
    dir.join(format!("scene_{scene:05}_steer_{steering:03}.ndfm"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub filter: FilterSource,
    /// Bandpass applied to the filter input only; the mask always acts on
    /// the unprocessed reference.
    #[serde(default)]
    pub bands: Option<Vec<Band>>,
    /// Direction grid of the pattern; defaults to the manifest role's grid.
    #[serde(default)]
    pub grid_deg: Option<Vec<f64>>,
    #[serde(default)]
    pub label: Option<String>,
}

impl EvalOptions {
    pub fn new(filter: FilterSource) -> Self {
        EvalOptions {
            filter,
            bands: None,
            grid_deg: None,
            label: None,
        }
    }
}

type LsCache = HashMap<(u64, u64), Arc<BeamformerWeights>>;

fn ls_key(diameter: f64, steering_deg: f64) -> (u64, u64) {
    (diameter.to_bits(), steering_deg.to_bits())
}

/// LS designs for every (array, steering) pair in the manifest.
fn design_all(manifest: &Manifest, wng_min_db: f64) -> Result<LsCache> {
    let mut keys: Vec<(ArrayGeometry, DirectivityPattern, (u64, u64))> = Vec::new();
    for rec in &manifest.scenes {
        for m in 0..rec.spec.steering_deg.len() {
            let key = ls_key(rec.spec.array.diameter, rec.spec.steering_deg[m]);
            if !keys.iter().any(|k| k.2 == key) {
                keys.push((rec.spec.array.clone(), rec.spec.steered_pattern(m), key));
            }
        }
    }
    let freqs = stft_frequencies();
    let grid = angle_grid(360);
    keys.into_par_iter()
        .map(|(array, pattern, key)| {
            design_ls_beamformer(&array, &pattern, &freqs, &grid, wng_min_db).map(|w| (key, Arc::new(w)))
        })
        .collect()
}

#[derive(Debug, Default)]
struct SceneOutcome {
    observations: Vec<PatternObservation>,
    df: Option<DfAccumulator>,
    df_target: Option<DfAccumulator>,
    sdr_db: Vec<f64>,
    losses: LossSums,
}

fn spec_of(x: &[f64]) -> Result<Spectrogram> {
    stft(x, SAMPLE_RATE)
}

fn filter_input(x: &[f64], bands: Option<&[Band]>) -> Result<Vec<f64>> {
    match bands {
        Some(b) => bandpass(x, b),
        None => Ok(x.to_vec()),
    }
}

fn scene_mask(
    rec: &SceneRecord,
    m: usize,
    filter: &FilterSource,
    ls: &LsCache,
    mic_specs: &[Spectrogram],
    direct_in: &[Spectrogram],
) -> Result<Mask> {
    let spec = &rec.spec;
    match filter {
        FilterSource::Oracle => {
            let doas: Vec<Doa> = spec.sources.iter().map(|s| s.doa()).collect();
            oracle_parametric_mask(direct_in, &doas, &spec.steered_pattern(m))
        }
        FilterSource::Ls { .. } => {
            let w = &ls[&ls_key(spec.array.diameter, spec.steering_deg[m])];
            let out = apply_beamformer(w, mic_specs)?;
            beamformer_mask(&out, &mic_specs[spec.array.reference_index])
        }
        FilterSource::External { dir } => {
            let path = mask_path(dir, spec.index, m);
            if !path.is_file() {
                return Err(Error::MissingMask {
                    scene: spec.index,
                    steering: m,
                    path,
                });
            }
            read_tensor(&path, TensorRole::Mask)?.to_mask()
        }
    }
}

fn eval_scene(root: &Path, rec: &SceneRecord, opts: &EvalOptions, ls: &LsCache) -> Result<SceneOutcome> {
    let render = load_scene(root, rec)?;
    let spec = &rec.spec;
    let bands = opts.bands.as_deref();
    let mic_specs = render
        .mic_signals
        .iter()
        .map(|x| spec_of(&filter_input(x, bands)?))
        .collect::<Result<Vec<_>>>()?;
    let direct_in = match opts.filter {
        FilterSource::Oracle => render
            .stems
            .iter()
            .map(|s| spec_of(&filter_input(&s.direct, bands)?))
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let reference = spec_of(render.reference())?;
    let direct: Vec<Spectrogram> = render.stems.iter().map(|s| spec_of(&s.direct)).collect::<Result<_>>()?;
    let reverb_sum = render.reverb_sum();
    let has_reverb = reverb_sum.iter().any(|&x| x != 0.0);
    let reverb = if has_reverb { Some(spec_of(&reverb_sum)?) } else { None };

    let mut out = SceneOutcome::default();
    for m in 0..spec.steering_deg.len() {
        let mask = scene_mask(rec, m, &opts.filter, ls, &mic_specs, &direct_in)?;
        let output = apply_mask(&mask, &reference)?;
        for (src, x) in spec.sources.iter().zip(&direct) {
            out.observations.push(PatternObservation {
                azimuth_deg: src.azimuth_deg - spec.steering_deg[m],
                ratios: power_ratios(&mask, x)?,
            });
        }
        let z = &render.vdm_targets[m];
        let zhat = istft(&output)?;
        out.sdr_db.push(sdr(z, &zhat)?);
        out.losses.add(z, &zhat)?;
        if let Some(r) = &reverb {
            out.df
                .get_or_insert_with(|| DfAccumulator::new(NUM_BINS))
                .add_masked(&mask, r)?;
            out.df_target
                .get_or_insert_with(|| DfAccumulator::new(NUM_BINS))
                .add_target(&spec_of(z)?, r)?;
        }
    }
    Ok(out)
}

fn merge_df(acc: Option<DfAccumulator>, next: Option<&DfAccumulator>) -> Result<Option<DfAccumulator>> {
    Ok(match (acc, next) {
        (Some(a), Some(b)) => Some(a.merge(b)?),
        (None, Some(b)) => Some(b.clone()),
        (a, None) => a,
    })
}

/// Evaluates one filter over every scene and steering direction of a
/// manifest. Scenes run in parallel; results are reduced in scene order.
pub fn evaluate_manifest(manifest_path: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let manifest = Manifest::load(manifest_path)?;
    evaluate_loaded(&manifest, &manifest_dir(manifest_path), opts)
}

pub fn evaluate_loaded(manifest: &Manifest, root: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    if manifest.scenes.is_empty() {
        return Err(Error::invalid("manifest has no scenes"));
    }
    let ls = match opts.filter {
        FilterSource::Ls { wng_min_db } => design_all(manifest, wng_min_db)?,
        _ => LsCache::new(),
    };
    let outcomes = manifest
        .scenes
        .par_iter()
        .map(|rec| eval_scene(root, rec, opts, &ls))
        .collect::<Result<Vec<_>>>()?;

    let mut observations = Vec::new();
    let mut df = None;
    let mut df_target = None;
    let mut sdrs = Vec::new();
    let mut losses = LossSums::default();
    for o in &outcomes {
        observations.extend(o.observations.iter().cloned());
        df = merge_df(df, o.df.as_ref())?;
        df_target = merge_df(df_target, o.df_target.as_ref())?;
        sdrs.extend(&o.sdr_db);
        losses = losses.merge(&o.losses);
    }
    let grid = opts.grid_deg.clone().unwrap_or_else(|| candidate_grid(manifest.role));
    let pattern = estimate_power_pattern(&observations, &grid)?;
    let label = opts.label.clone().unwrap_or_else(|| opts.filter.label());
    let mut report = EvalReport::new(label, stft_frequencies(), pattern);
    if let Some(acc) = df {
        report.set_df(&acc.finish()?);
    }
    if let Some(acc) = df_target {
        report.df_target_db = Some(crate::metrics::finite_or_none(&acc.finish()?));
    }
    report.sdr = Some(SdrSummary::from_samples(sdrs)?);
    report.loss_tsdr = Some(losses.tsdr());
    report.loss_l1 = Some(losses.l1());
    report.config = serde_json::json!({
        "manifest_seed": manifest.global_seed,
        "options": opts,
    });
    Ok(report)
}

/// One probe input: a label (also the external-mask subdirectory) and the
/// union of bands kept in the filter input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBand {
    pub label: String,
    pub bands: Vec<Band>,
}

impl ProbeBand {
    /// A band of `width_hz` around `center_hz`.
    pub fn centered(center_hz: f64, width_hz: f64) -> Result<Self> {
        Ok(ProbeBand {
            label: format!("{center_hz:.0}hz"),
            bands: vec![Band::centered(center_hz, width_hz)?],
        })
    }

    pub fn full() -> Self {
        ProbeBand {
            label: "full".into(),
            bands: vec![Band::full()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub manifest: PathBuf,
    pub filter: FilterSource,
    pub probes: Vec<ProbeBand>,
    pub output_dir: PathBuf,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            manifest: PathBuf::from("dataset/manifest.json"),
            filter: FilterSource::Oracle,
            probes: vec![ProbeBand::centered(1000.0, 500.0).expect("valid band")],
            output_dir: PathBuf::from("probe"),
        }
    }
}

/// Bandpass probing: the filter sees only the probed band, its mask is
/// applied to the unprocessed reference. One report per probe.
pub fn run_bandpass_probe(cfg: &ProbeConfig) -> Result<Vec<EvalReport>> {
    let manifest = Manifest::load(&cfg.manifest)?;
    let root = manifest_dir(&cfg.manifest);
    let mut reports = Vec::with_capacity(cfg.probes.len());
    for probe in &cfg.probes {
        for b in &probe.bands {
            if !(b.lo_hz >= 0.0 && b.hi_hz <= SAMPLE_RATE as f64 / 2.0 && b.lo_hz < b.hi_hz) {
                return Err(Error::invalid(format!("probe band {b:?} outside [0, 8000] Hz")));
            }
        }
        let filter = match &cfg.filter {
            FilterSource::External { dir } => FilterSource::External {
                dir: dir.join(&probe.label),
            },
            f => f.clone(),
        };
        let opts = EvalOptions {
            filter,
            bands: Some(probe.bands.clone()),
            grid_deg: None,
            label: Some(format!("{}_{}", cfg.filter.label(), probe.label)),
        };
        let report = evaluate_loaded(&manifest, &root, &opts)?;
        report.write(&cfg.output_dir.join(&probe.label))?;
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Template for every cell; diameter, SNR and output directory are set per cell.
    pub dataset: DatasetConfig,
    pub diameters: Vec<f64>,
    pub snrs_db: Vec<f64>,
    pub filter: FilterSource,
    pub output_dir: PathBuf,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dataset: DatasetConfig {
                role: crate::scene::Role::Test,
                ..DatasetConfig::default()
            },
            diameters: vec![0.03, 0.06, 0.09],
            snrs_db: vec![30.0, 20.0, 10.0],
            filter: FilterSource::Ls { wng_min_db: -15.0 },
            output_dir: PathBuf::from("sweep"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub diameter: f64,
    pub snr_db: f64,
    pub label: String,
    pub report: EvalReport,
}

pub fn cell_label(diameter: f64, snr_db: f64) -> String {
    format!("d{:.0}mm_snr{:.0}db", diameter * 1000.0, snr_db)
}

/// Builds one dataset per (diameter, SNR) cell from the same seed and
/// evaluates the filter on each.
pub fn run_aperture_sweep(cfg: &SweepConfig) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for &d in &cfg.diameters {
        for &snr in &cfg.snrs_db {
            let label = cell_label(d, snr);
            let mut ds = cfg.dataset.clone();
            ds.array.diameter = d;
            ds.snr_db = Some(snr);
            ds.output_dir = cfg.output_dir.join("data").join(&label);
            let (manifest, path) = build_dataset(&ds)?;
            let filter = match &cfg.filter {
                FilterSource::External { dir } => FilterSource::External { dir: dir.join(&label) },
                f => f.clone(),
            };
            let mut opts = EvalOptions::new(filter);
            opts.label = Some(label.clone());
            let report = evaluate_loaded(&manifest, &manifest_dir(&path), &opts)?;
            report.write(&cfg.output_dir.join("reports").join(&label))?;
            cells.push(SweepCell {
                diameter: d,
                snr_db: snr,
                label,
                report,
            });
        }
    }
    let index: Vec<_> = cells
        .iter()
        .map(|c| {
            serde_json::json!({
                "label": c.label,
                "diameter": c.diameter,
                "snr_db": c.snr_db,
                "sdr_db": c.report.sdr.as_ref().map(|s| s.aggregate_db),
            })
        })
        .collect();
    let path = cfg.output_dir.join("index.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&serde_json::json!({ "config": cfg, "cells": index }))?,
    )
    .map_err(|e| Error::io(&path, e))?;
    Ok(cells)
}

/// Renders a source whose position changes every hop. Each hop's segment of
/// the dry signal is windowed (raised-cosine crossfades of `xfade` samples
/// around hop boundaries; the windows sum to one) and convolved with that
/// hop's kernels, one per output channel.
pub fn render_piecewise<K>(
    signal: &[f64],
    hop_len: usize,
    xfade: usize,
    channels: usize,
    mut kernels: K,
) -> Result<Vec<Vec<f64>>>
where
    K: FnMut(usize) -> Result<Vec<Vec<f64>>>,
{
    if hop_len == 0 || xfade > hop_len {
        return Err(Error::invalid(format!("hop {hop_len} with crossfade {xfade}")));
    }
    let len = signal.len();
    let hops = len.div_ceil(hop_len);
    let half = xfade / 2;
    let ramp = |n: i64, boundary: i64| -> f64 {
        // 0 before the fade, 1 after it
        if xfade == 0 {
            return if n >= boundary { 1.0 } else { 0.0 };
        }
        let u = (n - (boundary - half as i64)) as f64 / xfade as f64;
        let u = u.clamp(0.0, 1.0);
        (std::f64::consts::FRAC_PI_2 * u).sin().powi(2)
    };
    let mut out = vec![vec![0.0; len]; channels];
    for h in 0..hops {
        let b0 = (h * hop_len) as i64;
        let b1 = ((h + 1) * hop_len) as i64;
        let start = if h == 0 { 0 } else { (b0 - half as i64).max(0) as usize };
        let end = if h + 1 == hops {
            len
        } else {
            ((b1 + (xfade - half) as i64) as usize).min(len)
        };
        let seg: Vec<f64> = (start..end)
            .map(|n| {
                let rise = if h == 0 { 1.0 } else { ramp(n as i64, b0) };
                let fall = if h + 1 == hops { 1.0 } else { 1.0 - ramp(n as i64, b1) };
                signal[n] * rise * fall
            })
            .collect();
        let ks = kernels(h)?;
        if ks.len() != channels {
            return Err(Error::invalid(format!("{} kernels for {channels} channels", ks.len())));
        }
        for (c, k) in ks.iter().enumerate() {
            let y = fft_convolve(&seg, k, (len - start).min(seg.len() + k.len().saturating_sub(1)));
            for (i, v) in y.iter().enumerate() {
                out[c][start + i] += v;
            }
        }
    }
    Ok(out)
}

fn demo_audio(path: Option<&Path>, len: usize, seed: u64) -> Result<Vec<f64>> {
    match path {
        Some(p) => Ok(fit_length(&read_wav(p)?, len)),
        None => Ok(synthetic_speech(len, seed)),
    }
}

fn place(center: Point3, azimuth_deg: f64, distance: f64) -> Point3 {
    let t = azimuth_deg.to_radians();
    add(center, [distance * t.cos(), distance * t.sin(), 0.0])
}

fn scaled(x: &[f64], g: f64) -> Vec<f64> {
    x.iter().map(|v| v * g).collect()
}

fn energy_db(x: &[f64]) -> f64 {
    10.0 * x.iter().map(|v| v * v).sum::<f64>().log10()
}

/// Writes a dB magnitude spectrogram: one row per frame, one column per bin.
pub fn write_spectrogram_csv(path: &Path, spec: &Spectrogram) -> Result<()> {
    let mut header = vec!["time_s".to_string()];
    header.extend(stft_frequencies().iter().map(|f| format!("{f}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header_refs, |w| {
        for t in 0..spec.num_frames() {
            let mut row = vec![format!("{}", (t * HOP) as f64 / SAMPLE_RATE as f64)];
            for k in 0..spec.num_bins() {
                row.push(format!("{:.3}", 20.0 * spec.bins[[k, t]].norm().max(1e-12).log10()));
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterfererConfig {
    pub output_dir: PathBuf,
    pub duration_s: f64,
    pub distance: f64,
    pub hop_s: f64,
    pub crossfade_s: f64,
    pub target_azimuth_deg: f64,
    /// Interferer azimuth at the start; it completes one full turn.
    pub start_azimuth_deg: f64,
    pub pattern: PatternConfig,
    pub diameter: f64,
    pub loudness_dbfs: f64,
    pub snr_db: Option<f64>,
    pub wng_min_db: f64,
    pub seed: u64,
    pub target_audio: Option<PathBuf>,
    pub interferer_audio: Option<PathBuf>,
}

impl Default for InterfererConfig {
    fn default() -> Self {
        InterfererConfig {
            output_dir: PathBuf::from("demo_interferer"),
            duration_s: 18.0,
            distance: 1.5,
            hop_s: 0.25,
            crossfade_s: 0.02,
            target_azimuth_deg: 0.0,
            start_azimuth_deg: 0.0,
            pattern: PatternConfig::default(),
            diameter: 0.03,
            loudness_dbfs: -28.0,
            snr_db: None,
            wng_min_db: -15.0,
            seed: 0,
            target_audio: None,
            interferer_audio: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopAttenuation {
    pub hop: usize,
    pub azimuth_deg: f64,
    /// Interferer energy in the VDM target relative to the reference, dB.
    pub target_db: f64,
    pub oracle_db: f64,
    pub ls_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfererReport {
    pub config: InterfererConfig,
    pub hops: Vec<HopAttenuation>,
    /// Target-VDM attenuation of the interferer in the hop nearest the
    /// pattern's deepest point, as a positive dB value.
    pub null_attenuation_db: f64,
    pub null_azimuth_deg: f64,
    /// Target speaker level in the VDM output relative to the reference, dB.
    pub target_level_db: f64,
}

/// Static target and an interferer circling the array once, rendered as a
/// sequence of static hops in free field.
pub fn run_interferer_demo(cfg: &InterfererConfig) -> Result<InterfererReport> {
    let fs_hz = SAMPLE_RATE as f64;
    let len = (cfg.duration_s * fs_hz).round() as usize;
    let hop_len = (cfg.hop_s * fs_hz).round() as usize;
    let xfade = (cfg.crossfade_s * fs_hz).round() as usize;
    if len == 0 || hop_len == 0 {
        return Err(Error::invalid("demo duration and hop must be positive"));
    }
    let hops = len.div_ceil(hop_len);
    let array = build_array(cfg.diameter)?;
    let center = [0.0; 3];
    let mics = array.placed_at(center);
    let ref_idx = array.reference_index;
    let ref_pos = mics[ref_idx];
    let pattern = cfg
        .pattern
        .build()?
        .with_steering(Doa::from_degrees(cfg.target_azimuth_deg));
    let enc = Enclosure::FreeField;
    let az_of = |h: usize| cfg.start_azimuth_deg + 360.0 * h as f64 / hops as f64;

    let kernels_at = |pos: Point3| -> Result<Vec<Vec<f64>>> {
        let mut ks: Vec<Vec<f64>> = mics
            .iter()
            .map(|&m| simulate_rir(&enc, pos, m, 0).map(|r| r.samples))
            .collect::<Result<_>>()?;
        ks.push(simulate_vdm_rir(&enc, pos, ref_pos, &pattern, 0)?.samples);
        Ok(ks)
    };
    let q = mics.len();
    let target_dry = demo_audio(cfg.target_audio.as_deref(), len, cfg.seed)?;
    let interf_dry = demo_audio(cfg.interferer_audio.as_deref(), len, cfg.seed.wrapping_add(1))?;

    let static_k = kernels_at(place(center, cfg.target_azimuth_deg, cfg.distance))?;
    let mut target: Vec<Vec<f64>> = static_k.iter().map(|k| fft_convolve(&target_dry, k, len)).collect();
    let mut interf = render_piecewise(&interf_dry, hop_len, xfade, q + 1, |h| {
        kernels_at(place(center, az_of(h), cfg.distance))
    })?;
    let gt = loudness_gain(&target[ref_idx], cfg.loudness_dbfs)?;
    let gi = loudness_gain(&interf[ref_idx], cfg.loudness_dbfs)?;
    target.iter_mut().for_each(|c| *c = scaled(c, gt));
    interf.iter_mut().for_each(|c| *c = scaled(c, gi));

    let clean: Vec<Vec<f64>> = (0..q)
        .map(|i| target[i].iter().zip(&interf[i]).map(|(a, b)| a + b).collect())
        .collect();
    let (mic_signals, _) = match cfg.snr_db {
        Some(snr) => add_sensor_noise(&clean, snr, cfg.seed)?,
        None => (clean, 0.0),
    };
    let vdm: Vec<f64> = target[q].iter().zip(&interf[q]).map(|(a, b)| a + b).collect();

    let mic_specs = mic_signals.iter().map(|x| spec_of(x)).collect::<Result<Vec<_>>>()?;
    let reference = &mic_specs[ref_idx];
    let stems = [spec_of(&target[ref_idx])?, spec_of(&interf[ref_idx])?];
    let target_doa = Doa::from_degrees(cfg.target_azimuth_deg);
    let oracle = oracle_mask_tracks(&stems, &pattern, |n, t| {
        if n == 0 {
            target_doa
        } else {
            Doa::from_degrees(az_of(((t * HOP) / hop_len).min(hops - 1)))
        }
    })?;
    let weights = design_ls_beamformer(&array, &pattern, &stft_frequencies(), &angle_grid(360), cfg.wng_min_db)?;
    let ls_spec = apply_beamformer(&weights, &mic_specs)?;
    let ls_mask = beamformer_mask(&ls_spec, reference)?;
    let oracle_out = istft(&apply_mask(&oracle, reference)?)?;
    let ls_out = istft(&ls_spec)?;
    // Interferer alone through each filter, for per-hop attenuation.
    let interf_oracle = istft(&apply_mask(&oracle, &stems[1])?)?;
    let interf_ls = istft(&apply_mask(&ls_mask, &stems[1])?)?;

    let mut hop_rows = Vec::with_capacity(hops);
    for h in 0..hops {
        let a = (h * hop_len + xfade).min(len);
        let b = ((h + 1) * hop_len).saturating_sub(xfade).min(len);
        if b <= a {
            continue;
        }
        let base = energy_db(&interf[ref_idx][a..b]);
        hop_rows.push(HopAttenuation {
            hop: h,
            azimuth_deg: az_of(h).rem_euclid(360.0),
            target_db: energy_db(&interf[q][a..b]) - base,
            oracle_db: energy_db(&interf_oracle[a..b]) - base,
            ls_db: energy_db(&interf_ls[a..b]) - base,
        });
    }
    let worst = pattern_minimum(&pattern);
    let null_row = hop_rows
        .iter()
        .min_by(|x, y| {
            crate::geometry::angular_distance_deg(x.azimuth_deg, worst)
                .total_cmp(&crate::geometry::angular_distance_deg(y.azimuth_deg, worst))
        })
        .ok_or_else(|| Error::invalid("no complete hop"))?;

    let dir = &cfg.output_dir;
    write_wav(&dir.join("reference.wav"), &mic_signals[ref_idx])?;
    write_wav(&dir.join("target_vdm.wav"), &vdm)?;
    write_wav(&dir.join("oracle.wav"), &oracle_out)?;
    write_wav(&dir.join("ls.wav"), &ls_out)?;
    write_spectrogram_csv(&dir.join("spec_reference.csv"), reference)?;
    write_spectrogram_csv(&dir.join("spec_target_vdm.csv"), &spec_of(&vdm)?)?;
    write_spectrogram_csv(&dir.join("spec_oracle.csv"), &spec_of(&oracle_out)?)?;
    write_spectrogram_csv(&dir.join("spec_ls.csv"), &ls_spec)?;
    let report = InterfererReport {
        config: cfg.clone(),
        null_attenuation_db: -null_row.target_db,
        null_azimuth_deg: null_row.azimuth_deg,
        target_level_db: energy_db(&target[q]) - energy_db(&target[ref_idx]),
        hops: hop_rows,
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// In-plane azimuth (degrees, 1° grid) of the smallest pattern magnitude.
fn pattern_minimum(p: &DirectivityPattern) -> f64 {
    (0..360)
        .map(|d| (d as f64, p.evaluate_raw((d as f64).to_radians(), 0.0).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(d, _)| d)
        .unwrap_or(180.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StereoRender {
    /// Left/right are the VDM targets.
    Target,
    /// Left/right are oracle-masked reference signals.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoConfig {
    pub output_dir: PathBuf,
    pub duration_s: f64,
    pub distance: f64,
    pub hop_s: f64,
    pub crossfade_s: f64,
    pub pan_start_deg: f64,
    pub pan_end_deg: f64,
    pub left_deg: f64,
    pub right_deg: f64,
    pub pattern: PatternConfig,
    pub diameter: f64,
    pub loudness_dbfs: f64,
    pub segment_s: f64,
    pub overlap: f64,
    pub render: StereoRender,
    pub seed: u64,
    pub audio: Option<PathBuf>,
}

impl Default for StereoConfig {
    fn default() -> Self {
        StereoConfig {
            output_dir: PathBuf::from("demo_stereo"),
            duration_s: 32.0,
            distance: 1.5,
            hop_s: 0.25,
            crossfade_s: 0.02,
            pan_start_deg: 0.0,
            pan_end_deg: 180.0,
            left_deg: 45.0,
            right_deg: 135.0,
            pattern: PatternConfig::default(),
            diameter: 0.03,
            loudness_dbfs: -28.0,
            segment_s: 1.0,
            overlap: 0.75,
            render: StereoRender::Target,
            seed: 0,
            audio: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoSegment {
    pub start_s: f64,
    /// Source azimuth at the segment center.
    pub azimuth_deg: f64,
    pub level_diff_db: Option<f64>,
    /// `20 log10(|Λ_L| / |Λ_R|)` at the segment center.
    pub expected_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoReport {
    pub config: StereoConfig,
    pub segments: Vec<StereoSegment>,
}

/// One source panned across the front half-plane, captured by two steered
/// patterns; reports the segmental level difference.
pub fn run_stereo_demo(cfg: &StereoConfig) -> Result<StereoReport> {
    let fs_hz = SAMPLE_RATE as f64;
    let len = (cfg.duration_s * fs_hz).round() as usize;
    let hop_len = (cfg.hop_s * fs_hz).round() as usize;
    let xfade = (cfg.crossfade_s * fs_hz).round() as usize;
    if len == 0 || hop_len == 0 {
        return Err(Error::invalid("demo duration and hop must be positive"));
    }
    let hops = len.div_ceil(hop_len);
    let array = build_array(cfg.diameter)?;
    let center = [0.0; 3];
    let ref_pos = array.placed_at(center)[array.reference_index];
    let base = cfg.pattern.build()?;
    let left = base.with_steering(Doa::from_degrees(cfg.left_deg));
    let right = base.with_steering(Doa::from_degrees(cfg.right_deg));
    let span = cfg.pan_end_deg - cfg.pan_start_deg;
    let az_of = |h: usize| cfg.pan_start_deg + span * h as f64 / (hops.max(2) - 1) as f64;
    let enc = Enclosure::FreeField;

    let dry = demo_audio(cfg.audio.as_deref(), len, cfg.seed)?;
    let rendered = render_piecewise(&dry, hop_len, xfade, 3, |h| {
        let pos = place(center, az_of(h), cfg.distance);
        Ok(vec![
            simulate_rir(&enc, pos, ref_pos, 0)?.samples,
            simulate_vdm_rir(&enc, pos, ref_pos, &left, 0)?.samples,
            simulate_vdm_rir(&enc, pos, ref_pos, &right, 0)?.samples,
        ])
    })?;
    let g = loudness_gain(&rendered[0], cfg.loudness_dbfs)?;
    let reference = scaled(&rendered[0], g);
    let (l, r) = match cfg.render {
        StereoRender::Target => (scaled(&rendered[1], g), scaled(&rendered[2], g)),
        StereoRender::Oracle => {
            let ref_spec = spec_of(&reference)?;
            let stems = [ref_spec.clone()];
            let doa_at = |_: usize, t: usize| Doa::from_degrees(az_of(((t * HOP) / hop_len).min(hops - 1)));
            let ml = oracle_mask_tracks(&stems, &left, doa_at)?;
            let mr = oracle_mask_tracks(&stems, &right, doa_at)?;
            (
                istft(&apply_mask(&ml, &ref_spec)?)?,
                istft(&apply_mask(&mr, &ref_spec)?)?,
            )
        }
    };
    let diffs = stereo_level_difference(&l, &r, SAMPLE_RATE, cfg.segment_s, cfg.overlap)?;
    let seg = (cfg.segment_s * fs_hz).round() as usize;
    let seg_hop = ((seg as f64) * (1.0 - cfg.overlap)).round().max(1.0) as usize;
    let segments: Vec<StereoSegment> = diffs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mid = i * seg_hop + seg / 2;
            let az = az_of((mid / hop_len).min(hops - 1));
            let doa = Doa::from_degrees(az);
            StereoSegment {
                start_s: (i * seg_hop) as f64 / fs_hz,
                azimuth_deg: az,
                level_diff_db: *d,
                expected_db: 20.0 * (left.evaluate_doa(doa).abs() / right.evaluate_doa(doa).abs()).log10(),
            }
        })
        .collect();

    let dir = &cfg.output_dir;
    let to32 = |x: &[f64]| x.iter().map(|&v| v as f32).collect::<Vec<f32>>();
    write_wav_channels(&dir.join("stereo.wav"), &[to32(&l), to32(&r)])?;
    write_wav(&dir.join("reference.wav"), &reference)?;
    write_csv(
        &dir.join("level_difference.csv"),
        &["start_s", "azimuth_deg", "level_diff_db", "expected_db"],
        |w| {
            for s in &segments {
                w.write_record([
                    s.start_s.to_string(),
                    s.azimuth_deg.to_string(),
                    s.level_diff_db.map(|v| v.to_string()).unwrap_or_default(),
                    s.expected_db.to_string(),
                ])?;
            }
            Ok(())
        },
    )?;
    let report = StereoReport {
        config: cfg.clone(),
        segments,
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SceneCount;
    use crate::scene::Role;

    #[test]
    fn piecewise_with_fixed_kernel_matches_static_convolution() {
        let x = synthetic_speech(9000, 5);
        let k = vec![0.5, -0.25, 0.125, 0.0, 0.3];
        let out = render_piecewise(&x, 1000, 160, 1, |_| Ok(vec![k.clone()])).unwrap();
        let direct = fft_convolve(&x, &k, x.len());
        let err = out[0]
            .iter()
            .zip(&direct)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    fn tiny_manifest(dir: &Path, sources: usize) -> PathBuf {
        let cfg = DatasetConfig {
            output_dir: dir.to_path_buf(),
            role: Role::Test,
            num_sources: Some(sources),
            scenes: SceneCount { count: Some(4) },
            duration_samples: 8000,
            ..Default::default()
        };
        build_dataset(&cfg).unwrap().1
    }

    #[test]
    fn oracle_eval_runs_and_full_band_probe_matches() {
        let d = tempfile::tempdir().unwrap();
        let m = tiny_manifest(d.path(), 1);
        let base = evaluate_manifest(&m, &EvalOptions::new(FilterSource::Oracle)).unwrap();
        assert_eq!(base.pattern.counts.iter().sum::<usize>(), 4);
        assert!(base.df_db.is_none());
        let probe = ProbeConfig {
            manifest: m.clone(),
            filter: FilterSource::Oracle,
            probes: vec![ProbeBand::full()],
            output_dir: d.path().join("probe"),
        };
        let full = run_bandpass_probe(&probe).unwrap().remove(0);
        let a = base.sdr.unwrap().per_sample_db;
        let b = full.sdr.unwrap().per_sample_db;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
        for (x, y) in base.pattern.wideband_db.iter().zip(&full.pattern.wideband_db) {
            assert_eq!(x.is_some(), y.is_some());
            if let (Some(x), Some(y)) = (x, y) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn external_masks_missing_file_names_the_scene() {
        let d = tempfile::tempdir().unwrap();
        let m = tiny_manifest(d.path(), 2);
        let masks = d.path().join("masks");
        fs::create_dir_all(&masks).unwrap();
        let manifest = Manifest::load(&m).unwrap();
        for rec in &manifest.scenes[..3] {
            let t = crate::signal::num_frames(rec.spec.duration_samples);
            crate::io::write_tensor(
                &mask_path(&masks, rec.spec.index, 0),
                &crate::io::Tensor::from_mask(&Mask::ones(NUM_BINS, t)),
            )
            .unwrap();
        }
        let err = evaluate_manifest(&m, &EvalOptions::new(FilterSource::External { dir: masks.clone() })).unwrap_err();
        assert!(
            matches!(
                err,
                Error::MissingMask {
                    scene: 3,
                    steering: 0,
                    ..
                }
            ),
            "{err}"
        );
        let t = crate::signal::num_frames(8000);
        crate::io::write_tensor(
            &mask_path(&masks, 3, 0),
            &crate::io::Tensor::from_mask(&Mask::ones(NUM_BINS, t)),
        )
        .unwrap();
        let rep = evaluate_manifest(&m, &EvalOptions::new(FilterSource::External { dir: masks })).unwrap();
        for v in rep.pattern.wideband_db.iter().flatten() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn short_demos_produce_outputs() {
        let d = tempfile::tempdir().unwrap();
        let rep = run_interferer_demo(&InterfererConfig {
            output_dir: d.path().join("i"),
            duration_s: 4.0,
            ..Default::default()
        })
        .unwrap();
        assert!(rep.null_attenuation_db >= 34.0, "{}", rep.null_attenuation_db);
        assert!(rep.target_level_db.abs() < 0.5);
        assert!(d.path().join("i/target_vdm.wav").is_file());
        let s = run_stereo_demo(&StereoConfig {
            output_dir: d.path().join("s"),
            duration_s: 6.0,
            ..Default::default()
        })
        .unwrap();
        assert!(!s.segments.is_empty());
        assert!(d.path().join("s/level_difference.csv").is_file());
    }
}
