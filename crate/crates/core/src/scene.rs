//! Scene sampling and rendering.
//!
//! A scene places one to three sources around the array, either in free
//! field at a fixed distance or in a random shoebox room. Rendering produces
//! the noisy microphone signals, one VDM target per steering direction, and
//! the per-source direct and reverberant stems at the reference microphone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::{add, angular_distance_deg, ArrayGeometry, Doa, Point3};
use crate::room::{
    rt60_to_reflection, simulate_rir, simulate_vdm_rirs, split_direct_reverb, Enclosure, ImpulseResponse,
    ReflectionModel, RoomSpec,
};
use crate::signal::{add_sensor_noise, loudness_gain, FftConvolver};
use crate::SAMPLE_RATE;

/// Scene length used throughout: 4 s at 16 kHz.
pub const SCENE_SAMPLES: usize = 4 * SAMPLE_RATE as usize;
pub const ANECHOIC_DISTANCE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Anechoic,
    Reverberant,
}

/// Candidate source azimuths in degrees.
pub fn candidate_grid(role: Role) -> Vec<f64> {
    match role {
        Role::Train => (0..72).map(|i| 5.0 * i as f64).collect(),
        Role::Val => (0..72).map(|i| 2.5 + 5.0 * i as f64).collect(),
        Role::Test => (0..144).map(|i| 1.25 + 2.5 * i as f64).collect(),
    }
}

/// Steering directions `0, step, 2·step, …` below 360°.
pub fn steering_grid(step_deg: f64) -> Result<Vec<f64>> {
    if !(step_deg > 0.0 && step_deg <= 360.0) {
        return Err(Error::invalid(format!("steering step {step_deg} outside (0, 360]")));
    }
    let m = (360.0 / step_deg).round() as usize;
    if (m as f64 * step_deg - 360.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("steering step {step_deg} does not divide 360")));
    }
    Ok((0..m).map(|i| i as f64 * step_deg).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomRanges {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub rt60: (f64, f64),
    pub distance: (f64, f64),
    pub wall_margin: f64,
    pub reflection: ReflectionModel,
}

impl Default for RoomRanges {
    fn default() -> Self {
        RoomRanges {
            length: (6.0, 10.0),
            width: (4.0, 8.0),
            height: (3.0, 5.0),
            rt60: (0.2, 0.5),
            distance: (0.5, 2.5),
            wall_margin: 1.2,
            reflection: ReflectionModel::default(),
        }
    }
}

/// Knobs for [`sample_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub role: Role,
    pub environment: Environment,
    /// Fixed number of sources; `None` draws uniformly from 1..=3, except
    /// for the test role which uses two.
    pub num_sources: Option<usize>,
    pub anechoic_distance: f64,
    pub room: RoomRanges,
    pub loudness_dbfs: (f64, f64),
    /// Sensor SNR in dB; `None` disables sensor noise.
    pub snr_db: Option<f64>,
    pub diameter: f64,
    pub steering_deg: Vec<f64>,
    pub max_attempts: usize,
    /// Image order; `None` picks it from the room.
    pub max_order: Option<usize>,
    pub duration_samples: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            role: Role::Train,
            environment: Environment::Anechoic,
            num_sources: None,
            anechoic_distance: ANECHOIC_DISTANCE,
            room: RoomRanges::default(),
            loudness_dbfs: (-33.0, -25.0),
            snr_db: Some(30.0),
            diameter: 0.03,
            steering_deg: vec![0.0],
            max_attempts: 10_000,
            max_order: None,
            duration_samples: SCENE_SAMPLES,
        }
    }
}

impl SamplingConfig {
    fn source_count(&self, rng: &mut ChaCha8Rng) -> usize {
        match (self.num_sources, self.role) {
            (Some(n), _) => n,
            (None, Role::Test) => 2,
            (None, _) => rng.gen_range(1..=3),
        }
    }
}

/// Where a source's mono signal comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AudioRef {
    /// Path of a corpus clip.
    Corpus { path: String },
    /// [`crate::signal::synthetic_speech`] with this seed.
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub azimuth_deg: f64,
    pub distance: f64,
    pub position: Point3,
    /// Level at the reference microphone after convolution.
    pub loudness_dbfs: f64,
    pub audio: AudioRef,
}

impl SourceSpec {
    pub fn doa(&self) -> Doa {
        Doa::from_degrees(self.azimuth_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub index: usize,
    /// Seed for everything drawn after placement (noise, synthetic audio).
    pub seed: u64,
    pub role: Role,
    pub environment: Environment,
    pub enclosure: Enclosure,
    pub array_center: Point3,
    pub array: ArrayGeometry,
    pub sources: Vec<SourceSpec>,
    pub pattern: DirectivityPattern,
    pub steering_deg: Vec<f64>,
    pub snr_db: Option<f64>,
    pub max_order: usize,
    pub duration_samples: usize,
}

impl SceneSpec {
    pub fn mic_positions(&self) -> Vec<Point3> {
        self.array.placed_at(self.array_center)
    }

    pub fn reference_position(&self) -> Point3 {
        add(self.array.reference_position(), self.array_center)
    }

    /// Target pattern for steering index `m`.
    pub fn steered_pattern(&self, m: usize) -> DirectivityPattern {
        self.pattern.with_steering(Doa::from_degrees(self.steering_deg[m]))
    }
}

/// Random source of mono clips for scene sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioPool {
    Synthetic,
    Corpus(Vec<String>),
}

impl AudioPool {
    fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<AudioRef>> {
        match self {
            AudioPool::Synthetic => Ok((0..n).map(|_| AudioRef::Synthetic { seed: rng.gen() }).collect()),
            AudioPool::Corpus(paths) => {
                if paths.len() < n {
                    return Err(Error::SamplingFailure {
                        attempts: 0,
                        reason: format!("corpus has {} clips, scene needs {n}", paths.len()),
                    });
                }
                Ok(paths
                    .choose_multiple(rng, n)
                    .map(|p| AudioRef::Corpus { path: p.clone() })
                    .collect())
            }
        }
    }
}

/// Per-scene generator: seeded by the global seed, one stream per scene
/// index, so scenes can be drawn in any order or in parallel.
pub fn scene_rng(global_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
    rng.set_stream(index as u64);
    rng
}

/// Azimuths for `count` test scenes with `n` sources each, read off a
/// stream of shuffled copies of the grid so every direction is used equally
/// often. Sources within a scene are distinct.
pub fn test_doa_schedule(grid: &[f64], count: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n > grid.len() {
        return Err(Error::invalid(format!("{n} sources exceed {} grid points", grid.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_d0a5);
    let mut stream: Vec<f64> = Vec::with_capacity(count * n + grid.len());
    while stream.len() < count * n {
        let mut perm = grid.to_vec();
        perm.shuffle(&mut rng);
        stream.extend(perm);
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let chunk = &mut stream[i * n..];
        // Only chunks straddling two permutations can repeat a direction.
        for a in 1..n {
            if chunk[..a].contains(&chunk[a]) {
                let swap = (n..chunk.len())
                    .find(|&b| !chunk[..n].contains(&chunk[b]))
                    .ok_or_else(|| Error::invalid("cannot draw distinct directions"))?;
                chunk.swap(a, swap);
            }
        }
        out.push(chunk[..n].to_vec());
    }
    Ok(out)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn place(center: Point3, azimuth_deg: f64, distance: f64) -> Point3 {
    let t = azimuth_deg.to_radians();
    [
        center[0] + distance * t.cos(),
        center[1] + distance * t.sin(),
        center[2],
    ]
}

/// Draws a scene. `doas` fixes the source azimuths (degrees); otherwise they
/// are drawn without replacement from the role's candidate grid.
pub fn sample_scene(
    cfg: &SamplingConfig,
    pattern: &DirectivityPattern,
    pool: &AudioPool,
    index: usize,
    rng: &mut ChaCha8Rng,
    doas: Option<&[f64]>,
) -> Result<SceneSpec> {
    if cfg.steering_deg.is_empty() {
        return Err(Error::invalid("steering list is empty"));
    }
    let array = crate::geometry::build_array(cfg.diameter)?;
    let azimuths: Vec<f64> = match doas {
        Some(d) => d.to_vec(),
        None => {
            let n = cfg.source_count(rng);
            let grid = candidate_grid(cfg.role);
            if n == 0 || n > grid.len() {
                return Err(Error::invalid(format!("invalid source count {n}")));
            }
            grid.choose_multiple(rng, n).cloned().collect()
        }
    };
    if azimuths.is_empty() {
        return Err(Error::invalid("scene needs at least one source"));
    }

    let (enclosure, center, distances) = match cfg.environment {
        Environment::Anechoic => (
            Enclosure::FreeField,
            [0.0; 3],
            vec![cfg.anechoic_distance; azimuths.len()],
        ),
        Environment::Reverberant => {
            let r = &cfg.room;
            let mut found = None;
            for _ in 0..cfg.max_attempts {
                let dims = [uniform(rng, r.length), uniform(rng, r.width), uniform(rng, r.height)];
                let room = RoomSpec::new(dims, uniform(rng, r.rt60)).with_reflection(r.reflection);
                let lo = r.wall_margin;
                if dims.iter().any(|&d| d <= 2.0 * lo) || rt60_to_reflection(&room).is_err() {
                    continue;
                }
                let center = [
                    rng.gen_range(lo..dims[0] - lo),
                    rng.gen_range(lo..dims[1] - lo),
                    rng.gen_range(lo..dims[2] - lo),
                ];
                let dists: Vec<f64> = azimuths.iter().map(|_| uniform(rng, r.distance)).collect();
                let inside = azimuths
                    .iter()
                    .zip(&dists)
                    .all(|(&az, &d)| room.contains(place(center, az, d)));
                if inside {
                    found = Some((Enclosure::Shoebox(room), center, dists));
                    break;
                }
            }
            found.ok_or_else(|| Error::SamplingFailure {
                attempts: cfg.max_attempts,
                reason: "no room/array placement keeps the array clear of the walls with all sources inside".into(),
            })?
        }
    };

    let audio = pool.draw(azimuths.len(), rng)?;
    let sources = azimuths
        .iter()
        .zip(&distances)
        .zip(audio)
        .map(|((&az, &d), audio)| SourceSpec {
            azimuth_deg: az,
            distance: d,
            position: place(center, az, d),
            loudness_dbfs: uniform(rng, cfg.loudness_dbfs),
            audio,
        })
        .collect();
    let max_order = cfg.max_order.unwrap_or_else(|| enclosure.auto_max_order());
    Ok(SceneSpec {
        index,
        seed: rng.gen(),
        role: cfg.role,
        environment: cfg.environment,
        enclosure,
        array_center: center,
        array,
        sources,
        pattern: pattern.clone(),
        steering_deg: cfg.steering_deg.clone(),
        snr_db: cfg.snr_db,
        max_order,
        duration_samples: cfg.duration_samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceStems {
    /// Direct-path component at the reference microphone.
    pub direct: Vec<f64>,
    /// Reverberant component at the reference microphone.
    pub reverb: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender {
    /// Noisy microphone signals, reference first.
    pub mic_signals: Vec<Vec<f64>>,
    /// One target per steering direction.
    pub vdm_targets: Vec<Vec<f64>>,
    pub stems: Vec<SourceStems>,
    /// Per-channel sensor noise power (0 without noise).
    pub noise_power: f64,
}

fn sum_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

fn add_parts(acc: &mut [f64], a: &[f64], b: &[f64]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        *o += x + y;
    }
}

impl SceneRender {
    /// Cumulative direct-path signal at the reference microphone.
    pub fn direct_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.reference().len()];
        for s in &self.stems {
            sum_into(&mut out, &s.direct);
        }
        out
    }

    /// Cumulative reverberant signal at the reference microphone.
    pub fn reverb_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.reference().len()];
        for s in &self.stems {
            sum_into(&mut out, &s.reverb);
        }
        out
    }

    /// Noise-free reference signal rebuilt from the stems.
    pub fn clean_reference(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.reference().len()];
        for s in &self.stems {
            add_parts(&mut out, &s.direct, &s.reverb);
        }
        out
    }

    pub fn reference(&self) -> &[f64] {
        &self.mic_signals[0]
    }
}

/// Convolves `audio` with the direct and reverberant parts of `rir` separately
/// and scales both by `gain`.
fn split_convolve(conv: &FftConvolver, rir: &ImpulseResponse, len: usize) -> (Vec<f64>, Vec<f64>) {
    let (d, r) = split_direct_reverb(rir, rir.direct_delay);
    (conv.convolve(&d.samples, len), conv.convolve(&r.samples, len))
}

fn scaled(x: &[f64], g: f64) -> Vec<f64> {
    x.iter().map(|v| v * g).collect()
}

/// Renders a scene. `audio[n]` is the mono signal of source `n`; it is
/// trimmed or zero-padded to the scene length.
pub fn render_scene(spec: &SceneSpec, audio: &[Vec<f64>]) -> Result<SceneRender> {
    if audio.len() != spec.sources.len() {
        return Err(Error::invalid(format!(
            "scene has {} sources but {} audio signals were given",
            spec.sources.len(),
            audio.len()
        )));
    }
    let len = spec.duration_samples;
    let q_count = spec.array.num_mics();
    let ref_idx = spec.array.reference_index;
    let mics = spec.mic_positions();
    let ref_pos = mics[ref_idx];
    let patterns: Vec<DirectivityPattern> = (0..spec.steering_deg.len()).map(|m| spec.steered_pattern(m)).collect();

    let mut clean = vec![vec![0.0; len]; q_count];
    let mut targets = vec![vec![0.0; len]; patterns.len()];
    let mut stems = Vec::with_capacity(spec.sources.len());

    for (src, sig) in spec.sources.iter().zip(audio) {
        let sig = crate::signal::fit_length(sig, len);
        let rirs: Vec<ImpulseResponse> = mics
            .iter()
            .map(|&m| simulate_rir(&spec.enclosure, src.position, m, spec.max_order))
            .collect::<Result<_>>()?;
        let vdm = simulate_vdm_rirs(&spec.enclosure, src.position, ref_pos, &patterns, spec.max_order)?;
        let max_k = rirs.iter().chain(&vdm).map(|r| r.samples.len()).max().unwrap_or(1);
        let conv = FftConvolver::new(&sig, max_k);

        let (dir, rvb) = split_convolve(&conv, &rirs[ref_idx], len);
        let reference: Vec<f64> = dir.iter().zip(&rvb).map(|(a, b)| a + b).collect();
        let gain = loudness_gain(&reference, src.loudness_dbfs).map_err(|_| {
            Error::DegenerateSignal(format!("source {:?} is silent at the reference microphone", src.audio))
        })?;
        let stem = SourceStems {
            direct: scaled(&dir, gain),
            reverb: scaled(&rvb, gain),
        };
        // Reference channel and targets are accumulated as scaled direct
        // plus scaled reverberant part, so stems reproduce them exactly.
        for (q, rir) in rirs.iter().enumerate() {
            if q == ref_idx {
                add_parts(&mut clean[q], &stem.direct, &stem.reverb);
            } else {
                sum_into(&mut clean[q], &scaled(&conv.convolve(&rir.samples, len), gain));
            }
        }
        for (t, v) in targets.iter_mut().zip(&vdm) {
            let (vd, vr) = split_convolve(&conv, v, len);
            add_parts(t, &scaled(&vd, gain), &scaled(&vr, gain));
        }
        stems.push(stem);
    }

    let (mic_signals, noise_power) = match spec.snr_db {
        Some(snr) => add_sensor_noise(&clean, snr, spec.seed)?,
        None => (clean, 0.0),
    };
    Ok(SceneRender {
        mic_signals,
        vdm_targets: targets,
        stems,
        noise_power,
    })
}

/// Fetches the mono signals of a scene's sources. `load` resolves corpus
/// paths; synthetic sources are generated in place.
pub fn scene_audio<F>(spec: &SceneSpec, mut load: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&str) -> Result<Vec<f64>>,
{
    spec.sources
        .iter()
        .map(|s| match &s.audio {
            AudioRef::Synthetic { seed } => Ok(crate::signal::synthetic_speech(spec.duration_samples, *seed)),
            AudioRef::Corpus { path } => load(path),
        })
        .collect()
}

/// Whether any source of a scene lies within `vicinity_deg` of `steering_deg`.
pub fn is_near_target(source_azimuths: &[f64], steering_deg: f64, vicinity_deg: f64) -> bool {
    source_azimuths
        .iter()
        .any(|&a| angular_distance_deg(a, steering_deg) <= vicinity_deg + 1e-9)
}

/// Partitions sample indices into shuffled batches of `batch_size` (the last
/// may be shorter) such that every batch holds at least one sample with a
/// source within `vicinity_deg` of the steering direction.
pub fn plan_minibatches(
    source_azimuths: &[Vec<f64>],
    steering_deg: f64,
    batch_size: usize,
    vicinity_deg: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let total = source_azimuths.len();
    if total == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut near, mut far): (Vec<usize>, Vec<usize>) =
        (0..total).partition(|&i| is_near_target(&source_azimuths[i], steering_deg, vicinity_deg));
    let batches = total.div_ceil(batch_size);
    if near.len() < batches {
        return Err(Error::Planning {
            batches,
            available: near.len(),
            deficit: batches - near.len(),
        });
    }
    near.shuffle(&mut rng);
    far.shuffle(&mut rng);
    let mut out: Vec<Vec<usize>> = near[..batches].iter().map(|&i| vec![i]).collect();
    let mut rest: Vec<usize> = near[batches..].iter().chain(&far).cloned().collect();
    rest.shuffle(&mut rng);
    let mut it = rest.into_iter();
    for b in out.iter_mut() {
        while b.len() < batch_size {
            match it.next() {
                Some(i) => b.push(i),
                None => break,
            }
        }
        b.shuffle(&mut rng);
    }
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cardioid(deg: f64) -> DirectivityPattern {
        DirectivityPattern::preset("dma1", Doa::from_degrees(deg)).unwrap()
    }

    fn short_cfg(env: Environment) -> SamplingConfig {
        SamplingConfig {
            environment: env,
            duration_samples: 8000,
            ..Default::default()
        }
    }

    #[test]
    fn grids() {
        let train = candidate_grid(Role::Train);
        let val = candidate_grid(Role::Val);
        let test = candidate_grid(Role::Test);
        assert_eq!(train.len(), 72);
        assert!(train.contains(&0.0) && !train.contains(&2.5));
        assert_eq!(test.len(), 144);
        assert!(test.contains(&1.25) && test.contains(&358.75));
        assert!(train.iter().all(|t| !val.contains(t)));
        assert_eq!(val.len(), 72);
    }

    #[test]
    fn steering_grids() {
        assert_eq!(steering_grid(5.0).unwrap().len(), 72);
        assert_eq!(steering_grid(360.0).unwrap(), vec![0.0]);
        assert!(steering_grid(7.0).is_err());
        assert!(steering_grid(0.0).is_err());
    }

    #[test]
    fn anechoic_sampling() {
        let cfg = short_cfg(Environment::Anechoic);
        for i in 0..50 {
            let s = sample_scene(
                &cfg,
                &cardioid(0.0),
                &AudioPool::Synthetic,
                i,
                &mut scene_rng(1, i),
                None,
            )
            .unwrap();
            assert!((1..=3).contains(&s.sources.len()));
            assert!(s.sources.iter().all(|x| x.distance == 1.5));
            assert!(s.sources.iter().all(|x| (-33.0..=-25.0).contains(&x.loudness_dbfs)));
            let grid = candidate_grid(Role::Train);
            assert!(s.sources.iter().all(|x| grid.contains(&x.azimuth_deg)));
            let mut az: Vec<f64> = s.sources.iter().map(|x| x.azimuth_deg).collect();
            az.dedup();
            assert_eq!(az.len(), s.sources.len());
        }
    }

    #[test]
    fn reverberant_sampling_respects_ranges() {
        let cfg = short_cfg(Environment::Reverberant);
        for i in 0..50 {
            let s = sample_scene(
                &cfg,
                &cardioid(0.0),
                &AudioPool::Synthetic,
                i,
                &mut scene_rng(2, i),
                None,
            )
            .unwrap();
            let Enclosure::Shoebox(room) = &s.enclosure else {
                panic!()
            };
            assert!((0.2..=0.5).contains(&room.rt60));
            for (a, (lo, hi)) in room.dimensions.iter().zip([(6.0, 10.0), (4.0, 8.0), (3.0, 5.0)]) {
                assert!(*a >= lo && *a <= hi);
            }
            for a in 0..3 {
                assert!(s.array_center[a] >= 1.2 && s.array_center[a] <= room.dimensions[a] - 1.2);
            }
            for src in &s.sources {
                assert!((0.5..=2.5).contains(&src.distance));
                assert!(room.contains(src.position));
                assert_eq!(src.position[2], s.array_center[2]);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = short_cfg(Environment::Reverberant);
        let a = sample_scene(
            &cfg,
            &cardioid(0.0),
            &AudioPool::Synthetic,
            4,
            &mut scene_rng(9, 4),
            None,
        )
        .unwrap();
        let b = sample_scene(
            &cfg,
            &cardioid(0.0),
            &AudioPool::Synthetic,
            4,
            &mut scene_rng(9, 4),
            None,
        )
        .unwrap();
        assert_eq!(a, b);
        let c = sample_scene(
            &cfg,
            &cardioid(0.0),
            &AudioPool::Synthetic,
            5,
            &mut scene_rng(9, 5),
            None,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn impossible_placement_fails() {
        let mut cfg = short_cfg(Environment::Reverberant);
        cfg.room.distance = (20.0, 20.0);
        cfg.max_attempts = 50;
        let err = sample_scene(
            &cfg,
            &cardioid(0.0),
            &AudioPool::Synthetic,
            0,
            &mut scene_rng(1, 0),
            None,
        );
        assert!(matches!(err, Err(Error::SamplingFailure { attempts: 50, .. })));
    }

    #[test]
    fn corpus_pool_needs_enough_clips() {
        let cfg = SamplingConfig {
            num_sources: Some(3),
            ..short_cfg(Environment::Anechoic)
        };
        let pool = AudioPool::Corpus(vec!["a.wav".into(), "b.wav".into()]);
        assert!(sample_scene(&cfg, &cardioid(0.0), &pool, 0, &mut scene_rng(1, 0), None).is_err());
    }

    #[test]
    fn test_schedule_is_uniform() {
        let grid = candidate_grid(Role::Test);
        let sched = test_doa_schedule(&grid, 144, 2, 3).unwrap();
        let mut counts = std::collections::HashMap::new();
        for s in &sched {
            assert_ne!(s[0], s[1]);
            for a in s {
                *counts.entry(a.to_bits()).or_insert(0) += 1;
            }
        }
        assert_eq!(counts.len(), 144);
        assert!(counts.values().all(|&c| c == 2));
        // odd source counts straddle permutations
        let sched = test_doa_schedule(&grid, 100, 3, 3).unwrap();
        assert!(sched.iter().all(|s| s[0] != s[1] && s[1] != s[2] && s[0] != s[2]));
    }

    fn render(spec: &SceneSpec) -> SceneRender {
        let audio = scene_audio(spec, |_| unreachable!()).unwrap();
        render_scene(spec, &audio).unwrap()
    }

    #[test]
    fn stems_add_up_to_reference() {
        let mut cfg = short_cfg(Environment::Reverberant);
        cfg.snr_db = None;
        cfg.num_sources = Some(2);
        let spec = sample_scene(
            &cfg,
            &cardioid(0.0),
            &AudioPool::Synthetic,
            0,
            &mut scene_rng(5, 0),
            None,
        )
        .unwrap();
        let r = render(&spec);
        assert_eq!(r.clean_reference(), r.mic_signals[0]);
        assert_eq!(r.mic_signals.len(), 4);
        for (src, st) in spec.sources.iter().zip(&r.stems) {
            let both: Vec<f64> = st.direct.iter().zip(&st.reverb).map(|(a, b)| a + b).collect();
            assert_abs_diff_eq!(crate::signal::loudness_dbfs(&both), src.loudness_dbfs, epsilon = 1e-9);
        }
    }

    #[test]
    fn noise_is_the_only_residual() {
        let mut cfg = short_cfg(Environment::Reverberant);
        cfg.snr_db = Some(20.0);
        let spec = sample_scene(
            &cfg,
            &cardioid(0.0),
            &AudioPool::Synthetic,
            1,
            &mut scene_rng(5, 1),
            None,
        )
        .unwrap();
        let r = render(&spec);
        let resid: Vec<f64> = r.mic_signals[0]
            .iter()
            .zip(r.clean_reference())
            .map(|(a, b)| a - b)
            .collect();
        assert_abs_diff_eq!(crate::signal::mean_power(&resid) / r.noise_power, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn omni_target_equals_clean_reference() {
        let omni = DirectivityPattern::preset("omni", Doa::from_degrees(0.0)).unwrap();
        let mut cfg = short_cfg(Environment::Reverberant);
        cfg.steering_deg = vec![0.0, 90.0];
        let spec = sample_scene(&cfg, &omni, &AudioPool::Synthetic, 2, &mut scene_rng(5, 2), None).unwrap();
        let r = render(&spec);
        assert_eq!(r.vdm_targets[0], r.clean_reference());
        assert_eq!(r.vdm_targets[1], r.clean_reference());
    }

    #[test]
    fn anechoic_targets_follow_pattern_gain() {
        let cfg = SamplingConfig {
            snr_db: None,
            ..short_cfg(Environment::Anechoic)
        };
        for (az, gain) in [(0.0, 1.0), (180.0, 0.01), (90.0, 0.5)] {
            let spec = sample_scene(
                &cfg,
                &cardioid(0.0),
                &AudioPool::Synthetic,
                0,
                &mut scene_rng(5, 0),
                Some(&[az]),
            )
            .unwrap();
            let r = render(&spec);
            assert!(r.stems[0].reverb.iter().all(|&v| v == 0.0));
            for (z, d) in r.vdm_targets[0].iter().zip(&r.stems[0].direct) {
                assert_abs_diff_eq!(*z, gain * d, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn steerable_targets() {
        let mut cfg = short_cfg(Environment::Anechoic);
        cfg.steering_deg = steering_grid(5.0).unwrap();
        cfg.duration_samples = 2000;
        let spec = sample_scene(
            &cfg,
            &cardioid(0.0),
            &AudioPool::Synthetic,
            0,
            &mut scene_rng(5, 0),
            Some(&[40.0]),
        )
        .unwrap();
        let r = render(&spec);
        assert_eq!(r.vdm_targets.len(), 72);
        // steering 40° (index 8) passes the source undistorted
        let d = &r.stems[0].direct;
        for (z, x) in r.vdm_targets[8].iter().zip(d) {
            assert_abs_diff_eq!(*z, *x, epsilon = 1e-12);
        }
    }

    #[test]
    fn render_checks_audio_count() {
        let cfg = short_cfg(Environment::Anechoic);
        let spec = sample_scene(
            &cfg,
            &cardioid(0.0),
            &AudioPool::Synthetic,
            0,
            &mut scene_rng(5, 0),
            Some(&[10.0]),
        )
        .unwrap();
        assert!(render_scene(&spec, &[]).is_err());
        assert!(matches!(
            render_scene(&spec, &[vec![0.0; 100]]),
            Err(Error::DegenerateSignal(_))
        ));
    }

    #[test]
    fn distance_invariance_of_target_ratio() {
        let mut cfg = SamplingConfig {
            snr_db: None,
            ..short_cfg(Environment::Anechoic)
        };
        let mut ratios = Vec::new();
        for d in [1.0, 2.0] {
            cfg.anechoic_distance = d;
            let spec = sample_scene(
                &cfg,
                &cardioid(0.0),
                &AudioPool::Synthetic,
                0,
                &mut scene_rng(5, 0),
                Some(&[60.0]),
            )
            .unwrap();
            let r = render(&spec);
            ratios.push(crate::signal::energy(&r.vdm_targets[0]) / crate::signal::energy(&r.mic_signals[0]));
        }
        assert_abs_diff_eq!(ratios[0], ratios[1], epsilon = 1e-9);
    }

    #[test]
    fn planner_basics() {
        let az: Vec<Vec<f64>> = (0..100).map(|i| vec![if i % 10 == 0 { 5.0 } else { 120.0 }]).collect();
        let batches = plan_minibatches(&az, 0.0, 10, 20.0, 4).unwrap();
        assert_eq!(batches.len(), 10);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.iter().any(|&i| is_near_target(&az[i], 0.0, 20.0)));
        }
        assert_eq!(batches, plan_minibatches(&az, 0.0, 10, 20.0, 4).unwrap());
        assert!(matches!(
            plan_minibatches(&az, 0.0, 1, 20.0, 4),
            Err(Error::Planning {
                batches: 100,
                available: 10,
                deficit: 90
            })
        ));
        assert!(plan_minibatches(&az, 0.0, 1, 180.0, 4).is_ok());
        assert!(plan_minibatches(&az, 0.0, 0, 20.0, 4).is_err());
    }

    proptest! {
        #[test]
        fn planner_partitions_and_covers(
            n in 1usize..200,
            bs in 1usize..20,
            near_every in 1usize..6,
            seed in 0u64..1000,
        ) {
            let az: Vec<Vec<f64>> = (0..n)
                .map(|i| vec![if i % near_every == 0 { 355.0 } else { 180.0 }])
                .collect();
            match plan_minibatches(&az, 0.0, bs, 20.0, seed) {
                Ok(batches) => {
                    let mut all = batches.concat();
                    all.sort();
                    prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                    for b in &batches {
                        prop_assert!(!b.is_empty() && b.len() <= bs);
                        prop_assert!(b.iter().any(|&i| i % near_every == 0));
                    }
                }
                Err(Error::Planning { batches, available, deficit }) => {
                    prop_assert_eq!(batches, n.div_ceil(bs));
                    prop_assert_eq!(available, n.div_ceil(near_every));
                    prop_assert_eq!(deficit, batches - available);
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
