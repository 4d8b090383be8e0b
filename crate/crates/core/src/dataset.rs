//! Dataset building: JSON configuration, corpus ingestion, and parallel
//! scene rendering into a manifest directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::{build_array, Doa};
use crate::io::{read_wav_any, write_scene, Manifest, SceneRecord};
use crate::scene::{
    candidate_grid, render_scene, sample_scene, scene_audio, scene_rng, steering_grid, test_doa_schedule, AudioPool,
    Environment, Role, RoomRanges, SamplingConfig, SCENE_SAMPLES,
};
use crate::signal::passes_loudness_gate;
use crate::SAMPLE_RATE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SceneCount {
    /// `None` uses the role default: 200 train, 50 val, 100 test.
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    pub preset: String,
    pub floor: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig {
            preset: "dma1".into(),
            floor: 0.01,
        }
    }
}

impl PatternConfig {
    pub fn build(&self) -> Result<DirectivityPattern> {
        DirectivityPattern::preset(&self.preset, Doa::from_degrees(0.0))?.with_floor(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringConfig {
    pub list_deg: Vec<f64>,
    /// When set, replaces the list by `0, step, 2·step, …`.
    pub step_deg: Option<f64>,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            list_deg: vec![0.0],
            step_deg: None,
        }
    }
}

impl SteeringConfig {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self.step_deg {
            Some(s) => steering_grid(s),
            None if self.list_deg.is_empty() => Err(Error::invalid("steering list is empty")),
            None => Ok(self.list_deg.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    pub diameter: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig { diameter: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    /// Directory of mono 16 kHz WAV clips; `None` uses synthetic audio.
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub role: Role,
    pub scenes: SceneCount,
    pub environment: Environment,
    pub num_sources: Option<usize>,
    pub anechoic_distance: f64,
    pub pattern: PatternConfig,
    pub steering: SteeringConfig,
    pub snr_db: Option<f64>,
    pub array: ArrayConfig,
    pub room: RoomRanges,
    pub loudness_dbfs: (f64, f64),
    pub max_order: Option<usize>,
    pub duration_samples: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        DatasetConfig {
            seed: 0,
            corpus_dir: None,
            output_dir: PathBuf::from("dataset"),
            role: Role::Train,
            scenes: SceneCount::default(),
            environment: Environment::Anechoic,
            num_sources: None,
            anechoic_distance: s.anechoic_distance,
            pattern: PatternConfig::default(),
            steering: SteeringConfig::default(),
            snr_db: s.snr_db,
            array: ArrayConfig::default(),
            room: RoomRanges::default(),
            loudness_dbfs: s.loudness_dbfs,
            max_order: None,
            duration_samples: SCENE_SAMPLES,
        }
    }
}

impl DatasetConfig {
    pub fn scene_count(&self) -> usize {
        self.scenes.count.unwrap_or(match self.role {
            Role::Train => 200,
            Role::Val => 50,
            Role::Test => 100,
        })
    }

    pub fn sampling(&self) -> Result<SamplingConfig> {
        Ok(SamplingConfig {
            role: self.role,
            environment: self.environment,
            num_sources: self.num_sources,
            anechoic_distance: self.anechoic_distance,
            room: self.room.clone(),
            loudness_dbfs: self.loudness_dbfs,
            snr_db: self.snr_db,
            diameter: self.array.diameter,
            steering_deg: self.steering.resolve()?,
            max_order: self.max_order,
            duration_samples: self.duration_samples,
            ..SamplingConfig::default()
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Sets `key` (dot-separated) in a JSON document to `raw`, parsed as JSON
/// when possible and as a string otherwise. The key must already exist,
/// which for `serde(default)` configs means the fully resolved document.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::invalid(format!("override {key}: '{}' is not an object", parts[..i].join("."))))?;
        cur = obj
            .get_mut(*part)
            .ok_or_else(|| Error::invalid(format!("override {key}: unknown key '{part}'")))?;
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Parses a config with defaults filled in, then applies `key=value` overrides.
pub fn resolve_config<T>(text: Option<&str>, overrides: &[String]) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de> + Default,
{
    let base: T = match text {
        Some(t) => serde_json::from_str(t)?,
        None => T::default(),
    };
    let mut doc = serde_json::to_value(&base)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override '{o}' is not key=value")))?;
        apply_override(&mut doc, k.trim(), v.trim())?;
    }
    Ok(serde_json::from_value(doc)?)
}

/// Mono 16 kHz clips of a corpus directory that pass the loudness gate,
/// sorted by path.
pub fn scan_corpus(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let mut keep = Vec::new();
    for p in paths {
        let (x, rate) = read_wav_any(&p)?;
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        if rate == SAMPLE_RATE && passes_loudness_gate(&x) {
            keep.push(p.to_string_lossy().into_owned());
        }
    }
    if keep.is_empty() {
        return Err(Error::SamplingFailure {
            attempts: 0,
            reason: format!("no usable 16 kHz clips in {}", dir.display()),
        });
    }
    Ok(keep)
}

/// Samples, renders and writes every scene, then the manifest. Scenes are
/// independent given the global seed, so the result does not depend on the
/// number of worker threads.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<(Manifest, PathBuf)> {
    let pool = match &cfg.corpus_dir {
        Some(d) => AudioPool::Corpus(scan_corpus(d)?),
        None => AudioPool::Synthetic,
    };
    let sampling = cfg.sampling()?;
    let pattern = cfg.pattern.build()?;
    let count = cfg.scene_count();
    let schedule = match cfg.role {
        Role::Test => Some(test_doa_schedule(
            &candidate_grid(Role::Test),
            count,
            cfg.num_sources.unwrap_or(2),
            cfg.seed,
        )?),
        _ => None,
    };
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let scenes = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = scene_rng(cfg.seed, k);
            let doas = schedule.as_ref().map(|s| s[k].as_slice());
            let spec = sample_scene(&sampling, &pattern, &pool, k, &mut rng, doas)?;
            let audio = scene_audio(&spec, |p| {
                let (x, _) = read_wav_any(Path::new(p))?;
                Ok(x.into_iter().map(f64::from).collect())
            })?;
            let render = render_scene(&spec, &audio)?;
            let files = write_scene(&out, k, &render)?;
            Ok(SceneRecord {
                spec,
                noise_power: render.noise_power,
                files,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        global_seed: cfg.seed,
        role: cfg.role,
        array: build_array(cfg.array.diameter)?,
        pattern,
        steering_deg: sampling.steering_deg.clone(),
        config: serde_json::to_value(cfg)?,
        scenes,
    };
    let path = out.join("manifest.json");
    manifest.save(&path)?;
    Ok((manifest, path))
}
