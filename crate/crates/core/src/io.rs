//! Persistence: mono WAV, the NDFM tensor format and dataset manifests.
//!
//! NDFM layout, all little-endian:
//!
//! ```text
//! magic  "NDFM"          4 bytes
//! version u16            currently 1
//! dtype   u16            0 = complex64 (interleaved f32 re, im), 1 = float32
//! ndim    u16            >= 1
//! shape   u32 × ndim
//! payload                row-major, product(shape) elements
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::{Complex32, Complex64};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::directivity::DirectivityPattern;
use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::scene::{Role, SceneRender, SceneSpec, SourceStems};
use crate::signal::{mean_power, Mask, NUM_BINS};
use crate::SAMPLE_RATE;

pub const TENSOR_MAGIC: &[u8; 4] = b"NDFM";
pub const TENSOR_VERSION: u16 = 1;
/// Tolerance of the stem-consistency check on the reference channel, dB.
pub const STEM_TOLERANCE_DB: f64 = 0.5;
/// Noise-free scenes: largest accepted residual power relative to the
/// reference power (float32 storage rounding sits far below this).
pub const STEM_RELATIVE_RESIDUAL: f64 = 1e-6;

pub fn write_wav(path: &Path, signal: &[f64]) -> Result<()> {
    let samples: Vec<f32> = signal.iter().map(|&x| x as f32).collect();
    write_wav_f32(path, &samples)
}

pub fn write_wav_f32(path: &Path, samples: &[f32]) -> Result<()> {
    write_wav_channels(path, &[samples.to_vec()])
}

/// Interleaved multi-channel float WAV; all channels must have equal length.
pub fn write_wav_channels(path: &Path, channels: &[Vec<f32>]) -> Result<()> {
    let n = channels.first().map_or(0, Vec::len);
    if channels.is_empty() || channels.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("WAV channels must be non-empty and of equal length"));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::malformed(path, other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for i in 0..n {
        for c in channels {
            w.write_sample(c[i]).map_err(wav_err)?;
        }
    }
    w.finalize().map_err(wav_err)
}

/// Reads a mono WAV at 16 kHz as float32. Integer PCM is scaled to [-1, 1).
pub fn read_wav_f32(path: &Path) -> Result<Vec<f32>> {
    let (samples, rate) = read_wav_any(path)?;
    if rate != SAMPLE_RATE {
        return Err(Error::malformed(
            path,
            format!("sample rate {rate} Hz, expected {SAMPLE_RATE} Hz"),
        ));
    }
    Ok(samples)
}

pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    Ok(read_wav_f32(path)?.into_iter().map(f64::from).collect())
}

/// Mono WAV at any sample rate.
pub fn read_wav_any(path: &Path) -> Result<(Vec<f32>, u32)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader =
        hound::WavReader::new(std::io::BufReader::new(file)).map_err(|e| Error::malformed(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::malformed(
            path,
            format!("{} channels, expected mono", spec.channels),
        ));
    }
    let bad = |e: hound::Error| Error::malformed(path, e.to_string());
    let samples = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(bad)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(bad)?
        }
    };
    Ok((samples, spec.sample_rate))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Complex64(Vec<Complex32>),
    Float32(Vec<f32>),
}

impl TensorData {
    fn dtype(&self) -> u16 {
        match self {
            TensorData::Complex64(_) => 0,
            TensorData::Float32(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::Complex64(v) => v.len(),
            TensorData::Float32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// What a tensor file is expected to hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    /// Any shape.
    Any,
    /// F × T mask with F = 257.
    Mask,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::invalid("tensor needs at least one dimension"));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Complex64 tensor of a mask, or float32 when the mask is real.
    pub fn from_mask(mask: &Mask) -> Self {
        let (f, t) = mask.shape();
        let data = if mask.is_real() {
            TensorData::Float32(mask.values.iter().map(|c| c.re as f32).collect())
        } else {
            TensorData::Complex64(
                mask.values
                    .iter()
                    .map(|c| Complex32::new(c.re as f32, c.im as f32))
                    .collect(),
            )
        };
        Tensor {
            shape: vec![f, t],
            data,
        }
    }

    pub fn from_complex(values: &Array2<Complex64>) -> Self {
        let (a, b) = values.dim();
        Tensor {
            shape: vec![a, b],
            data: TensorData::Complex64(
                values
                    .iter()
                    .map(|c| Complex32::new(c.re as f32, c.im as f32))
                    .collect(),
            ),
        }
    }

    pub fn to_complex(&self) -> Result<Array2<Complex64>> {
        if self.shape.len() != 2 {
            return Err(Error::invalid(format!(
                "expected a 2-D tensor, found {} dims",
                self.shape.len()
            )));
        }
        let values: Vec<Complex64> = match &self.data {
            TensorData::Complex64(v) => v.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect(),
            TensorData::Float32(v) => v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect(),
        };
        Array2::from_shape_vec((self.shape[0], self.shape[1]), values).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn to_mask(&self) -> Result<Mask> {
        check_role(&self.shape, TensorRole::Mask)?;
        Ok(Mask::new(self.to_complex()?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 4 * self.shape.len() + 8 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&self.data.dtype().to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u16).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::Complex64(v) => {
                for c in v {
                    out.extend_from_slice(&c.re.to_le_bytes());
                    out.extend_from_slice(&c.im.to_le_bytes());
                }
            }
            TensorData::Float32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], role: TensorRole) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| format!("truncated at byte {pos}"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != TENSOR_MAGIC {
            return Err("bad magic".into());
        }
        let u16_at = |b: &[u8]| u16::from_le_bytes([b[0], b[1]]);
        let version = u16_at(take(2)?);
        if version != TENSOR_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dtype = u16_at(take(2)?);
        let ndim = u16_at(take(2)?) as usize;
        if ndim == 0 {
            return Err("zero-dimensional tensor".into());
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let b = take(4)?;
            shape.push(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize);
        }
        check_role(&shape, role).map_err(|e| e.to_string())?;
        let n: usize = shape.iter().product();
        let f32_at = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let data = match dtype {
            0 => {
                let raw = take(8 * n)?;
                TensorData::Complex64(
                    raw.chunks_exact(8)
                        .map(|c| Complex32::new(f32_at(&c[..4]), f32_at(&c[4..])))
                        .collect(),
                )
            }
            1 => TensorData::Float32(take(4 * n)?.chunks_exact(4).map(f32_at).collect()),
            d => return Err(format!("unknown dtype code {d}")),
        };
        if pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - pos));
        }
        Ok(Tensor { shape, data })
    }
}

fn check_role(shape: &[usize], role: TensorRole) -> Result<()> {
    if role == TensorRole::Mask && (shape.len() != 2 || shape[0] != NUM_BINS) {
        return Err(Error::ShapeMismatch {
            expected: vec![NUM_BINS, 0],
            found: shape.to_vec(),
        });
    }
    Ok(())
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path, role: TensorRole) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, role).map_err(|r| Error::malformed(path, r))
}

/// File locations of one scene, relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub mics: Vec<String>,
    pub targets: Vec<String>,
    pub direct: Vec<String>,
    pub reverb: Vec<String>,
}

impl SceneFiles {
    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.mics
            .iter()
            .chain(&self.targets)
            .chain(&self.direct)
            .chain(&self.reverb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub spec: SceneSpec,
    pub noise_power: f64,
    pub files: SceneFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub global_seed: u64,
    pub role: Role,
    pub array: ArrayGeometry,
    pub pattern: DirectivityPattern,
    pub steering_deg: Vec<f64>,
    /// Resolved configuration the dataset was built from.
    pub config: serde_json::Value,
    pub scenes: Vec<SceneRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Directory that manifest-relative paths resolve against.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Writes a rendered scene as WAV files under `root` and returns the
/// relative paths.
pub fn write_scene(root: &Path, index: usize, render: &SceneRender) -> Result<SceneFiles> {
    let dir = format!("scenes/scene_{index:05}");
    let put = |name: String, x: &[f64]| -> Result<String> {
        let rel = format!("{dir}/{name}");
        write_wav(&root.join(&rel), x)?;
        Ok(rel)
    };
    Ok(SceneFiles {
        mics: render
            .mic_signals
            .iter()
            .enumerate()
            .map(|(q, x)| put(format!("mic_{q}.wav"), x))
            .collect::<Result<_>>()?,
        targets: render
            .vdm_targets
            .iter()
            .enumerate()
            .map(|(m, x)| put(format!("target_{m:03}.wav"), x))
            .collect::<Result<_>>()?,
        direct: render
            .stems
            .iter()
            .enumerate()
            .map(|(n, s)| put(format!("direct_{n}.wav"), &s.direct))
            .collect::<Result<_>>()?,
        reverb: render
            .stems
            .iter()
            .enumerate()
            .map(|(n, s)| put(format!("reverb_{n}.wav"), &s.reverb))
            .collect::<Result<_>>()?,
    })
}

/// Reads a scene back from its WAV files.
pub fn load_scene(root: &Path, record: &SceneRecord) -> Result<SceneRender> {
    let read = |rel: &String| read_wav(&root.join(rel));
    let f = &record.files;
    let mic_signals = f.mics.iter().map(read).collect::<Result<Vec<_>>>()?;
    let vdm_targets = f.targets.iter().map(read).collect::<Result<Vec<_>>>()?;
    if f.direct.len() != f.reverb.len() {
        return Err(Error::invalid(format!(
            "scene {}: stem lists differ in length",
            record.spec.index
        )));
    }
    let stems = f
        .direct
        .iter()
        .zip(&f.reverb)
        .map(|(d, r)| {
            Ok(SourceStems {
                direct: read(d)?,
                reverb: read(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneRender {
        mic_signals,
        vdm_targets,
        stems,
        noise_power: record.noise_power,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Schema { detail: String },
    MissingPath { scene: usize, path: String },
    Unreadable { scene: usize, path: String, detail: String },
    StemConsistency { scene: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenes: usize,
    /// Scene indices whose stems were spot-checked.
    pub checked: Vec<usize>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    /// Scenes to spot-check; `None` checks every scene.
    pub sample: Option<usize>,
    pub seed: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            sample: Some(16),
            seed: 0,
        }
    }
}

/// Residual check on the reference channel: mic minus the sum of its stems
/// must carry exactly the recorded sensor noise.
fn check_stems(root: &Path, record: &SceneRecord) -> std::result::Result<(), Violation> {
    let scene = record.spec.index;
    let render = load_scene(root, record).map_err(|e| Violation::Unreadable {
        scene,
        path: root.display().to_string(),
        detail: e.to_string(),
    })?;
    let reference = render.reference();
    if render
        .stems
        .iter()
        .any(|s| s.direct.len() != reference.len() || s.reverb.len() != reference.len())
    {
        return Err(Violation::StemConsistency {
            scene,
            detail: "stem length differs from the reference channel".into(),
        });
    }
    let clean = render.clean_reference();
    let residual: Vec<f64> = reference.iter().zip(&clean).map(|(a, b)| a - b).collect();
    let res_power = mean_power(&residual);
    if record.noise_power > 0.0 {
        let err_db = 10.0 * (res_power / record.noise_power).log10();
        if !(err_db.abs() <= STEM_TOLERANCE_DB) {
            return Err(Violation::StemConsistency {
                scene,
                detail: format!("reference residual is {err_db:+.2} dB off the recorded noise power"),
            });
        }
    } else if res_power > STEM_RELATIVE_RESIDUAL * mean_power(reference) {
        return Err(Violation::StemConsistency {
            scene,
            detail: format!("noise-free scene leaves residual power {res_power:.3e}"),
        });
    }
    Ok(())
}

/// Checks a manifest: schema, file existence, and stem consistency on a
/// seeded random subset of scenes. Problems are collected, not fatal.
pub fn validate_manifest(path: &Path, opts: ValidateOptions) -> Result<ValidationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = match serde_json::from_str(&text) {
        Ok(m) => m,
        Err(e) => {
            return Ok(ValidationReport {
                scenes: 0,
                checked: Vec::new(),
                violations: vec![Violation::Schema { detail: e.to_string() }],
            })
        }
    };
    let root = manifest_dir(path);
    let mut violations = Vec::new();
    let mut complete = Vec::new();
    for (i, rec) in manifest.scenes.iter().enumerate() {
        let f = &rec.files;
        let q = rec.spec.array.num_mics();
        if f.mics.len() != q
            || f.targets.len() != rec.spec.steering_deg.len()
            || f.direct.len() != rec.spec.sources.len()
        {
            violations.push(Violation::Schema {
                detail: format!("scene {}: file lists do not match the scene spec", rec.spec.index),
            });
        }
        let mut ok = true;
        for p in f.all() {
            if !root.join(p).is_file() {
                ok = false;
                violations.push(Violation::MissingPath {
                    scene: rec.spec.index,
                    path: p.clone(),
                });
            }
        }
        if ok {
            complete.push(i);
        }
    }
    let picked: Vec<usize> = match opts.sample {
        Some(k) if k < complete.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, complete.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| complete[i]).collect()
        }
        _ => complete,
    };
    for &i in &picked {
        if let Err(v) = check_stems(&root, &manifest.scenes[i]) {
            violations.push(v);
        }
    }
    Ok(ValidationReport {
        scenes: manifest.scenes.len(),
        checked: picked.iter().map(|&i| manifest.scenes[i].spec.index).collect(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn wav_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f32> = (0..64_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        write_wav_f32(&p, &x).unwrap();
        let y = read_wav_f32(&p).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn wav_rejects_wrong_rate_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(1000i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Malformed { .. })));
        let (s, r) = read_wav_any(&p).unwrap();
        assert_eq!(r, 44_100);
        assert!((s[0] - 1000.0 / 32768.0).abs() < 1e-7);

        let e = dir.path().join("empty.wav");
        fs::write(&e, b"").unwrap();
        assert!(matches!(read_wav(&e), Err(Error::Malformed { .. })));
        assert!(matches!(read_wav(&dir.path().join("nope.wav")), Err(Error::Io { .. })));
    }

    #[test]
    fn mask_tensor_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals = Array2::from_shape_fn((257, 249), |_| {
            Complex64::new(rng.gen_range(-2.0f32..2.0) as f64, rng.gen_range(-2.0f32..2.0) as f64)
        });
        let m = Mask::new(vals);
        let t = Tensor::from_mask(&m);
        assert!(matches!(t.data, TensorData::Complex64(_)));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ndfm");
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p, TensorRole::Mask).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_mask().unwrap(), m);
    }

    #[test]
    fn tensor_rejections() {
        let t = Tensor::new(vec![2, 3], TensorData::Float32(vec![0.5; 6])).unwrap();
        let mut b = t.to_bytes();
        assert!(Tensor::from_bytes(&b, TensorRole::Any).is_ok());
        assert!(Tensor::from_bytes(&b, TensorRole::Mask).is_err());
        b[0] = b'X';
        assert!(Tensor::from_bytes(&b, TensorRole::Any).unwrap_err().contains("magic"));
        let mut v = t.to_bytes();
        v[4] = 2;
        assert!(Tensor::from_bytes(&v, TensorRole::Any).is_err());
        let mut z = t.to_bytes();
        z[8] = 0;
        z[9] = 0;
        assert!(Tensor::from_bytes(&z[..10], TensorRole::Any)
            .unwrap_err()
            .contains("zero-dimensional"));
        let short = t.to_bytes();
        assert!(Tensor::from_bytes(&short[..short.len() - 1], TensorRole::Any).is_err());
        assert!(Tensor::new(vec![], TensorData::Float32(vec![])).is_err());
        assert!(Tensor::new(vec![2, 2], TensorData::Float32(vec![0.0; 3])).is_err());
    }

    #[test]
    fn header_layout_is_pinned() {
        let t = Tensor::new(vec![1, 2], TensorData::Complex64(vec![Complex32::new(1.0, -1.0); 2])).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"NDFM");
        assert_eq!(&b[4..10], &[1, 0, 0, 0, 2, 0]);
        assert_eq!(&b[10..18], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[18..22], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 18 + 2 * 8);
    }
}
