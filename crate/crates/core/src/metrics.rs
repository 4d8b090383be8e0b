//! Mask-based evaluation: power ratios and power patterns, directivity
//! factors, SDR, the training losses and the segmental stereo level
//! difference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_distance_deg, wrap_angle};
use crate::signal::{Mask, Spectrogram};

/// Regularizer in SDR and the losses.
pub const SDR_EPS: f64 = 1e-7;
/// Loss threshold, `10^(-40/10)`.
pub const TSDR_TAU: f64 = 1e-4;
/// Half-width of the nearest-bin fallback when assigning DOAs to the grid.
pub const GRID_HALF_WIDTH_DEG: f64 = 1.25;

fn db_power(x: f64) -> f64 {
    10.0 * x.log10()
}

fn check_mask(mask: &Mask, spec: &Spectrogram) -> Result<()> {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRatios {
    /// Per frequency; `None` where the stem has no energy.
    pub narrowband: Vec<Option<f64>>,
    pub wideband: f64,
}

pub fn power_ratios(mask: &Mask, direct: &Spectrogram) -> Result<PowerRatios> {
    check_mask(mask, direct)?;
    let mut narrowband = Vec::with_capacity(direct.num_bins());
    let (mut num_all, mut den_all) = (0.0, 0.0);
    for (x_row, m_row) in direct.bins.outer_iter().zip(mask.values.outer_iter()) {
        let (mut num, mut den) = (0.0, 0.0);
        for (x, m) in x_row.iter().zip(m_row.iter()) {
            num += (m * x).norm_sqr();
            den += x.norm_sqr();
        }
        num_all += num;
        den_all += den;
        narrowband.push((den > 0.0).then(|| num / den));
    }
    if den_all == 0.0 {
        return Err(Error::DegenerateStem("direct-path stem is zero in every bin".into()));
    }
    Ok(PowerRatios {
        narrowband,
        wideband: num_all / den_all,
    })
}

/// Ratios of one (sample, source) pair together with the source DOA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternObservation {
    pub azimuth_deg: f64,
    pub ratios: PowerRatios,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPattern {
    pub grid_deg: Vec<f64>,
    /// `narrowband_db[p][f]`.
    pub narrowband_db: Vec<Vec<Option<f64>>>,
    pub narrowband_std_db: Vec<Vec<Option<f64>>>,
    /// `None` marks a direction with no observations.
    pub wideband_db: Vec<Option<f64>>,
    /// Std of the per-observation wideband ratios, in dB.
    pub std_db: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Observations farther than the fallback half-width from every grid point.
    pub unbinned: usize,
}

impl PowerPattern {
    pub fn missing(&self) -> Vec<f64> {
        self.grid_deg
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c == 0)
            .map(|(&g, _)| g)
            .collect()
    }
}

/// Index of the grid point for `azimuth_deg`: exact match first, then the
/// nearest point within [`GRID_HALF_WIDTH_DEG`].
pub fn grid_index(grid_deg: &[f64], azimuth_deg: f64) -> Option<usize> {
    let az = wrap_angle(azimuth_deg.to_radians()).to_degrees();
    if let Some(i) = grid_deg.iter().position(|&g| angular_distance_deg(g, az) < 1e-9) {
        return Some(i);
    }
    let (i, d) = grid_deg
        .iter()
        .enumerate()
        .map(|(i, &g)| (i, angular_distance_deg(g, az)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    (d <= GRID_HALF_WIDTH_DEG).then_some(i)
}

fn mean_std_db(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let dbs: Vec<f64> = values.iter().map(|&v| db_power(v)).collect();
    let mdb = dbs.iter().sum::<f64>() / n;
    let var = dbs.iter().map(|d| (d - mdb).powi(2)).sum::<f64>() / n;
    (db_power(mean), var.sqrt())
}

/// Averages ratios over the observations falling on each grid direction.
pub fn estimate_power_pattern(observations: &[PatternObservation], grid_deg: &[f64]) -> Result<PowerPattern> {
    if grid_deg.is_empty() {
        return Err(Error::invalid("empty direction grid"));
    }
    let num_bins = observations.first().map_or(0, |o| o.ratios.narrowband.len());
    if observations.iter().any(|o| o.ratios.narrowband.len() != num_bins) {
        return Err(Error::invalid("observations disagree on the number of frequency bins"));
    }
    let p = grid_deg.len();
    let mut members: Vec<Vec<&PowerRatios>> = vec![Vec::new(); p];
    let mut unbinned = 0;
    for o in observations {
        match grid_index(grid_deg, o.azimuth_deg) {
            Some(i) => members[i].push(&o.ratios),
            None => unbinned += 1,
        }
    }
    let mut pattern = PowerPattern {
        grid_deg: grid_deg.to_vec(),
        narrowband_db: vec![vec![None; num_bins]; p],
        narrowband_std_db: vec![vec![None; num_bins]; p],
        wideband_db: vec![None; p],
        std_db: vec![None; p],
        counts: members.iter().map(Vec::len).collect(),
        unbinned,
    };
    for (i, set) in members.iter().enumerate() {
        if set.is_empty() {
            continue;
        }
        let wide: Vec<f64> = set.iter().map(|r| r.wideband).collect();
        let (m, s) = mean_std_db(&wide);
        pattern.wideband_db[i] = Some(m);
        pattern.std_db[i] = Some(s);
        for f in 0..num_bins {
            let vals: Vec<f64> = set.iter().filter_map(|r| r.narrowband[f]).collect();
            if !vals.is_empty() {
                let (m, s) = mean_std_db(&vals);
                pattern.narrowband_db[i][f] = Some(m);
                pattern.narrowband_std_db[i][f] = Some(s);
            }
        }
    }
    Ok(pattern)
}

/// Running sums for the directivity-factor estimators. Merging is
/// associative, so partial sums can be reduced in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct DfAccumulator {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl DfAccumulator {
    pub fn new(num_bins: usize) -> Self {
        DfAccumulator {
            input: vec![0.0; num_bins],
            output: vec![0.0; num_bins],
        }
    }

    /// Adds one sample: reverberant stem at the input, masked stem at the output.
    pub fn add_masked(&mut self, mask: &Mask, reverb: &Spectrogram) -> Result<()> {
        check_mask(mask, reverb)?;
        self.check_bins(reverb.num_bins())?;
        for (f, (y_row, m_row)) in reverb.bins.outer_iter().zip(mask.values.outer_iter()).enumerate() {
            for (y, m) in y_row.iter().zip(m_row.iter()) {
                self.input[f] += y.norm_sqr();
                self.output[f] += (m * y).norm_sqr();
            }
        }
        Ok(())
    }

    /// Adds one sample with a target signal in place of the masked stem.
    pub fn add_target(&mut self, target: &Spectrogram, reverb: &Spectrogram) -> Result<()> {
        if target.shape() != reverb.shape() {
            let (f, t) = reverb.shape();
            return Err(Error::ShapeMismatch {
                expected: vec![f, t],
                found: vec![target.num_bins(), target.num_frames()],
            });
        }
        self.check_bins(reverb.num_bins())?;
        for (f, (y_row, z_row)) in reverb.bins.outer_iter().zip(target.bins.outer_iter()).enumerate() {
            for (y, z) in y_row.iter().zip(z_row.iter()) {
                self.input[f] += y.norm_sqr();
                self.output[f] += z.norm_sqr();
            }
        }
        Ok(())
    }

    fn check_bins(&self, n: usize) -> Result<()> {
        if n != self.input.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.input.len()],
                found: vec![n],
            });
        }
        Ok(())
    }

    pub fn merge(mut self, other: &DfAccumulator) -> Result<Self> {
        self.check_bins(other.input.len())?;
        for f in 0..self.input.len() {
            self.input[f] += other.input[f];
            self.output[f] += other.output[f];
        }
        Ok(self)
    }

    /// DF per frequency in dB. A zero output with nonzero input gives
    /// `+inf`; a bin without reverberant input gives NaN.
    pub fn finish(&self) -> Result<Vec<f64>> {
        if self.input.iter().all(|&x| x == 0.0) {
            return Err(Error::DegenerateStem("reverberant stems carry no energy".into()));
        }
        Ok(self
            .input
            .iter()
            .zip(&self.output)
            .map(|(&i, &o)| match (i > 0.0, o > 0.0) {
                (true, true) => db_power(i / o),
                (true, false) => f64::INFINITY,
                (false, _) => f64::NAN,
            })
            .collect())
    }
}

/// Directivity factor of a mask-based filter from reverberant stems.
pub fn estimate_df(masks: &[Mask], reverbs: &[Spectrogram]) -> Result<Vec<f64>> {
    if masks.len() != reverbs.len() || masks.is_empty() {
        return Err(Error::invalid(format!(
            "{} masks for {} reverberant stems",
            masks.len(),
            reverbs.len()
        )));
    }
    let mut acc = DfAccumulator::new(reverbs[0].num_bins());
    for (m, r) in masks.iter().zip(reverbs) {
        acc.add_masked(m, r)?;
    }
    acc.finish()
}

/// Directivity factor of the target signals themselves.
pub fn estimate_df_target(targets: &[Spectrogram], reverbs: &[Spectrogram]) -> Result<Vec<f64>> {
    if targets.len() != reverbs.len() || targets.is_empty() {
        return Err(Error::invalid(format!(
            "{} targets for {} reverberant stems",
            targets.len(),
            reverbs.len()
        )));
    }
    let mut acc = DfAccumulator::new(reverbs[0].num_bins());
    for (z, r) in targets.iter().zip(reverbs) {
        acc.add_target(z, r)?;
    }
    acc.finish()
}

fn check_pair(z: &[f64], zhat: &[f64]) -> Result<()> {
    if z.len() != zhat.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![z.len()],
            found: vec![zhat.len()],
        });
    }
    Ok(())
}

pub fn sdr(z: &[f64], zhat: &[f64]) -> Result<f64> {
    check_pair(z, zhat)?;
    if z.is_empty() {
        return Err(Error::invalid("SDR of an empty signal"));
    }
    let sig: f64 = z.iter().map(|x| x * x).sum();
    let err: f64 = z.iter().zip(zhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(db_power(sig / (err + SDR_EPS)))
}

/// Mean of per-sample SDRs.
pub fn aggregate_sdr<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for (z, zhat) in pairs {
        total += sdr(z, zhat)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no SDR pairs"));
    }
    Ok(total / n as f64)
}

fn check_batch(z: &[Vec<f64>], zhat: &[Vec<f64>]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if z.len() != zhat.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![z.len()],
            found: vec![zhat.len()],
        });
    }
    Ok(())
}

/// Batch sums behind both losses. Sums are order-independent up to
/// rounding, and [`LossSums::merge`] combines partial batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSums {
    pub err_sq: f64,
    pub sig_sq: f64,
    pub err_abs: f64,
    pub sig_abs: f64,
}

impl LossSums {
    pub fn add(&mut self, z: &[f64], zhat: &[f64]) -> Result<()> {
        check_pair(z, zhat)?;
        for (x, y) in z.iter().zip(zhat) {
            let e = x - y;
            self.err_sq += e * e;
            self.sig_sq += x * x;
            self.err_abs += e.abs();
            self.sig_abs += x.abs();
        }
        Ok(())
    }

    pub fn merge(&self, other: &LossSums) -> LossSums {
        LossSums {
            err_sq: self.err_sq + other.err_sq,
            sig_sq: self.sig_sq + other.sig_sq,
            err_abs: self.err_abs + other.err_abs,
            sig_abs: self.sig_abs + other.sig_abs,
        }
    }

    pub fn tsdr(&self) -> f64 {
        db_power(self.err_sq / (self.sig_sq + SDR_EPS) + TSDR_TAU)
    }

    pub fn l1(&self) -> f64 {
        self.err_abs / (self.sig_abs + SDR_EPS)
    }
}

fn batch_sums(z: &[Vec<f64>], zhat: &[Vec<f64>]) -> Result<LossSums> {
    check_batch(z, zhat)?;
    let mut s = LossSums::default();
    for (a, b) in z.iter().zip(zhat) {
        s.add(a, b)?;
    }
    Ok(s)
}

/// Thresholded, batch-aggregated SDR loss.
pub fn loss_tsdr(z: &[Vec<f64>], zhat: &[Vec<f64>]) -> Result<f64> {
    Ok(batch_sums(z, zhat)?.tsdr())
}

/// Batch-aggregated normalized L1 loss.
pub fn loss_l1(z: &[Vec<f64>], zhat: &[Vec<f64>]) -> Result<f64> {
    Ok(batch_sums(z, zhat)?.l1())
}

/// Per-segment level difference `20 log10(rms_left / rms_right)`. Segments
/// where either channel is silent are `None`.
pub fn stereo_level_difference(
    left: &[f64],
    right: &[f64],
    sample_rate: u32,
    seg_len_s: f64,
    overlap: f64,
) -> Result<Vec<Option<f64>>> {
    check_pair(left, right)?;
    if !(seg_len_s > 0.0) || !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("segment {seg_len_s} s with overlap {overlap}")));
    }
    let seg = (seg_len_s * sample_rate as f64).round() as usize;
    let hop = ((seg as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    if seg == 0 || left.len() < seg {
        return Err(Error::invalid(format!(
            "signal of {} samples shorter than one segment",
            left.len()
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + seg <= left.len() {
        let l: f64 = left[start..start + seg].iter().map(|x| x * x).sum();
        let r: f64 = right[start..start + seg].iter().map(|x| x * x).sum();
        out.push((l > 0.0 && r > 0.0).then(|| db_power(l / r)));
        start += hop;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrSummary {
    pub aggregate_db: f64,
    pub per_sample_db: Vec<f64>,
}

impl SdrSummary {
    pub fn from_samples(per_sample_db: Vec<f64>) -> Result<Self> {
        if per_sample_db.is_empty() {
            return Err(Error::invalid("no SDR samples"));
        }
        let aggregate_db = per_sample_db.iter().sum::<f64>() / per_sample_db.len() as f64;
        Ok(SdrSummary {
            aggregate_db,
            per_sample_db,
        })
    }
}

/// Non-finite dB values become `None` so the report stays valid JSON.
pub fn finite_or_none(values: &[f64]) -> Vec<Option<f64>> {
    values.iter().map(|v| v.is_finite().then_some(*v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub freqs_hz: Vec<f64>,
    pub pattern: PowerPattern,
    #[serde(default)]
    pub df_db: Option<Vec<Option<f64>>>,
    /// Bins whose DF is unbounded (masked output exactly zero).
    #[serde(default)]
    pub df_infinite_bins: Vec<usize>,
    #[serde(default)]
    pub df_target_db: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub sdr: Option<SdrSummary>,
    #[serde(default)]
    pub loss_tsdr: Option<f64>,
    #[serde(default)]
    pub loss_l1: Option<f64>,
    /// Resolved configuration that produced the report.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(label: impl Into<String>, freqs_hz: Vec<f64>, pattern: PowerPattern) -> Self {
        EvalReport {
            label: label.into(),
            freqs_hz,
            pattern,
            df_db: None,
            df_infinite_bins: Vec::new(),
            df_target_db: None,
            sdr: None,
            loss_tsdr: None,
            loss_l1: None,
            config: serde_json::Value::Null,
        }
    }

    pub fn set_df(&mut self, df: &[f64]) {
        self.df_infinite_bins = df
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == f64::INFINITY)
            .map(|(i, _)| i)
            .collect();
        self.df_db = Some(finite_or_none(df));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json`, `pattern_polar.csv`, `pattern_heatmap.csv` and
    /// `df.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;

        let p = &self.pattern;
        write_csv(
            &dir.join("pattern_polar.csv"),
            &["theta_deg", "power_db", "std_db", "count"],
            |w| {
                for i in 0..p.grid_deg.len() {
                    w.write_record([
                        p.grid_deg[i].to_string(),
                        opt(p.wideband_db[i]),
                        opt(p.std_db[i]),
                        p.counts[i].to_string(),
                    ])?;
                }
                Ok(())
            },
        )?;
        write_csv(
            &dir.join("pattern_heatmap.csv"),
            &["theta_deg", "freq_hz", "power_db"],
            |w| {
                for i in 0..p.grid_deg.len() {
                    for (f, v) in p.narrowband_db[i].iter().enumerate() {
                        let hz = self.freqs_hz.get(f).copied().unwrap_or(f64::NAN);
                        w.write_record([p.grid_deg[i].to_string(), hz.to_string(), opt(*v)])?;
                    }
                }
                Ok(())
            },
        )?;
        if self.df_db.is_some() || self.df_target_db.is_some() {
            write_csv(&dir.join("df.csv"), &["freq_hz", "df_db", "df_target_db"], |w| {
                for (f, hz) in self.freqs_hz.iter().enumerate() {
                    let df = self.df_db.as_ref().and_then(|v| v[f]);
                    let dft = self.df_target_db.as_ref().and_then(|v| v[f]);
                    w.write_record([hz.to_string(), opt(df), opt(dft)])?;
                }
                Ok(())
            })?;
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a CSV with a header, mapping every failure to a path-tagged error.
pub fn write_csv<F>(path: &Path, header: &[&str], rows: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<std::fs::File>) -> csv::Result<()>,
{
    let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    rows(&mut w).map_err(to_err)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn spec_from(bins: Array2<Complex64>) -> Spectrogram {
        let t = bins.ncols();
        Spectrogram {
            bins,
            sample_rate: 16_000,
            frame_len: 512,
            hop: 256,
            signal_len: (t - 1) * 256,
        }
    }

    fn noise_spec(f: usize, t: usize, seed: u64) -> Spectrogram {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        spec_from(Array2::from_shape_fn((f, t), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        }))
    }

    #[test]
    fn identity_and_constant_ratios() {
        let x = noise_spec(5, 7, 1);
        let r = power_ratios(&Mask::ones(5, 7), &x).unwrap();
        assert_eq!(r.wideband, 1.0);
        assert!(r.narrowband.iter().all(|v| *v == Some(1.0)));
        let r = power_ratios(&Mask::constant(5, 7, 0.5), &x).unwrap();
        assert_abs_diff_eq!(r.wideband, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn empty_rows_are_absent_and_zero_stem_errors() {
        let mut x = noise_spec(4, 3, 2);
        x.bins.row_mut(2).fill(Complex64::new(0.0, 0.0));
        let r = power_ratios(&Mask::constant(4, 3, 0.3), &x).unwrap();
        assert_eq!(r.narrowband[2], None);
        assert!(r.narrowband[1].is_some());
        let z = spec_from(Array2::zeros((4, 3)));
        assert!(matches!(
            power_ratios(&Mask::ones(4, 3), &z),
            Err(Error::DegenerateStem(_))
        ));
        assert!(power_ratios(&Mask::ones(3, 3), &x).is_err());
    }

    #[test]
    fn pattern_of_identity_masks_is_flat() {
        let grid = [0.0, 90.0, 180.0];
        let obs: Vec<_> = (0..9)
            .map(|i| PatternObservation {
                azimuth_deg: grid[i % 3],
                ratios: power_ratios(&Mask::ones(3, 4), &noise_spec(3, 4, i as u64)).unwrap(),
            })
            .collect();
        let p = estimate_power_pattern(&obs, &grid).unwrap();
        assert_eq!(p.counts, vec![3, 3, 3]);
        for i in 0..3 {
            assert_eq!(p.wideband_db[i], Some(0.0));
            assert_eq!(p.std_db[i], Some(0.0));
        }
        assert!(p.missing().is_empty());
    }

    #[test]
    fn pattern_averages_linear_ratios_and_flags_missing() {
        let mk = |az: f64, w: f64| PatternObservation {
            azimuth_deg: az,
            ratios: PowerRatios {
                narrowband: vec![Some(w)],
                wideband: w,
            },
        };
        let grid = [1.25, 3.75, 6.25];
        let obs = [mk(1.25, 0.1), mk(1.25 + 360.0, 0.3), mk(4.5, 1.0), mk(20.0, 1.0)];
        let p = estimate_power_pattern(&obs, &grid).unwrap();
        assert_eq!(p.counts, vec![2, 1, 0]);
        assert_eq!(p.unbinned, 1);
        assert_abs_diff_eq!(p.wideband_db[0].unwrap(), 10.0 * 0.2f64.log10(), epsilon = 1e-12);
        // std over dB values: -10 and -5.23 dB
        let a = -10.0;
        let b = 10.0 * 0.3f64.log10();
        assert_abs_diff_eq!(p.std_db[0].unwrap(), (a - b).abs() / 2.0, epsilon = 1e-12);
        assert_eq!(p.wideband_db[2], None);
        assert_eq!(p.missing(), vec![6.25]);
    }

    #[test]
    fn grid_index_prefers_exact_then_nearest() {
        let grid = [0.0, 2.5, 5.0];
        assert_eq!(grid_index(&grid, 2.5), Some(1));
        assert_eq!(grid_index(&grid, 359.5), Some(0));
        assert_eq!(grid_index(&grid, 3.7), Some(1));
        assert_eq!(grid_index(&grid, 180.0), None);
    }

    #[test]
    fn df_examples() {
        let r: Vec<_> = (0..3).map(|i| noise_spec(6, 5, 10 + i)).collect();
        let ones: Vec<_> = (0..3).map(|_| Mask::ones(6, 5)).collect();
        assert!(estimate_df(&ones, &r).unwrap().iter().all(|&v| v == 0.0));
        let half: Vec<_> = (0..3).map(|_| Mask::constant(6, 5, 0.5)).collect();
        for v in estimate_df(&half, &r).unwrap() {
            assert_abs_diff_eq!(v, 20.0 * 2f64.log10(), epsilon = 1e-12);
        }
        let zeros: Vec<_> = (0..3).map(|_| Mask::constant(6, 5, 0.0)).collect();
        assert!(estimate_df(&zeros, &r).unwrap().iter().all(|v| *v == f64::INFINITY));
        let silent: Vec<_> = (0..3).map(|_| spec_from(Array2::zeros((6, 5)))).collect();
        assert!(matches!(estimate_df(&ones, &silent), Err(Error::DegenerateStem(_))));
        assert!(estimate_df_target(&r, &r).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn df_is_scale_invariant_and_merge_matches() {
        let r: Vec<_> = (0..4).map(|i| noise_spec(5, 6, 20 + i)).collect();
        let z: Vec<_> = (0..4).map(|i| noise_spec(5, 6, 40 + i)).collect();
        let base = estimate_df_target(&z, &r).unwrap();
        let scale = |s: &Spectrogram| s.with_bins(s.bins.mapv(|c| c * 3.7));
        let rs: Vec<_> = r.iter().map(scale).collect();
        let zs: Vec<_> = z.iter().map(scale).collect();
        for (a, b) in base.iter().zip(estimate_df_target(&zs, &rs).unwrap()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
        let mut a = DfAccumulator::new(5);
        let mut b = DfAccumulator::new(5);
        a.add_target(&z[0], &r[0]).unwrap();
        a.add_target(&z[1], &r[1]).unwrap();
        b.add_target(&z[2], &r[2]).unwrap();
        b.add_target(&z[3], &r[3]).unwrap();
        for (x, y) in a.merge(&b).unwrap().finish().unwrap().iter().zip(&base) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-10);
        }
    }

    #[test]
    fn sdr_examples() {
        let z: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        let e: f64 = z.iter().map(|x| x * x).sum();
        assert_abs_diff_eq!(sdr(&z, &z).unwrap(), 10.0 * (e / SDR_EPS).log10(), epsilon = 1e-9);
        let unit: Vec<f64> = z.iter().map(|x| x / e.sqrt()).collect();
        assert_abs_diff_eq!(sdr(&unit, &vec![0.0; 100]).unwrap(), 0.0, epsilon = 1e-6);
        let off: Vec<f64> = z.iter().map(|x| x * 1.1).collect();
        assert_abs_diff_eq!(sdr(&z, &off).unwrap(), 20.0, epsilon = 1e-6);
        assert!(sdr(&[], &[]).is_err());
        assert!(sdr(&z, &z[..5]).is_err());
        let agg = aggregate_sdr([(&z[..], &off[..]), (&unit[..], &[0.0; 100][..])]).unwrap();
        assert_abs_diff_eq!(agg, 10.0, epsilon = 1e-5);
    }

    #[test]
    fn loss_examples() {
        let z = vec![vec![1.0, -2.0, 0.5], vec![0.3, 0.1, -1.0]];
        let zero = vec![vec![0.0; 3]; 2];
        assert_eq!(loss_tsdr(&z, &z).unwrap(), -40.0);
        assert_abs_diff_eq!(
            loss_tsdr(&z, &zero).unwrap(),
            10.0 * (1.0f64 + 1e-4).log10(),
            epsilon = 1e-6
        );
        assert_eq!(loss_l1(&z, &z).unwrap(), 0.0);
        let l = loss_l1(&z, &zero).unwrap();
        assert!(l <= 1.0 && l > 1.0 - 1e-6);
        let twice: Vec<Vec<f64>> = z.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
        assert_abs_diff_eq!(loss_l1(&z, &twice).unwrap(), 1.0, epsilon = 1e-6);
        // half perfect, half zeroed, equal energies
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert_abs_diff_eq!(
            loss_tsdr(&a, &b).unwrap(),
            10.0 * (0.5f64 + 1e-4).log10(),
            epsilon = 1e-6
        );
        assert!(loss_l1(&[], &[]).is_err());
    }

    #[test]
    fn level_difference_examples() {
        let r: Vec<f64> = (0..48_000).map(|i| (i as f64 * 0.01).sin()).collect();
        let d = stereo_level_difference(&r, &r, 16_000, 1.0, 0.75).unwrap();
        assert_eq!(d.len(), 9);
        assert!(d.iter().all(|v| *v == Some(0.0)));
        let l: Vec<f64> = r.iter().map(|x| 4.0 * x).collect();
        for v in stereo_level_difference(&l, &r, 16_000, 1.0, 0.75).unwrap() {
            assert_abs_diff_eq!(v.unwrap(), 20.0 * 4f64.log10(), epsilon = 1e-9);
        }
        let mut silent = r.clone();
        silent[..16_000].fill(0.0);
        let d = stereo_level_difference(&silent, &r, 16_000, 1.0, 0.75).unwrap();
        assert_eq!(d[0], None);
        assert!(d[4].is_some());
        assert!(stereo_level_difference(&r[..100], &r[..100], 16_000, 1.0, 0.75).is_err());
    }

    #[test]
    fn report_json_round_trip_and_csvs() {
        let obs = [PatternObservation {
            azimuth_deg: 0.0,
            ratios: PowerRatios {
                narrowband: vec![Some(1.0), None],
                wideband: 1.0,
            },
        }];
        let p = estimate_power_pattern(&obs, &[0.0, 180.0]).unwrap();
        let mut rep = EvalReport::new("x", vec![0.0, 31.25], p);
        rep.set_df(&[3.0, f64::INFINITY]);
        rep.sdr = Some(SdrSummary::from_samples(vec![1.0, 3.0]).unwrap());
        let back: EvalReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
        assert_eq!(rep.df_infinite_bins, vec![1]);
        let dir = tempfile::tempdir().unwrap();
        rep.write(dir.path()).unwrap();
        let polar = std::fs::read_to_string(dir.path().join("pattern_polar.csv")).unwrap();
        assert_eq!(polar.lines().count(), 3);
        assert!(dir.path().join("df.csv").exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn losses_are_permutation_invariant(
            seed in any::<u64>(),
            b in 1usize..6,
        ) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<Vec<f64>> = (0..b).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let zh: Vec<Vec<f64>> = (0..b).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let mut idx: Vec<usize> = (0..b).collect();
            idx.shuffle(&mut rng);
            let zp: Vec<_> = idx.iter().map(|&i| z[i].clone()).collect();
            let zhp: Vec<_> = idx.iter().map(|&i| zh[i].clone()).collect();
            prop_assert!((loss_tsdr(&z, &zh).unwrap() - loss_tsdr(&zp, &zhp).unwrap()).abs() < 1e-9);
            prop_assert!((loss_l1(&z, &zh).unwrap() - loss_l1(&zp, &zhp).unwrap()).abs() < 1e-12);
        }
    }
}
