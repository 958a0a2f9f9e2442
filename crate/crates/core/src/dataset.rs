//! JSONL sample records and their `.meta.json` sidecar.
//!
//! One JSON object per line. Complex values are `[re, im]` pairs; arrays are
//! flattened row-major over `[M][K][S]` (and `[N]` for channels and beams).
//! Prediction files share the layout, with `rho` holding scores in [0, 1]
//! and `sum_rate` omitted.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::allocation::Allocation;
use crate::channel::ChannelState;
use crate::config::{dbm_to_watts, Dims, NetworkConfig};
use crate::error::{Error, Result};
use crate::rate::{check_feasibility_with, RateModel};
use crate::solve::{project_prediction, RawPrediction};

pub const SCHEMA_VERSION: u32 = 1;

fn is_false(b: &bool) -> bool {
    !*b
}

/// Scenario scalars a record is evaluated under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfgDigest {
    pub num_bs: usize,
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
    pub power_budget_dbm: f64,
    pub min_rate: f64,
    pub bandwidth: f64,
    /// Noise power per subcarrier (W).
    pub noise_power: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub sic_mode: bool,
}

impl CfgDigest {
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        CfgDigest {
            num_bs: cfg.num_bs,
            num_users: cfg.num_users,
            num_subcarriers: cfg.num_subcarriers,
            num_antennas: cfg.num_antennas,
            power_budget_dbm: cfg.power_budget_dbm,
            min_rate: cfg.min_rate,
            bandwidth: cfg.bandwidth,
            noise_power: cfg.noise_power(),
            sic_mode: cfg.sic_mode,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(
            self.num_bs,
            self.num_users,
            self.num_subcarriers,
            self.num_antennas,
        )
    }

    pub fn model(&self) -> RateModel {
        RateModel {
            noise_power: self.noise_power,
            bandwidth: self.bandwidth,
            sic: self.sic_mode,
        }
    }

    pub fn power_budget(&self) -> f64 {
        dbm_to_watts(self.power_budget_dbm)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let d = self.dims();
        if d.num_bs == 0 || d.num_users == 0 || d.num_subcarriers == 0 || d.num_antennas == 0 {
            return Err("cfg_digest has a zero dimension".into());
        }
        if !(self.bandwidth > 0.0 && self.noise_power > 0.0 && self.min_rate >= 0.0)
            || !self.power_budget_dbm.is_finite()
        {
            return Err("cfg_digest scalars out of range".into());
        }
        Ok(())
    }
}

/// One training sample: channels plus baseline labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub cfg_digest: CfgDigest,
    pub h: Vec<[f64; 2]>,
    pub rho: Vec<u8>,
    pub w: Vec<[f64; 2]>,
    pub p: Vec<f64>,
    pub sum_rate: f64,
}

/// One learned output, same layout as [`SampleRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub cfg_digest: CfgDigest,
    pub h: Vec<[f64; 2]>,
    pub rho: Vec<f64>,
    pub w: Vec<[f64; 2]>,
    pub p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_rate: Option<f64>,
}

fn pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn complexes(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|&[re, im]| Complex64::new(re, im)).collect()
}

fn check_len(what: &str, expected: usize, got: usize) -> std::result::Result<(), String> {
    if expected == got {
        Ok(())
    } else {
        Err(format!("{what} has {got} entries, expected {expected}"))
    }
}

fn check_shapes(
    digest: &CfgDigest,
    h: usize,
    rho: usize,
    w: usize,
    p: usize,
) -> std::result::Result<(), String> {
    digest.check()?;
    let d = digest.dims();
    let links = d.num_links();
    check_len("h", links * d.num_antennas, h)?;
    check_len("rho", links, rho)?;
    check_len("w", links * d.num_antennas, w)?;
    check_len("p", links, p)
}

impl SampleRecord {
    pub fn new(seed: u64, cfg: &NetworkConfig, ch: &ChannelState, alloc: &Allocation, sum_rate: f64) -> Self {
        SampleRecord {
            schema_version: SCHEMA_VERSION,
            seed,
            cfg_digest: CfgDigest::from_config(cfg),
            h: pairs(ch.as_slice()),
            rho: alloc.rho.iter().map(|&b| b as u8).collect(),
            w: pairs(&alloc.w),
            p: alloc.p.clone(),
            sum_rate,
        }
    }

    pub fn channels(&self) -> Result<ChannelState> {
        ChannelState::from_raw(self.cfg_digest.dims(), complexes(&self.h))
    }

    pub fn allocation(&self) -> Result<Allocation> {
        Allocation::from_parts(
            self.cfg_digest.dims(),
            self.rho.iter().map(|&r| r == 1).collect(),
            complexes(&self.w),
            self.p.clone(),
        )
    }

    /// Checks every record invariant; returns the reason on failure.
    pub fn verify(&self) -> std::result::Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        check_shapes(&self.cfg_digest, self.h.len(), self.rho.len(), self.w.len(), self.p.len())?;
        let finite = |v: &[[f64; 2]]| v.iter().flatten().all(|x| x.is_finite());
        if !finite(&self.h) || !finite(&self.w) || !self.p.iter().all(|x| x.is_finite()) {
            return Err("non-finite value".into());
        }
        if let Some(i) = self.rho.iter().position(|&r| r > 1) {
            return Err(format!("rho[{i}] = {} is not binary", self.rho[i]));
        }
        let n = self.cfg_digest.num_antennas;
        for (link, &r) in self.rho.iter().enumerate() {
            if r == 0 && self.w[link * n..(link + 1) * n].iter().flatten().any(|&x| x != 0.0) {
                return Err(format!("unscheduled slot {link} carries a nonzero beam"));
            }
        }
        let ch = self.channels().map_err(|e| e.to_string())?;
        let alloc = self.allocation().map_err(|e| e.to_string())?;
        if let Some(v) = alloc.invariant_violation() {
            return Err(v);
        }
        let digest = &self.cfg_digest;
        let budget = digest.power_budget();
        let report = check_feasibility_with(&ch, &alloc, &digest.model(), budget, digest.min_rate)
            .map_err(|e| e.to_string())?;
        if !report.schedule_valid {
            return Err("schedule violates the one-slot-per-user rule".into());
        }
        if let Some(m) = report.budget_slack.iter().position(|&s| s < -1e-9 * budget) {
            return Err(format!("BS {m} exceeds its power budget"));
        }
        let (stored, recomputed) = (self.sum_rate, report.sum_rate);
        let scale = stored.abs().max(recomputed.abs());
        if (stored - recomputed).abs() > 1e-6 * scale {
            return Err(format!(
                "stored sum_rate {stored} differs from recomputed {recomputed}"
            ));
        }
        Ok(())
    }
}

impl PredictionRecord {
    pub fn verify_shape(&self) -> std::result::Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        check_shapes(&self.cfg_digest, self.h.len(), self.rho.len(), self.w.len(), self.p.len())?;
        if !self.h.iter().flatten().all(|x| x.is_finite()) {
            return Err("non-finite channel value".into());
        }
        Ok(())
    }

    pub fn channels(&self) -> Result<ChannelState> {
        ChannelState::from_raw(self.cfg_digest.dims(), complexes(&self.h))
    }

    /// Feasible allocation obtained by projecting the raw outputs.
    pub fn project(&self) -> Result<(ChannelState, Allocation)> {
        let ch = self.channels()?;
        let raw = RawPrediction {
            rho: self.rho.clone(),
            w: complexes(&self.w),
            p: self.p.clone(),
        };
        let alloc = project_prediction(&ch, &raw, self.cfg_digest.power_budget())?;
        Ok((ch, alloc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub count: usize,
    pub train: usize,
    pub val: usize,
}

impl DatasetMeta {
    /// First 90% of records (by index) train, the rest validate.
    pub fn for_count(count: usize) -> Self {
        let train = count * 9 / 10;
        DatasetMeta {
            schema_version: SCHEMA_VERSION,
            count,
            train,
            val: count - train,
        }
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_lines<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset(records: &[SampleRecord], path: &Path) -> Result<usize> {
    write_lines(records, path)?;
    let meta = DatasetMeta::for_count(records.len());
    let mpath = meta_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(records.len())
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<usize> {
    write_lines(records, path)?;
    Ok(records.len())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads and fully validates a dataset file.
pub fn read_dataset(path: &Path) -> Result<Vec<SampleRecord>> {
    let records: Vec<SampleRecord> = read_lines(path)?;
    for (i, r) in records.iter().enumerate() {
        r.verify().map_err(|reason| Error::Invariant {
            path: path.to_path_buf(),
            record: i,
            reason,
        })?;
    }
    let mpath = meta_path(path);
    if mpath.exists() {
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: mpath.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if meta != DatasetMeta::for_count(records.len()) {
            return Err(Error::Invariant {
                path: mpath,
                record: records.len(),
                reason: format!("meta {meta:?} does not match {} records", records.len()),
            });
        }
    }
    Ok(records)
}

/// Reads a prediction file, checking shapes only.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = read_lines(path)?;
    for (i, r) in records.iter().enumerate() {
        r.verify_shape().map_err(|reason| Error::Invariant {
            path: path.to_path_buf(),
            record: i,
            reason,
        })?;
    }
    Ok(records)
}

/// Whether the first record of a JSONL file carries a `sum_rate` label.
pub fn looks_labelled(path: &Path) -> Result<bool> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        return Ok(v.get("sum_rate").is_some_and(|x| !x.is_null()));
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_network;
    use crate::solve::{solve_baseline, SolverSettings};

    fn record(seed: u64) -> SampleRecord {
        let cfg = NetworkConfig {
            num_bs: 2,
            num_users: 3,
            num_subcarriers: 2,
            ..Default::default()
        };
        let ch = draw_network(&cfg, seed).unwrap();
        let res = solve_baseline(&ch, &cfg, &SolverSettings::default()).unwrap();
        SampleRecord::new(seed, &cfg, &ch, &res.alloc, res.report.sum_rate)
    }

    #[test]
    fn key_order_is_fixed() {
        let line = serde_json::to_string(&record(1)).unwrap();
        let keys = [
            "\"schema_version\"",
            "\"seed\"",
            "\"cfg_digest\"",
            "\"num_bs\"",
            "\"noise_power\"",
            "\"h\"",
            "\"rho\"",
            "\"w\"",
            "\"p\"",
            "\"sum_rate\"",
        ];
        let pos: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert!(!line.contains("sic_mode"));
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        assert_eq!(write_dataset(&[], &path).unwrap(), 0);
        assert_eq!(std::fs::read(&path).unwrap(), b"");
        let meta: DatasetMeta =
            serde_json::from_str(&std::fs::read_to_string(meta_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.count, 0);
        assert!(read_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn split_sizes() {
        assert_eq!(DatasetMeta::for_count(1000).train, 900);
        assert_eq!(DatasetMeta::for_count(1000).val, 100);
        assert_eq!(DatasetMeta::for_count(10).train, 9);
        assert_eq!(DatasetMeta::for_count(1).val, 1);
    }

    #[test]
    fn truncated_line_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&[record(1), record(2)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().next().unwrap();
        let second = text.lines().nth(1).unwrap();
        std::fs::write(&path, format!("{first}\n{}\n", &second[..second.len() / 2])).unwrap();
        match read_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn tampered_sum_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut recs = vec![record(1), record(2)];
        recs[1].sum_rate *= 1.001;
        write_dataset(&recs, &path).unwrap();
        match read_dataset(&path).unwrap_err() {
            Error::Invariant { record, reason, .. } => {
                assert_eq!(record, 1);
                assert!(reason.contains("sum_rate"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn other_invariants_are_enforced() {
        let base = record(3);
        let mut r = base.clone();
        r.schema_version = 2;
        assert!(r.verify().unwrap_err().contains("schema_version"));
        let mut r = base.clone();
        r.p.pop();
        assert!(r.verify().unwrap_err().contains("entries"));
        let mut r = base.clone();
        let idle = r.rho.iter().position(|&x| x == 0).unwrap();
        r.p[idle] = 0.1;
        assert!(r.verify().is_err());
        let mut r = base.clone();
        r.rho[idle] = 2;
        assert!(r.verify().unwrap_err().contains("binary"));
        let mut r = base;
        let busy = r.rho.iter().position(|&x| x == 1).unwrap();
        r.p[busy] = 10.0;
        assert!(r.verify().is_err());
    }

    #[test]
    fn schema_mismatch_is_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut r = record(4);
        r.schema_version = 7;
        write_dataset(&[r], &path).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Invariant { record: 0, .. })));
    }

    #[test]
    fn labelled_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let rec = record(5);
        write_dataset(std::slice::from_ref(&rec), &path).unwrap();
        assert!(looks_labelled(&path).unwrap());
        let pred = PredictionRecord {
            schema_version: rec.schema_version,
            seed: rec.seed,
            cfg_digest: rec.cfg_digest.clone(),
            h: rec.h.clone(),
            rho: rec.rho.iter().map(|&x| x as f64 * 0.9).collect(),
            w: rec.w.clone(),
            p: rec.p.clone(),
            sum_rate: None,
        };
        let ppath = dir.path().join("p.jsonl");
        write_predictions(&[pred], &ppath).unwrap();
        assert!(!looks_labelled(&ppath).unwrap());
        let back = read_predictions(&ppath).unwrap();
        let (_, alloc) = back[0].project().unwrap();
        assert_eq!(alloc.rho, rec.allocation().unwrap().rho);
    }
}
