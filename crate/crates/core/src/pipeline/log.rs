//! Per-epoch training records and their CSV form.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub l_ce: f64,
    pub l_sl: f64,
    pub l_cr: f64,
    pub total: f64,
    pub consistent_fraction: f64,
    /// Mean L2 change of the consistent bank rows over the epoch.
    pub drift_consistent: f64,
    pub drift_ambiguous: f64,
    pub reclustered: bool,
    pub pseudo_label_hash: u64,
    pub wall_ms: f64,
}

const HEADER: &str = "epoch,lambda1,lambda2,lr,l_ce,l_sl,l_cr,total,consistent_fraction,drift_consistent,drift_ambiguous,reclustered,pseudo_label_hash,wall_ms";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    /// The loss columns only, which are deterministic given the seeds.
    pub fn loss_columns(&self) -> Vec<[f64; 4]> {
        self.records.iter().map(|r| [r.l_ce, r.l_sl, r.l_cr, r.total]).collect()
    }

    pub fn consistent_fractions(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.consistent_fraction).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.lambda1,
                r.lambda2,
                r.lr,
                r.l_ce,
                r.l_sl,
                r.l_cr,
                r.total,
                r.consistent_fraction,
                r.drift_consistent,
                r.drift_ambiguous,
                u8::from(r.reclustered),
                r.pseudo_label_hash,
                r.wall_ms
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<TrainLog> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainLog::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<TrainLog> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => return Err(err(1, "missing or unexpected train log header".into())),
        }
        let mut log = TrainLog::default();
        for (i, line) in lines {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(err(ln, format!("expected 14 fields, found {}", f.len())));
            }
            let num = |j: usize| f[j].trim().parse::<f64>().map_err(|_| err(ln, format!("bad number `{}`", f[j])));
            let int = |j: usize| f[j].trim().parse::<u64>().map_err(|_| err(ln, format!("bad integer `{}`", f[j])));
            log.push(EpochRecord {
                epoch: int(0)? as usize,
                lambda1: num(1)?,
                lambda2: num(2)?,
                lr: num(3)?,
                l_ce: num(4)?,
                l_sl: num(5)?,
                l_cr: num(6)?,
                total: num(7)?,
                consistent_fraction: num(8)?,
                drift_consistent: num(9)?,
                drift_ambiguous: num(10)?,
                reclustered: int(11)? != 0,
                pseudo_label_hash: int(12)?,
                wall_ms: num(13)?,
            });
        }
        Ok(log)
    }
}

/// FNV-1a over a label vector.
pub fn label_hash<'a>(labels: impl IntoIterator<Item = &'a usize>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &l in labels {
        for b in (l as u64).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
