use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One line of a loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub wallclock_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    pub fn push(&mut self, step: usize, loss: f64, wallclock_ms: u64) {
        self.records.push(LossRecord { step, loss, wallclock_ms });
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Mean loss of the first `n` records.
    pub fn head_mean(&self, n: usize) -> f64 {
        mean(self.records.iter().take(n).map(|r| r.loss))
    }

    /// Mean loss of the last `n` records.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let skip = self.records.len().saturating_sub(n);
        mean(self.records.iter().skip(skip).map(|r| r.loss))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,wallclock_ms\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.step, r.loss, r.wallclock_ms);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("step,loss,wallclock_ms") {
            return Err(Error::Config("loss log header must be `step,loss,wallclock_ms`".into()));
        }
        let mut log = LossLog::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Config(format!("bad loss log line `{line}`"));
            if f.len() != 3 {
                return Err(bad());
            }
            log.push(
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
            );
        }
        Ok(log)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in it {
        s += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}
