//! Wall-clock checkpoints of long PDE runs.
//!
//! A checkpoint is the density after the last completed output interval
//! (binary block) plus a JSON sidecar with the output count, the config hash,
//! the byte lengths of the CSV files written so far and any driver state.
//! Resuming truncates the CSVs to those lengths and continues the run from the
//! stored density, which reproduces an uninterrupted run bit for bit.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clusterlab::pde::{read_binary, write_binary};
use clusterlab::DensityField;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const STATE_FILE: &str = "checkpoint.mvpd";
pub const SIDECAR_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub completed_outputs: u64,
    pub t: f64,
    pub config_hash: String,
    /// `(file name, byte length)` of every CSV at checkpoint time.
    pub files: Vec<(String, u64)>,
    pub state: serde_json::Value,
}

pub struct Checkpointer {
    dir: PathBuf,
    interval: Option<Duration>,
    last: Instant,
    config_hash: String,
}

impl Checkpointer {
    /// `interval = None` never writes.
    pub fn new(dir: &Path, interval_seconds: Option<f64>, config_hash: String) -> Self {
        Self { dir: dir.to_path_buf(), interval: interval_seconds.map(Duration::from_secs_f64), last: Instant::now(), config_hash }
    }

    pub fn due(&self) -> bool {
        self.interval.is_some_and(|i| self.last.elapsed() >= i)
    }

    /// Writes a checkpoint; the CSV writers must have been flushed.
    pub fn write(&mut self, rho: &DensityField, t: f64, completed_outputs: u64, files: &[&str], state: serde_json::Value) -> Result<()> {
        let tmp = self.dir.join(format!("{STATE_FILE}.tmp"));
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            write_binary(&mut out, rho, 0.0, t)?;
            out.flush()?;
        }
        fs::rename(&tmp, self.dir.join(STATE_FILE))?;
        let files = files
            .iter()
            .map(|name| Ok((name.to_string(), fs::metadata(self.dir.join(name))?.len())))
            .collect::<Result<Vec<_>>>()?;
        let sidecar = Sidecar { completed_outputs, t, config_hash: self.config_hash.clone(), files, state };
        let tmp = self.dir.join(format!("{SIDECAR_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(&sidecar)?)?;
        fs::rename(&tmp, self.dir.join(SIDECAR_FILE))?;
        self.last = Instant::now();
        Ok(())
    }

    /// Loads a checkpoint written for the same configuration and truncates the CSVs.
    ///
    /// Returns `None` when there is no checkpoint or it belongs to another configuration.
    pub fn resume(&self) -> Result<Option<(Sidecar, DensityField)>> {
        let path = self.dir.join(SIDECAR_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
        if sidecar.config_hash != self.config_hash {
            return Ok(None);
        }
        let (rho, _, t) = read_binary(&mut BufReader::new(File::open(self.dir.join(STATE_FILE))?))?;
        if t != sidecar.t {
            return Err(HarnessError::Parse { path, message: "state and sidecar times differ".into() });
        }
        for (name, len) in &sidecar.files {
            let file = OpenOptions::new().write(true).open(self.dir.join(name))?;
            if file.metadata()?.len() < *len {
                return Err(HarnessError::Parse { path: self.dir.join(name), message: "shorter than at checkpoint time".into() });
            }
            file.set_len(*len)?;
        }
        Ok(Some((sidecar, rho)))
    }

    /// Removes the checkpoint once the run has finished.
    pub fn clear(&self) -> Result<()> {
        for name in [STATE_FILE, SIDECAR_FILE] {
            let p = self.dir.join(name);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        Ok(())
    }
}
