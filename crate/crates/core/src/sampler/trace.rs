use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Diagnostics of one sampling step. Loss fields are absent when the mode
/// has no such term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub sigma: f64,
    pub score_norm: f64,
    /// `||G||` of the unscaled likelihood gradient.
    pub guidance_norm: f64,
    pub loss_ref: Option<f64>,
    pub loss_nonref: Option<f64>,
    pub rir_objective: Option<f64>,
}

/// One JSON object per line.
pub fn write_trace<W: Write>(mut w: W, traces: &[StepTrace]) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<StepTrace>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
