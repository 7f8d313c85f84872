//! Structured-text outputs: PairSets as JSON Lines, splits as JSON.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{SplitAssignment, SplitStats};
use crate::error::{Error, Result};
use crate::geometry::PairSet;

pub fn write_pairsets(pairsets: &[PairSet], mut out: impl Write) -> Result<()> {
    for p in pairsets {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// One PairSet object per nonblank line.
pub fn read_pairsets(input: impl BufRead) -> Result<Vec<PairSet>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i as u64 + 1, message: e.to_string() })?);
    }
    Ok(out)
}

/// Split file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    #[serde(flatten)]
    pub assignment: SplitAssignment,
    pub train_stats: SplitStats,
    pub test_stats: SplitStats,
    pub warnings: Vec<String>,
}
