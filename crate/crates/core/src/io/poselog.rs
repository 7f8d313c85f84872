//! Pose-log CSV: `sample_id,scene_id,timestamp_us,cam_x,cam_y,yaw_rad,condition`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::{Condition, SampleMeta};

pub const HEADER: [&str; 7] = ["sample_id", "scene_id", "timestamp_us", "cam_x", "cam_y", "yaw_rad", "condition"];

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => parse_err(line, format!("{kind:?}")),
    }
}

/// Reads every record. Errors carry the 1-based line number, the header
/// being line 1.
pub fn read_pose_log(input: impl Read) -> Result<Vec<SampleMeta<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(parse_err(1, format!("header must be `{}`, got `{}`", HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("{}: `{}`: {e}", HEADER[i], field(i))))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(parse_err(line, format!("{} is not finite: `{}`", HEADER[i], field(i))))
                    }
                })
        };
        let timestamp = field(2)
            .parse::<i64>()
            .map_err(|e| parse_err(line, format!("timestamp_us: `{}`: {e}", field(2))))?;
        let condition: Condition = field(6).parse().map_err(|e| parse_err(line, format!("{e}")))?;
        if field(0).is_empty() || field(1).is_empty() {
            return Err(parse_err(line, "sample_id and scene_id must be nonempty"));
        }
        let meta = SampleMeta::new(field(0), field(1), [num(3)?, num(4)?], num(5)?, condition, timestamp)
            .map_err(|e| parse_err(line, e.to_string()))?;
        out.push(meta);
    }
    Ok(out)
}

pub fn write_pose_log(samples: &[SampleMeta<f64>], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for s in samples {
        w.write_record([
            s.sample_id.clone(),
            s.scene_id.clone(),
            s.timestamp_us.to_string(),
            s.cam_pos[0].to_string(),
            s.cam_pos[1].to_string(),
            s.yaw.to_string(),
            s.condition.as_str().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
