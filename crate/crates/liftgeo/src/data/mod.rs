//! Pose-file ingestion, completeness filtering, temporal pairing, and the
//! synthetic articulated-skeleton generator.
//!
//! File formats are plain UTF-8 CSV, one pose per row:
//!
//! ```text
//! 2D poses:      seq_id,frame_idx,j0x,j0y,...,j13x,j13y[,c0,...,c13]
//! 3D skeletons:  seq_id,frame_idx,j0x,j0y,j0z,...,j13x,j13y,j13z
//! ```
//!
//! Joint order follows [`crate::geometry::JointSchema`]. Confidence columns
//! are optional and default to 1.0.

pub mod synth;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::geometry::{Pose2D, Pose3D, NUM_JOINTS};

pub use synth::{synth_generate, SequenceConfig, SkeletonTemplate, SynthSample, SyntheticSkeletonConfig};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line} of {path}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("line {line} of {path}: expected {expected} fields, found {got}")]
    JointCount {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
}

/// One 2D pose observation: raw (unnormalized) joint coordinates plus an
/// optional per-joint detection confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub seq_id: String,
    pub frame_idx: u64,
    pub pose: Pose2D,
    pub confidence: [f64; NUM_JOINTS],
}

/// One ground-truth 3D skeleton in camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3dRecord {
    pub seq_id: String,
    pub frame_idx: u64,
    pub pose: Pose3D,
}

fn pose2d_header(with_confidence: bool) -> String {
    let mut h = String::from("seq_id,frame_idx");
    for i in 0..NUM_JOINTS {
        let _ = write!(h, ",j{i}x,j{i}y");
    }
    if with_confidence {
        for i in 0..NUM_JOINTS {
            let _ = write!(h, ",c{i}");
        }
    }
    h
}

fn pose3d_header() -> String {
    let mut h = String::from("seq_id,frame_idx");
    for i in 0..NUM_JOINTS {
        let _ = write!(h, ",j{i}x,j{i}y,j{i}z");
    }
    h
}

/// Load 2D pose records in file order. Confidences default to 1.0 when the
/// file has no confidence columns.
pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<PoseRecord>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let pstr = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(DataError::Parse {
            path: pstr,
            line: 1,
            message: "empty file (missing header)".into(),
        });
    };
    let with_conf = if header.trim_end() == pose2d_header(false) {
        false
    } else if header.trim_end() == pose2d_header(true) {
        true
    } else {
        return Err(DataError::Parse {
            path: pstr,
            line: 1,
            message: "unrecognized 2D pose header".into(),
        });
    };
    let expected = 2 + 2 * NUM_JOINTS + if with_conf { NUM_JOINTS } else { 0 };
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(DataError::JointCount {
                path: pstr,
                line: lineno,
                expected,
                got: fields.len(),
            });
        }
        let frame_idx = parse_field::<u64>(&pstr, lineno, fields[1], "frame_idx")?;
        let mut flat = [0.0; 2 * NUM_JOINTS];
        for (k, v) in flat.iter_mut().enumerate() {
            *v = parse_field::<f64>(&pstr, lineno, fields[2 + k], "coordinate")?;
        }
        let mut confidence = [1.0; NUM_JOINTS];
        if with_conf {
            for (k, v) in confidence.iter_mut().enumerate() {
                *v = parse_field::<f64>(&pstr, lineno, fields[2 + 2 * NUM_JOINTS + k], "confidence")?;
            }
        }
        records.push(PoseRecord {
            seq_id: fields[0].to_string(),
            frame_idx,
            pose: Pose2D::from_flat(&flat),
            confidence,
        });
    }
    Ok(records)
}

/// Write 2D pose records; the inverse of [`load_poses`]. Floats are printed
/// with Rust's shortest round-trip formatting, so load → save → load is
/// value-identical.
pub fn save_poses(
    path: impl AsRef<Path>,
    records: &[PoseRecord],
    with_confidence: bool,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = pose2d_header(with_confidence);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{}", r.seq_id, r.frame_idx);
        for j in &r.pose.joints {
            let _ = write!(out, ",{},{}", j.x, j.y);
        }
        if with_confidence {
            for c in &r.confidence {
                let _ = write!(out, ",{c}");
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load ground-truth 3D skeletons.
pub fn load_poses3d(path: impl AsRef<Path>) -> Result<Vec<Pose3dRecord>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let pstr = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(DataError::Parse {
            path: pstr,
            line: 1,
            message: "empty file (missing header)".into(),
        });
    };
    if header.trim_end() != pose3d_header() {
        return Err(DataError::Parse {
            path: pstr,
            line: 1,
            message: "unrecognized 3D pose header".into(),
        });
    }
    let expected = 2 + 3 * NUM_JOINTS;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(DataError::JointCount {
                path: pstr,
                line: lineno,
                expected,
                got: fields.len(),
            });
        }
        let frame_idx = parse_field::<u64>(&pstr, lineno, fields[1], "frame_idx")?;
        let mut joints = [nalgebra::Vector3::zeros(); NUM_JOINTS];
        for (k, j) in joints.iter_mut().enumerate() {
            let x = parse_field::<f64>(&pstr, lineno, fields[2 + 3 * k], "coordinate")?;
            let y = parse_field::<f64>(&pstr, lineno, fields[3 + 3 * k], "coordinate")?;
            let z = parse_field::<f64>(&pstr, lineno, fields[4 + 3 * k], "coordinate")?;
            *j = nalgebra::Vector3::new(x, y, z);
        }
        records.push(Pose3dRecord {
            seq_id: fields[0].to_string(),
            frame_idx,
            pose: Pose3D::new(joints),
        });
    }
    Ok(records)
}

/// Write ground-truth 3D skeletons; the inverse of [`load_poses3d`].
pub fn save_poses3d(path: impl AsRef<Path>, records: &[Pose3dRecord]) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut out = pose3d_header();
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{}", r.seq_id, r.frame_idx);
        for j in &r.pose.joints {
            let _ = write!(out, ",{},{},{}", j.x, j.y, j.z);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_field<T: std::str::FromStr>(
    path: &str,
    line: usize,
    field: &str,
    what: &str,
) -> Result<T, DataError> {
    field.trim().parse::<T>().map_err(|_| DataError::Parse {
        path: path.to_string(),
        line,
        message: format!("bad {what} value {field:?}"),
    })
}

/// Keep only records whose joints all have confidence at or above the
/// threshold.
pub fn filter_complete(records: &[PoseRecord], confidence_threshold: f64) -> Vec<PoseRecord> {
    records
        .iter()
        .filter(|r| r.confidence.iter().all(|&c| c >= confidence_threshold))
        .cloned()
        .collect()
}

/// Windows of `m + 1` records with consecutive frame indices inside one
/// sequence, as indices into `records`. Sequences shorter than `m + 1` frames
/// (or with gaps) contribute nothing across the gap; sequence boundaries are
/// never crossed.
pub fn make_temporal_pairs(records: &[PoseRecord], m: usize) -> Vec<Vec<usize>> {
    assert!(m >= 1, "temporal pairing needs m >= 1");
    // Group by seq_id in order of first appearance, then sort by frame.
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<usize>> = std::collections::HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let entry = groups.entry(r.seq_id.as_str()).or_insert_with(|| {
            order.push(r.seq_id.as_str());
            Vec::new()
        });
        entry.push(i);
    }
    let mut windows = Vec::new();
    for seq in order {
        let mut idxs = groups.remove(seq).unwrap();
        idxs.sort_by_key(|&i| records[i].frame_idx);
        if idxs.len() <= m {
            continue;
        }
        for w in idxs.windows(m + 1) {
            let consecutive = w
                .windows(2)
                .all(|p| records[p[1]].frame_idx == records[p[0]].frame_idx + 1);
            if consecutive {
                windows.push(w.to_vec());
            }
        }
    }
    windows
}
