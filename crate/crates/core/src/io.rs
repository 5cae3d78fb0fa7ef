//! Point files, sequence manifests and prediction files.
//!
//! Point files hold little-endian `f32` quadruplets `(x, y, z, intensity)`,
//! 16 bytes per point; intensity is ignored on read and written as 0.
//!
//! A manifest lists one frame per line as `path x y z w l h theta`, with the
//! path relative to the manifest's directory. Lines starting with `#` are
//! comments; `# category: <name>` and `# tracklet: <id>` set metadata.
//!
//! A predictions file has one line per frame:
//! `frame x y z w l h theta flag`, with `flag` 1 for carried-forward frames.

use crate::error::{Result, TrackError};
use crate::geometry::{ObjectState, Point};
use crate::tracker::Frame;
use diffcore::Real;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const POINT_BYTES: usize = 16;

pub fn decode_points(bytes: &[u8], path: &Path) -> Result<Vec<Point>> {
    if bytes.len() % POINT_BYTES != 0 {
        let whole = bytes.len() / POINT_BYTES * POINT_BYTES;
        return Err(TrackError::Format {
            path: path.to_path_buf(),
            offset: whole as u64,
            detail: format!("truncated point record ({} trailing bytes)", bytes.len() - whole),
        });
    }
    Ok(bytes
        .chunks_exact(POINT_BYTES)
        .map(|rec| {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes")) as Real;
            [f(0), f(1), f(2)]
        })
        .collect())
}

pub fn encode_points(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * POINT_BYTES);
    for p in points {
        for v in [p[0] as f32, p[1] as f32, p[2] as f32, 0.0] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    let bytes = std::fs::read(path).map_err(|e| TrackError::io(path, e))?;
    decode_points(&bytes, path)
}

pub fn write_points(path: &Path, points: &[Point]) -> Result<()> {
    std::fs::write(path, encode_points(points)).map_err(|e| TrackError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub gt: ObjectState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub category: String,
    pub tracklet: String,
    pub entries: Vec<ManifestEntry>,
}

fn parse_state(fields: &[&str]) -> std::result::Result<ObjectState, String> {
    let mut v = [0.0; 7];
    for (slot, f) in v.iter_mut().zip(fields) {
        *slot = f.parse::<Real>().map_err(|_| format!("not a number: {f:?}"))?;
        if !slot.is_finite() {
            return Err(format!("non-finite value {f:?}"));
        }
    }
    let s = ObjectState::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
    if !s.has_positive_size() {
        return Err("box sizes must be positive".into());
    }
    Ok(s)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<SequenceManifest> {
    let base = path.parent().unwrap_or(Path::new(""));
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut m = SequenceManifest {
        category: "unknown".into(),
        tracklet: stem,
        entries: Vec::new(),
    };
    let err = |line: usize, detail: String| TrackError::Manifest {
        path: path.to_path_buf(),
        line,
        detail,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once(':') {
                match key.trim() {
                    "category" => m.category = value.trim().to_string(),
                    "tracklet" => m.tracklet = value.trim().to_string(),
                    _ => {}
                }
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(err(idx + 1, format!("expected 8 fields, found {}", fields.len())));
        }
        let gt = parse_state(&fields[1..]).map_err(|d| err(idx + 1, d))?;
        m.entries.push(ManifestEntry {
            path: base.join(fields[0]),
            gt,
        });
    }
    if m.entries.is_empty() {
        return Err(err(0, "manifest lists no frames".into()));
    }
    Ok(m)
}

pub fn read_manifest(path: &Path) -> Result<SequenceManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| TrackError::io(path, e))?;
    parse_manifest(&text, path)
}

/// Fixed-precision rendering used by every text artifact, so that equal
/// values always produce equal bytes.
pub fn fmt_real(v: Real) -> String {
    format!("{v:.9}")
}

fn state_fields(s: &ObjectState) -> String {
    [s.x, s.y, s.z, s.w, s.l, s.h, s.theta]
        .iter()
        .map(|v| fmt_real(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Manifest text; frame paths are written relative to `base`.
pub fn render_manifest(m: &SequenceManifest, base: &Path) -> String {
    let mut out = format!("# category: {}\n# tracklet: {}\n", m.category, m.tracklet);
    for e in &m.entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        let _ = writeln!(out, "{} {}", rel.display(), state_fields(&e.gt));
    }
    out
}

pub fn load_frames(m: &SequenceManifest) -> Result<Vec<Frame>> {
    m.entries
        .iter()
        .map(|e| {
            Ok(Frame {
                points: read_points(&e.path)?,
                gt: Some(e.gt),
            })
        })
        .collect()
}

pub fn render_predictions(states: &[ObjectState], flags: &[bool]) -> String {
    let mut out = String::new();
    for (t, (s, f)) in states.iter().zip(flags).enumerate() {
        let _ = writeln!(out, "{t} {} {}", state_fields(s), u8::from(*f));
    }
    out
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<(Vec<ObjectState>, Vec<bool>)> {
    let mut states = Vec::new();
    let mut flags = Vec::new();
    let err = |line: usize, detail: String| TrackError::Manifest {
        path: path.to_path_buf(),
        line,
        detail,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(err(idx + 1, format!("expected 9 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0].parse().map_err(|_| err(idx + 1, "bad frame index".into()))?;
        if frame != states.len() {
            return Err(err(idx + 1, format!("expected frame {}, found {frame}", states.len())));
        }
        states.push(parse_state(&fields[1..8]).map_err(|d| err(idx + 1, d))?);
        flags.push(match fields[8] {
            "0" => false,
            "1" => true,
            other => return Err(err(idx + 1, format!("flag must be 0 or 1, got {other:?}"))),
        });
    }
    Ok((states, flags))
}
