//! File formats: the volume container (text header + raw float32 payload),
//! 16-bit PGM slice export and the CSV metrics report.
//!
//! Volume header, one `key: value` per line, UTF-8:
//!
//! ```text
//! magic: GVOFVOL1
//! dims: 128 128 32
//! spacing: 2.67 2.67 2
//! unit: kBq/ml
//! byte_order: little-endian
//! scalar: float32
//! payload: name.raw
//! ```
//!
//! The payload sits next to the header and holds `nx * ny * nz` little-endian
//! IEEE-754 binary32 values, x fastest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::study::{ReportRow, RowKind};
use crate::volume::{Geometry, Volume};

pub const VOLUME_MAGIC: &str = "GVOFVOL1";

/// Payload path for a header path: same stem, `.raw` extension.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn write_volume(vol: &Volume, header: &Path) -> Result<()> {
    let payload = payload_path(header);
    let mut bytes = Vec::with_capacity(vol.data().len() * 4);
    for (i, &v) in vol.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinitePayload {
                path: payload.clone(),
                index: i,
            });
        }
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    let [nx, ny, nz] = vol.dims();
    let [sx, sy, sz] = vol.spacing();
    let name = payload
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = format!(
        "magic: {VOLUME_MAGIC}\ndims: {nx} {ny} {nz}\nspacing: {sx} {sy} {sz}\nunit: kBq/ml\n\
         byte_order: little-endian\nscalar: float32\npayload: {name}\n"
    );
    fs::write(header, text).map_err(|e| Error::io(header, e))?;
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))?;
    Ok(())
}

fn bad_header(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = v
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| bad_header(path, format!("bad {key} value {t:?}"))))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| bad_header(path, format!("{key} needs three values")))
}

pub fn read_volume(header: &Path) -> Result<Volume> {
    let text = fs::read_to_string(header).map_err(|e| Error::io(header, e))?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    let magic = first.strip_prefix("magic:").map(str::trim).unwrap_or(first);
    if magic != VOLUME_MAGIC {
        return Err(Error::BadMagic {
            path: header.to_path_buf(),
            found: magic.to_string(),
        });
    }
    let mut dims = None;
    let mut spacing = None;
    let mut payload_name = None;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| bad_header(header, format!("expected `key: value`, got {line:?}")))?;
        let value = value.trim();
        match key.trim() {
            "dims" => dims = Some(parse_triple::<usize>(header, "dims", value)?),
            "spacing" => spacing = Some(parse_triple::<f64>(header, "spacing", value)?),
            "byte_order" if value != "little-endian" => {
                return Err(bad_header(header, format!("unsupported byte order {value}")))
            }
            "scalar" if value != "float32" => {
                return Err(bad_header(header, format!("unsupported scalar type {value}")))
            }
            "payload" => payload_name = Some(value.to_string()),
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| bad_header(header, "missing dims"))?;
    let spacing = spacing.ok_or_else(|| bad_header(header, "missing spacing"))?;
    let geometry = Geometry::new(dims, spacing).map_err(|e| bad_header(header, e.to_string()))?;
    let payload = match payload_name {
        Some(n) => header.parent().unwrap_or(Path::new("")).join(n),
        None => payload_path(header),
    };
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let expected = geometry.len() as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            path: payload,
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut data = Vec::with_capacity(geometry.len());
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let f = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !f.is_finite() {
            return Err(Error::NonFinitePayload { path: payload, index: i });
        }
        data.push(f as f64);
    }
    Volume::new(geometry, data)
}

/// Binary 16-bit PGM of slice `z`, linearly windowed to the slice min/max.
/// A constant slice maps to all zeros.
pub fn slice_pgm_bytes(vol: &Volume, z: usize) -> Result<Vec<u8>> {
    let [nx, ny, nz] = vol.dims();
    if z >= nz {
        return Err(Error::IndexOutOfRange(format!("slice {z} of {nz}")));
    }
    let slice = vol.slice(z);
    let (lo, hi) = slice.min_max();
    let range = hi - lo;
    let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    for &v in &slice.data {
        let s = if range > 0.0 {
            ((v - lo) / range * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&s.to_be_bytes());
    }
    Ok(out)
}

pub fn export_slice_pgm(vol: &Volume, z: usize, path: &Path) -> Result<()> {
    let bytes = slice_pgm_bytes(vol, z)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub const CSV_HEADER: &str =
    "contrast,duration_s,filter,realization,sphere_mm,snr_db,cnr,fwhm_mm,ac_max,bias_pct,repro_pct,cov_snr";

/// `%.6g`-style formatting: six significant digits, trailing zeros trimmed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        trim_zeros(&s)
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig6).unwrap_or_default()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let realization = match r.kind {
            RowKind::Realization(k) => k.to_string(),
            RowKind::Aggregate => "agg".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.contrast,
            format_sig6(r.duration_s),
            r.filter,
            realization,
            format_sig6(r.sphere_mm),
            opt(r.snr_db),
            opt(r.cnr),
            opt(r.fwhm_mm),
            opt(r.ac_max),
            opt(r.bias_pct),
            opt(r.repro_pct),
            opt(r.cov_snr),
        );
    }
    out
}

pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    fs::write(path, report_csv(rows)).map_err(|e| Error::io(path, e))
}
