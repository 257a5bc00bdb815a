//! Polar radar sweeps and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * 8-bit grayscale polar images, one row per azimuth. Columns 0..8 hold a
//!   little-endian `u64` timestamp in nanoseconds, columns 8..10 a
//!   little-endian `u16` azimuth in units of 2π/65536 rad, and the remaining
//!   columns the range-intensity profile. Range resolution and offset come
//!   from a sidecar [`RangeMeta`].
//! * A portable CSV: three `key=value` header lines (`range_resolution`,
//!   `range_offset`, `scan_id`) followed by one `t_sec,azimuth_rad,i_0,...`
//!   line per azimuth.
//!
//! Image intensities are normalized to `[0, 1]` at load time. CSV
//! intensities are taken verbatim.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use thiserror::Error;

/// Bytes of per-row header in the polar image format.
pub const HEADER_COLS: usize = 10;

/// Longest sweep accepted, in seconds.
pub const MAX_SWEEP_SECONDS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image decode failed: {0}")]
    Image(#[from] image::ImageError),
    #[error("row {row} has {width} columns, shorter than the {HEADER_COLS}-column header")]
    MalformedRow { row: usize, width: usize },
    #[error("image rows carry {found} range bins but {expected} were expected")]
    WidthMismatch { expected: usize, found: usize },
    #[error("azimuth timestamps decrease at row {row}")]
    NonMonotoneTimestamps { row: usize },
    #[error("scan contains no azimuths or no range bins")]
    EmptyScan,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scan: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScanError + '_ {
    move |source| ScanError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Range geometry of a sweep, supplied by a sidecar for image inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeMeta {
    /// Meters per range bin.
    pub range_resolution: f64,
    /// Meters to the center of bin 0 is `range_offset + 0.5 * range_resolution`.
    pub range_offset: f64,
    pub scan_id: u64,
    /// When set, image rows must carry exactly this many range bins.
    pub expected_bins: Option<usize>,
    /// Used to synthesize azimuth timestamps when a source carries none.
    pub sweep_duration: Option<f64>,
}

impl RangeMeta {
    pub fn new(range_resolution: f64, range_offset: f64) -> Self {
        Self {
            range_resolution,
            range_offset,
            scan_id: 0,
            expected_bins: None,
            sweep_duration: None,
        }
    }

    /// Parses a `key=value` sidecar. Recognized keys: `range_resolution`,
    /// `range_offset`, `expected_bins`, `sweep_duration`.
    pub fn parse(text: &str) -> Result<Self, ScanError> {
        let mut meta = RangeMeta::new(f64::NAN, 0.0);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_kv(line, i + 1)?;
            let num = |v: &str| -> Result<f64, ScanError> {
                v.parse::<f64>().map_err(|e| ScanError::Parse {
                    line: i + 1,
                    message: format!("{key}: {e}"),
                })
            };
            match key {
                "range_resolution" => meta.range_resolution = num(value)?,
                "range_offset" => meta.range_offset = num(value)?,
                "sweep_duration" => meta.sweep_duration = Some(num(value)?),
                "expected_bins" => {
                    meta.expected_bins = Some(value.parse().map_err(|e| ScanError::Parse {
                        line: i + 1,
                        message: format!("{key}: {e}"),
                    })?)
                }
                _ => {
                    return Err(ScanError::Parse {
                        line: i + 1,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        if !meta.range_resolution.is_finite() {
            return Err(ScanError::Parse {
                line: 0,
                message: "missing range_resolution".into(),
            });
        }
        Ok(meta)
    }

    pub fn load(path: &Path) -> Result<Self, ScanError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }
}

fn split_kv(line: &str, line_no: usize) -> Result<(&str, &str), ScanError> {
    line.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| ScanError::Parse {
            line: line_no,
            message: format!("expected key=value, got `{line}`"),
        })
}

/// One 360° sweep: the intensity matrix plus per-azimuth angle and time.
///
/// Immutable once constructed; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarScan {
    intensities: Vec<f32>,
    n_bins: usize,
    azimuth_angles: Vec<f64>,
    azimuth_times: Vec<f64>,
    range_resolution: f64,
    range_offset: f64,
    scan_id: u64,
}

impl PolarScan {
    /// Builds a scan from a row-major `angles.len() × n_bins` matrix.
    pub fn new(
        intensities: Vec<f32>,
        n_bins: usize,
        azimuth_angles: Vec<f64>,
        azimuth_times: Vec<f64>,
        range_resolution: f64,
        range_offset: f64,
        scan_id: u64,
    ) -> Result<Self, ScanError> {
        let n_az = azimuth_angles.len();
        if n_az == 0 || n_bins == 0 {
            return Err(ScanError::EmptyScan);
        }
        if azimuth_times.len() != n_az {
            return Err(ScanError::Invalid(format!(
                "{} azimuth angles but {} timestamps",
                n_az,
                azimuth_times.len()
            )));
        }
        if intensities.len() != n_az * n_bins {
            return Err(ScanError::Invalid(format!(
                "intensity matrix has {} cells, expected {}×{}",
                intensities.len(),
                n_az,
                n_bins
            )));
        }
        if !(range_resolution.is_finite() && range_resolution > 0.0) {
            return Err(ScanError::Invalid(format!(
                "range_resolution must be > 0, got {range_resolution}"
            )));
        }
        if !(range_offset.is_finite() && range_offset >= 0.0) {
            return Err(ScanError::Invalid(format!(
                "range_offset must be >= 0, got {range_offset}"
            )));
        }
        if let Some(bad) = intensities.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(ScanError::Invalid(format!(
                "intensity {} at azimuth {} bin {} is not a finite non-negative value",
                intensities[bad],
                bad / n_bins,
                bad % n_bins
            )));
        }
        for (i, a) in azimuth_angles.iter().enumerate() {
            if !(a.is_finite() && (0.0..TAU).contains(a)) {
                return Err(ScanError::Invalid(format!("azimuth {i} angle {a} outside [0, 2π)")));
            }
            if i > 0 && *a <= azimuth_angles[i - 1] {
                return Err(ScanError::Invalid(format!(
                    "azimuth angles not strictly increasing at row {i}"
                )));
            }
        }
        for (i, t) in azimuth_times.iter().enumerate() {
            if !t.is_finite() {
                return Err(ScanError::Invalid(format!("azimuth {i} timestamp is not finite")));
            }
            if i > 0 && *t < azimuth_times[i - 1] {
                return Err(ScanError::NonMonotoneTimestamps { row: i });
            }
        }
        let span = azimuth_times[n_az - 1] - azimuth_times[0];
        if span >= MAX_SWEEP_SECONDS {
            return Err(ScanError::Invalid(format!(
                "sweep spans {span} s, longer than one rotation"
            )));
        }
        Ok(Self {
            intensities,
            n_bins,
            azimuth_angles,
            azimuth_times,
            range_resolution,
            range_offset,
            scan_id,
        })
    }

    pub fn n_azimuths(&self) -> usize {
        self.azimuth_angles.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, azimuth: usize) -> &[f32] {
        &self.intensities[azimuth * self.n_bins..(azimuth + 1) * self.n_bins]
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn azimuth_angles(&self) -> &[f64] {
        &self.azimuth_angles
    }

    pub fn azimuth_times(&self) -> &[f64] {
        &self.azimuth_times
    }

    pub fn range_resolution(&self) -> f64 {
        self.range_resolution
    }

    pub fn range_offset(&self) -> f64 {
        self.range_offset
    }

    pub fn scan_id(&self) -> u64 {
        self.scan_id
    }

    pub fn with_scan_id(mut self, scan_id: u64) -> Self {
        self.scan_id = scan_id;
        self
    }

    pub fn meta(&self) -> RangeMeta {
        RangeMeta {
            range_resolution: self.range_resolution,
            range_offset: self.range_offset,
            scan_id: self.scan_id,
            expected_bins: Some(self.n_bins),
            sweep_duration: None,
        }
    }

    /// Index of the middle azimuth, whose timestamp anchors the sweep.
    pub fn reference_index(&self) -> usize {
        self.n_azimuths() / 2
    }

    /// Timestamp the sweep is motion-compensated to.
    pub fn reference_time(&self) -> f64 {
        self.azimuth_times[self.reference_index()]
    }

    pub fn max_intensity(&self) -> f32 {
        self.intensities.iter().copied().fold(0.0, f32::max)
    }
}

/// Evenly spaced azimuth timestamps across one sweep.
pub fn synthesize_azimuth_times(start: f64, sweep_duration: f64, n_azimuths: usize) -> Vec<f64> {
    let dt = sweep_duration / n_azimuths as f64;
    (0..n_azimuths).map(|i| start + i as f64 * dt).collect()
}

/// Reads a polar image (PNG or any grayscale format `image` decodes).
pub fn load_polar_image(path: &Path, meta: &RangeMeta) -> Result<PolarScan, ScanError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory(&bytes)?.to_luma8();
    decode_polar_image(&img, meta)
}

/// Decodes an in-memory polar image; see [`load_polar_image`].
pub fn decode_polar_image(img: &GrayImage, meta: &RangeMeta) -> Result<PolarScan, ScanError> {
    let (width, height) = (img.width() as usize, img.height() as usize);
    if height == 0 {
        return Err(ScanError::EmptyScan);
    }
    if width < HEADER_COLS {
        return Err(ScanError::MalformedRow { row: 0, width });
    }
    let n_bins = width - HEADER_COLS;
    if n_bins == 0 {
        return Err(ScanError::EmptyScan);
    }
    if let Some(expected) = meta.expected_bins {
        if expected != n_bins {
            return Err(ScanError::WidthMismatch {
                expected,
                found: n_bins,
            });
        }
    }
    let raw = img.as_raw();
    let mut rows: Vec<(u16, u64, usize)> = (0..height)
        .map(|r| {
            let row = &raw[r * width..(r + 1) * width];
            let ts = u64::from_le_bytes(row[0..8].try_into().unwrap());
            let az = u16::from_le_bytes(row[8..10].try_into().unwrap());
            (az, ts, r)
        })
        .collect();
    // a valid sweep is already sorted; the stable sort only reorders wrapped sweeps
    rows.sort_by_key(|&(az, _, _)| az);

    let mut times: Vec<f64> = rows.iter().map(|&(_, ts, _)| ts as f64 * 1e-9).collect();
    if let Some(duration) = meta.sweep_duration {
        if height > 1 && rows.iter().all(|r| r.1 == rows[0].1) {
            times = synthesize_azimuth_times(times[0], duration, height);
        }
    }
    if let Some(i) = (1..rows.len()).find(|&i| rows[i].1 < rows[i - 1].1) {
        return Err(ScanError::NonMonotoneTimestamps { row: rows[i].2 });
    }
    let angles = rows.iter().map(|&(az, _, _)| az as f64 * TAU / 65536.0).collect();
    let mut intensities = Vec::with_capacity(height * n_bins);
    for &(_, _, r) in &rows {
        let row = &raw[r * width + HEADER_COLS..(r + 1) * width];
        intensities.extend(row.iter().map(|&b| b as f32 / 255.0));
    }
    PolarScan::new(
        intensities,
        n_bins,
        angles,
        times,
        meta.range_resolution,
        meta.range_offset,
        meta.scan_id,
    )
}

/// Encodes a scan in the polar image layout. Intensities are clamped to
/// `[0, 1]` and quantized to 8 bits; timestamps are rounded to nanoseconds.
pub fn encode_polar_image(scan: &PolarScan) -> GrayImage {
    let width = (HEADER_COLS + scan.n_bins()) as u32;
    let mut img = GrayImage::new(width, scan.n_azimuths() as u32);
    for i in 0..scan.n_azimuths() {
        let ts = (scan.azimuth_times()[i] * 1e9).round().max(0.0) as u64;
        let az = ((scan.azimuth_angles()[i] * 65536.0 / TAU).round() as u32 % 65536) as u16;
        let header = ts.to_le_bytes().into_iter().chain(az.to_le_bytes());
        for (c, b) in header.enumerate() {
            img.put_pixel(c as u32, i as u32, Luma([b]));
        }
        for (b, v) in scan.row(i).iter().enumerate() {
            let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel((HEADER_COLS + b) as u32, i as u32, Luma([q]));
        }
    }
    img
}

pub fn write_polar_image(path: &Path, scan: &PolarScan) -> Result<(), ScanError> {
    encode_polar_image(scan).save(path)?;
    Ok(())
}

/// Parses the portable CSV format.
pub fn parse_polar_csv(text: &str) -> Result<PolarScan, ScanError> {
    let mut resolution = None;
    let mut offset = None;
    let mut scan_id = None;
    let mut angles = Vec::new();
    let mut times = Vec::new();
    let mut intensities = Vec::new();
    let mut n_bins = None;
    let mut first_data_line = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.contains('=') {
            if first_data_line.is_some() {
                return Err(ScanError::Parse {
                    line: line_no,
                    message: "header line after data".into(),
                });
            }
            let (key, value) = split_kv(line, line_no)?;
            let bad = |e: &dyn std::fmt::Display| ScanError::Parse {
                line: line_no,
                message: format!("{key}: {e}"),
            };
            match key {
                "range_resolution" => resolution = Some(value.parse::<f64>().map_err(|e| bad(&e))?),
                "range_offset" => offset = Some(value.parse::<f64>().map_err(|e| bad(&e))?),
                "scan_id" => scan_id = Some(value.parse::<u64>().map_err(|e| bad(&e))?),
                _ => {
                    return Err(ScanError::Parse {
                        line: line_no,
                        message: format!("unknown header key `{key}`"),
                    })
                }
            }
            continue;
        }
        first_data_line.get_or_insert(line_no);
        let mut fields = line.split(',');
        let mut next_f64 = |what: &str| -> Result<f64, ScanError> {
            let f = fields.next().ok_or_else(|| ScanError::Parse {
                line: line_no,
                message: format!("missing {what}"),
            })?;
            f.trim().parse::<f64>().map_err(|e| ScanError::Parse {
                line: line_no,
                message: format!("{what}: {e}"),
            })
        };
        times.push(next_f64("t_sec")?);
        angles.push(next_f64("azimuth_rad")?);
        let before = intensities.len();
        for f in fields {
            let v = f.trim().parse::<f32>().map_err(|e| ScanError::Parse {
                line: line_no,
                message: format!("intensity `{f}`: {e}"),
            })?;
            intensities.push(v);
        }
        let row_bins = intensities.len() - before;
        match n_bins {
            None => n_bins = Some(row_bins),
            Some(n) if n != row_bins => {
                return Err(ScanError::Parse {
                    line: line_no,
                    message: format!("row has {row_bins} intensities, previous rows have {n}"),
                })
            }
            _ => {}
        }
    }

    let missing = |key: &str| ScanError::Parse {
        line: first_data_line.unwrap_or(0),
        message: format!("missing `{key}` header"),
    };
    let resolution = resolution.ok_or_else(|| missing("range_resolution"))?;
    let offset = offset.ok_or_else(|| missing("range_offset"))?;
    let scan_id = scan_id.ok_or_else(|| missing("scan_id"))?;
    PolarScan::new(
        intensities,
        n_bins.unwrap_or(0),
        angles,
        times,
        resolution,
        offset,
        scan_id,
    )
}

pub fn load_polar_csv(path: &Path) -> Result<PolarScan, ScanError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_polar_csv(&text)
}

/// Renders a scan in the portable CSV format. Floats use the shortest
/// representation that parses back to the same value, so the round trip is
/// lossless.
pub fn format_polar_csv(scan: &PolarScan) -> String {
    let mut out = String::with_capacity(scan.intensities().len() * 4 + 64);
    let _ = writeln!(out, "range_resolution={}", scan.range_resolution());
    let _ = writeln!(out, "range_offset={}", scan.range_offset());
    let _ = writeln!(out, "scan_id={}", scan.scan_id());
    for i in 0..scan.n_azimuths() {
        let _ = write!(out, "{},{}", scan.azimuth_times()[i], scan.azimuth_angles()[i]);
        for v in scan.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_polar_csv(path: &Path, scan: &PolarScan) -> Result<(), ScanError> {
    fs::write(path, format_polar_csv(scan)).map_err(io_err(path))
}
