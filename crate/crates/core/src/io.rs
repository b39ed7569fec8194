//! File formats.
//!
//! * **PFM** (`Pf`, single channel): text header `Pf\n<w> <h>\n<scale>\n`
//!   followed by `w*h` 32-bit floats, rows stored bottom-to-top. A negative
//!   scale means little-endian data, a positive one big-endian. Writers emit
//!   little-endian with scale `-1.0`.
//! * **CSV**: first line `width,height`, then one line per image row with
//!   `width` comma-separated values. Values are written in Rust's shortest
//!   round-trip form, so the text is lossless for `f64`.
//! * **Point list**: first line `width height`, then one `x y depth
//!   [confidence]` record per line. Blank lines and lines starting with `#`
//!   are skipped.
//!
//! All readers report malformed input as [`FusionError::Parse`]; none of them
//! panic on arbitrary bytes. The point list header is the only size that is
//! not backed by data in the file, so it is capped at [`MAX_POINT_LIST_PIXELS`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{FusionError, Result};
use crate::grid::{ImageGrid, SparseDepthMap, ValidityMask};

/// Largest image a point list header may declare (8192 x 8192).
pub const MAX_POINT_LIST_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Pfm,
    Csv,
}

impl GridFormat {
    /// Picks the format from the file extension (`.pfm` or `.csv`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("pfm") => Ok(Self::Pfm),
            Some("csv") => Ok(Self::Csv),
            _ => Err(FusionError::Parse {
                location: path.display().to_string(),
                message: "unknown grid format; use a .pfm or .csv extension".into(),
            }),
        }
    }
}

pub fn read_grid(path: &Path) -> Result<ImageGrid> {
    let format = GridFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| FusionError::Io(format!("{}: {e}", path.display())))?;
    let located = |err: FusionError| match err {
        FusionError::Parse { location, message } => FusionError::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    };
    match format {
        GridFormat::Pfm => decode_pfm(&bytes).map_err(located),
        GridFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|_| FusionError::Parse {
                location: path.display().to_string(),
                message: "file is not UTF-8".into(),
            })?;
            parse_csv(text).map_err(located)
        }
    }
}

pub fn write_grid(path: &Path, grid: &ImageGrid) -> Result<()> {
    let bytes = match GridFormat::from_path(path)? {
        GridFormat::Pfm => encode_pfm(grid),
        GridFormat::Csv => format_csv(grid).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| FusionError::Io(format!("{}: {e}", path.display())))
}

/// Reads two grids that must share dimensions.
pub fn read_grid_pair(a: &Path, b: &Path) -> Result<(ImageGrid, ImageGrid)> {
    let ga = read_grid(a)?;
    let gb = read_grid(b)?;
    gb.ensure_shape(ga.shape())?;
    Ok((ga, gb))
}

pub fn encode_pfm(grid: &ImageGrid) -> Vec<u8> {
    let (w, h) = grid.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(grid.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut cursor = 0;
    let mut token = |what: &str| -> Result<&[u8]> {
        while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(pfm_error(start, format!("missing {what}")));
        }
        Ok(&bytes[start..cursor])
    };

    match token("magic")? {
        b"Pf" => {}
        b"PF" => return Err(pfm_error(0, "three-channel PFM is not supported".into())),
        _ => return Err(pfm_error(0, "bad magic, expected `Pf`".into())),
    }
    let width = parse_token::<usize>(token("width")?, "width")?;
    let height = parse_token::<usize>(token("height")?, "height")?;
    let scale = parse_token::<f64>(token("scale")?, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(pfm_error(cursor, format!("invalid scale {scale}")));
    }
    // exactly one whitespace byte separates the header from the data
    if cursor >= bytes.len() {
        return Err(pfm_error(cursor, "missing data".into()));
    }
    let data = &bytes[cursor + 1..];
    let count = width
        .checked_mul(height)
        .filter(|&n| n > 0)
        .ok_or_else(|| pfm_error(0, format!("invalid dimensions {width}x{height}")))?;
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| pfm_error(0, "dimensions overflow".into()))?;
    if data.len() < expected {
        return Err(pfm_error(
            cursor + 1,
            format!("truncated: need {expected} data bytes, found {}", data.len()),
        ));
    }
    let little_endian = scale < 0.0;
    let mut values = vec![0.0; count];
    for (k, chunk) in data[..expected].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row_from_bottom, x) = (k / width, k % width);
        values[(height - 1 - row_from_bottom) * width + x] = f64::from(v);
    }
    ImageGrid::new(width, height, values).map_err(|e| pfm_error(cursor + 1, e.to_string()))
}

fn pfm_error(offset: usize, message: String) -> FusionError {
    FusionError::Parse {
        location: format!("byte {offset}"),
        message,
    }
}

fn parse_token<T: std::str::FromStr>(raw: &[u8], what: &str) -> Result<T> {
    std::str::from_utf8(raw)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| pfm_error(0, format!("invalid {what} `{}`", String::from_utf8_lossy(raw))))
}

pub fn format_csv(grid: &ImageGrid) -> String {
    let (w, h) = grid.shape();
    let mut out = format!("{w},{h}\n");
    for y in 0..h {
        let row: Vec<String> = (0..w).map(|x| format!("{:?}", grid.get(x, y))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<ImageGrid> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| line_error(1, "empty file"))?;
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    let [w, h] = dims.as_slice() else {
        return Err(line_error(1, "header must be `width,height`"));
    };
    let width: usize = w.parse().map_err(|_| line_error(1, "invalid width"))?;
    let height: usize = h.parse().map_err(|_| line_error(1, "invalid height"))?;
    if width == 0 || height == 0 || width.checked_mul(height).is_none() {
        return Err(line_error(1, "invalid dimensions"));
    }

    let mut values = Vec::new();
    let mut rows = 0;
    for (n, line) in lines {
        if rows == height {
            return Err(line_error(n + 1, "more rows than the header declares"));
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| line_error(n + 1, &format!("invalid number `{}`", field.trim())))?;
            values.push(v);
        }
        if values.len() - before != width {
            return Err(line_error(n + 1, &format!("expected {width} values, found {}", values.len() - before)));
        }
        rows += 1;
    }
    if rows != height {
        return Err(line_error(text.lines().count(), &format!("expected {height} rows, found {rows}")));
    }
    ImageGrid::new(width, height, values).map_err(|e| line_error(0, &e.to_string()))
}

fn line_error(line: usize, message: &str) -> FusionError {
    FusionError::Parse {
        location: format!("line {line}"),
        message: message.to_string(),
    }
}

/// One sparse observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointListRecord {
    pub x: usize,
    pub y: usize,
    /// Meters (or the map's arbitrary unit); positive.
    pub depth: f64,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointList {
    pub width: usize,
    pub height: usize,
    pub records: Vec<PointListRecord>,
}

impl PointList {
    /// Builds a sparse map. Duplicate pixels keep the smallest depth (the
    /// nearest surface); missing confidences default to 1.
    pub fn to_sparse_map(&self) -> Result<SparseDepthMap> {
        let mut by_pixel: BTreeMap<usize, PointListRecord> = BTreeMap::new();
        let mut duplicates = 0;
        for r in &self.records {
            if r.x >= self.width || r.y >= self.height {
                return Err(line_error(0, &format!("record ({}, {}) is outside the image", r.x, r.y)));
            }
            let i = r.y * self.width + r.x;
            match by_pixel.get(&i) {
                Some(prev) => {
                    duplicates += 1;
                    if r.depth < prev.depth {
                        by_pixel.insert(i, *r);
                    }
                }
                None => {
                    by_pixel.insert(i, *r);
                }
            }
        }
        if duplicates > 0 {
            log::warn!("{duplicates} duplicate point(s) reduced to the nearest depth");
        }
        let n = self.width * self.height;
        let mut log_depth = vec![0.0; n];
        let mut valid = vec![false; n];
        let mut confidence = vec![0.0; n];
        for (i, r) in by_pixel {
            log_depth[i] = r.depth.ln();
            valid[i] = true;
            confidence[i] = r.confidence.unwrap_or(1.0);
        }
        SparseDepthMap::new(
            ImageGrid::new(self.width, self.height, log_depth)?,
            ValidityMask::new(self.width, self.height, valid)?,
            ImageGrid::new(self.width, self.height, confidence)?,
        )
    }

    /// Lists every valid pixel of a sparse map, with its confidence.
    pub fn from_sparse_map(map: &SparseDepthMap) -> Self {
        let (width, height) = map.shape();
        let records = map
            .mask()
            .indices()
            .map(|i| PointListRecord {
                x: i % width,
                y: i / width,
                depth: map.log_depth().values()[i].exp(),
                confidence: Some(map.confidence().values()[i]),
            })
            .collect();
        Self { width, height, records }
    }
}

pub fn read_points(path: &Path) -> Result<PointList> {
    let text = fs::read_to_string(path).map_err(|e| FusionError::Io(format!("{}: {e}", path.display())))?;
    parse_points(&text).map_err(|e| match e {
        FusionError::Parse { location, message } => FusionError::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_points(path: &Path, points: &PointList) -> Result<()> {
    fs::write(path, format_points(points)).map_err(|e| FusionError::Io(format!("{}: {e}", path.display())))
}

pub fn format_points(points: &PointList) -> String {
    let mut out = format!("{} {}\n", points.width, points.height);
    for r in &points.records {
        match r.confidence {
            Some(c) => out.push_str(&format!("{} {} {:?} {:?}\n", r.x, r.y, r.depth, c)),
            None => out.push_str(&format!("{} {} {:?}\n", r.x, r.y, r.depth)),
        }
    }
    out
}

pub fn parse_points(text: &str) -> Result<PointList> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (n, header) = lines.next().ok_or_else(|| line_error(1, "missing `width height` header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let [w, h] = dims.as_slice() else {
        return Err(line_error(n, "header must be `width height`"));
    };
    let width: usize = w.parse().map_err(|_| line_error(n, "invalid width"))?;
    let height: usize = h.parse().map_err(|_| line_error(n, "invalid height"))?;
    match width.checked_mul(height) {
        Some(count) if count > 0 && count <= MAX_POINT_LIST_PIXELS => {}
        _ => return Err(line_error(n, "invalid dimensions")),
    }

    let mut records = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(line_error(n, "record must be `x y depth [confidence]`"));
        }
        let x: usize = fields[0].parse().map_err(|_| line_error(n, "invalid x"))?;
        let y: usize = fields[1].parse().map_err(|_| line_error(n, "invalid y"))?;
        if x >= width || y >= height {
            return Err(line_error(n, &format!("record ({x}, {y}) is outside the {width}x{height} image")));
        }
        let depth: f64 = fields[2].parse().map_err(|_| line_error(n, "invalid depth"))?;
        if !(depth.is_finite() && depth > 0.0) {
            return Err(line_error(n, &format!("depth {depth} must be positive")));
        }
        let confidence = match fields.get(3) {
            Some(c) => {
                let c: f64 = c.parse().map_err(|_| line_error(n, "invalid confidence"))?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(line_error(n, &format!("confidence {c} is outside [0, 1]")));
                }
                Some(c)
            }
            None => None,
        };
        records.push(PointListRecord { x, y, depth, confidence });
    }
    Ok(PointList { width, height, records })
}
