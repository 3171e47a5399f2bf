//! Depth, point-map, prompt and point-cloud files.
//!
//! Depth maps are read and written in three encodings, picked by file
//! extension:
//!
//! * `.png`: 16-bit grayscale, millimeters, 0 marks an invalid pixel.
//! * `.pfm`: 32-bit float, meters, non-finite marks an invalid pixel.
//!   Rows are stored bottom to top as usual for PFM.
//! * `.f32`: raw little-endian 32-bit float meters, with a JSON sidecar
//!   (`<name>.json`, holding `width`, `height` and `mask`) and a mask file
//!   of one byte per pixel, nonzero meaning valid.
//!
//! Point maps are 3-channel PFM files holding camera-frame X, Y, Z.
//! Prompts are text, one `x y d` record per line. Point clouds are text,
//! one `x y z` record per line. Blank lines and lines starting with `#`
//! are ignored in both.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use metricforge::geometry::{PointCloud, PointMap};
use metricforge::prompting::{PromptPoint, SparsePrompt};
use metricforge::DepthGrid;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Png,
    Pfm,
    Raw,
}

impl DepthFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("png") => Ok(Self::Png),
            Some("pfm") => Ok(Self::Pfm),
            Some("f32") => Ok(Self::Raw),
            _ => Err(CliError::format(
                path,
                "unknown depth format (expected .png, .pfm or .f32)",
            )),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Pfm => "pfm",
            Self::Raw => "f32",
        }
    }
}

pub fn read_depth(path: &Path) -> Result<DepthGrid> {
    match DepthFormat::from_path(path)? {
        DepthFormat::Png => read_png_depth(path),
        DepthFormat::Pfm => {
            let pfm = read_pfm(path)?;
            if pfm.channels != 1 {
                return Err(CliError::format(path, "expected a single-channel PFM depth map"));
            }
            depth_from_f32(path, pfm.width, pfm.height, &pfm.data, None)
        }
        DepthFormat::Raw => read_raw_depth(path),
    }
}

pub fn write_depth(path: &Path, grid: &DepthGrid) -> Result<()> {
    match DepthFormat::from_path(path)? {
        DepthFormat::Png => write_png_depth(path, grid),
        DepthFormat::Pfm => {
            let data: Vec<f32> = masked_f32(grid);
            write_pfm(path, grid.width(), grid.height(), 1, &data)
        }
        DepthFormat::Raw => write_raw_depth(path, grid),
    }
}

fn masked_f32(grid: &DepthGrid) -> Vec<f32> {
    grid.depth()
        .iter()
        .zip(grid.mask())
        .map(|(&d, &m)| if m { d as f32 } else { f32::NAN })
        .collect()
}

fn depth_from_f32(path: &Path, w: usize, h: usize, data: &[f32], mask: Option<&[u8]>) -> Result<DepthGrid> {
    let mut depth = Vec::with_capacity(data.len());
    let mut valid = Vec::with_capacity(data.len());
    for (i, &v) in data.iter().enumerate() {
        let keep = v.is_finite() && v > 0.0 && mask.is_none_or(|m| m[i] != 0);
        depth.push(if keep { f64::from(v) } else { 0.0 });
        valid.push(keep);
    }
    DepthGrid::new(w, h, depth, valid).map_err(|e| CliError::format(path, e))
}

const MM_PER_M: f64 = 1000.0;

fn read_png_depth(path: &Path) -> Result<DepthGrid> {
    let img = image::open(path).map_err(|e| CliError::read(path, e))?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(CliError::format(path, "expected a 16-bit grayscale PNG"));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let mask: Vec<bool> = raw.iter().map(|&v| v != 0).collect();
    let depth = raw.iter().map(|&v| f64::from(v) / MM_PER_M).collect();
    DepthGrid::new(w, h, depth, mask).map_err(|e| CliError::format(path, e))
}

fn write_png_depth(path: &Path, grid: &DepthGrid) -> Result<()> {
    let mut raw = Vec::with_capacity(grid.depth().len());
    for (&d, &m) in grid.depth().iter().zip(grid.mask()) {
        if !m {
            raw.push(0u16);
            continue;
        }
        let mm = (d * MM_PER_M).round();
        if !(1.0..=f64::from(u16::MAX)).contains(&mm) {
            return Err(CliError::write(
                path,
                format!("depth {d} m does not fit a 16-bit millimeter PNG"),
            ));
        }
        raw.push(mm as u16);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, raw).expect("buffer sized to image");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::write(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, top row first, channels interleaved.
    pub data: Vec<f32>,
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    let bad = |why: &str| CliError::format(path, format!("malformed PFM: {why}"));

    // Header: three whitespace-separated tokens, then one whitespace byte.
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("magic must be Pf or PF")),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be finite and nonzero"));
    }
    let little = scale < 0.0;

    let count = width * height * channels;
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != count * 4 {
        return Err(bad(&format!("expected {} data bytes, found {}", count * 4, body.len())));
    }
    let row = width * channels;
    let mut data = vec![0f32; count];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        // File rows run bottom to top.
        let (file_row, col) = (k / row, k % row);
        data[(height - 1 - file_row) * row + col] = v;
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}

/// Little-endian PFM; `data` is row-major top row first.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    let magic = match channels {
        1 => "Pf",
        3 => "PF",
        _ => return Err(CliError::write(path, "PFM holds 1 or 3 channels")),
    };
    assert_eq!(data.len(), width * height * channels, "PFM buffer size");
    let mut out = Vec::with_capacity(32 + data.len() * 4);
    out.extend_from_slice(format!("{magic}\n{width} {height}\n-1.0\n").as_bytes());
    let row = width * channels;
    for r in (0..height).rev() {
        for v in &data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path, &out)
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    width: usize,
    height: usize,
    /// Mask file name, relative to the sidecar.
    mask: String,
}

fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("mask"))
}

fn read_raw_depth(path: &Path) -> Result<DepthGrid> {
    let (sidecar_path, _) = raw_paths(path);
    let text = fs::read_to_string(&sidecar_path).map_err(|e| CliError::read(&sidecar_path, e))?;
    let sidecar: RawSidecar = serde_json::from_str(&text).map_err(|e| CliError::format(&sidecar_path, e))?;
    let mask_path = sidecar_path.parent().unwrap_or(Path::new("")).join(&sidecar.mask);
    let mask = fs::read(&mask_path).map_err(|e| CliError::read(&mask_path, e))?;
    let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
    let n = sidecar.width * sidecar.height;
    if bytes.len() != n * 4 {
        return Err(CliError::format(
            path,
            format!("expected {} bytes, found {}", n * 4, bytes.len()),
        ));
    }
    if mask.len() != n {
        return Err(CliError::format(
            &mask_path,
            format!("expected {n} mask bytes, found {}", mask.len()),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    depth_from_f32(path, sidecar.width, sidecar.height, &data, Some(&mask))
}

fn write_raw_depth(path: &Path, grid: &DepthGrid) -> Result<()> {
    let (sidecar_path, mask_path) = raw_paths(path);
    let mut bytes = Vec::with_capacity(grid.depth().len() * 4);
    for (&d, &m) in grid.depth().iter().zip(grid.mask()) {
        let v = if m { d as f32 } else { 0.0 };
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)?;
    let mask: Vec<u8> = grid.mask().iter().map(|&m| u8::from(m)).collect();
    write_bytes(&mask_path, &mask)?;
    let sidecar = RawSidecar {
        width: grid.width(),
        height: grid.height(),
        mask: mask_path
            .file_name()
            .and_then(|n| n.to_str())
            .expect("mask path has a UTF-8 file name")
            .to_string(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_bytes(&sidecar_path, json.as_bytes())
}

pub fn read_point_map(path: &Path) -> Result<PointMap> {
    let pfm = read_pfm(path)?;
    if pfm.channels != 3 {
        return Err(CliError::format(path, "point maps must be 3-channel PFM"));
    }
    let mut coords = Vec::with_capacity(pfm.width * pfm.height);
    let mut mask = Vec::with_capacity(pfm.width * pfm.height);
    for c in pfm.data.chunks_exact(3) {
        let ok = c.iter().all(|v| v.is_finite());
        mask.push(ok);
        coords.push(if ok {
            Vector3::new(f64::from(c[0]), f64::from(c[1]), f64::from(c[2]))
        } else {
            Vector3::zeros()
        });
    }
    PointMap::new(pfm.width, pfm.height, coords, mask).map_err(|e| CliError::format(path, e))
}

pub fn write_point_map(path: &Path, pm: &PointMap) -> Result<()> {
    let mut data = Vec::with_capacity(pm.coords().len() * 3);
    for (p, &m) in pm.coords().iter().zip(pm.mask()) {
        if m {
            data.extend([p.x as f32, p.y as f32, p.z as f32]);
        } else {
            data.extend([f32::NAN; 3]);
        }
    }
    write_pfm(path, pm.width(), pm.height(), 3, &data)
}

fn records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split_whitespace().map(str::to_string).collect()))
        .collect())
}

pub fn read_prompt(path: &Path, width: usize, height: usize) -> Result<SparsePrompt> {
    let mut points = Vec::new();
    for (line, fields) in records(path)? {
        let bad = || CliError::format(path, format!("line {line}: expected `x y d`"));
        let [x, y, d] = fields.as_slice() else {
            return Err(bad());
        };
        points.push(PromptPoint {
            x: x.parse().map_err(|_| bad())?,
            y: y.parse().map_err(|_| bad())?,
            d: d.parse().map_err(|_| bad())?,
        });
    }
    SparsePrompt::new(width, height, points).map_err(|e| CliError::format(path, e))
}

/// Depths are written with the shortest representation that reads back
/// to the same `f64`.
pub fn write_prompt(path: &Path, prompt: &SparsePrompt) -> Result<()> {
    let mut text = String::with_capacity(prompt.len() * 24);
    for p in prompt.entries() {
        text.push_str(&format!("{} {} {}\n", p.x, p.y, p.d));
    }
    write_bytes(path, text.as_bytes())
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (line, fields) in records(path)? {
        let coords: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match coords.as_deref() {
            Some(&[x, y, z]) => points.push(Vector3::new(x, y, z)),
            _ => return Err(CliError::format(path, format!("line {line}: expected `x y z`"))),
        }
    }
    PointCloud::new(points).map_err(|e| CliError::format(path, e))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut text = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        text.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    write_bytes(path, text.as_bytes())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CliError::write(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::write(path, e))
}
