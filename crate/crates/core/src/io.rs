//! File formats.
//!
//! | file          | layout                                                         |
//! |---------------|----------------------------------------------------------------|
//! | raw frame     | little-endian `u16`, row-major; sidecar `<file>.json`          |
//! | cube (`.hsc`) | one-line JSON header, `\n`, `f32` LE band-major planes         |
//! | layout        | JSON [`MosaicLayout`]                                          |
//! | grid          | JSON [`PatchGrid`] `{patch, rows, cols, image}`                |
//! | label mask    | binary PGM (`P5`, maxval 255), one class index per byte        |
//! | render        | binary PPM (`P6`) using [`PALETTE`]                            |
//!
//! Weight containers share the header-line framing; see
//! [`crate::infer::container`] and [`crate::quant::container`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, LabelMask, Plane, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::mosaic::{MosaicLayout, RawFrame};
use crate::patchwork::PatchGrid;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

/// Writes `header` as a single JSON line followed by `payload`.
pub fn write_framed<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let mut out = serde_json::to_vec(header).map_err(|e| Error::json(path, e))?;
    out.push(b'\n');
    out.extend_from_slice(payload);
    write_bytes(path, &out)
}

/// Splits a framed file into its parsed header and payload bytes.
pub fn read_framed<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<u8>)> {
    let mut bytes = read_bytes(path)?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::corrupt(path, "missing header line"))?;
    let header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::corrupt(path, format!("bad header: {e}")))?;
    let payload = bytes.split_off(nl + 1);
    Ok((header, payload))
}

pub fn f32s_to_le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn le_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect()
}

// ---------------------------------------------------------------------------
// raw frames

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub layout_id: String,
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    let mut s = raw.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_raw(path: &Path, frame: &RawFrame, layout_id: &str) -> Result<()> {
    let bytes: Vec<u8> = frame.pixels.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, &bytes)?;
    let side = RawSidecar {
        width: frame.width(),
        height: frame.height(),
        bit_depth: frame.bit_depth,
        layout_id: layout_id.to_string(),
    };
    write_json(&sidecar_path(path), &side)
}

pub fn read_raw(path: &Path) -> Result<(RawFrame, RawSidecar)> {
    let side: RawSidecar = read_json(&sidecar_path(path))?;
    let bytes = read_bytes(path)?;
    let expected = side.width * side.height * 2;
    if bytes.len() != expected {
        return Err(Error::corrupt(
            path,
            format!("expected {expected} bytes for {}x{} u16, found {}", side.height, side.width, bytes.len()),
        ));
    }
    let data = bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    let frame = RawFrame::new(side.width, side.height, side.bit_depth, data)?;
    Ok((frame, side))
}

// ---------------------------------------------------------------------------
// cubes

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub order: String,
}

pub fn write_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    let header = CubeHeader {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        dtype: "f32le".into(),
        order: "band-major".into(),
    };
    write_framed(path, &header, &f32s_to_le(&cube.data))
}

pub fn read_cube(path: &Path) -> Result<HsiCube> {
    let (h, payload): (CubeHeader, _) = read_framed(path)?;
    if h.dtype != "f32le" || h.order != "band-major" {
        return Err(Error::corrupt(path, format!("unsupported dtype/order {}/{}", h.dtype, h.order)));
    }
    let n = h.height * h.width * h.bands;
    if payload.len() != 4 * n {
        return Err(Error::corrupt(path, format!("expected {} payload bytes, found {}", 4 * n, payload.len())));
    }
    HsiCube::new(h.height, h.width, h.bands, le_to_f32s(&payload))
}

// ---------------------------------------------------------------------------
// layouts and grids

pub fn read_layout(path: &Path) -> Result<MosaicLayout> {
    let l: MosaicLayout = read_json(path)?;
    l.validate()?;
    Ok(l)
}

pub fn write_layout(path: &Path, layout: &MosaicLayout) -> Result<()> {
    write_json(path, layout)
}

pub fn read_grid(path: &Path) -> Result<PatchGrid> {
    read_json(path)
}

pub fn write_grid(path: &Path, grid: &PatchGrid) -> Result<()> {
    write_json(path, grid)
}

// ---------------------------------------------------------------------------
// portable any-maps

fn pnm_header(bytes: &[u8], magic: &[u8], path: &Path) -> Result<(usize, usize, usize)> {
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::corrupt(path, "truncated header"));
        }
        fields.push(&bytes[start..i]);
    }
    if fields[0] != magic {
        return Err(Error::corrupt(path, "wrong magic number"));
    }
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::corrupt(path, "bad header number"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(Error::corrupt(path, format!("maxval {maxval}, only 255 supported")));
    }
    // exactly one whitespace byte separates header and raster
    Ok((w, h, i + 1))
}

pub fn write_pgm(path: &Path, mask: &LabelMask) -> Result<()> {
    let mut out = Vec::with_capacity(mask.data.len() + 20);
    write!(out, "P5\n{} {}\n255\n", mask.width, mask.height).expect("vec write");
    out.extend_from_slice(&mask.data);
    write_bytes(path, &out)
}

pub fn read_pgm(path: &Path) -> Result<LabelMask> {
    let bytes = read_bytes(path)?;
    let (w, h, off) = pnm_header(&bytes, b"P5", path)?;
    if bytes.len() != off + w * h {
        return Err(Error::corrupt(path, "raster size does not match header"));
    }
    Plane::new(w, h, bytes[off..].to_vec())
}

/// Class colours for rendered masks; index 255 (unlabelled) renders black.
pub const PALETTE: [[u8; 3]; 10] = [
    [128, 64, 128],  // 0 road
    [244, 35, 232],  // 1 road marks
    [107, 142, 35],  // 2 vegetation
    [220, 20, 60],   // 3 painted metal
    [70, 130, 180],  // 4 sky
    [190, 153, 153], // 5 concrete
    [220, 220, 0],   // 6 pedestrian
    [0, 80, 100],    // 7 water
    [250, 170, 30],  // 8 unpainted metal
    [150, 100, 100], // 9 glass
];

pub fn palette_color(label: u8) -> [u8; 3] {
    if label == IGNORE_LABEL {
        [0, 0, 0]
    } else {
        PALETTE[label as usize % PALETTE.len()]
    }
}

pub fn write_ppm(path: &Path, mask: &LabelMask) -> Result<()> {
    let mut out = Vec::with_capacity(mask.data.len() * 3 + 20);
    write!(out, "P6\n{} {}\n255\n", mask.width, mask.height).expect("vec write");
    for &l in &mask.data {
        out.extend_from_slice(&palette_color(l));
    }
    write_bytes(path, &out)
}
