//! On-disk study bundles: 16-bit PGM images with JSON geometry sidecars,
//! contour CSVs and PNG overlays.
//!
//! ```text
//! sa/0000.pgm  sa/0000.json      LGE short-axis stack
//! cine/0000.pgm cine/0000.json   cine short-axis stack (optional)
//! la4c.pgm la4c.json la2c.pgm la2c.json
//! apriori/endo_0000.csv apriori/epi_0000.csv   cine pixel coordinates
//! truth/endo_0000.csv truth/epi_0000.csv       true-pose LGE pixel coordinates
//! truth/misalignment.json truth/phantom.json
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Image, SliceLabel, SlicePlane, Vec2, Vec3};
use crate::phantom::Phantom;

/// Raw PGM value per image intensity unit.
pub const PGM_SCALE: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceHeader {
    pub origin: [f64; 3],
    pub row_dir: [f64; 3],
    pub col_dir: [f64; 3],
    pub pixel_spacing: f64,
    pub thickness: f64,
    pub label: SliceLabel,
    pub width: usize,
    pub height: usize,
    /// Intensity per raw PGM unit.
    pub rescale_slope: f64,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}

/// Binary 16-bit PGM of `round(value * scale)`, clamped to the u16 range.
pub fn write_pgm(path: &Path, img: &Image, scale: f64) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    bytes.reserve(img.data.len() * 2);
    for &v in &img.data {
        let raw = (v * scale).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&raw.to_be_bytes());
    }
    write_file(path, &bytes)
}

/// Read a binary PGM (8 or 16 bit), returning raw values.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m);
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    let depth = if maxval < 256 { 1 } else { 2 };
    let body = bytes.get(pos..).ok_or_else(|| bad("missing pixel data"))?;
    if body.len() < w * h * depth {
        return Err(bad("truncated pixel data"));
    }
    let data = (0..w * h)
        .map(|i| {
            if depth == 1 {
                body[i] as f64
            } else {
                u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as f64
            }
        })
        .collect();
    Image::new(w, h, data)
}

/// Write `<stem>.pgm` and `<stem>.json`.
pub fn write_slice(stem: &Path, plane: &SlicePlane) -> Result<()> {
    write_pgm(&stem.with_extension("pgm"), &plane.pixels, PGM_SCALE)?;
    let header = SliceHeader {
        origin: arr(&plane.origin),
        row_dir: arr(&plane.row_dir),
        col_dir: arr(&plane.col_dir),
        pixel_spacing: plane.pixel_spacing,
        thickness: plane.thickness,
        label: plane.label,
        width: plane.width(),
        height: plane.height(),
        rescale_slope: 1.0 / PGM_SCALE,
    };
    write_json(&stem.with_extension("json"), &header)
}

pub fn read_slice(stem: &Path) -> Result<SlicePlane> {
    let json = stem.with_extension("json");
    let header: SliceHeader = read_json(&json)?;
    let raw = read_pgm(&stem.with_extension("pgm"))?;
    if raw.width != header.width || raw.height != header.height {
        return Err(Error::format(&json, "image size differs from sidecar"));
    }
    let pixels = Image::new(raw.width, raw.height, raw.data.iter().map(|v| v * header.rescale_slope).collect())?;
    SlicePlane::new(
        pixels,
        vec3(header.origin),
        vec3(header.row_dir),
        vec3(header.col_dir),
        header.pixel_spacing,
        header.thickness,
        header.label,
    )
}

pub fn write_contour(path: &Path, points: &[Vec2]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let fmt = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["theta_or_index", "u", "v"]).map_err(fmt)?;
    for (i, p) in points.iter().enumerate() {
        w.write_record([i.to_string(), p.x.to_string(), p.y.to_string()]).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_contour(path: &Path) -> Result<Vec<Vec2>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::format(path, "expected numeric u and v columns"))
        };
        out.push(Vec2::new(get(1)?, get(2)?));
    }
    Ok(out)
}

pub fn contour_path(dir: &Path, kind: &str, k: usize) -> PathBuf {
    dir.join(format!("{kind}_{k:04}.csv"))
}

/// Endo and epi contours of every slice in `dir`.
pub fn write_contour_stack(dir: &Path, endo: &[Vec<Vec2>], epi: &[Vec<Vec2>]) -> Result<()> {
    create_dir(dir)?;
    for (k, (en, ep)) in endo.iter().zip(epi).enumerate() {
        write_contour(&contour_path(dir, "endo", k), en)?;
        write_contour(&contour_path(dir, "epi", k), ep)?;
    }
    Ok(())
}

/// Read `endo_####.csv`/`epi_####.csv` pairs numbered from zero.
pub fn read_contour_stack(dir: &Path) -> Result<(Vec<Vec<Vec2>>, Vec<Vec<Vec2>>)> {
    let (mut endo, mut epi) = (Vec::new(), Vec::new());
    loop {
        let (pe, pp) = (contour_path(dir, "endo", endo.len()), contour_path(dir, "epi", endo.len()));
        match (pe.exists(), pp.exists()) {
            (false, false) => break,
            (true, true) => {
                endo.push(read_contour(&pe)?);
                epi.push(read_contour(&pp)?);
            }
            _ => {
                return Err(Error::validation(format!(
                    "slice {} has only one of its endo/epi contours in {}",
                    endo.len(),
                    dir.display()
                )))
            }
        }
    }
    if endo.is_empty() {
        return Err(Error::validation(format!("no contours in {}", dir.display())));
    }
    Ok((endo, epi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleTruth {
    pub endo: Vec<Vec<Vec2>>,
    pub epi: Vec<Vec<Vec2>>,
    pub misalignment: Option<Vec<(i32, i32)>>,
}

#[derive(Debug, Clone)]
pub struct StudyBundle {
    pub sa: Vec<SlicePlane>,
    /// Cine SA slices the a-priori contours were drawn on; may be empty.
    pub cine: Vec<SlicePlane>,
    pub la: Vec<SlicePlane>,
    pub apriori_endo: Vec<Vec<Vec2>>,
    pub apriori_epi: Vec<Vec<Vec2>>,
    pub truth: Option<BundleTruth>,
}

fn numbered_stems(dir: &Path) -> Vec<PathBuf> {
    (0..)
        .map(|k| dir.join(format!("{k:04}")))
        .take_while(|s| s.with_extension("json").exists())
        .collect()
}

/// Project a world-space contour into a plane's pixel coordinates.
fn to_pixels(plane: &SlicePlane, pts: &[Vec3]) -> Vec<Vec2> {
    pts.iter().map(|p| plane.world_to_image(p)).collect()
}

/// Write a complete bundle for a generated phantom.
pub fn write_bundle(phantom: &Phantom, dir: &Path) -> Result<()> {
    for sub in ["sa", "cine", "apriori", "truth"] {
        create_dir(&dir.join(sub))?;
    }
    for (k, s) in phantom.lge_sa.iter().enumerate() {
        write_slice(&dir.join("sa").join(format!("{k:04}")), s)?;
    }
    for (k, s) in phantom.cine_sa.iter().enumerate() {
        write_slice(&dir.join("cine").join(format!("{k:04}")), s)?;
    }
    write_slice(&dir.join("la4c"), &phantom.lge_la4c)?;
    write_slice(&dir.join("la2c"), &phantom.lge_la2c)?;
    let (endo, epi): (Vec<_>, Vec<_>) = phantom
        .truth_cine
        .sa
        .iter()
        .zip(&phantom.cine_sa)
        .map(|(t, p)| (to_pixels(p, &t.endo), to_pixels(p, &t.epi)))
        .unzip();
    write_contour_stack(&dir.join("apriori"), &endo, &epi)?;
    let true_sa = phantom.lge_sa_true();
    let (endo, epi): (Vec<_>, Vec<_>) = phantom
        .truth_lge
        .sa
        .iter()
        .zip(&true_sa)
        .map(|(t, p)| (to_pixels(p, &t.endo), to_pixels(p, &t.epi)))
        .unzip();
    write_contour_stack(&dir.join("truth"), &endo, &epi)?;
    write_json(&dir.join("truth").join("misalignment.json"), &phantom.applied_shifts)?;
    write_json(&dir.join("truth").join("phantom.json"), &phantom.spec)
}

pub fn read_bundle(dir: &Path) -> Result<StudyBundle> {
    if !dir.is_dir() {
        return Err(Error::validation(format!("bundle directory {} does not exist", dir.display())));
    }
    let sa_stems = numbered_stems(&dir.join("sa"));
    if sa_stems.is_empty() {
        return Err(Error::validation(format!("no SA slices in {}", dir.join("sa").display())));
    }
    let apriori = dir.join("apriori");
    for k in 0..sa_stems.len() {
        for kind in ["endo", "epi"] {
            let p = contour_path(&apriori, kind, k);
            if !p.exists() {
                return Err(Error::validation(format!("missing a-priori contour {}", p.display())));
            }
        }
    }
    let sa = sa_stems.iter().map(|s| read_slice(s)).collect::<Result<Vec<_>>>()?;
    let cine = numbered_stems(&dir.join("cine"))
        .iter()
        .map(|s| read_slice(s))
        .collect::<Result<Vec<_>>>()?;
    if !cine.is_empty() && cine.len() != sa.len() {
        return Err(Error::validation("cine and SA stacks differ in length"));
    }
    let mut la = Vec::new();
    for name in ["la4c", "la2c"] {
        let stem = dir.join(name);
        if stem.with_extension("json").exists() {
            la.push(read_slice(&stem)?);
        }
    }
    let mut apriori_endo = Vec::new();
    let mut apriori_epi = Vec::new();
    for k in 0..sa.len() {
        apriori_endo.push(read_contour(&contour_path(&apriori, "endo", k))?);
        apriori_epi.push(read_contour(&contour_path(&apriori, "epi", k))?);
    }
    let tdir = dir.join("truth");
    let truth = if contour_path(&tdir, "endo", 0).exists() {
        let (endo, epi) = read_contour_stack(&tdir)?;
        let mis = tdir.join("misalignment.json");
        Some(BundleTruth {
            endo,
            epi,
            misalignment: if mis.exists() { Some(read_json(&mis)?) } else { None },
        })
    } else {
        None
    };
    Ok(StudyBundle {
        sa,
        cine,
        la,
        apriori_endo,
        apriori_epi,
        truth,
    })
}

/// Min-max windowed 8-bit RGB rendering of `img` with polylines burned in.
pub fn write_overlay(path: &Path, img: &Image, polylines: &[(&[Vec2], [u8; 3])]) -> Result<()> {
    let (lo, hi) = img.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut rgb: Vec<u8> = img
        .data
        .iter()
        .flat_map(|&v| {
            let g = ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8;
            [g, g, g]
        })
        .collect();
    let (w, h) = (img.width, img.height);
    let mut plot = |x: f64, y: f64, c: [u8; 3]| {
        let (u, v) = (x.round(), y.round());
        if u >= 0.0 && v >= 0.0 && (u as usize) < w && (v as usize) < h {
            let i = 3 * (v as usize * w + u as usize);
            rgb[i..i + 3].copy_from_slice(&c);
        }
    };
    for (line, color) in polylines {
        let n = line.len();
        for i in 0..n {
            let (a, b) = (line[i], line[(i + 1) % n]);
            let steps = ((b - a).abs().max() * 2.0).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let p = a + (b - a) * (s as f64 / steps as f64);
                plot(p.x, p.y, *color);
            }
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(&rgb).map_err(fmt)?;
    writer.finish().map_err(fmt)?;
    Ok(())
}

/// Write text to a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
