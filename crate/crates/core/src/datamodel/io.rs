//! On-disk formats.
//!
//! * Dataset manifest: JSON lines, one [`ManifestRecord`] per core, paths
//!   relative to the manifest's directory.
//! * Images: 16-bit grayscale PNG scaled from `[0, 1]`. Masks: 8-bit
//!   grayscale PNG, nonzero = inside.
//! * Embedding bag: `<id>.json` sidecar `{sample_id, grade, involvement, n, d}`
//!   next to `<id>.f32`, a little-endian float32 row-major `n x d` matrix.
//! * Teacher bank: one file. Line 1 is the JSON header
//!   `{d, bin_edges, entry_count}`, followed by `entry_count` JSON lines
//!   `{sample_id, grade, bin}`, followed by the raw little-endian float32
//!   `entry_count x d` embedding matrix.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::types::{BinEdges, EmbeddingBag, ImagingCore, Involvement, IsupGrade, TeacherBank, TeacherBankEntry};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub core_id: String,
    pub patient_id: String,
    pub image_path: String,
    pub needle_mask_path: String,
    pub prostate_mask_path: String,
    pub grade: IsupGrade,
    pub involvement: Involvement,
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_image_png(path: &Path, image: &Array2<f64>) -> Result<()> {
    let (h, w) = image.dim();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(image[[y as usize, x as usize]].clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    buf.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

/// Reads any grayscale PNG into `[0, 1]`.
pub fn read_image_png(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let g = img.into_luma16();
    let (w, h) = g.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        f64::from(g.get_pixel(x as u32, y as u32)[0]) / 65535.0
    }))
}

pub fn write_mask_png(path: &Path, mask: &Array2<bool>) -> Result<()> {
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

pub fn read_mask_png(path: &Path) -> Result<Array2<bool>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let g = img.into_luma8();
    let (w, h) = g.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        g.get_pixel(x as u32, y as u32)[0] != 0
    }))
}

/// Writes a core's image and masks next to `dir` and returns its manifest row.
pub fn write_core(dir: &Path, core: &ImagingCore) -> Result<ManifestRecord> {
    let rec = ManifestRecord {
        core_id: core.core_id.clone(),
        patient_id: core.patient_id.clone(),
        image_path: format!("images/{}.png", core.core_id),
        needle_mask_path: format!("masks/{}_needle.png", core.core_id),
        prostate_mask_path: format!("masks/{}_prostate.png", core.core_id),
        grade: core.grade,
        involvement: core.involvement,
    };
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    write_image_png(&dir.join(&rec.image_path), &core.image)?;
    write_mask_png(&dir.join(&rec.needle_mask_path), &core.needle_mask)?;
    write_mask_png(&dir.join(&rec.prostate_mask_path), &core.prostate_mask)?;
    Ok(rec)
}

/// Loads every core listed in a manifest. Images are returned as stored;
/// preprocessing is the caller's job.
pub fn load_cores(manifest: &Path) -> Result<Vec<ImagingCore>> {
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    read_manifest(manifest)?
        .into_iter()
        .map(|r| {
            let core = ImagingCore {
                image: read_image_png(&base.join(&r.image_path))?,
                needle_mask: read_mask_png(&base.join(&r.needle_mask_path))?,
                prostate_mask: read_mask_png(&base.join(&r.prostate_mask_path))?,
                grade: r.grade,
                involvement: r.involvement,
                patient_id: r.patient_id,
                core_id: r.core_id,
            };
            core.validate()?;
            Ok(core)
        })
        .collect()
}

pub fn write_f32_matrix(w: &mut impl Write, m: impl Iterator<Item = f32>) -> std::io::Result<()> {
    let bytes: Vec<u8> = m.flat_map(f32::to_le_bytes).collect();
    w.write_all(&bytes)
}

fn read_f32_matrix(bytes: &[u8], rows: usize, cols: usize, path: &Path) -> Result<Array2<f32>> {
    if bytes.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!("expected {} bytes of float32, found {}", rows * cols * 4, bytes.len()),
        ));
    }
    let v: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Array2::from_shape_vec((rows, cols), v).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagSidecar {
    pub sample_id: String,
    pub grade: IsupGrade,
    pub involvement: Involvement,
    pub n: usize,
    pub d: usize,
}

/// Writes `<dir>/<sample_id>.json` and `<dir>/<sample_id>.f32`.
pub fn write_bag(dir: &Path, bag: &EmbeddingBag) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let side = BagSidecar {
        sample_id: bag.sample_id.clone(),
        grade: bag.grade,
        involvement: bag.involvement,
        n: bag.len(),
        d: bag.dim(),
    };
    let json_path = dir.join(format!("{}.json", bag.sample_id));
    fs::write(&json_path, serde_json::to_string(&side)?).map_err(|e| Error::io(&json_path, e))?;
    let bin_path = dir.join(format!("{}.f32", bag.sample_id));
    let mut f = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    write_f32_matrix(&mut f, bag.instances.iter().map(|&v| v as f32)).map_err(|e| Error::io(&bin_path, e))?;
    Ok(json_path)
}

pub fn read_bag(sidecar: &Path) -> Result<EmbeddingBag> {
    let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let side: BagSidecar = serde_json::from_str(&text).map_err(|e| Error::format(sidecar, e.to_string()))?;
    let bin_path = sidecar.with_extension("f32");
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let m = read_f32_matrix(&bytes, side.n, side.d, &bin_path)?;
    EmbeddingBag::new(side.sample_id, m.mapv(f64::from), side.grade, side.involvement)
}

/// Reads every bag in `dir`, ordered by file name.
pub fn read_bag_dir(dir: &Path) -> Result<Vec<EmbeddingBag>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!("bag directory {}", dir.display())));
    }
    paths.iter().map(|p| read_bag(p)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankHeader {
    d: usize,
    bin_edges: BinEdges,
    entry_count: usize,
}

pub fn write_bank(path: &Path, bank: &TeacherBank) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    let header = BankHeader {
        d: bank.dim(),
        bin_edges: bank.bin_edges().clone(),
        entry_count: bank.len(),
    };
    buf.extend(serde_json::to_vec(&header)?);
    buf.push(b'\n');
    for e in bank.entries() {
        buf.extend(serde_json::to_vec(e)?);
        buf.push(b'\n');
    }
    write_f32_matrix(&mut buf, bank.embeddings().iter().copied()).expect("vec write");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_bank(path: &Path) -> Result<TeacherBank> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: BankHeader = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("header: {e}")))?;
    let mut entries = Vec::with_capacity(header.entry_count);
    for i in 0..header.entry_count {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let e: TeacherBankEntry =
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("entry {i}: {e}")))?;
        entries.push(e);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    let m = read_f32_matrix(&rest, header.entry_count, header.d, path)?;
    TeacherBank::new(header.bin_edges, entries, m)
}
