//! Figure and table emission: 8-bit grayscale PNGs with a fixed min/max
//! window recorded in a JSON sidecar, plus CSV writers.

use anyhow::{Context, Result};
use serde::Serialize;
use std::io::BufWriter;
use std::path::Path;
use vmuq::field::Field2;

#[derive(Serialize)]
struct PngSidecar<'a> {
    window_lo: f64,
    window_hi: f64,
    nz: usize,
    nx: usize,
    note: &'a str,
}

fn encode_gray(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(bytes)?;
    Ok(())
}

/// Render a field to grayscale with the given window; the window goes in
/// `<name>.json` next to the image so the figure is reproducible.
pub fn write_field_png(path: &Path, field: &Field2, lo: f64, hi: f64, note: &str) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = field
        .values()
        .iter()
        .map(|&v| (255.0 * ((v - lo) / span).clamp(0.0, 1.0)).round() as u8)
        .collect();
    encode_gray(path, field.nx, field.nz, &bytes)?;
    let sidecar = PngSidecar {
        window_lo: lo,
        window_hi: hi,
        nz: field.nz,
        nx: field.nx,
        note,
    };
    vmuq::store::write_atomic(
        &path.with_extension("json"),
        &serde_json::to_vec_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// z-score map: finite values scale into [0, 200]; cells exceeding the
/// threshold saturate at 255, standing in for the paper-style red overlay.
pub fn write_zscore_png(path: &Path, map: &Field2, threshold: f64) -> Result<()> {
    let cap = 2.0 * threshold;
    let bytes: Vec<u8> = map
        .values()
        .iter()
        .map(|&z| {
            if z > threshold {
                255u8
            } else {
                (200.0 * (z / cap).clamp(0.0, 1.0)).round() as u8
            }
        })
        .collect();
    encode_gray(path, map.nx, map.nz, &bytes)?;
    let sidecar = PngSidecar {
        window_lo: 0.0,
        window_hi: cap,
        nz: map.nz,
        nx: map.nx,
        note: "values above the threshold render at 255",
    };
    vmuq::store::write_atomic(
        &path.with_extension("json"),
        &serde_json::to_vec_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    vmuq::store::write_atomic(path, text.as_bytes())?;
    Ok(())
}
