//! Grayscale slice renderings with zone contours.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use zoneforge::eval::{boundary, HdMode};
use zoneforge::{Error, MaskSet, Result, VolumeGrid, Zone};

/// Contour colours for PG, CZ and PZ.
pub const COLORS: [[u8; 3]; 3] = [[230, 25, 75], [60, 180, 75], [0, 130, 200]];

/// RGB image of slice `z`: the map scaled to its volume-wide range, with
/// each zone's in-plane boundary painted on top (PZ last).
pub fn render_slice(map: &VolumeGrid, masks: &MaskSet, z: usize, scale: usize) -> Result<(u32, u32, Vec<u8>)> {
    if map.dims() != masks.dims() {
        return Err(Error::Shape(format!(
            "map {:?} and masks {:?} differ",
            map.dims(),
            masks.dims()
        )));
    }
    let [nx, ny, _] = map.dims();
    let (lo, hi) = map
        .values()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let mut px: Vec<[u8; 3]> = map
        .slice(z)
        .iter()
        .map(|&v| [(((v - lo) / range) * 255.0).round() as u8; 3])
        .collect();
    for (zone, color) in Zone::ALL.iter().zip(COLORS) {
        let slice = masks.slice(*zone, z);
        for [x, y, _] in boundary(slice, [nx, ny, 1], HdMode::Slice2d) {
            px[x + nx * y] = color;
        }
    }
    let (w, h) = (nx * scale, ny * scale);
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            rgb.extend(px[x / scale + nx * (y / scale)]);
        }
    }
    Ok((w as u32, h as u32, rgb))
}

pub fn write_png(path: &Path, w: u32, h: u32, rgb: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(io)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(rgb).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

/// Writes `<case_id>_zNN.png` for every slice and returns the paths.
pub fn overlay(
    case_id: &str,
    map: &VolumeGrid,
    masks: &MaskSet,
    scale: usize,
    out: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    if scale == 0 {
        return Err(Error::Config("overlay scale must be positive".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    (0..map.dims()[2])
        .map(|z| {
            let (w, h, rgb) = render_slice(map, masks, z, scale)?;
            let path = out.join(format!("{case_id}_z{z:02}.png"));
            write_png(&path, w, h, &rgb)?;
            Ok(path)
        })
        .collect()
}
