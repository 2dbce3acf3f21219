//! Resampling, cropping and elastic augmentation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::smooth_axis;
use crate::rng::RngState;
use crate::volume::{CaseRecord, MaskSet, VolumeGrid, Zone};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Linear,
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    pub target_spacing_mm: f64,
    /// In-plane crop window (x, y).
    pub crop_size: [usize; 2],
    pub image_interp: Interp,
    pub mask_interp: Interp,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            target_spacing_mm: 0.5,
            crop_size: [256, 256],
            image_interp: Interp::Linear,
            mask_interp: Interp::Nearest,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_spacing_mm > 0.0 && self.target_spacing_mm.is_finite()) {
            return Err(Error::Config(format!(
                "target spacing must be positive, got {}",
                self.target_spacing_mm
            )));
        }
        if self.crop_size.iter().any(|&c| c == 0 || c % 2 != 0) {
            return Err(Error::Config(format!(
                "crop size must be even and positive, got {:?}",
                self.crop_size
            )));
        }
        if self.mask_interp != Interp::Nearest {
            return Err(Error::Config(
                "masks can only be resampled with nearest-neighbour interpolation".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElasticParams {
    /// Displacement amplitude, pixels.
    pub alpha: f64,
    /// Smoothing standard deviation, pixels.
    pub sigma: f64,
    /// Deformed copies per original case.
    pub n_augment: usize,
}

impl Default for ElasticParams {
    fn default() -> Self {
        ElasticParams {
            alpha: 21.0,
            sigma: 512.0,
            n_augment: 9,
        }
    }
}

impl ElasticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Source coordinate of output index `i` when resampling a `n_in`-sample
/// axis: sample centres are aligned and the result is clamped to the input.
fn source_coord(i: usize, s_in: f64, s_out: f64, n_in: usize) -> f64 {
    ((i as f64 + 0.5) * s_out / s_in - 0.5).clamp(0.0, (n_in - 1) as f64)
}

fn resampled_dims(dims: [usize; 3], spacing: [f64; 3], target: f64) -> [usize; 3] {
    std::array::from_fn(|a| ((dims[a] as f64 * spacing[a] / target).round() as usize).max(1))
}

/// Per-axis (lower index, weight of upper) pairs for linear interpolation.
fn linear_taps(n_out: usize, n_in: usize, s_in: f64, s_out: f64) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let x = source_coord(i, s_in, s_out, n_in);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

fn nearest_taps(n_out: usize, n_in: usize, s_in: f64, s_out: f64) -> Vec<usize> {
    (0..n_out)
        .map(|i| (source_coord(i, s_in, s_out, n_in).round() as usize).min(n_in - 1))
        .collect()
}

fn resample_linear(values: &[f32], dims: [usize; 3], spacing: [f64; 3], target: f64) -> (Vec<f32>, [usize; 3]) {
    let out = resampled_dims(dims, spacing, target);
    let t: [Vec<(usize, usize, f64)>; 3] = std::array::from_fn(|a| linear_taps(out[a], dims[a], spacing[a], target));
    let idx = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    let mut res = Vec::with_capacity(out.iter().product());
    for &(z0, z1, wz) in &t[2] {
        for &(y0, y1, wy) in &t[1] {
            for &(x0, x1, wx) in &t[0] {
                let v = |x, y, z| values[idx(x, y, z)] as f64;
                let lerp = |a: f64, b: f64, w: f64| a + w * (b - a);
                let c00 = lerp(v(x0, y0, z0), v(x1, y0, z0), wx);
                let c10 = lerp(v(x0, y1, z0), v(x1, y1, z0), wx);
                let c01 = lerp(v(x0, y0, z1), v(x1, y0, z1), wx);
                let c11 = lerp(v(x0, y1, z1), v(x1, y1, z1), wx);
                res.push(lerp(lerp(c00, c10, wy), lerp(c01, c11, wy), wz) as f32);
            }
        }
    }
    (res, out)
}

fn resample_nearest<T: Copy>(values: &[T], dims: [usize; 3], spacing: [f64; 3], target: f64) -> (Vec<T>, [usize; 3]) {
    let out = resampled_dims(dims, spacing, target);
    let t: [Vec<usize>; 3] = std::array::from_fn(|a| nearest_taps(out[a], dims[a], spacing[a], target));
    let mut res = Vec::with_capacity(out.iter().product());
    for &z in &t[2] {
        for &y in &t[1] {
            for &x in &t[0] {
                res.push(values[x + dims[0] * (y + dims[1] * z)]);
            }
        }
    }
    (res, out)
}

/// Resamples an image to isotropic `target_spacing_mm`.
pub fn resample(v: &VolumeGrid, cfg: &PrepConfig) -> Result<VolumeGrid> {
    cfg.validate()?;
    let t = cfg.target_spacing_mm;
    let (values, dims) = match cfg.image_interp {
        Interp::Linear => resample_linear(v.values(), v.dims(), v.spacing_mm(), t),
        Interp::Nearest => resample_nearest(v.values(), v.dims(), v.spacing_mm(), t),
    };
    VolumeGrid::new(v.kind(), dims, [t; 3], values)
}

/// Nearest-neighbour resampling of all zone masks with one index map.
pub fn resample_mask(m: &MaskSet, cfg: &PrepConfig) -> Result<MaskSet> {
    cfg.validate()?;
    let t = cfg.target_spacing_mm;
    let mut planes = Zone::ALL.map(|z| resample_nearest(m.zone(z), m.dims(), m.spacing_mm(), t));
    let dims = planes[0].1;
    let [pg, cz, pz] = std::mem::take(&mut planes).map(|p| p.0);
    MaskSet::new(dims, [t; 3], pg, cz, pz)
}

/// In-plane centre crop (or zero pad) to `cfg.crop_size`.
fn crop_plane<T: Copy + Default>(values: &[T], dims: [usize; 3], crop: [usize; 2]) -> Vec<T> {
    let [nx, ny, nz] = dims;
    let ox = nx as isize / 2 - crop[0] as isize / 2;
    let oy = ny as isize / 2 - crop[1] as isize / 2;
    let mut out = vec![T::default(); crop[0] * crop[1] * nz];
    for z in 0..nz {
        for y in 0..crop[1] {
            let sy = y as isize + oy;
            if sy < 0 || sy >= ny as isize {
                continue;
            }
            for x in 0..crop[0] {
                let sx = x as isize + ox;
                if sx < 0 || sx >= nx as isize {
                    continue;
                }
                out[x + crop[0] * (y + crop[1] * z)] = values[sx as usize + nx * (sy as usize + ny * z)];
            }
        }
    }
    out
}

/// Centres a `crop_size` window at `(nx/2, ny/2)`, padding with zeros.
pub fn center_crop(v: &VolumeGrid, cfg: &PrepConfig) -> Result<VolumeGrid> {
    cfg.validate()?;
    let c = cfg.crop_size;
    let values = crop_plane(v.values(), v.dims(), c);
    VolumeGrid::new(v.kind(), [c[0], c[1], v.dims()[2]], v.spacing_mm(), values)
}

pub fn center_crop_mask(m: &MaskSet, cfg: &PrepConfig) -> Result<MaskSet> {
    cfg.validate()?;
    let c = cfg.crop_size;
    let [pg, cz, pz] = Zone::ALL.map(|z| crop_plane(m.zone(z), m.dims(), c));
    MaskSet::new([c[0], c[1], m.dims()[2]], m.spacing_mm(), pg, cz, pz)
}

/// Resamples then crops every map and the masks of a case.
pub fn prep_case(case: &CaseRecord, cfg: &PrepConfig) -> Result<CaseRecord> {
    let mut maps = BTreeMap::new();
    for (&kind, v) in &case.maps {
        maps.insert(kind, center_crop(&resample(v, cfg)?, cfg)?);
    }
    let truth = center_crop_mask(&resample_mask(&case.truth, cfg)?, cfg)?;
    CaseRecord::new(case.case_id.clone(), maps, truth, case.split)
}

/// Per-pixel displacement of one slice, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField2D {
    pub nx: usize,
    pub ny: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl DisplacementField2D {
    pub fn zero(nx: usize, ny: usize) -> Self {
        DisplacementField2D {
            nx,
            ny,
            dx: vec![0.0; nx * ny],
            dy: vec![0.0; nx * ny],
        }
    }

    pub fn constant(nx: usize, ny: usize, dx: f64, dy: f64) -> Self {
        DisplacementField2D {
            nx,
            ny,
            dx: vec![dx; nx * ny],
            dy: vec![dy; nx * ny],
        }
    }

    /// Largest component magnitude.
    pub fn max_abs(&self) -> f64 {
        self.dx.iter().chain(&self.dy).fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check(&self, nx: usize, ny: usize) -> Result<()> {
        if (self.nx, self.ny) != (nx, ny) || self.dx.len() != nx * ny || self.dy.len() != nx * ny {
            return Err(Error::Shape(format!(
                "field is {}×{}, slice is {nx}×{ny}",
                self.nx, self.ny
            )));
        }
        if self.dx.iter().chain(&self.dy).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("displacement field is not finite".into()));
        }
        Ok(())
    }
}

/// `α · G_σ * U` per component, U i.i.d. uniform on [-1, 1].
pub fn sample_displacement(nx: usize, ny: usize, p: &ElasticParams, rng: &mut RngState) -> Result<DisplacementField2D> {
    p.validate()?;
    let mut comp = || {
        let mut u: Vec<f64> = (0..nx * ny).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        smooth_axis(&mut u, [nx, ny, 1], 0, p.sigma);
        smooth_axis(&mut u, [nx, ny, 1], 1, p.sigma);
        // The smoothed values are weighted means of [-1, 1] draws, so the
        // clamp only guards against rounding.
        u.iter_mut().for_each(|v| *v = (p.alpha * *v).clamp(-p.alpha, p.alpha));
        u
    };
    let dx = comp();
    let dy = comp();
    Ok(DisplacementField2D { nx, ny, dx, dy })
}

/// `out(x) = in(x + d(x))`; reads outside the slice return zero.
pub fn warp_slice<T: Copy + Into<f64>>(
    input: &[T],
    nx: usize,
    ny: usize,
    field: &DisplacementField2D,
    interp: Interp,
) -> Result<Vec<f64>> {
    field.check(nx, ny)?;
    if input.len() != nx * ny {
        return Err(Error::Shape(format!(
            "slice has {} pixels, expected {nx}×{ny}",
            input.len()
        )));
    }
    let read = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= nx as isize || y >= ny as isize {
            0.0
        } else {
            input[x as usize + nx * y as usize].into()
        }
    };
    let mut out = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            let i = x + nx * y;
            let sx = x as f64 + field.dx[i];
            let sy = y as f64 + field.dy[i];
            let v = match interp {
                Interp::Nearest => read(sx.round() as isize, sy.round() as isize),
                Interp::Linear => {
                    let (x0, y0) = (sx.floor(), sy.floor());
                    let (fx, fy) = (sx - x0, sy - y0);
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    let top = read(x0, y0) * (1.0 - fx) + read(x0 + 1, y0) * fx;
                    let bot = read(x0, y0 + 1) * (1.0 - fx) + read(x0 + 1, y0 + 1) * fx;
                    top * (1.0 - fy) + bot * fy
                }
            };
            out.push(v);
        }
    }
    Ok(out)
}

/// Warps slice `z` of an image in place of a copy.
pub fn warp(v: &VolumeGrid, z: usize, field: &DisplacementField2D) -> Result<Vec<f32>> {
    let [nx, ny, _] = v.dims();
    Ok(warp_slice(v.slice(z), nx, ny, field, Interp::Linear)?
        .into_iter()
        .map(|x| x as f32)
        .collect())
}

/// Warps every slice of a case, one field per slice shared by all maps and
/// masks.
pub fn warp_case(case: &CaseRecord, fields: &[DisplacementField2D], case_id: String) -> Result<CaseRecord> {
    let [nx, ny, nz] = case.dims();
    if fields.len() != nz {
        return Err(Error::Shape(format!("{} fields for {nz} slices", fields.len())));
    }
    let plane = nx * ny;
    let mut maps = BTreeMap::new();
    for (&kind, v) in &case.maps {
        let mut values = Vec::with_capacity(v.len());
        for (z, f) in fields.iter().enumerate() {
            values.extend(warp(v, z, f)?);
        }
        maps.insert(kind, v.with_values(kind, values)?);
    }
    let [pg, cz, pz] = Zone::ALL.map(|_| Vec::with_capacity(plane * nz));
    let mut zones = [pg, cz, pz];
    for (zone, out) in Zone::ALL.iter().zip(zones.iter_mut()) {
        for (z, f) in fields.iter().enumerate() {
            let w = warp_slice(case.truth.slice(*zone, z), nx, ny, f, Interp::Nearest)?;
            out.extend(w.into_iter().map(|v| v as u8));
        }
    }
    let [pg, cz, pz] = zones;
    let truth = MaskSet::new(case.dims(), case.truth.spacing_mm(), pg, cz, pz)?;
    CaseRecord::new(case_id, maps, truth, case.split)
}

/// `n_augment` deformed copies with ids `<id>_aug1..n`.
pub fn augment_case(case: &CaseRecord, p: &ElasticParams, rng: &mut RngState) -> Result<Vec<CaseRecord>> {
    p.validate()?;
    let [nx, ny, nz] = case.dims();
    (1..=p.n_augment)
        .map(|k| {
            let fields = (0..nz)
                .map(|_| sample_displacement(nx, ny, p, rng))
                .collect::<Result<Vec<_>>>()?;
            warp_case(case, &fields, format!("{}_aug{k}", case.case_id))
        })
        .collect()
}
