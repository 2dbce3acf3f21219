//! Synthetic prostate phantoms.
//!
//! A phantom is an ellipsoidal gland whose central zone is a concentric
//! inner ellipsoid and whose peripheral zone is the posterior crescent
//! between the two. The anterior remainder of the gland is fibromuscular
//! stroma: it belongs to the gland mask but to neither zone, and carries
//! its own intensities. Every map is a blurred zone-mean image plus
//! voxel-wise Gaussian noise scaled by the zone's standard deviation.
//! Diffusion maps come from a mono-exponential signal model: the ADC truth
//! drives a multi-b-value series, the DWI_b map is its highest b-value
//! image and the ADC map is the least-squares refit of the series.

use std::collections::BTreeMap;
use std::f32::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::filter::smooth3;
use crate::rng::RngState;
use crate::volume::{CaseRecord, MapKind, MaskSet, Split, VolumeGrid};

/// Mean and standard deviation of one tissue class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

const fn g(mean: f64, sd: f64) -> Gaussian {
    Gaussian { mean, sd }
}

/// Intensity distribution of each tissue class for one map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneIntensity {
    pub cz: Gaussian,
    pub pz: Gaussian,
    pub stroma: Gaussian,
    pub background: Gaussian,
}

/// Tissue class of a phantom voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Background,
    Cz,
    Pz,
    Stroma,
}

impl ZoneIntensity {
    pub fn of(&self, t: Tissue) -> Gaussian {
        match t {
            Tissue::Background => self.background,
            Tissue::Cz => self.cz,
            Tissue::Pz => self.pz,
            Tissue::Stroma => self.stroma,
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        for t in [Tissue::Background, Tissue::Cz, Tissue::Pz, Tissue::Stroma] {
            let v = self.of(t);
            if !(v.mean.is_finite() && v.sd.is_finite() && v.sd >= 0.0) {
                return Err(Error::Config(format!("{what}: invalid intensity {v:?} for {t:?}")));
            }
        }
        Ok(())
    }
}

/// Per-map intensity model. DWI_b is not listed: it is synthesised from the
/// ADC truth and the `s0` baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneIntensityModel {
    pub t2w: ZoneIntensity,
    pub adc: ZoneIntensity,
    pub s0: ZoneIntensity,
    pub sws: ZoneIntensity,
    pub mag: ZoneIntensity,
    pub phi: ZoneIntensity,
}

impl Default for ZoneIntensityModel {
    fn default() -> Self {
        ZoneIntensityModel {
            t2w: ZoneIntensity {
                cz: g(110.0, 30.0),
                pz: g(180.0, 25.0),
                stroma: g(85.0, 20.0),
                background: g(60.0, 20.0),
            },
            adc: ZoneIntensity {
                cz: g(1.1e-3, 0.15e-3),
                pz: g(1.6e-3, 0.2e-3),
                stroma: g(1.3e-3, 0.15e-3),
                background: g(1.8e-3, 0.3e-3),
            },
            s0: ZoneIntensity {
                cz: g(900.0, 0.0),
                pz: g(1000.0, 0.0),
                stroma: g(800.0, 0.0),
                background: g(600.0, 0.0),
            },
            sws: ZoneIntensity {
                cz: g(1.25, 0.32),
                pz: g(1.39, 0.22),
                stroma: g(1.6, 0.3),
                background: g(0.95, 0.3),
            },
            mag: ZoneIntensity {
                cz: g(29.6, 7.85),
                pz: g(43.21, 7.2),
                stroma: g(21.0, 6.0),
                background: g(12.0, 5.0),
            },
            phi: ZoneIntensity {
                cz: g(0.64, 0.17),
                pz: g(0.58, 0.09),
                stroma: g(0.5, 0.12),
                background: g(0.45, 0.15),
            },
        }
    }
}

impl ZoneIntensityModel {
    pub fn for_kind(&self, kind: MapKind) -> Option<&ZoneIntensity> {
        match kind {
            MapKind::T2w => Some(&self.t2w),
            MapKind::Adc => Some(&self.adc),
            MapKind::Sws => Some(&self.sws),
            MapKind::Mag => Some(&self.mag),
            MapKind::Phi => Some(&self.phi),
            MapKind::DwiB => None,
        }
    }
}

/// Diffusion acquisition protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DwiProtocol {
    /// b-values in s/mm², strictly increasing and starting at 0.
    pub b_values: Vec<f64>,
    /// Baseline signal used when no per-voxel S0 map is supplied.
    pub s0: f64,
    /// Additive Gaussian noise on each diffusion-weighted signal.
    pub signal_noise_sd: f64,
}

impl Default for DwiProtocol {
    fn default() -> Self {
        DwiProtocol {
            b_values: vec![0.0, 50.0, 500.0, 1000.0, 1400.0],
            s0: 1000.0,
            signal_noise_sd: 4.0,
        }
    }
}

impl DwiProtocol {
    pub fn validate(&self) -> Result<()> {
        let b = &self.b_values;
        if b.len() < 2 {
            return Err(Error::Config("DWI protocol needs at least two b-values".into()));
        }
        if b[0] != 0.0 {
            return Err(Error::Config(format!("first b-value must be 0, got {}", b[0])));
        }
        if b.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("b-values must be strictly increasing: {b:?}")));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::Config(format!("S0 must be positive, got {}", self.s0)));
        }
        if !(self.signal_noise_sd >= 0.0) {
            return Err(Error::Config(format!(
                "signal noise sd must be >= 0, got {}",
                self.signal_noise_sd
            )));
        }
        Ok(())
    }
}

/// Geometry, intensity and noise settings of a phantom cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Gland semi-axes (x, y, z) in mm before jitter.
    pub gland_semi_axes_mm: [f64; 3],
    /// Maximum in-plane shift of the gland centre, mm.
    pub center_jitter_mm: f64,
    /// Maximum relative change of each semi-axis.
    pub axis_jitter: f64,
    /// Central-zone semi-axes as a fraction of the gland's.
    pub cz_scale: f64,
    /// Radial thickness of the peripheral crescent, mm.
    pub pz_thickness_mm: f64,
    /// In-plane blur applied to the zone-mean images, voxels.
    pub blur_sigma_vox: f64,
    /// Noise level as a multiple of each zone's standard deviation.
    pub noise_sd: f64,
    pub intensities: ZoneIntensityModel,
    pub dwi: DwiProtocol,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [64, 64, 9],
            spacing_mm: [1.0, 1.0, 1.0],
            gland_semi_axes_mm: [20.0, 15.0, 4.0],
            center_jitter_mm: 3.0,
            axis_jitter: 0.1,
            cz_scale: 0.65,
            pz_thickness_mm: 10.0,
            blur_sigma_vox: 1.5,
            noise_sd: 1.0,
            intensities: ZoneIntensityModel::default(),
            dwi: DwiProtocol::default(),
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// Full-size grid: 128×128×25 at 2 mm.
    pub fn paper_scale() -> Self {
        PhantomConfig {
            dims: [128, 128, 25],
            spacing_mm: [2.0, 2.0, 2.0],
            gland_semi_axes_mm: [24.0, 17.0, 18.0],
            center_jitter_mm: 6.0,
            ..PhantomConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("phantom dims must be positive: {:?}", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "phantom spacing must be positive: {:?}",
                self.spacing_mm
            )));
        }
        if !(0.0..1.0).contains(&self.axis_jitter) || !(self.center_jitter_mm >= 0.0) {
            return Err(Error::Config(
                "jitter must satisfy 0 <= axis_jitter < 1 and center_jitter_mm >= 0".into(),
            ));
        }
        if !(self.cz_scale > 0.0 && self.cz_scale < 1.0) {
            return Err(Error::Config(format!(
                "cz_scale must lie in (0, 1), got {}",
                self.cz_scale
            )));
        }
        if !(self.pz_thickness_mm > 0.0) || !(self.blur_sigma_vox >= 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::Config("pz_thickness_mm must be > 0, blur and noise >= 0".into()));
        }
        for axis in 0..3 {
            let extent = self.dims[axis] as f64 * self.spacing_mm[axis];
            let jitter = if axis < 2 { self.center_jitter_mm } else { 0.0 };
            let reach = self.gland_semi_axes_mm[axis] * (1.0 + self.axis_jitter) + jitter;
            if !(self.gland_semi_axes_mm[axis] > 0.0) || reach > extent / 2.0 {
                return Err(Error::Config(format!(
                    "gland does not fit the grid along axis {axis}: reach {reach:.2} mm, half extent {:.2} mm",
                    extent / 2.0
                )));
            }
        }
        for kind in [MapKind::T2w, MapKind::Adc, MapKind::Sws, MapKind::Mag, MapKind::Phi] {
            self.intensities.for_kind(kind).unwrap().check(kind.as_str())?;
        }
        self.intensities.s0.check("s0")?;
        self.dwi.validate()
    }
}

/// Gland geometry of one phantom in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
}

impl Geometry {
    fn draw(cfg: &PhantomConfig, rng: &mut RngState) -> Self {
        let mut center_mm = [0.0; 3];
        let mut semi_axes_mm = [0.0; 3];
        for a in 0..3 {
            let half = cfg.dims[a] as f64 * cfg.spacing_mm[a] / 2.0;
            let j = if a < 2 { cfg.center_jitter_mm } else { 0.0 };
            center_mm[a] = half + rng.uniform_in(-j, j);
            semi_axes_mm[a] = cfg.gland_semi_axes_mm[a] * (1.0 + rng.uniform_in(-cfg.axis_jitter, cfg.axis_jitter));
        }
        Geometry {
            center_mm,
            semi_axes_mm,
        }
    }

    /// Tissue class of every voxel, x fastest.
    pub fn label(&self, cfg: &PhantomConfig) -> Vec<Tissue> {
        let [nx, ny, nz] = cfg.dims;
        let s = cfg.spacing_mm;
        let c = self.center_mm;
        let a = self.semi_axes_mm;
        let inner = a.map(|v| v * cfg.cz_scale);
        let shell = a.map(|v| (v - cfg.pz_thickness_mm).max(0.0));
        let ell = |p: [f64; 3], r: [f64; 3]| -> f64 {
            (0..3)
                .map(|k| {
                    if r[k] > 0.0 {
                        ((p[k] - c[k]) / r[k]).powi(2)
                    } else {
                        f64::INFINITY
                    }
                })
                .sum()
        };
        let mut out = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [
                        (x as f64 + 0.5) * s[0],
                        (y as f64 + 0.5) * s[1],
                        (z as f64 + 0.5) * s[2],
                    ];
                    let t = if ell(p, a) > 1.0 {
                        Tissue::Background
                    } else if ell(p, inner) <= 1.0 {
                        Tissue::Cz
                    } else if p[1] > c[1] && ell(p, shell) > 1.0 {
                        Tissue::Pz
                    } else {
                        Tissue::Stroma
                    };
                    out.push(t);
                }
            }
        }
        out
    }
}

fn masks_from_labels(cfg: &PhantomConfig, labels: &[Tissue]) -> Result<MaskSet> {
    let pg = labels.iter().map(|&t| (t != Tissue::Background) as u8).collect();
    let cz = labels.iter().map(|&t| (t == Tissue::Cz) as u8).collect();
    let pz = labels.iter().map(|&t| (t == Tissue::Pz) as u8).collect();
    MaskSet::new(cfg.dims, cfg.spacing_mm, pg, cz, pz)
}

/// Blurred zone means plus zone-scaled noise, in f64.
fn synth_values(cfg: &PhantomConfig, labels: &[Tissue], model: &ZoneIntensity, rng: &mut RngState) -> Vec<f64> {
    let mut v: Vec<f64> = labels.iter().map(|&t| model.of(t).mean).collect();
    let s = cfg.blur_sigma_vox;
    smooth3(&mut v, cfg.dims, [s, s, 0.0]);
    for (x, &t) in v.iter_mut().zip(labels) {
        *x += cfg.noise_sd * model.of(t).sd * rng.normal();
    }
    v
}

fn to_volume(cfg: &PhantomConfig, kind: MapKind, v: &[f64]) -> Result<VolumeGrid> {
    let hi = if kind == MapKind::Phi { FRAC_PI_2 } else { f32::INFINITY };
    let values = v.iter().map(|&x| (x as f32).clamp(0.0, hi)).collect();
    VolumeGrid::new(kind, cfg.dims, cfg.spacing_mm, values)
}

/// Generates one phantom case with every map.
pub fn generate_case(cfg: &PhantomConfig, case_id: &str, rng: &mut RngState) -> Result<CaseRecord> {
    cfg.validate()?;
    let geom = Geometry::draw(cfg, rng);
    let labels = geom.label(cfg);
    let truth = masks_from_labels(cfg, &labels)?;
    let model = &cfg.intensities;

    let mut maps = BTreeMap::new();
    for kind in [MapKind::T2w, MapKind::Sws, MapKind::Mag, MapKind::Phi] {
        let v = synth_values(cfg, &labels, model.for_kind(kind).unwrap(), rng);
        maps.insert(kind, to_volume(cfg, kind, &v)?);
    }

    let adc_truth: Vec<f64> = synth_values(cfg, &labels, &model.adc, rng)
        .into_iter()
        .map(|x| x.max(0.0))
        .collect();
    let mut s0: Vec<f64> = labels.iter().map(|&t| model.s0.of(t).mean).collect();
    let s = cfg.blur_sigma_vox;
    smooth3(&mut s0, cfg.dims, [s, s, 0.0]);
    let mut series = DwiSeries::synthesize(cfg.dims, cfg.spacing_mm, &adc_truth, &s0, &cfg.dwi.b_values)?;
    if cfg.dwi.signal_noise_sd > 0.0 {
        for sig in &mut series.signals {
            for x in sig.iter_mut() {
                *x = (*x + cfg.dwi.signal_noise_sd * rng.normal()).max(0.0);
            }
        }
    }
    let fit = adc_fit(&series)?;
    maps.insert(MapKind::Adc, fit.to_volume()?);
    maps.insert(MapKind::DwiB, series.volume(series.b_values.len() - 1)?);

    CaseRecord::new(case_id, maps, truth, Split::Train)
}

/// Case identifier used for the `i`-th generated phantom.
pub fn case_id(i: usize) -> String {
    format!("case_{i:03}")
}

/// Generates `n` cases, the `i`-th drawn from stream `i` of `seed`, so the
/// cohort does not depend on the execution mode.
pub fn generate_cohort(cfg: &PhantomConfig, seed: u64, n: usize, exec: Exec) -> Result<Vec<CaseRecord>> {
    cfg.validate()?;
    let root = RngState::new(seed);
    exec.try_map(n, |i| {
        let mut rng = root.split(i as u64);
        generate_case(cfg, &case_id(i), &mut rng)
    })
}

/// A diffusion-weighted series kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiSeries {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub b_values: Vec<f64>,
    /// One signal volume per b-value, x fastest.
    pub signals: Vec<Vec<f64>>,
}

impl DwiSeries {
    /// `S_b = S0 · exp(-b · ADC)` voxel-wise.
    pub fn synthesize(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        adc: &[f64],
        s0: &[f64],
        b_values: &[f64],
    ) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if adc.len() != n || s0.len() != n {
            return Err(Error::Shape(format!(
                "ADC/S0 length {} / {} does not match dims {dims:?}",
                adc.len(),
                s0.len()
            )));
        }
        let signals = b_values
            .iter()
            .map(|&b| adc.iter().zip(s0).map(|(&d, &s)| s * (-b * d).exp()).collect())
            .collect();
        Ok(DwiSeries {
            dims,
            spacing_mm,
            b_values: b_values.to_vec(),
            signals,
        })
    }

    /// The `i`-th signal volume as a DWI map.
    pub fn volume(&self, i: usize) -> Result<VolumeGrid> {
        let values = self.signals[i].iter().map(|&x| x as f32).collect();
        VolumeGrid::new(MapKind::DwiB, self.dims, self.spacing_mm, values)
    }

    pub fn volumes(&self) -> Result<Vec<VolumeGrid>> {
        (0..self.signals.len()).map(|i| self.volume(i)).collect()
    }
}

/// Noiseless series for an ADC map under a protocol with uniform S0.
pub fn synth_dwi(adc: &VolumeGrid, proto: &DwiProtocol) -> Result<DwiSeries> {
    proto.validate()?;
    if adc.kind() != MapKind::Adc {
        return Err(Error::Data(format!("synth_dwi expects an ADC map, got {}", adc.kind())));
    }
    let d: Vec<f64> = adc.values().iter().map(|&x| x as f64).collect();
    let s0 = vec![proto.s0; d.len()];
    DwiSeries::synthesize(adc.dims(), adc.spacing_mm(), &d, &s0, &proto.b_values)
}

/// Result of a voxel-wise ADC fit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcFit {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub values: Vec<f64>,
    /// Voxels with a non-positive signal, set to ADC 0.
    pub flagged: usize,
}

impl AdcFit {
    pub fn to_volume(&self) -> Result<VolumeGrid> {
        let values = self.values.iter().map(|&x| x as f32).collect();
        VolumeGrid::new(MapKind::Adc, self.dims, self.spacing_mm, values)
    }
}

/// Least-squares slope fit of `ln S` against `b` for one voxel, returning
/// `max(-slope, 0)`, or `None` if any signal is non-positive.
pub fn fit_voxel(b_values: &[f64], signals: impl Iterator<Item = f64>) -> Option<f64> {
    let n = b_values.len() as f64;
    let b_mean = b_values.iter().sum::<f64>() / n;
    let mut ys = Vec::with_capacity(b_values.len());
    for s in signals {
        if !(s > 0.0) {
            return None;
        }
        ys.push(s.ln());
    }
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&b, &y) in b_values.iter().zip(&ys) {
        sxy += (b - b_mean) * (y - y_mean);
        sxx += (b - b_mean) * (b - b_mean);
    }
    Some((-sxy / sxx).max(0.0))
}

/// Voxel-wise mono-exponential ADC fit of a series.
pub fn adc_fit(series: &DwiSeries) -> Result<AdcFit> {
    if series.b_values.len() < 2 || series.signals.len() != series.b_values.len() {
        return Err(Error::Shape(format!(
            "series has {} signal volumes for {} b-values",
            series.signals.len(),
            series.b_values.len()
        )));
    }
    let n = series.signals[0].len();
    let mut flagged = 0;
    let values = (0..n)
        .map(|i| {
            fit_voxel(&series.b_values, series.signals.iter().map(|s| s[i])).unwrap_or_else(|| {
                flagged += 1;
                0.0
            })
        })
        .collect();
    Ok(AdcFit {
        dims: series.dims,
        spacing_mm: series.spacing_mm,
        values,
        flagged,
    })
}
