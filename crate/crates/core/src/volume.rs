//! Scalar maps, zone masks and subject records.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six co-registered image types of a multiparametric examination.
///
/// The declaration order is the canonical channel order used everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MapKind {
    #[serde(rename = "t2w")]
    T2w,
    #[serde(rename = "dwi_b")]
    DwiB,
    #[serde(rename = "adc")]
    Adc,
    #[serde(rename = "mag")]
    Mag,
    #[serde(rename = "sws")]
    Sws,
    #[serde(rename = "phi")]
    Phi,
}

impl MapKind {
    pub const ALL: [MapKind; 6] = [
        MapKind::T2w,
        MapKind::DwiB,
        MapKind::Adc,
        MapKind::Mag,
        MapKind::Sws,
        MapKind::Phi,
    ];

    /// Elastography-derived maps, the ones tabulated per zone.
    pub const MRE: [MapKind; 3] = [MapKind::Sws, MapKind::Mag, MapKind::Phi];

    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::T2w => "t2w",
            MapKind::DwiB => "dwi_b",
            MapKind::Adc => "adc",
            MapKind::Mag => "mag",
            MapKind::Sws => "sws",
            MapKind::Phi => "phi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        MapKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown map kind {s:?}")))
    }

    /// Position in the canonical channel order.
    pub fn slot(self) -> usize {
        self as usize
    }

    /// Report label, as used in the result tables.
    pub fn label(self) -> &'static str {
        match self {
            MapKind::T2w => "T2w",
            MapKind::DwiB => "DWI_b",
            MapKind::Adc => "ADC",
            MapKind::Mag => "mag",
            MapKind::Sws => "SWS",
            MapKind::Phi => "phi",
        }
    }

    fn check_value(self, v: f32) -> bool {
        match self {
            MapKind::Phi => (0.0..=std::f32::consts::FRAC_PI_2).contains(&v),
            _ => v >= 0.0,
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_geometry(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Invariant(format!("dims must be positive, got {dims:?}")));
    }
    if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::Invariant(format!(
            "spacing must be positive and finite, got {spacing_mm:?}"
        )));
    }
    Ok(())
}

/// One scalar 3D map, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid {
    kind: MapKind,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    values: Vec<f32>,
}

impl VolumeGrid {
    pub fn new(kind: MapKind, dims: [usize; 3], spacing_mm: [f64; 3], values: Vec<f32>) -> Result<Self> {
        check_geometry(dims, spacing_mm)?;
        let n = dims.iter().product::<usize>();
        if values.len() != n {
            return Err(Error::Invariant(format!(
                "{kind} volume {dims:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && kind.check_value(**v)))
        {
            return Err(Error::Invariant(format!("{kind} value {v} at index {i} out of range")));
        }
        Ok(Self {
            kind,
            dims,
            spacing_mm,
            values,
        })
    }

    pub fn filled(kind: MapKind, dims: [usize; 3], spacing_mm: [f64; 3], value: f32) -> Result<Self> {
        Self::new(kind, dims, spacing_mm, vec![value; dims.iter().product()])
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.slice_len();
        &self.values[z * n..(z + 1) * n]
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[x + self.dims[0] * (y + self.dims[1] * z)]
    }

    /// Same geometry, different contents; re-validated for `kind`.
    pub fn with_values(&self, kind: MapKind, values: Vec<f32>) -> Result<Self> {
        Self::new(kind, self.dims, self.spacing_mm, values)
    }

    pub fn same_geometry(&self, dims: [usize; 3], spacing_mm: [f64; 3]) -> bool {
        self.dims == dims && self.spacing_mm == spacing_mm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Pg,
    Cz,
    Pz,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Pg, Zone::Cz, Zone::Pz];

    pub fn label(self) -> &'static str {
        match self {
            Zone::Pg => "PG",
            Zone::Cz => "CZ",
            Zone::Pz => "PZ",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Gland, central-zone and peripheral-zone masks on one grid.
///
/// Always satisfies `cz ∩ pz = ∅` and `cz ∪ pz ⊆ pg`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    pg: Vec<u8>,
    cz: Vec<u8>,
    pz: Vec<u8>,
}

impl MaskSet {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], pg: Vec<u8>, cz: Vec<u8>, pz: Vec<u8>) -> Result<Self> {
        check_geometry(dims, spacing_mm)?;
        let n: usize = dims.iter().product();
        for (name, m) in [("pg", &pg), ("cz", &cz), ("pz", &pz)] {
            if m.len() != n {
                return Err(Error::Invariant(format!(
                    "{name} mask needs {n} voxels, got {}",
                    m.len()
                )));
            }
            if let Some(i) = m.iter().position(|&v| v > 1) {
                return Err(Error::Invariant(format!(
                    "{name} mask value {} at {i} is not binary",
                    m[i]
                )));
            }
        }
        for i in 0..n {
            if cz[i] & pz[i] != 0 {
                return Err(Error::Invariant(format!("cz and pz overlap at voxel {i}")));
            }
            if (cz[i] | pz[i]) > pg[i] {
                return Err(Error::Invariant(format!("zone voxel {i} lies outside pg")));
            }
        }
        Ok(Self {
            dims,
            spacing_mm,
            pg,
            cz,
            pz,
        })
    }

    pub fn empty(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing_mm, vec![0; n], vec![0; n], vec![0; n])
    }

    /// Builds masks from unconstrained per-zone predictions, enforcing the zone
    /// invariants: `pz := pz ∧ pg`, `cz := cz ∧ pg ∧ ¬pz` (or the mirror image
    /// with `TieRule::CzWins`).
    pub fn repaired(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        pg: Vec<u8>,
        mut cz: Vec<u8>,
        mut pz: Vec<u8>,
        tie: TieRule,
    ) -> Result<Self> {
        for i in 0..pg.len().min(cz.len()).min(pz.len()) {
            let g = pg[i].min(1);
            let (c, p) = (cz[i].min(1) & g, pz[i].min(1) & g);
            match tie {
                TieRule::PzWins => {
                    pz[i] = p;
                    cz[i] = c & (1 - p);
                }
                TieRule::CzWins => {
                    cz[i] = c;
                    pz[i] = p & (1 - c);
                }
            }
        }
        let pg = pg.into_iter().map(|v| v.min(1)).collect();
        Self::new(dims, spacing_mm, pg, cz, pz)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn len(&self) -> usize {
        self.pg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pg.is_empty()
    }

    pub fn zone(&self, zone: Zone) -> &[u8] {
        match zone {
            Zone::Pg => &self.pg,
            Zone::Cz => &self.cz,
            Zone::Pz => &self.pz,
        }
    }

    pub fn count(&self, zone: Zone) -> usize {
        self.zone(zone).iter().filter(|&&v| v != 0).count()
    }

    pub fn slice(&self, zone: Zone, z: usize) -> &[u8] {
        let n = self.dims[0] * self.dims[1];
        &self.zone(zone)[z * n..(z + 1) * n]
    }
}

/// Which zone keeps a voxel that both CZ and PZ predictions claim.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    PzWins,
    CzWins,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One subject: a subset of the six maps plus ground-truth zone masks.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub maps: BTreeMap<MapKind, VolumeGrid>,
    pub truth: MaskSet,
    pub split: Split,
}

impl CaseRecord {
    pub fn new(
        case_id: impl Into<String>,
        maps: BTreeMap<MapKind, VolumeGrid>,
        truth: MaskSet,
        split: Split,
    ) -> Result<Self> {
        let case = Self {
            case_id: case_id.into(),
            maps,
            truth,
            split,
        };
        case.check_geometry()?;
        Ok(case)
    }

    /// All maps share the grid of the truth masks.
    pub fn check_geometry(&self) -> Result<()> {
        for (kind, map) in &self.maps {
            if map.kind() != *kind {
                return Err(Error::Invariant(format!(
                    "case {}: map stored under {kind} has kind {}",
                    self.case_id,
                    map.kind()
                )));
            }
            if !map.same_geometry(self.truth.dims(), self.truth.spacing_mm()) {
                return Err(Error::Invariant(format!(
                    "case {}: {kind} grid {:?}@{:?} differs from mask grid {:?}@{:?}",
                    self.case_id,
                    map.dims(),
                    map.spacing_mm(),
                    self.truth.dims(),
                    self.truth.spacing_mm()
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.truth.dims()
    }

    pub fn map(&self, kind: MapKind) -> Result<&VolumeGrid> {
        self.maps
            .get(&kind)
            .ok_or_else(|| Error::Data(format!("case {} has no {kind} map", self.case_id)))
    }
}

/// An ordered, non-empty subset of map kinds from the fourteen supported
/// input combinations, stored in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputCombo(Vec<MapKind>);

use MapKind::{Adc, DwiB, Mag, Phi, Sws, T2w};

/// Supported combinations in report order, each with its table label.
const COMBOS: [(&[MapKind], &str); 14] = [
    (&[Mag, Sws, Phi], "All MRE"),
    (&[Mag, Sws], "SWS+mag"),
    (&[Sws, Phi], "SWS+phi"),
    (&[Mag, Phi], "mag+phi"),
    (&[Mag], "mag"),
    (&[Phi], "phi"),
    (&[Sws], "SWS"),
    (&[T2w, DwiB, Adc], "All MRI"),
    (&[T2w, Adc], "T2w+ADC"),
    (&[T2w, DwiB], "T2w+DWI_b"),
    (&[DwiB, Adc], "ADC+DWI_b"),
    (&[T2w], "T2w"),
    (&[Adc], "ADC"),
    (&[DwiB], "DWI_b"),
];

impl InputCombo {
    /// The fourteen supported combinations in report order.
    pub fn all() -> Vec<InputCombo> {
        COMBOS.iter().map(|(kinds, _)| InputCombo(kinds.to_vec())).collect()
    }

    pub fn from_kinds(kinds: &[MapKind]) -> Result<Self> {
        let mut sorted = kinds.to_vec();
        sorted.sort();
        let before = sorted.len();
        sorted.dedup();
        let describe = || kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+");
        if sorted.len() != before {
            return Err(Error::Combo(format!("{} repeats a map", describe())));
        }
        if COMBOS.iter().any(|(c, _)| *c == sorted.as_slice()) {
            Ok(InputCombo(sorted))
        } else {
            Err(Error::Combo(format!(
                "{{{}}} is not one of the 14 supported combinations",
                describe()
            )))
        }
    }

    pub fn kinds(&self) -> &[MapKind] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, kind: MapKind) -> bool {
        self.0.contains(&kind)
    }

    pub fn label(&self) -> &'static str {
        COMBOS
            .iter()
            .find(|(c, _)| *c == self.0.as_slice())
            .map(|(_, l)| *l)
            .expect("combo membership is checked at construction")
    }

    /// Machine key, e.g. `mag+sws`.
    pub fn key(&self) -> String {
        self.0.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+")
    }

    /// Parses a `+`-separated key such as `sws+mag`.
    pub fn parse_key(key: &str) -> Result<Self> {
        let names: Vec<&str> = key.split('+').map(str::trim).collect();
        validate_combo(&names)
    }
}

impl fmt::Display for InputCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl Serialize for InputCombo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for InputCombo {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let key = String::deserialize(d)?;
        InputCombo::parse_key(&key).map_err(serde::de::Error::custom)
    }
}

/// Parses map names into a canonical supported combination.
pub fn validate_combo<S: AsRef<str>>(names: &[S]) -> Result<InputCombo> {
    if names.is_empty() {
        return Err(Error::Combo("empty combination".into()));
    }
    let kinds = names
        .iter()
        .map(|n| MapKind::parse(n.as_ref()).map_err(|_| Error::Combo(format!("unknown map {:?}", n.as_ref()))))
        .collect::<Result<Vec<_>>>()?;
    InputCombo::from_kinds(&kinds)
}
