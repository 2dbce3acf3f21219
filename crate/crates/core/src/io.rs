//! On-disk formats.
//!
//! A volume `X.mvol` is a raw little-endian `f32` payload in x-fastest order
//! with its header in the sidecar `X.mvol.json`:
//!
//! ```json
//! {"kind":"mag","dims":[128,128,25],"spacing_mm":[2.0,2.0,2.0],"dtype":"f32le"}
//! ```
//!
//! A mask `X.mmask` holds three `u8` planes (pg, cz, pz) one after another,
//! with header `X.mmask.json` (`"dtype":"u8"`, `"zones":["pg","cz","pz"]`).
//! Both headers may carry an optional `provenance` object.
//!
//! A dataset directory has a `manifest.json` listing every case with its
//! split tag and file paths relative to the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{CaseRecord, MapKind, MaskSet, Split, VolumeGrid, Zone};

/// Free-form provenance attached to written artifacts.
pub type Provenance = serde_json::Value;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeHeader {
    kind: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    zones: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// Path of the JSON header that accompanies a payload file.
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

pub fn write_volume(v: &VolumeGrid, path: &Path) -> Result<()> {
    write_volume_with(v, path, None)
}

pub fn write_volume_with(v: &VolumeGrid, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
    ensure_parent(path)?;
    let header = VolumeHeader {
        kind: v.kind().as_str().to_string(),
        dims: v.dims(),
        spacing_mm: v.spacing_mm(),
        dtype: "f32le".into(),
        provenance: provenance.cloned(),
    };
    let payload: Vec<u8> = v.values().iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    write_json(&header_path(path), &header)
}

pub fn read_volume(path: &Path) -> Result<VolumeGrid> {
    let header: VolumeHeader = read_json(&header_path(path))?;
    if header.dtype != "f32le" {
        return Err(Error::Format(format!(
            "{}: unsupported dtype {:?}",
            path.display(),
            header.dtype
        )));
    }
    let kind = MapKind::parse(&header.kind)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "{}: header dims {:?} need {} payload bytes, found {}",
            path.display(),
            header.dims,
            n * 4,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    VolumeGrid::new(kind, header.dims, header.spacing_mm, values)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_mask(m: &MaskSet, path: &Path) -> Result<()> {
    write_mask_with(m, path, None)
}

pub fn write_mask_with(m: &MaskSet, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
    ensure_parent(path)?;
    let header = MaskHeader {
        dims: m.dims(),
        spacing_mm: m.spacing_mm(),
        dtype: "u8".into(),
        zones: vec!["pg".into(), "cz".into(), "pz".into()],
        provenance: provenance.cloned(),
    };
    let mut payload = Vec::with_capacity(3 * m.len());
    for zone in Zone::ALL {
        payload.extend_from_slice(m.zone(zone));
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    write_json(&header_path(path), &header)
}

pub fn read_mask(path: &Path) -> Result<MaskSet> {
    let header: MaskHeader = read_json(&header_path(path))?;
    if header.dtype != "u8" || header.zones != ["pg", "cz", "pz"] {
        return Err(Error::Format(format!("{}: unsupported mask layout", path.display())));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != 3 * n {
        return Err(Error::Format(format!(
            "{}: header dims {:?} need {} payload bytes, found {}",
            path.display(),
            header.dims,
            3 * n,
            bytes.len()
        )));
    }
    if let Some(i) = bytes.iter().position(|&b| b > 1) {
        return Err(Error::Format(format!(
            "{}: byte {} at {i} is not 0/1",
            path.display(),
            bytes[i]
        )));
    }
    let (pg, rest) = bytes.split_at(n);
    let (cz, pz) = rest.split_at(n);
    MaskSet::new(header.dims, header.spacing_mm, pg.to_vec(), cz.to_vec(), pz.to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub case_id: String,
    pub split: Split,
    pub maps: BTreeMap<MapKind, PathBuf>,
    pub truth: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub cases: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(Self::FILE_NAME))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(Self::FILE_NAME), self)
    }

    pub fn entries(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestEntry> {
        self.cases.iter().filter(move |e| split.is_none_or(|s| e.split == s))
    }
}

/// Reads one manifest entry (paths relative to `dir`).
pub fn load_case(dir: &Path, entry: &ManifestEntry) -> Result<CaseRecord> {
    let maps = entry
        .maps
        .iter()
        .map(|(k, p)| {
            let v = read_volume(&dir.join(p))?;
            if v.kind() != *k {
                return Err(Error::Format(format!(
                    "{}: manifest says {k}, header says {}",
                    p.display(),
                    v.kind()
                )));
            }
            Ok((*k, v))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let truth = read_mask(&dir.join(&entry.truth))?;
    CaseRecord::new(entry.case_id.clone(), maps, truth, entry.split)
}

/// Loads every case of `split` (all cases for `None`) in manifest order.
pub fn load_cases(dir: &Path, split: Option<Split>) -> Result<Vec<CaseRecord>> {
    let manifest = Manifest::load(dir)?;
    manifest.entries(split).map(|e| load_case(dir, e)).collect()
}

/// Writes a case under `dir/<case_id>/` and returns its manifest entry.
pub fn save_case(dir: &Path, case: &CaseRecord, provenance: Option<&Provenance>) -> Result<ManifestEntry> {
    let rel = PathBuf::from(&case.case_id);
    let mut maps = BTreeMap::new();
    for (kind, v) in &case.maps {
        let file = rel.join(format!("{}.mvol", kind.as_str()));
        write_volume_with(v, &dir.join(&file), provenance)?;
        maps.insert(*kind, file);
    }
    let truth = rel.join("truth.mmask");
    write_mask_with(&case.truth, &dir.join(&truth), provenance)?;
    Ok(ManifestEntry {
        case_id: case.case_id.clone(),
        split: case.split,
        maps,
        truth,
    })
}

/// Writes all cases and the manifest.
pub fn save_dataset(dir: &Path, cases: &[CaseRecord], provenance: Option<&Provenance>) -> Result<Manifest> {
    let entries = cases
        .iter()
        .map(|c| save_case(dir, c, provenance))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        cases: entries,
        provenance: provenance.cloned(),
    };
    manifest.save(dir)?;
    Ok(manifest)
}
