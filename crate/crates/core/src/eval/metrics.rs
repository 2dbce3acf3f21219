//! Overlap and boundary-distance metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{MaskSet, Zone};

/// Dice coefficient with a flag set when both masks are empty (value 1.0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub degenerate: bool,
}

fn same_len(a: &[u8], b: &[u8]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("mask sizes differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.0 (flagged).
pub fn dice(a: &[u8], b: &[u8]) -> Result<Flagged> {
    same_len(a, b)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(if total == 0 {
        Flagged {
            value: 1.0,
            degenerate: true,
        }
    } else {
        Flagged {
            value: 2.0 * inter as f64 / total as f64,
            degenerate: false,
        }
    })
}

/// Sensitivity and specificity of `pred` against `truth`. An empty
/// denominator yields 1.0 with the corresponding flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SenSpc {
    pub sen: Flagged,
    pub spc: Flagged,
}

pub fn sen_spc(pred: &[u8], truth: &[u8]) -> Result<SenSpc> {
    same_len(pred, truth)?;
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            Flagged {
                value: 1.0,
                degenerate: true,
            }
        } else {
            Flagged {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    };
    Ok(SenSpc {
        sen: ratio(tp, tp + fneg),
        spc: ratio(tn, tn + fp),
    })
}

/// How boundary distances are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HdMode {
    /// Per-slice 2D distance between in-plane boundaries, maximised over
    /// slices where both masks are present.
    #[default]
    Slice2d,
    /// 3D distance between boundaries under 6-connectivity.
    Volume3d,
}

/// Boundary voxels: mask voxels with a face neighbour outside the mask
/// (the volume border counts as outside). In 2D mode only in-plane
/// neighbours are considered.
pub fn boundary(mask: &[u8], dims: [usize; 3], mode: HdMode) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = dims;
    let on = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && mask[x as usize + nx * (y as usize + ny * z as usize)] != 0
    };
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask[x + nx * (y + ny * z)] == 0 {
                    continue;
                }
                let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                let mut edge = !on(xi - 1, yi, zi) || !on(xi + 1, yi, zi) || !on(xi, yi - 1, zi) || !on(xi, yi + 1, zi);
                if mode == HdMode::Volume3d {
                    edge |= !on(xi, yi, zi - 1) || !on(xi, yi, zi + 1);
                }
                if edge {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Directed Hausdorff distance `max_{a∈A} min_{b∈B} |a-b|` in squared mm.
///
/// `B` is bucketed by its first coordinate (sorted), and for each `a` the
/// search walks outward from `a`'s bucket until the coordinate gap alone
/// exceeds the best distance found so far.
fn directed_sq(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let mut sorted: Vec<[f64; 3]> = b.to_vec();
    sorted.sort_by(|p, q| p[0].total_cmp(&q[0]));
    let mut worst: f64 = 0.0;
    for p in a {
        let start = sorted.partition_point(|q| q[0] < p[0]);
        let mut best = f64::INFINITY;
        let d2 = |q: &[f64; 3]| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>();
        for q in &sorted[start..] {
            if (q[0] - p[0]).powi(2) > best {
                break;
            }
            best = best.min(d2(q));
        }
        for q in sorted[..start].iter().rev() {
            if (q[0] - p[0]).powi(2) > best {
                break;
            }
            best = best.min(d2(q));
        }
        worst = worst.max(best);
        if worst == f64::INFINITY {
            break;
        }
    }
    worst
}

fn to_mm(points: &[[usize; 3]], spacing: [f64; 3]) -> Vec<[f64; 3]> {
    points
        .iter()
        .map(|p| std::array::from_fn(|k| p[k] as f64 * spacing[k]))
        .collect()
}

/// Symmetric Hausdorff distance between two point sets in mm.
pub fn hausdorff_points(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    directed_sq(a, b).max(directed_sq(b, a)).sqrt()
}

/// Symmetric Hausdorff distance between mask boundaries, in mm.
///
/// In [`HdMode::Slice2d`] the distance is evaluated per slice and the
/// maximum over slices containing both masks is returned; if no slice
/// contains both, the 3D distance is used instead.
pub fn hausdorff_mm(a: &[u8], b: &[u8], dims: [usize; 3], spacing_mm: [f64; 3], mode: HdMode) -> Result<f64> {
    same_len(a, b)?;
    if a.len() != dims.iter().product::<usize>() {
        return Err(Error::Shape(format!(
            "mask length {} does not match dims {dims:?}",
            a.len()
        )));
    }
    if !a.iter().any(|&v| v != 0) || !b.iter().any(|&v| v != 0) {
        return Err(Error::EmptyMask("Hausdorff distance needs two non-empty masks".into()));
    }
    let ba = boundary(a, dims, mode);
    let bb = boundary(b, dims, mode);
    if mode == HdMode::Volume3d {
        return Ok(hausdorff_points(&to_mm(&ba, spacing_mm), &to_mm(&bb, spacing_mm)));
    }
    let plane_spacing = [spacing_mm[0], spacing_mm[1], 0.0];
    let mut worst: Option<f64> = None;
    for z in 0..dims[2] {
        let pa: Vec<_> = ba.iter().filter(|p| p[2] == z).copied().collect();
        let pb: Vec<_> = bb.iter().filter(|p| p[2] == z).copied().collect();
        if pa.is_empty() || pb.is_empty() {
            continue;
        }
        let d = hausdorff_points(&to_mm(&pa, plane_spacing), &to_mm(&pb, plane_spacing));
        worst = Some(worst.map_or(d, |w: f64| w.max(d)));
    }
    match worst {
        Some(d) => Ok(d),
        None => hausdorff_mm(a, b, dims, spacing_mm, HdMode::Volume3d),
    }
}

/// Per-case, per-zone evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub case_id: String,
    pub zone: Zone,
    pub dice: f64,
    pub sen: f64,
    pub spc: f64,
    /// Absent when either mask of the zone is empty.
    pub hd_mm: Option<f64>,
    /// Set when a value above was defined by a degenerate-denominator rule.
    pub degenerate: bool,
}

/// Metrics for every zone of a predicted mask set.
pub fn evaluate(case_id: &str, pred: &MaskSet, truth: &MaskSet, mode: HdMode) -> Result<Vec<MetricsRow>> {
    if pred.dims() != truth.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    Zone::ALL
        .iter()
        .map(|&zone| {
            let (p, t) = (pred.zone(zone), truth.zone(zone));
            let d = dice(p, t)?;
            let s = sen_spc(p, t)?;
            let hd = match hausdorff_mm(p, t, truth.dims(), truth.spacing_mm(), mode) {
                Ok(v) => Some(v),
                Err(Error::EmptyMask(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(MetricsRow {
                case_id: case_id.to_string(),
                zone,
                dice: d.value,
                sen: s.sen.value,
                spc: s.spc.value,
                hd_mm: hd,
                degenerate: d.degenerate || s.sen.degenerate || s.spc.degenerate,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(dims: [usize; 3], on: &[[usize; 3]]) -> Vec<u8> {
        let mut m = vec![0u8; dims.iter().product()];
        for p in on {
            m[p[0] + dims[0] * (p[1] + dims[1] * p[2])] = 1;
        }
        m
    }

    #[test]
    fn dice_examples() {
        let a = [1, 1, 1, 1, 0, 0, 0, 0];
        let b = [1, 1, 0, 0, 1, 1, 0, 0];
        assert_eq!(dice(&a, &b).unwrap().value, 0.5);
        assert_eq!(dice(&a, &a).unwrap().value, 1.0);
        let c = [0, 0, 0, 0, 0, 0, 1, 1];
        assert_eq!(dice(&a, &c).unwrap().value, 0.0);
        let z = [0u8; 8];
        assert_eq!(
            dice(&z, &z).unwrap(),
            Flagged {
                value: 1.0,
                degenerate: true
            }
        );
        assert_eq!(dice(&z, &a).unwrap().value, 0.0);
        assert!(matches!(dice(&a, &a[..4]), Err(Error::Shape(_))));
    }

    #[test]
    fn sen_spc_examples() {
        let t = [1, 1, 0, 0];
        let r = sen_spc(&t, &t).unwrap();
        assert_eq!((r.sen.value, r.spc.value), (1.0, 1.0));
        let r = sen_spc(&[0, 0, 1, 1], &t).unwrap();
        assert_eq!((r.sen.value, r.spc.value), (0.0, 0.0));
        let r = sen_spc(&[0; 4], &[0; 4]).unwrap();
        assert!(r.sen.degenerate && r.sen.value == 1.0);
        assert!(!r.spc.degenerate && r.spc.value == 1.0);
    }

    #[test]
    fn single_pair_distance() {
        let dims = [5, 5, 1];
        let a = mask(dims, &[[0, 0, 0]]);
        let b = mask(dims, &[[3, 4, 0]]);
        let d = hausdorff_mm(&a, &b, dims, [0.5, 0.5, 3.0], HdMode::Slice2d).unwrap();
        assert_eq!(d, 2.5);
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let dims = [6, 6, 2];
        let a = mask(dims, &[[1, 1, 0], [2, 1, 0], [2, 2, 1], [4, 4, 1]]);
        for mode in [HdMode::Slice2d, HdMode::Volume3d] {
            assert_eq!(hausdorff_mm(&a, &a, dims, [1.0; 3], mode).unwrap(), 0.0);
        }
    }

    #[test]
    fn interior_voxels_are_not_boundary() {
        let dims = [5, 5, 1];
        let all: Vec<[usize; 3]> = (1..4).flat_map(|y| (1..4).map(move |x| [x, y, 0])).collect();
        let b = boundary(&mask(dims, &all), dims, HdMode::Slice2d);
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&[2, 2, 0]));
    }

    #[test]
    fn empty_mask_errors() {
        let dims = [3, 3, 1];
        let a = mask(dims, &[[1, 1, 0]]);
        let e = hausdorff_mm(&a, &[0; 9], dims, [1.0; 3], HdMode::Slice2d);
        assert!(matches!(e, Err(Error::EmptyMask(_))));
    }

    #[test]
    fn slice_mode_ignores_unpaired_slices() {
        let dims = [8, 8, 2];
        let a = mask(dims, &[[0, 0, 0], [7, 7, 1]]);
        let b = mask(dims, &[[1, 0, 0]]);
        assert_eq!(hausdorff_mm(&a, &b, dims, [1.0; 3], HdMode::Slice2d).unwrap(), 1.0);
        let d3 = hausdorff_mm(&a, &b, dims, [1.0; 3], HdMode::Volume3d).unwrap();
        assert!((d3 - (36.0f64 + 49.0 + 1.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rows() {
        let dims = [4, 4, 1];
        let pg = mask(dims, &[[1, 1, 0], [2, 1, 0], [1, 2, 0], [2, 2, 0]]);
        let cz = mask(dims, &[[1, 1, 0]]);
        let pz = mask(dims, &[[2, 2, 0]]);
        let truth = MaskSet::new(dims, [1.0; 3], pg.clone(), cz, pz).unwrap();
        let rows = evaluate("c", &truth, &truth, HdMode::Slice2d).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows
            .iter()
            .all(|r| r.dice == 1.0 && r.hd_mm == Some(0.0) && !r.degenerate));
    }
}
