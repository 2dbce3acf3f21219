//! Zonal ROI tabulation and CSV / markdown reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::MetricsRow;
use crate::eval::stats::{Summary, TestKind, ZoneSummary};
use crate::volume::{CaseRecord, MapKind, MaskSet, VolumeGrid, Zone};

/// Mean and sample standard deviation of one map inside one zone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneStats {
    pub zone: Zone,
    pub kind: MapKind,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

fn zone_values(map: &VolumeGrid, mask: &[u8]) -> Vec<f64> {
    map.values()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v as f64)
        .collect()
}

/// Statistics of `map` inside `mask`, or `None` for an empty zone.
pub fn zone_stats(map: &VolumeGrid, masks: &MaskSet, zone: Zone) -> Result<Option<ZoneStats>> {
    if map.dims() != masks.dims() {
        return Err(Error::Shape(format!(
            "{} map {:?} vs mask {:?}",
            map.kind(),
            map.dims(),
            masks.dims()
        )));
    }
    let v = zone_values(map, masks.zone(zone));
    Ok(summary_stats(&v, zone, map.kind()))
}

fn summary_stats(v: &[f64], zone: Zone, kind: MapKind) -> Option<ZoneStats> {
    Summary::of(v).ok().map(|s| ZoneStats {
        zone,
        kind,
        mean: s.mean,
        sd: s.sd,
        n: s.n,
    })
}

/// One zone of one tabulation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabCell {
    pub mask: Option<ZoneStats>,
    pub predicted: Option<ZoneStats>,
    /// Absent when either sample is too small or degenerate for a t-test.
    pub p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabRow {
    pub kind: MapKind,
    /// PG, CZ, PZ.
    pub cells: Vec<TabCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tabulation {
    pub test: TestKind,
    pub rows: Vec<TabRow>,
}

fn check_sums(m: &MaskSet) -> Result<()> {
    if m.count(Zone::Cz) + m.count(Zone::Pz) > m.count(Zone::Pg) {
        return Err(Error::Invariant("zone voxel counts exceed the gland".into()));
    }
    Ok(())
}

fn cell(x: &[f64], y: &[f64], zone: Zone, kind: MapKind, test: TestKind) -> TabCell {
    TabCell {
        mask: summary_stats(x, zone, kind),
        predicted: summary_stats(y, zone, kind),
        p: test.run(x, y).ok().map(|r| r.p),
    }
}

/// Voxel-level tabulation of one case: the samples compared are the voxel
/// values inside the ground-truth and predicted zones.
pub fn tabulate(case: &CaseRecord, pred: &MaskSet, kinds: &[MapKind], test: TestKind) -> Result<Tabulation> {
    check_sums(&case.truth)?;
    check_sums(pred)?;
    let mut rows = Vec::new();
    for &kind in kinds {
        let map = case.map(kind)?;
        if !map.same_geometry(pred.dims(), pred.spacing_mm()) {
            return Err(Error::Shape(format!(
                "{kind} map and predicted masks are not co-registered"
            )));
        }
        let cells = Zone::ALL
            .iter()
            .map(|&zone| {
                let x = zone_values(map, case.truth.zone(zone));
                let y = zone_values(map, pred.zone(zone));
                cell(&x, &y, zone, kind, test)
            })
            .collect();
        rows.push(TabRow { kind, cells });
    }
    Ok(Tabulation { test, rows })
}

/// Cohort tabulation: each case contributes its zone mean, and the columns
/// summarise and compare those case means.
pub fn tabulate_cohort(items: &[(&CaseRecord, &MaskSet)], kinds: &[MapKind], test: TestKind) -> Result<Tabulation> {
    if items.is_empty() {
        return Err(Error::Stats("cannot tabulate an empty cohort".into()));
    }
    let mut rows = Vec::new();
    for &kind in kinds {
        let mut cells = Vec::new();
        for zone in Zone::ALL {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (case, pred) in items {
                check_sums(&case.truth)?;
                check_sums(pred)?;
                let map = case.map(kind)?;
                let truth = zone_stats(map, &case.truth, zone)?;
                let p = zone_stats(map, pred, zone)?;
                // Paired tests need both members of a pair.
                match (truth, p, test) {
                    (Some(a), Some(b), _) => {
                        x.push(a.mean);
                        y.push(b.mean);
                    }
                    (Some(a), None, TestKind::Welch) => x.push(a.mean),
                    (None, Some(b), TestKind::Welch) => y.push(b.mean),
                    _ => {}
                }
            }
            cells.push(cell(&x, &y, zone, kind, test));
        }
        rows.push(TabRow { kind, cells });
    }
    Ok(Tabulation { test, rows })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

const METRICS_HEADER: [&str; 7] = ["case_id", "zone", "DS", "Sen", "Spc", "HD_mm", "degenerate"];

fn metrics_rows(rows: &[MetricsRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.case_id.clone(),
                r.zone.label().to_string(),
                r.dice.to_string(),
                r.sen.to_string(),
                r.spc.to_string(),
                r.hd_mm.map(|v| v.to_string()).unwrap_or_default(),
                r.degenerate.to_string(),
            ]
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_rows(path, &METRICS_HEADER.map(String::from), &metrics_rows(rows))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let bad = |what: &str| Error::Format(format!("{}: bad {what}", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != METRICS_HEADER.len() {
            return Err(bad("column count"));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(METRICS_HEADER[i]));
        let zone = Zone::ALL
            .into_iter()
            .find(|z| z.label() == &rec[1])
            .ok_or_else(|| bad("zone"))?;
        out.push(MetricsRow {
            case_id: rec[0].to_string(),
            zone,
            dice: num(2)?,
            sen: num(3)?,
            spc: num(4)?,
            hd_mm: if rec[5].is_empty() { None } else { Some(num(5)?) },
            degenerate: rec[6].parse().map_err(|_| bad("degenerate"))?,
        });
    }
    Ok(out)
}

pub fn metrics_markdown(rows: &[MetricsRow]) -> String {
    markdown(&METRICS_HEADER.map(String::from), &metrics_rows(rows))
}

/// Column header of the per-model summary table.
pub fn summary_header() -> Vec<String> {
    let mut h = vec!["Model".to_string()];
    for z in Zone::ALL {
        for c in ["Dice", "Std", "Median", "Sen", "Spc", "HD"] {
            h.push(format!("{} {c}", z.label()));
        }
    }
    h
}

fn summary_rows(models: &[(String, BTreeMap<Zone, ZoneSummary>)], prec: usize) -> Vec<Vec<String>> {
    let f = |v: f64| format!("{v:.prec$}");
    models
        .iter()
        .map(|(name, zs)| {
            let mut r = vec![name.clone()];
            for z in Zone::ALL {
                match zs.get(&z) {
                    Some(s) => {
                        r.extend([
                            f(s.dice.mean),
                            f(s.dice.sd),
                            f(s.dice.median),
                            f(s.sen.mean),
                            f(s.spc.mean),
                        ]);
                        r.push(s.hd_mm.map(|h| f(h.mean)).unwrap_or_default());
                    }
                    None => r.extend(std::iter::repeat_n(String::new(), 6)),
                }
            }
            r
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, models: &[(String, BTreeMap<Zone, ZoneSummary>)]) -> Result<()> {
    write_rows(path, &summary_header(), &summary_rows(models, 6))
}

pub fn summary_markdown(models: &[(String, BTreeMap<Zone, ZoneSummary>)]) -> String {
    markdown(&summary_header(), &summary_rows(models, 2))
}

/// Column header of the tabulation table.
pub fn tabulation_header() -> Vec<String> {
    let mut h = vec!["Map".to_string()];
    for z in Zone::ALL {
        h.push(format!("{} mask", z.label()));
        h.push(format!("{} predicted", z.label()));
    }
    for z in Zone::ALL {
        h.push(format!("{} P-value", z.label()));
    }
    h
}

fn tabulation_rows(t: &Tabulation, prec: usize) -> Vec<Vec<String>> {
    let ms = |s: &Option<ZoneStats>| {
        s.map(|s| format!("{:.prec$}±{:.prec$}", s.mean, s.sd))
            .unwrap_or_default()
    };
    t.rows
        .iter()
        .map(|row| {
            let mut r = vec![row.kind.label().to_string()];
            for c in &row.cells {
                r.push(ms(&c.mask));
                r.push(ms(&c.predicted));
            }
            for c in &row.cells {
                r.push(c.p.map(|p| format!("{p:.prec$}")).unwrap_or_default());
            }
            r
        })
        .collect()
}

pub fn write_tabulation_csv(path: &Path, t: &Tabulation) -> Result<()> {
    write_rows(path, &tabulation_header(), &tabulation_rows(t, 6))
}

pub fn tabulation_markdown(t: &Tabulation) -> String {
    markdown(&tabulation_header(), &tabulation_rows(t, 2))
}
