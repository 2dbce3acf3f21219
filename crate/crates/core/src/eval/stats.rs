//! Summary statistics and two-sample t-tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};
use crate::eval::metrics::MetricsRow;
use crate::volume::Zone;

/// Mean, sample standard deviation and median of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

impl Summary {
    /// `sd` uses the `n - 1` denominator (0 for a single value); the median
    /// of an even-sized sample is the midpoint of the two central values.
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Stats("cannot summarise an empty sample".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        Ok(Summary { n, mean, sd, median })
    }
}

/// Per-zone summaries of every metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    pub dice: Summary,
    pub sen: Summary,
    pub spc: Summary,
    /// Absent when no row of the zone has a Hausdorff distance.
    pub hd_mm: Option<Summary>,
}

pub fn aggregate(rows: &[MetricsRow]) -> Result<BTreeMap<Zone, ZoneSummary>> {
    if rows.is_empty() {
        return Err(Error::Stats("no metric rows to aggregate".into()));
    }
    let mut out = BTreeMap::new();
    for zone in Zone::ALL {
        let zr: Vec<&MetricsRow> = rows.iter().filter(|r| r.zone == zone).collect();
        if zr.is_empty() {
            continue;
        }
        let col = |f: fn(&MetricsRow) -> f64| zr.iter().map(|r| f(r)).collect::<Vec<_>>();
        let hd: Vec<f64> = zr.iter().filter_map(|r| r.hd_mm).collect();
        out.insert(
            zone,
            ZoneSummary {
                dice: Summary::of(&col(|r| r.dice))?,
                sen: Summary::of(&col(|r| r.sen))?,
                spc: Summary::of(&col(|r| r.spc))?,
                hd_mm: if hd.is_empty() { None } else { Some(Summary::of(&hd)?) },
            },
        );
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub dof: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Two-sided tail probability `P(|T| ≥ |t|)` of Student's t with `dof`
/// degrees of freedom, `I_{ν/(ν+t²)}(ν/2, 1/2)`.
pub fn student_t_two_sided(t: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || !t.is_finite() {
        return Err(Error::Stats(format!(
            "invalid t statistic {t} with {dof} degrees of freedom"
        )));
    }
    let x = dof / (dof + t * t);
    let p = checked_beta_reg(dof / 2.0, 0.5, x).map_err(|e| Error::Stats(e.to_string()))?;
    Ok(p.clamp(0.0, 1.0))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Welch's unequal-variance t-test.
///
/// Two constant samples with equal means are identical for all practical
/// purposes and get `t = 0, p = 1`; constant samples with different means
/// are an error.
pub fn welch_t(x: &[f64], y: &[f64]) -> Result<TTestResult> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Stats(format!(
            "t-test needs two samples of size >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (sx, sy) = (vx / nx, vy / ny);
    if sx + sy == 0.0 {
        if mx == my {
            return Ok(TTestResult {
                t: 0.0,
                dof: nx + ny - 2.0,
                p: 1.0,
            });
        }
        return Err(Error::Stats("both samples are constant with different means".into()));
    }
    let t = (mx - my) / (sx + sy).sqrt();
    let dof = (sx + sy).powi(2) / (sx * sx / (nx - 1.0) + sy * sy / (ny - 1.0));
    Ok(TTestResult {
        t,
        dof,
        p: student_t_two_sided(t, dof)?,
    })
}

/// Paired t-test on `x[i] - y[i]`. All-zero differences give `p = 1`.
pub fn paired_t(x: &[f64], y: &[f64]) -> Result<TTestResult> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Stats(format!(
            "paired t-test needs equal sizes >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let (m, v) = mean_var(&d);
    let n = d.len() as f64;
    if v == 0.0 {
        if m == 0.0 {
            return Ok(TTestResult {
                t: 0.0,
                dof: n - 1.0,
                p: 1.0,
            });
        }
        return Err(Error::Stats("paired differences are constant and non-zero".into()));
    }
    let t = m / (v / n).sqrt();
    Ok(TTestResult {
        t,
        dof: n - 1.0,
        p: student_t_two_sided(t, n - 1.0)?,
    })
}

/// Which test compares mask and predicted statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    #[default]
    Welch,
    Paired,
}

impl TestKind {
    pub fn run(self, x: &[f64], y: &[f64]) -> Result<TTestResult> {
        match self {
            TestKind::Welch => welch_t(x, y),
            TestKind::Paired => paired_t(x, y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `P(|T| ≥ t)` by Simpson quadrature of the unnormalised density
    /// `(1 + x²/ν)^(-(ν+1)/2)`, mapping `[0, ∞)` onto `[0, 1)` with
    /// `x = u / (1 - u)`.
    fn tail_by_quadrature(t: f64, dof: f64) -> f64 {
        let f = |x: f64| (1.0 + x * x / dof).powf(-(dof + 1.0) / 2.0);
        let g = |u: f64| {
            if u >= 1.0 {
                0.0
            } else {
                f(u / (1.0 - u)) / (1.0 - u).powi(2)
            }
        };
        let simpson = |a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut s = g(a) + g(b);
            for i in 1..n {
                s += g(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let ut = t.abs() / (1.0 + t.abs());
        let n = 200_000;
        simpson(ut, 1.0, n) / simpson(0.0, 1.0, n)
    }

    #[test]
    fn summary_examples() {
        let s = Summary::of(&[0.7]).unwrap();
        assert_eq!((s.mean, s.sd, s.median), (0.7, 0.0, 0.7));
        let s = Summary::of(&[0.9, 0.94]).unwrap();
        assert!((s.mean - 0.92).abs() < 1e-15);
        assert!((s.median - 0.92).abs() < 1e-15);
        assert!((s.sd - 0.04 / 2f64.sqrt()).abs() < 1e-15);
        assert!((s.sd - 0.0283).abs() < 1e-4);
        assert_eq!(Summary::of(&[3.0, 1.0, 2.0]).unwrap().median, 2.0);
        assert!(matches!(Summary::of(&[]), Err(Error::Stats(_))));
    }

    #[test]
    fn identical_samples_give_p_one() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let r = welch_t(&x, &x).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = paired_t(&x, &x).unwrap();
        assert_eq!(r.p, 1.0);
        let c = [2.0; 5];
        assert_eq!(welch_t(&c, &c).unwrap().p, 1.0);
        assert!(welch_t(&c, &[3.0; 5]).is_err());
    }

    #[test]
    fn welch_reference_values() {
        let r = welch_t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.dof - 8.0).abs() < 1e-12);
        assert!((r.p - tail_by_quadrature(1.0, 8.0)).abs() < 1e-9);
        assert!((r.p - 0.34659350708733416).abs() < 1e-12);

        let r = welch_t(&[1.0, 2.5, 2.9, 4.1], &[3.2, 3.9, 5.5, 6.1, 7.7, 8.0]).unwrap();
        assert!((r.t + 3.0459180875896403).abs() < 1e-12);
        assert!((r.dof - 7.989321265117189).abs() < 1e-9);
        assert!((r.p - 0.015944598763783204).abs() < 1e-12);
        assert!((r.p - tail_by_quadrature(r.t, r.dof)).abs() < 1e-9);
    }

    #[test]
    fn paired_reference_value() {
        let r = paired_t(&[1.0, 2.5, 2.9, 4.1, 5.0], &[1.2, 2.4, 3.5, 4.0, 5.9]).unwrap();
        assert!((r.t + 1.5191090506255003).abs() < 1e-12);
        assert!((r.p - 0.20335725704650634).abs() < 1e-12);
    }

    #[test]
    fn separated_samples_are_significant() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let sd = Summary::of(&x).unwrap().sd;
        let y: Vec<f64> = x.iter().map(|v| v + 10.0 * sd).collect();
        let shifted: Vec<f64> = x.iter().rev().copied().collect();
        assert!(welch_t(&shifted, &y).unwrap().p < 1e-6);
    }

    #[test]
    fn p_is_monotone_in_mean_difference() {
        let base: Vec<f64> = (0..8).map(|i| ((i * 5) % 7) as f64).collect();
        let mut last = 1.0;
        for k in 0..40 {
            let y: Vec<f64> = base.iter().map(|v| v + k as f64 * 0.25).collect();
            let p = welch_t(&base, &y).unwrap().p;
            assert!(p <= last + 1e-15, "p rose at shift {k}");
            last = p;
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
        assert!(paired_t(&[1.0, 2.0], &[1.0]).is_err());
        assert!(student_t_two_sided(1.0, 0.0).is_err());
    }
}
