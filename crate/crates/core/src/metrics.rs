//! Error measures, per-strategy summaries and plot-ready tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative Frobenius error in percent over the given DOFs and time steps.
/// `None` selects everything.
pub fn err_q(reference: &DMatrix<f64>, approx: &DMatrix<f64>, dofs: Option<&[usize]>, steps: Option<&[usize]>) -> Result<f64> {
    if reference.shape() != approx.shape() {
        return Err(Error::shape(format!("reference {:?} vs approximation {:?}", reference.shape(), approx.shape())));
    }
    let all_dofs: Vec<usize>;
    let dofs = match dofs {
        Some(d) => d,
        None => {
            all_dofs = (0..reference.ncols()).collect();
            &all_dofs
        }
    };
    let all_steps: Vec<usize>;
    let steps = match steps {
        Some(s) => s,
        None => {
            all_steps = (0..reference.nrows()).collect();
            &all_steps
        }
    };
    if dofs.is_empty() || steps.is_empty() {
        return Err(Error::invalid("DOF and time selections must be non-empty"));
    }
    if dofs.iter().any(|&d| d >= reference.ncols()) || steps.iter().any(|&t| t >= reference.nrows()) {
        return Err(Error::shape("selection index out of range"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &t in steps {
        for &d in dofs {
            let q = reference[(t, d)];
            let e = q - approx[(t, d)];
            num += e * e;
            den += q * q;
        }
    }
    if den == 0.0 {
        return Err(Error::invalid("reference field is zero on the selection"));
    }
    Ok(100.0 * (num / den).sqrt())
}

/// Steps after the first `fraction` of the record.
pub fn settled_steps(n_steps: usize, fraction: f64) -> Vec<usize> {
    let skip = (n_steps as f64 * fraction).floor() as usize;
    (skip.min(n_steps.saturating_sub(1))..n_steps).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub strategy: String,
    pub sample_index: usize,
    pub parameters: Vec<f64>,
    pub err_u: f64,
    pub err_udot: f64,
    pub err_uddot: f64,
    /// Seconds.
    pub wall_time_fom: f64,
    pub wall_time_rom: f64,
    /// Part of `wall_time_rom` spent assembling reduced forces.
    #[serde(default)]
    pub assembly_time_rom: f64,
    /// Elements kept by hyper-reduction, if used.
    #[serde(default)]
    pub hyper_elements: Option<usize>,
}

impl ErrorRecord {
    pub fn speed_up(&self) -> f64 {
        self.wall_time_fom / self.wall_time_rom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Boxplot statistics with linear-interpolated quartiles; values beyond
/// 1.5 IQR of the box are outliers.
pub fn statistics(values: &[f64]) -> Result<Statistics> {
    if values.is_empty() {
        return Err(Error::invalid("no values to summarise"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let outliers = s.iter().copied().filter(|&v| v < q1 - 1.5 * iqr || v > q3 + 1.5 * iqr).collect();
    Ok(Statistics {
        median: quantile(&s, 0.5),
        q1,
        q3,
        min: s[0],
        max: s[s.len() - 1],
        mean: s.iter().sum::<f64>() / s.len() as f64,
        outliers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub n_records: usize,
    pub err_u: Statistics,
    pub err_uddot: Statistics,
    pub speed_up: Statistics,
    pub mean_wall_time_rom: f64,
    pub mean_wall_time_fom: f64,
}

/// Per-strategy statistics, ordered by strategy name.
pub fn summarize(records: &[ErrorRecord]) -> Result<Vec<StrategySummary>> {
    if records.is_empty() {
        return Err(Error::invalid("no error records"));
    }
    let mut groups: BTreeMap<&str, Vec<&ErrorRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.strategy).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(name, rs)| {
            let col = |f: &dyn Fn(&ErrorRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            // Sorted so the sum does not depend on record order.
            let mean = |mut v: Vec<f64>| {
                v.sort_by(f64::total_cmp);
                v.iter().sum::<f64>() / v.len() as f64
            };
            Ok(StrategySummary {
                strategy: name.to_string(),
                n_records: rs.len(),
                err_u: statistics(&col(&|r| r.err_u))?,
                err_uddot: statistics(&col(&|r| r.err_uddot))?,
                speed_up: statistics(&col(&|r| r.speed_up()))?,
                mean_wall_time_rom: mean(col(&|r| r.wall_time_rom)),
                mean_wall_time_fom: mean(col(&|r| r.wall_time_fom)),
            })
        })
        .collect()
}

/// Summary table as tab-separated text.
pub fn summary_table(summaries: &[StrategySummary]) -> String {
    let mut out = String::from("strategy\tn\tmedian_err_u\tmax_err_u\tmedian_err_uddot\tmax_err_uddot\tspeed_up\tt_rom_s\tt_fom_s\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.3}\t{:.4}\t{:.4}",
            s.strategy,
            s.n_records,
            s.err_u.median,
            s.err_u.max,
            s.err_uddot.median,
            s.err_uddot.max,
            s.speed_up.mean,
            s.mean_wall_time_rom,
            s.mean_wall_time_fom
        );
    }
    out
}

/// Color channel ceiling of the error map, in percent.
pub const ERROR_MAP_CLIP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMapPoint {
    pub strategy: String,
    pub sample_index: usize,
    pub x: f64,
    pub y: f64,
    pub err_u: f64,
    pub color: f64,
}

/// Scatter of `err_u` over two parameter axes.
pub fn emit_error_map(records: &[ErrorRecord], names: &[String], axes: (&str, &str), strategy: Option<&str>) -> Result<Vec<ErrorMapPoint>> {
    let index = |a: &str| {
        names.iter().position(|n| n == a).ok_or_else(|| Error::invalid(format!("unknown parameter axis '{a}'")))
    };
    let (ix, iy) = (index(axes.0)?, index(axes.1)?);
    records
        .iter()
        .filter(|r| strategy.is_none_or(|s| r.strategy == s))
        .map(|r| {
            if r.parameters.len() != names.len() {
                return Err(Error::shape(format!("record {} has {} parameters", r.sample_index, r.parameters.len())));
            }
            Ok(ErrorMapPoint {
                strategy: r.strategy.clone(),
                sample_index: r.sample_index,
                x: r.parameters[ix],
                y: r.parameters[iy],
                err_u: r.err_u,
                color: r.err_u.min(ERROR_MAP_CLIP),
            })
        })
        .collect()
}

pub fn error_map_table(points: &[ErrorMapPoint], axes: (&str, &str)) -> String {
    let mut out = format!("strategy\tsample\t{}\t{}\terr_u\tcolor\n", axes.0, axes.1);
    for p in points {
        let _ = writeln!(out, "{}\t{}\t{:e}\t{:e}\t{:.6}\t{:.6}", p.strategy, p.sample_index, p.x, p.y, p.err_u, p.color);
    }
    out
}

/// One row per record, for boxplots.
pub fn records_table(records: &[ErrorRecord]) -> String {
    let mut out = String::from("strategy\tsample\terr_u\terr_udot\terr_uddot\tt_fom_s\tt_rom_s\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.strategy, r.sample_index, r.err_u, r.err_udot, r.err_uddot, r.wall_time_fom, r.wall_time_rom
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(strategy: &str, err: f64) -> ErrorRecord {
        ErrorRecord {
            strategy: strategy.into(),
            sample_index: 0,
            parameters: vec![0.1, 2.0],
            err_u: err,
            err_udot: err,
            err_uddot: err,
            wall_time_fom: 2.0,
            wall_time_rom: 0.5,
            assembly_time_rom: 0.2,
            hyper_elements: None,
        }
    }

    #[test]
    fn err_q_hand_values() {
        let q = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert_eq!(err_q(&q, &q, None, None).unwrap(), 0.0);
        assert_eq!(err_q(&q, &DMatrix::zeros(2, 1), None, None).unwrap(), 100.0);
        let a = DMatrix::from_column_slice(2, 1, &[3.0, 0.0]);
        assert!((err_q(&q, &a, None, None).unwrap() - 80.0).abs() < 1e-12);
        assert!((err_q(&q, &a, Some(&[0]), Some(&[1])).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(err_q(&q, &a, None, Some(&[0])).unwrap(), 0.0);
    }

    #[test]
    fn err_q_rejects_bad_input() {
        let q = DMatrix::from_element(2, 2, 1.0);
        assert!(err_q(&q, &DMatrix::zeros(3, 2), None, None).is_err());
        assert!(err_q(&DMatrix::zeros(2, 2), &q, None, None).is_err());
        assert!(err_q(&q, &q, Some(&[]), None).is_err());
        assert!(err_q(&q, &q, Some(&[2]), None).is_err());
    }

    #[test]
    fn settled_steps_skip_the_start() {
        assert_eq!(settled_steps(200, 0.01), (2..200).collect::<Vec<_>>());
        assert_eq!(settled_steps(1, 0.5), vec![0]);
    }

    #[test]
    fn statistics_examples() {
        let s = statistics(&[7.0]).unwrap();
        assert_eq!((s.median, s.max), (7.0, 7.0));
        let s = statistics(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert!(s.outliers.is_empty());
        let s = statistics(&[1.0, 1.0, 1.0, 1.0, 100.0]).unwrap();
        assert_eq!(s.outliers, vec![100.0]);
        assert!(statistics(&[]).is_err());
    }

    #[test]
    fn summary_groups_by_strategy() {
        let recs = vec![rec("VpROM", 2.0), rec("CpROM", 4.0), rec("VpROM", 4.0)];
        let s = summarize(&recs).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].strategy, "VpROM");
        assert_eq!(s[1].err_u.median, 3.0);
        assert_eq!(s[0].speed_up.mean, 4.0);
        let table = summary_table(&s);
        assert_eq!(table.lines().count(), 3);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn error_map_clips_color_only() {
        let names = vec!["alpha".to_string(), "k".to_string()];
        let recs = vec![rec("VpROM", 35.0), rec("CpROM", 5.0)];
        let pts = emit_error_map(&recs, &names, ("alpha", "k"), None).unwrap();
        assert_eq!((pts[0].color, pts[0].err_u), (20.0, 35.0));
        assert_eq!(pts[1].color, 5.0);
        assert_eq!((pts[1].x, pts[1].y), (0.1, 2.0));
        assert_eq!(emit_error_map(&recs, &names, ("alpha", "k"), Some("CpROM")).unwrap().len(), 1);
        assert!(emit_error_map(&recs, &names, ("alpha", "zeta"), None).is_err());
    }

    proptest! {
        #[test]
        fn err_q_scales_with_the_error(q in proptest::collection::vec(0.1f64..5.0, 6), e in proptest::collection::vec(-1.0f64..1.0, 6), c in 0.0f64..10.0) {
            let q = DMatrix::from_vec(3, 2, q);
            let e = DMatrix::from_vec(3, 2, e);
            let base = err_q(&q, &(&q - &e), None, None).unwrap();
            let scaled = err_q(&q, &(&q - &e * c), None, None).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + scaled));
        }

        #[test]
        fn err_q_is_rotation_invariant(q in proptest::collection::vec(0.1f64..5.0, 8), a in proptest::collection::vec(-1.0f64..1.0, 8), th in 0.0f64..6.28) {
            let q = DMatrix::from_vec(4, 2, q);
            let a = DMatrix::from_vec(4, 2, a);
            let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
            let before = err_q(&q, &a, None, None).unwrap();
            let after = err_q(&(&q * &rot), &(&a * &rot), None, None).unwrap();
            prop_assert!((before - after).abs() <= 1e-9 * (1.0 + before));
        }

        #[test]
        fn summary_is_permutation_invariant(errs in proptest::collection::vec(0.0f64..50.0, 1..12), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let recs: Vec<_> = errs.iter().enumerate().map(|(i, &e)| rec(if i % 2 == 0 { "A" } else { "B" }, e)).collect();
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(summarize(&recs).unwrap(), summarize(&shuffled).unwrap());
        }
    }
}
