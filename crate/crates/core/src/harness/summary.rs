use std::collections::BTreeMap;

use super::ExperimentRecord;

/// Record fields that may form a summary group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Case,
    N,
    Epsilon,
}

/// Statistics of Φ over one group. Fields outside the grouping are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub case: Option<String>,
    pub n: Option<usize>,
    /// Outer `None`: not grouped. Inner `None`: variable privacy.
    pub epsilon: Option<Option<f64>>,
    /// Trials in the group.
    pub records: usize,
    /// Trials with a defined Φ.
    pub trials: usize,
    pub mean_phi: Option<f64>,
    pub std_phi: Option<f64>,
    /// `1.96 * std / sqrt(trials)`; needs two trials.
    pub half_width: Option<f64>,
    pub mean_opt: Option<f64>,
    pub mean_opt_dp: Option<f64>,
    pub mean_alpha: f64,
    /// Share of trials with `Opt - Opt^DP <= alpha`.
    pub bound_fraction: Option<f64>,
    pub failures: usize,
}

type Key = (Option<String>, Option<usize>, Option<Option<u64>>);

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups records by the selected keys, in ascending key order.
pub fn summarize(records: &[ExperimentRecord], keys: &[GroupKey]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<Key, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        let key: Key = (
            keys.contains(&GroupKey::Case).then(|| r.case.clone()),
            keys.contains(&GroupKey::N).then_some(r.n),
            // Variable privacy (None) sorts after every epsilon.
            keys.contains(&GroupKey::Epsilon)
                .then(|| Some(r.epsilon.map_or(u64::MAX, f64::to_bits))),
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((case, n, eps), rs)| {
            let phis: Vec<f64> = rs.iter().filter_map(|r| r.phi).collect();
            let m = mean(&phis);
            let std = (phis.len() >= 2).then(|| {
                let mu = m.unwrap_or(0.0);
                (phis.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / (phis.len() - 1) as f64).sqrt()
            });
            let opts: Vec<f64> = rs.iter().filter_map(|r| r.opt).collect();
            let dps: Vec<f64> = rs.iter().filter_map(|r| r.opt_dp).collect();
            let alphas: Vec<f64> = rs.iter().map(|r| r.alpha).collect();
            let checks: Vec<bool> = rs.iter().filter_map(|r| r.bound_holds()).collect();
            SummaryRow {
                case,
                n,
                epsilon: eps.map(|e| e.filter(|b| *b != u64::MAX).map(f64::from_bits)),
                records: rs.len(),
                trials: phis.len(),
                mean_phi: m,
                std_phi: std,
                half_width: std.map(|s| 1.96 * s / (phis.len() as f64).sqrt()),
                mean_opt: mean(&opts),
                mean_opt_dp: mean(&dps),
                mean_alpha: mean(&alphas).unwrap_or(f64::NAN),
                bound_fraction: (!checks.is_empty())
                    .then(|| checks.iter().filter(|b| **b).count() as f64 / checks.len() as f64),
                failures: rs.iter().filter(|r| r.failed()).count(),
            }
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::super::{TrialDiagnostics, TrialStatus};
    use super::*;
    use crate::optcore::SolveStatus;

    pub(crate) fn record(case: &str, n: usize, eps: Option<f64>, trial: usize, phi: f64) -> ExperimentRecord {
        ExperimentRecord {
            case: case.into(),
            n,
            epsilon: eps,
            delta: 0.5,
            trial,
            seed: trial as u64,
            opt: Some(1.0),
            opt_dp: Some(1.0 - phi),
            phi: Some(phi),
            alpha: 0.5,
            exact_gap: Some(0.0),
            status_true: TrialStatus::Solved(SolveStatus::Optimal),
            status_dp: TrialStatus::Solved(SolveStatus::Optimal),
            wall_ms: 0.0,
            diagnostics: TrialDiagnostics::default(),
        }
    }

    const ALL: [GroupKey; 3] = [GroupKey::Case, GroupKey::N, GroupKey::Epsilon];

    #[test]
    fn identical_values_have_zero_width() {
        let rs: Vec<_> = (0..30).map(|t| record("QMF", 500, Some(1.0), t, 0.4)).collect();
        let rows = summarize(&rs, &ALL);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].trials, 30);
        assert!((rows[0].mean_phi.unwrap() - 0.4).abs() < 1e-15);
        assert!(rows[0].half_width.unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_trials() {
        let rs = vec![record("QMF", 500, Some(1.0), 0, 0.0), record("QMF", 500, Some(1.0), 1, 1.0)];
        let row = &summarize(&rs, &ALL)[0];
        assert_eq!(row.mean_phi, Some(0.5));
        assert!((row.std_phi.unwrap() - 0.5_f64.sqrt()).abs() < 1e-12);
        assert!((row.half_width.unwrap() - 1.96 * 0.5).abs() < 1e-12);
        assert_eq!(row.bound_fraction, Some(0.5));
    }

    #[test]
    fn single_trial_has_no_width() {
        let row = &summarize(&[record("QMF", 500, Some(1.0), 0, 0.3)], &ALL)[0];
        assert_eq!(row.half_width, None);
        assert_eq!(row.std_phi, None);
    }

    #[test]
    fn groups_are_ordered() {
        let mut rs = Vec::new();
        for n in (5..=15).rev().map(|k| k * 100) {
            for eps in [Some(1.0), None, Some(0.01)] {
                for t in 0..3 {
                    rs.push(record("QMF_L", n, eps, t, 0.5));
                }
            }
        }
        let rows = summarize(&rs, &ALL);
        assert_eq!(rows.len(), 33);
        assert_eq!(rows[0].n, Some(500));
        assert_eq!(rows[0].epsilon, Some(Some(0.01)));
        assert_eq!(rows[2].epsilon, Some(None));
        let by_n = summarize(&rs, &[GroupKey::N]);
        assert_eq!(by_n.len(), 11);
        assert_eq!(by_n[0].epsilon, None);
        assert_eq!(by_n[0].records, 9);
    }
}
