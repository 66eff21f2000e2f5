//! Bound verification driver behind `glpn verify`.

use std::str::FromStr;

use glpn_core::energy::{
    to_jsonl, verify_draft_energy_reduction, verify_energy_gap_bound, verify_gcn_energy_bound,
    verify_glpn_energy_bound, verify_higher_order_bound, BoundId, BoundReport, DraftImputer, ALPHA_GRID,
};
use glpn_core::graph::GraphKind;
use glpn_core::rng::stream;
use glpn_core::{DenseMatrix, Error, Result};

use crate::experiment::cell_seed;

/// Graph size, edge probability and ratios of the draft-energy check.
pub const DRAFT_CHECK_NODES: usize = 20;
pub const DRAFT_CHECK_P: f64 = 0.3;
pub const DRAFT_CHECK_RATIOS: [f64; 3] = [0.1, 0.3, 0.5];
pub const DRAFT_CHECK_FEATURES: usize = 4;
/// Monte-Carlo samples per trial unit for the draft-energy check.
pub const SAMPLES_PER_TRIAL: usize = 10;
pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    All,
    One(BoundId),
}

impl FromStr for Which {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            Ok(Which::All)
        } else {
            s.parse().map(Which::One)
        }
    }
}

impl Which {
    fn includes(self, id: BoundId) -> bool {
        self == Which::All || self == Which::One(id)
    }
}

/// Draft-energy reports for mean and 1-hop KNN imputation at every ratio.
pub fn draft_energy_reports(samples: usize, seed: u64) -> Result<Vec<BoundReport>> {
    let mut rng = stream(cell_seed(seed, "prop32|graph"));
    let a: DenseMatrix = GraphKind::ErdosRenyi { p: DRAFT_CHECK_P }.build(DRAFT_CHECK_NODES, &mut rng)?;
    let mut out = Vec::new();
    for imputer in [DraftImputer::Mean, DraftImputer::Knn { hops: 1 }] {
        for (k, &ratio) in DRAFT_CHECK_RATIOS.iter().enumerate() {
            let s = cell_seed(seed, &format!("prop32|{imputer:?}|{k}"));
            let mut r = verify_draft_energy_reduction(&a, DRAFT_CHECK_FEATURES, imputer, ratio, samples, s)?;
            r.instance.trial = k;
            out.push(r);
        }
    }
    Ok(out)
}

/// Runs the selected verifiers. The draft-energy check draws
/// `SAMPLES_PER_TRIAL · trials` samples per setting.
pub fn run_bounds(which: Which, trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let mut out = Vec::new();
    if which.includes(BoundId::EnergyGap) {
        out.extend(verify_energy_gap_bound(trials, seed)?);
    }
    if which.includes(BoundId::DraftEnergyReduction) {
        out.extend(draft_energy_reports(SAMPLES_PER_TRIAL * trials, seed)?);
    }
    if which.includes(BoundId::GcnEnergy) {
        out.extend(verify_gcn_energy_bound(trials, seed)?);
    }
    if which.includes(BoundId::GlpnEnergy) {
        out.extend(verify_glpn_energy_bound(trials, &ALPHA_GRID, seed)?);
    }
    if which.includes(BoundId::HigherOrder) {
        out.extend(verify_higher_order_bound(trials, &ALPHA_GRID, seed)?);
    }
    Ok(out)
}

/// JSONL output plus whether every report passed.
pub fn verify_bounds_command(which: Which, trials: usize, seed: u64) -> Result<(String, bool)> {
    let reports = run_bounds(which, trials, seed)?;
    let ok = reports.iter().all(|r| r.pass);
    Ok((to_jsonl(&reports), ok))
}

/// Count of failing reports per bound, in bound order.
pub fn violations(reports: &[BoundReport]) -> Vec<(BoundId, usize, usize)> {
    BoundId::ALL
        .iter()
        .filter_map(|&id| {
            let of: Vec<_> = reports.iter().filter(|r| r.bound == id).collect();
            (!of.is_empty()).then(|| (id, of.iter().filter(|r| !r.pass).count(), of.len()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_selection() {
        assert_eq!("all".parse::<Which>().unwrap(), Which::All);
        assert_eq!("appendixD".parse::<Which>().unwrap(), Which::One(BoundId::HigherOrder));
        assert_eq!("eq10".parse::<Which>().unwrap(), Which::One(BoundId::GcnEnergy));
        assert!("eq99".parse::<Which>().is_err());
    }

    #[test]
    fn zero_trials_is_a_usage_error() {
        assert!(matches!(verify_bounds_command(Which::All, 0, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn output_is_reproducible() {
        let (a, ok) = verify_bounds_command(Which::One(BoundId::EnergyGap), 30, 4).unwrap();
        let (b, _) = verify_bounds_command(Which::One(BoundId::EnergyGap), 30, 4).unwrap();
        assert!(ok);
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 30);
        let r = run_bounds(Which::One(BoundId::DraftEnergyReduction), 5, 1).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(violations(&r), vec![(BoundId::DraftEnergyReduction, 0, 6)]);
    }
}
