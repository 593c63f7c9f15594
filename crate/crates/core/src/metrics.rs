//! Mean absolute error between predicted and gold boundaries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{InstanceId, MixedTextInstance};
use crate::ensemble::BoundaryPrediction;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceError {
    pub id: InstanceId,
    pub gold: usize,
    pub pred: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mae: f64,
    /// Sorted by descending error; ties keep gold order.
    pub per_instance: Vec<InstanceError>,
    pub count: usize,
    pub truncated_count: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no gold instances to score")]
    Empty,
    #[error("gold instances without a label: {0:?}")]
    UnlabeledGold(Vec<InstanceId>),
    #[error("duplicate prediction ids: {0:?}")]
    DuplicatePredictions(Vec<InstanceId>),
    #[error("missing predictions for ids: {0:?}")]
    MissingPredictions(Vec<InstanceId>),
    #[error("predictions for unknown ids: {0:?}")]
    UnknownPredictions(Vec<InstanceId>),
}

impl MetricsError {
    pub fn offending_ids(&self) -> &[InstanceId] {
        match self {
            MetricsError::Empty => &[],
            MetricsError::UnlabeledGold(v)
            | MetricsError::DuplicatePredictions(v)
            | MetricsError::MissingPredictions(v)
            | MetricsError::UnknownPredictions(v) => v,
        }
    }
}

/// Scores one prediction per gold instance. Missing, duplicate and unknown
/// prediction ids are errors; nothing is imputed.
pub fn score(predictions: &[BoundaryPrediction], golds: &[MixedTextInstance]) -> Result<EvalReport, MetricsError> {
    if golds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let unlabeled: Vec<InstanceId> = golds.iter().filter(|g| g.gold_boundary.is_none()).map(|g| g.id.clone()).collect();
    if !unlabeled.is_empty() {
        return Err(MetricsError::UnlabeledGold(unlabeled));
    }

    let mut by_id: HashMap<&InstanceId, &BoundaryPrediction> = HashMap::new();
    let mut dups = Vec::new();
    for p in predictions {
        if by_id.insert(&p.id, p).is_some() {
            dups.push(p.id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(MetricsError::DuplicatePredictions(dups));
    }
    let gold_ids: HashSet<&InstanceId> = golds.iter().map(|g| &g.id).collect();
    let missing: Vec<InstanceId> = golds.iter().filter(|g| !by_id.contains_key(&g.id)).map(|g| g.id.clone()).collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions(missing));
    }
    let unknown: Vec<InstanceId> = predictions.iter().filter(|p| !gold_ids.contains(&p.id)).map(|p| p.id.clone()).collect();
    if !unknown.is_empty() {
        return Err(MetricsError::UnknownPredictions(unknown));
    }

    let mut per_instance: Vec<InstanceError> = golds
        .iter()
        .map(|g| {
            let gold = g.gold_boundary.expect("checked above");
            let pred = by_id[&g.id].value;
            InstanceError {
                id: g.id.clone(),
                gold,
                pred,
                error: (pred - gold as f64).abs(),
            }
        })
        .collect();
    let count = per_instance.len();
    let mae = per_instance.iter().map(|e| e.error).sum::<f64>() / count as f64;
    per_instance.sort_by(|a, b| b.error.total_cmp(&a.error));
    let truncated_count = golds.iter().filter(|g| by_id[&g.id].diagnostics.truncated).count();
    Ok(EvalReport {
        mae,
        per_instance,
        count,
        truncated_count,
    })
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("bucket width must be positive")]
pub struct BucketWidthError;

/// Counts errors per bucket `[k*width, (k+1)*width)`, keyed by `k`.
pub fn error_histogram(report: &EvalReport, width: f64) -> Result<BTreeMap<u64, usize>, BucketWidthError> {
    if width.is_nan() || width <= 0.0 {
        return Err(BucketWidthError);
    }
    let mut out = BTreeMap::new();
    for e in &report.per_instance {
        *out.entry((e.error / width).floor() as u64).or_insert(0) += 1;
    }
    Ok(out)
}

/// Console summary: the MAE line followed by the worst `top` instances.
pub fn render_table(report: &EvalReport, top: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "MAE {:.4}", report.mae);
    let _ = writeln!(s, "instances {}  truncated {}", report.count, report.truncated_count);
    if top > 0 && !report.per_instance.is_empty() {
        let _ = writeln!(s, "{:<24} {:>6} {:>8} {:>8}", "id", "gold", "pred", "error");
        for e in report.per_instance.iter().take(top) {
            let _ = writeln!(s, "{:<24} {:>6} {:>8} {:>8}", e.id.to_string(), e.gold, e.pred, e.error);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn golds(pairs: &[(&str, usize)]) -> Vec<MixedTextInstance> {
        pairs
            .iter()
            .map(|&(id, g)| {
                let text = vec!["w"; g.max(12)].join(" ");
                MixedTextInstance::new(id, text, Some(g))
            })
            .collect()
    }

    fn preds(pairs: &[(&str, f64)]) -> Vec<BoundaryPrediction> {
        pairs.iter().map(|&(id, v)| BoundaryPrediction::new(id.into(), v, "")).collect()
    }

    #[test]
    fn mae_examples() {
        let g = golds(&[("a", 6)]);
        assert_eq!(score(&preds(&[("a", 6.0)]), &g).unwrap().mae, 0.0);
        assert_eq!(score(&preds(&[("a", 2.0)]), &g).unwrap().mae, 4.0);
        let r = score(&preds(&[("b", 10.0), ("a", 5.0)]), &golds(&[("a", 0), ("b", 10)])).unwrap();
        assert_eq!(r.mae, 2.5);
        assert_eq!(r.count, 2);
        assert_eq!(r.per_instance[0].id, InstanceId::from("a"));
    }

    #[test]
    fn id_errors() {
        let g = golds(&[("a", 1), ("b", 2)]);
        assert!(matches!(score(&preds(&[("a", 1.0)]), &g), Err(MetricsError::MissingPredictions(v)) if v == [InstanceId::from("b")]));
        assert!(matches!(
            score(&preds(&[("a", 1.0), ("a", 2.0), ("b", 1.0)]), &g),
            Err(MetricsError::DuplicatePredictions(_))
        ));
        assert!(matches!(
            score(&preds(&[("a", 1.0), ("b", 2.0), ("c", 0.0)]), &g),
            Err(MetricsError::UnknownPredictions(_))
        ));
        let unlabeled = vec![MixedTextInstance::new("a", "x y", None)];
        assert!(matches!(score(&preds(&[("a", 1.0)]), &unlabeled), Err(MetricsError::UnlabeledGold(_))));
        assert_eq!(score(&[], &[]), Err(MetricsError::Empty));
    }

    #[test]
    fn histogram() {
        let g = golds(&[("a", 0), ("b", 0), ("c", 0)]);
        let r = score(&preds(&[("a", 1.0), ("b", 5.0), ("c", 9.0)]), &g).unwrap();
        let h = error_histogram(&r, 5.0).unwrap();
        assert_eq!(h, BTreeMap::from([(0, 1), (1, 2)]));
        let zero = score(&preds(&[("a", 0.0), ("b", 0.0), ("c", 0.0)]), &g).unwrap();
        assert_eq!(error_histogram(&zero, 3.0).unwrap(), BTreeMap::from([(0, 3)]));
        assert_eq!(error_histogram(&r, 0.0), Err(BucketWidthError));
        assert_eq!(error_histogram(&r, -1.0), Err(BucketWidthError));
    }

    #[test]
    fn table_starts_with_mae() {
        let r = score(&preds(&[("a", 2.0)]), &golds(&[("a", 6)])).unwrap();
        assert!(render_table(&r, 5).starts_with("MAE 4.0000\n"));
    }

    fn fixture(values: &[(u8, u8)]) -> (Vec<MixedTextInstance>, Vec<BoundaryPrediction>) {
        let g: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &(gold, _))| MixedTextInstance::new(i as i64, vec!["w"; 255].join(" "), Some(gold as usize)))
            .collect();
        let p = values
            .iter()
            .enumerate()
            .map(|(i, &(_, pred))| BoundaryPrediction::new(InstanceId::Int(i as i64), pred as f64, ""))
            .collect();
        (g, p)
    }

    proptest! {
        #[test]
        fn mae_properties(values in prop::collection::vec((any::<u8>(), any::<u8>()), 1..30), other in prop::collection::vec(any::<u8>(), 30)) {
            let (g, p) = fixture(&values);
            let r = score(&p, &g).unwrap();
            prop_assert!(r.mae >= 0.0);
            prop_assert_eq!(r.mae == 0.0, values.iter().all(|(a, b)| a == b));
            let mut rev = p.clone();
            rev.reverse();
            prop_assert_eq!(score(&rev, &g).unwrap().mae, r.mae);
            prop_assert_eq!(error_histogram(&r, 7.0).unwrap().values().sum::<usize>(), r.count);

            // Triangle inequality through an arbitrary second prediction set b.
            let b: Vec<BoundaryPrediction> = p.iter().zip(&other).map(|(x, &o)| BoundaryPrediction::new(x.id.clone(), o as f64, "")).collect();
            let as_gold: Vec<MixedTextInstance> = b.iter().map(|x| MixedTextInstance::new(x.id.clone(), vec!["w"; 255].join(" "), Some(x.value as usize))).collect();
            let ab = score(&p, &as_gold).unwrap().mae;
            let bg = score(&b, &g).unwrap().mae;
            prop_assert!(r.mae <= ab + bg + 1e-9);
        }

        #[test]
        fn shift_adds_k_when_all_above(golds_v in prop::collection::vec(0u8..100, 1..20), k in 0u8..50) {
            let values: Vec<(u8, u8)> = golds_v.iter().map(|&g| (g, g + 5)).collect();
            let shifted: Vec<(u8, u8)> = values.iter().map(|&(g, p)| (g, p + k)).collect();
            let (g, p) = fixture(&values);
            let (_, ps) = fixture(&shifted);
            let base = score(&p, &g).unwrap().mae;
            prop_assert!((score(&ps, &g).unwrap().mae - (base + k as f64)).abs() < 1e-9);
        }
    }
}
