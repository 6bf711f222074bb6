//! Stance metrics: F1 of Favor and Against averaged per target (macro) or
//! over pooled counts (micro).
//!
//! Any precision, recall or F1 whose denominator is zero counts as 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::{target_abbreviation, Stance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    /// F1 as the fraction `2tp / (2tp + fp + fn)`, which equals `2PR / (P + R)`
    /// whenever `tp > 0` and is 0 otherwise.
    fn f1_fraction(&self) -> (u128, u128) {
        if self.tp == 0 {
            (0, 1)
        } else {
            let tp = self.tp as u128;
            (2 * tp, 2 * tp + self.fp as u128 + self.fn_ as u128)
        }
    }

    pub fn f1(&self) -> f64 {
        let (n, d) = self.f1_fraction();
        n as f64 / d as f64
    }

    fn add(&mut self, other: ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Per-class counts for Favor, None and Against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: [ClassCounts; 3],
}

impl ConfusionCounts {
    pub fn from_pairs(preds: &[Stance], golds: &[Stance]) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::shape(
                "confusion counts",
                format!("{} predictions for {} golds", preds.len(), golds.len()),
            ));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in preds.iter().zip(golds) {
            if p == g {
                c.classes[p.index()].tp += 1;
            } else {
                c.classes[p.index()].fp += 1;
                c.classes[g.index()].fn_ += 1;
            }
        }
        Ok(c)
    }

    pub fn get(&self, stance: Stance) -> ClassCounts {
        self.classes[stance.index()]
    }

    /// `(F_favor + F_against) / 2`, summed as fractions and divided once so
    /// the result is correctly rounded.
    pub fn f_avg(&self) -> f64 {
        let (a, b) = self.get(Stance::Favor).f1_fraction();
        let (c, d) = self.get(Stance::Against).f1_fraction();
        (a * d + c * b) as f64 / (2 * b * d) as f64
    }

    fn add(&mut self, other: &ConfusionCounts) {
        for (a, b) in self.classes.iter_mut().zip(other.classes) {
            a.add(b);
        }
    }
}

pub fn f_avg(preds: &[Stance], golds: &[Stance]) -> Result<f64> {
    Ok(ConfusionCounts::from_pairs(preds, golds)?.f_avg())
}

/// Per-target F_avg plus the macro and micro aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScores {
    pub per_target: Vec<(String, f64)>,
    pub macro_f: f64,
    pub micro_f: f64,
}

/// Scores grouped by `targets[i]`. With `order`, the per-target list follows
/// it and every listed target must have examples; otherwise targets are
/// sorted by name.
pub fn score_targets(
    preds: &[Stance],
    golds: &[Stance],
    targets: &[&str],
    order: Option<&[String]>,
) -> Result<TargetScores> {
    if preds.len() != golds.len() || preds.len() != targets.len() {
        return Err(Error::shape(
            "score_targets",
            format!("{} predictions, {} golds, {} targets", preds.len(), golds.len(), targets.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no examples to score"));
    }
    let mut groups: BTreeMap<&str, (Vec<Stance>, Vec<Stance>)> = BTreeMap::new();
    for ((&p, &g), &t) in preds.iter().zip(golds).zip(targets) {
        let entry = groups.entry(t).or_default();
        entry.0.push(p);
        entry.1.push(g);
    }
    let names: Vec<String> = match order {
        Some(o) => o.to_vec(),
        None => groups.keys().map(|s| s.to_string()).collect(),
    };
    let mut pooled = ConfusionCounts::default();
    let mut per_target = Vec::with_capacity(names.len());
    for name in names {
        let (p, g) = groups
            .get(name.as_str())
            .ok_or_else(|| Error::invalid(format!("target {name:?} has no examples")))?;
        let counts = ConfusionCounts::from_pairs(p, g)?;
        pooled.add(&counts);
        per_target.push((name, counts.f_avg()));
    }
    if order.is_some() && per_target.len() != groups.len() {
        return Err(Error::invalid("examples belong to targets missing from the order"));
    }
    let macro_f = per_target.iter().map(|(_, f)| f).sum::<f64>() / per_target.len() as f64;
    Ok(TargetScores {
        per_target,
        macro_f,
        micro_f: pooled.f_avg(),
    })
}

/// `(MacF_avg, MicF_avg)`.
pub fn macro_micro(preds: &[Stance], golds: &[Stance], targets: &[&str]) -> Result<(f64, f64)> {
    let s = score_targets(preds, golds, targets, None)?;
    Ok((s.macro_f, s.micro_f))
}

/// Scores of one or more trials sharing a target layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub targets: Vec<String>,
    pub trials: Vec<TargetScores>,
}

impl Report {
    pub fn new(title: impl Into<String>, trials: Vec<TargetScores>) -> Result<Self> {
        let first = trials.first().ok_or_else(|| Error::invalid("report needs at least one trial"))?;
        let targets: Vec<String> = first.per_target.iter().map(|(t, _)| t.clone()).collect();
        for t in &trials {
            if t.per_target.iter().map(|(n, _)| n).ne(targets.iter()) {
                return Err(Error::invalid("trials disagree on the target layout"));
            }
        }
        Ok(Report {
            title: title.into(),
            targets,
            trials,
        })
    }

    pub fn mean(&self) -> TargetScores {
        let n = self.trials.len() as f64;
        let per_target = self
            .targets
            .iter()
            .enumerate()
            .map(|(i, name)| (name.clone(), self.trials.iter().map(|t| t.per_target[i].1).sum::<f64>() / n))
            .collect();
        TargetScores {
            per_target,
            macro_f: self.trials.iter().map(|t| t.macro_f).sum::<f64>() / n,
            micro_f: self.trials.iter().map(|t| t.micro_f).sum::<f64>() / n,
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = self
            .targets
            .iter()
            .map(|t| target_abbreviation(t).map(str::to_string).unwrap_or_else(|| t.clone()))
            .collect();
        h.push("MacF".into());
        h.push("MicF".into());
        h
    }

    fn rows(&self) -> Vec<(String, Vec<f64>)> {
        let flatten = |s: &TargetScores| {
            let mut v: Vec<f64> = s.per_target.iter().map(|(_, f)| *f).collect();
            v.push(s.macro_f);
            v.push(s.micro_f);
            v
        };
        let mut rows: Vec<_> = self
            .trials
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("trial{}", i + 1), flatten(t)))
            .collect();
        rows.push(("mean".into(), flatten(&self.mean())));
        rows
    }

    pub fn to_text(&self) -> String {
        let header = self.header();
        let rows = self.rows();
        let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(4).max(self.title.len());
        let widths: Vec<usize> = header.iter().map(|h| h.len().max(6)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", self.title);
        for (h, w) in header.iter().zip(&widths) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for (label, values) in rows {
            let _ = write!(out, "{label:<label_w$}");
            for (v, w) in values.iter().zip(&widths) {
                let _ = write!(out, "  {:>w$}", format!("{v:.4}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for h in self.header() {
            out.push(',');
            out.push_str(&h);
        }
        out.push('\n');
        for (label, values) in self.rows() {
            out.push_str(&label);
            for v in values {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Stance::{Against as A, Favor as F, None as N};

    proptest! {
        #[test]
        fn f1_fraction_matches_precision_recall_form(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let c = ClassCounts { tp, fp, fn_ };
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let expect = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            prop_assert!((c.f1() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_predictions() {
        let g = [F, A, N, A, F, N];
        assert_eq!(f_avg(&g, &g).unwrap(), 1.0);
        let t = ["x", "y", "x", "x", "y", "y"];
        assert_eq!(macro_micro(&g, &g, &t).unwrap(), (1.0, 1.0));
        // A target without Against golds scores F_against = 0 even when
        // every prediction is right.
        assert_eq!(macro_micro(&g[..3], &g[..3], &["x", "y", "x"]).unwrap().0, 0.5);
    }

    #[test]
    fn five_example_case() {
        let golds = [F, F, A, A, N];
        let preds = [F, A, A, N, N];
        let c = ConfusionCounts::from_pairs(&preds, &golds).unwrap();
        assert_eq!(c.get(F), ClassCounts { tp: 1, fp: 0, fn_: 1 });
        assert_eq!(c.get(A), ClassCounts { tp: 1, fp: 1, fn_: 1 });
        let expect = (2.0 / 3.0 + 0.5) / 2.0;
        assert!((f_avg(&preds, &golds).unwrap() - expect).abs() < 1e-15);
        assert_eq!(f_avg(&preds, &golds).unwrap(), 7.0 / 12.0);
    }

    #[test]
    fn absent_favor_counts_zero() {
        let golds = [A, A, N];
        let preds = [A, N, N];
        let f_a = ConfusionCounts::from_pairs(&preds, &golds).unwrap().get(A).f1();
        assert_eq!(f_avg(&preds, &golds).unwrap(), f_a / 2.0);
        assert!(f_avg(&preds, &golds[..2]).is_err());
    }

    #[test]
    fn two_target_construction() {
        // X: F_F = 1, F_A = 0.6 (tp 3, fp 2, fn 2) -> 0.8
        // Y: F_F = 0, F_A = 0.8 (tp 2, fp 0, fn 1) -> 0.4
        // pooled: F (tp 1, fp 0, fn 1) -> 2/3; A (tp 5, fp 2, fn 3) -> 2/3
        let gx = [F, A, A, A, A, A, N, N];
        let px = [F, A, A, A, N, N, A, A];
        let gy = [F, A, A, A];
        let py = [N, A, A, N];
        assert!((f_avg(&px, &gx).unwrap() - 0.8).abs() < 1e-12);
        assert!((f_avg(&py, &gy).unwrap() - 0.4).abs() < 1e-12);
        let golds: Vec<_> = gx.iter().chain(&gy).copied().collect();
        let preds: Vec<_> = px.iter().chain(&py).copied().collect();
        let targets: Vec<&str> = ["x"; 8].iter().chain(&["y"; 4]).copied().collect();
        let (mac, mic) = macro_micro(&preds, &golds, &targets).unwrap();
        assert!((mac - 0.6).abs() < 1e-12);
        let f_a = 2.0 * (5.0 / 7.0) * (5.0 / 8.0) / (5.0 / 7.0 + 5.0 / 8.0);
        assert!((mic - (2.0 / 3.0 + f_a) / 2.0).abs() < 1e-12);
        assert!((mic - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ordered_targets_and_empty_groups() {
        let g = [F, A, A];
        let t = ["b", "a", "b"];
        let order = vec!["b".to_string(), "a".to_string()];
        let s = score_targets(&g, &g, &t, Some(&order)).unwrap();
        assert_eq!(s.per_target[0].0, "b");
        let bad = vec!["b".to_string(), "a".to_string(), "c".to_string()];
        assert!(score_targets(&g, &g, &t, Some(&bad)).is_err());
        assert!(score_targets(&g, &g, &t, Some(&order[..1])).is_err());
        assert!(macro_micro(&[], &[], &[]).is_err());
    }

    #[test]
    fn report_means_and_layout() {
        let targets = ["Atheism", "Climate Change is a Real Concern"];
        let g = [F, A, F, A];
        let p = [F, A, N, A];
        let t = [targets[0], targets[0], targets[1], targets[1]];
        let order: Vec<String> = targets.iter().map(|s| s.to_string()).collect();
        let one = score_targets(&p, &g, &t, Some(&order)).unwrap();
        let r1 = Report::new("test", vec![one.clone()]).unwrap();
        assert_eq!(r1.mean(), one);
        let r3 = Report::new("test", vec![one.clone(), one.clone(), one.clone()]).unwrap();
        let m = r3.mean();
        assert!((m.macro_f - one.macro_f).abs() < 1e-15);
        assert!(r3.to_csv().starts_with("row,AT,CC,MacF,MicF\n"));
        assert!(r3.to_text().lines().next().unwrap().contains("AT"));
        assert_eq!(r3.to_text().lines().count(), 5);
        assert!(Report::new("x", vec![]).is_err());
    }

    fn stance() -> impl Strategy<Value = Stance> {
        (0usize..3).prop_map(|i| Stance::ALL[i])
    }

    proptest! {
        #[test]
        fn metric_properties(
            pairs in proptest::collection::vec((stance(), stance(), 0usize..3), 1..40),
            seed in any::<u64>(),
        ) {
            let preds: Vec<_> = pairs.iter().map(|p| p.0).collect();
            let golds: Vec<_> = pairs.iter().map(|p| p.1).collect();
            let names = ["a", "b", "c"];
            let targets: Vec<&str> = pairs.iter().map(|p| names[p.2]).collect();
            let f = f_avg(&preds, &golds).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));

            let (mac, mic) = macro_micro(&preds, &golds, &targets).unwrap();
            prop_assert!((0.0..=1.0).contains(&mac) && (0.0..=1.0).contains(&mic));

            let single = vec!["a"; preds.len()];
            let (m1, m2) = macro_micro(&preds, &golds, &single).unwrap();
            prop_assert_eq!(m1, f);
            prop_assert_eq!(m2, f);

            let mut idx: Vec<usize> = (0..preds.len()).collect();
            let mut s = seed;
            for i in (1..idx.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pp: Vec<_> = idx.iter().map(|&i| preds[i]).collect();
            let gg: Vec<_> = idx.iter().map(|&i| golds[i]).collect();
            let tt: Vec<_> = idx.iter().map(|&i| targets[i]).collect();
            let (pm, pmi) = macro_micro(&pp, &gg, &tt).unwrap();
            prop_assert!((pm - mac).abs() < 1e-12 && (pmi - mic).abs() < 1e-12);

            // Favor and Against predictions are perfect only if every
            // example that involves either class is correct, which leaves
            // no room for None errors either.
            let all_correct = golds == preds;
            let has_both = golds.contains(&Stance::Favor) && golds.contains(&Stance::Against);
            if f == 1.0 {
                prop_assert!(all_correct);
            }
            if has_both && all_correct {
                prop_assert_eq!(f, 1.0);
            }
        }
    }
}
