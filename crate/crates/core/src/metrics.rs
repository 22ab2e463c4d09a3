//! Length-weighted panoptic quality and primitive-level F1 / wF1.
//!
//! Symbol IoU weights every primitive by `ln(1 + L(e))`, with `L(e)` in raw
//! drawing units. A predicted and a ground-truth symbol match when their
//! labels agree and IoU is strictly above 0.5.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::bfr::PanopticAssignment;
use crate::error::{Error, Result};
use crate::geometry::{primitive_length, ClassId, ClassTable, Drawing, PrimitiveId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbol {
    pub label: ClassId,
    pub instance: i64,
    pub members: BTreeSet<PrimitiveId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymbolSet {
    pub symbols: Vec<Symbol>,
}

impl SymbolSet {
    /// Groups labeled primitives by `(gt_label, gt_instance)`. Labeled primitives
    /// without an instance index share instance `-1` of their class.
    pub fn ground_truth(drawing: &Drawing) -> Self {
        let mut groups: BTreeMap<(ClassId, i64), BTreeSet<PrimitiveId>> = BTreeMap::new();
        for p in &drawing.primitives {
            if let Some(l) = p.gt_label {
                groups.entry((l, p.gt_instance.unwrap_or(-1))).or_default().insert(p.id);
            }
        }
        Self::from_groups(groups)
    }

    /// Symbols of an assignment whose entries are indexed like `ids`.
    pub fn from_assignment(assignment: &PanopticAssignment, ids: &[PrimitiveId]) -> Self {
        let mut groups: BTreeMap<(ClassId, i64), BTreeSet<PrimitiveId>> = BTreeMap::new();
        for (entry, &id) in assignment.entries.iter().zip(ids) {
            if let Some(key) = entry {
                groups.entry(*key).or_default().insert(id);
            }
        }
        Self::from_groups(groups)
    }

    fn from_groups(groups: BTreeMap<(ClassId, i64), BTreeSet<PrimitiveId>>) -> Self {
        Self {
            symbols: groups
                .into_iter()
                .map(|((label, instance), members)| Symbol {
                    label,
                    instance,
                    members,
                })
                .collect(),
        }
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.symbols {
            for &m in &s.members {
                if !seen.insert(m) {
                    return Err(Error::OverlappingSymbols(m));
                }
            }
        }
        Ok(())
    }

    fn restricted(&self, keep: impl Fn(ClassId) -> bool) -> SymbolSet {
        SymbolSet {
            symbols: self.symbols.iter().filter(|s| keep(s.label)).cloned().collect(),
        }
    }
}

/// Primitive lengths `L(e)` keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lengths(pub HashMap<PrimitiveId, f64>);

impl Lengths {
    pub fn of(drawing: &Drawing) -> Self {
        Self(drawing.primitives.iter().map(|p| (p.id, primitive_length(p))).collect())
    }

    pub fn get(&self, id: PrimitiveId) -> Result<f64> {
        self.0.get(&id).copied().ok_or(Error::UnknownPrimitive(id))
    }
}

impl FromIterator<(PrimitiveId, f64)> for Lengths {
    fn from_iter<T: IntoIterator<Item = (PrimitiveId, f64)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// IoU with an arbitrary per-primitive weight, summed in ascending id order.
pub fn weighted_iou(a: &Symbol, b: &Symbol, weight: impl Fn(PrimitiveId) -> Result<f64>) -> Result<f64> {
    let mut inter = 0.0;
    let mut union = 0.0;
    for &id in a.members.union(&b.members) {
        let w = weight(id)?;
        union += w;
        if a.members.contains(&id) && b.members.contains(&id) {
            inter += w;
        }
    }
    Ok(if union > 0.0 { inter / union } else { 0.0 })
}

pub fn symbol_iou(a: &Symbol, b: &Symbol, lengths: &Lengths) -> Result<f64> {
    weighted_iou(a, b, |id| Ok(lengths.get(id)?.ln_1p()))
}

/// Counts accumulated over symbols of one class (or any class subset).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PqCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub iou_sum: f64,
}

impl PqCounts {
    pub fn add(&mut self, other: &PqCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum += other.iou_sum;
    }

    pub fn pq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom > 0.0 {
            self.iou_sum / denom
        } else {
            0.0
        }
    }

    pub fn sq(&self) -> f64 {
        if self.tp > 0 {
            self.iou_sum / self.tp as f64
        } else {
            0.0
        }
    }

    pub fn rq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom > 0.0 {
            self.tp as f64 / denom
        } else {
            0.0
        }
    }
}

/// Matches symbols and returns per-class counts.
pub fn match_symbols(pred: &SymbolSet, gt: &SymbolSet, lengths: &Lengths) -> Result<BTreeMap<ClassId, PqCounts>> {
    pred.check_disjoint()?;
    gt.check_disjoint()?;
    let mut per_class: BTreeMap<ClassId, PqCounts> = BTreeMap::new();
    let mut gt_matched = vec![false; gt.symbols.len()];
    for p in &pred.symbols {
        let mut matched = None;
        for (g, s) in gt.symbols.iter().enumerate() {
            if s.label != p.label {
                continue;
            }
            let iou = symbol_iou(p, s, lengths)?;
            if iou > 0.5 {
                assert!(matched.is_none(), "predicted symbol matched twice");
                assert!(!gt_matched[g], "ground-truth symbol matched twice");
                matched = Some((g, iou));
            }
        }
        let entry = per_class.entry(p.label).or_default();
        match matched {
            Some((g, iou)) => {
                gt_matched[g] = true;
                entry.tp += 1;
                entry.iou_sum += iou;
            }
            None => entry.fp += 1,
        }
    }
    for (s, m) in gt.symbols.iter().zip(gt_matched) {
        if !m {
            per_class.entry(s.label).or_default().fn_ += 1;
        }
    }
    Ok(per_class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub label: ClassId,
    pub name: String,
    pub thing: bool,
    pub pq: f64,
    pub rq: f64,
    pub sq: f64,
    #[serde(flatten)]
    pub counts: PqCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqReport {
    pub pq: f64,
    pub rq: f64,
    pub sq: f64,
    pub pq_thing: f64,
    pub pq_stuff: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_class: Vec<ClassRow>,
}

/// Per-class counts that can be merged across drawings in any order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PqAccumulator {
    pub per_class: BTreeMap<ClassId, PqCounts>,
}

impl PqAccumulator {
    pub fn add(&mut self, counts: &BTreeMap<ClassId, PqCounts>) {
        for (l, c) in counts {
            self.per_class.entry(*l).or_default().add(c);
        }
    }

    pub fn merge(&mut self, other: &PqAccumulator) {
        self.add(&other.per_class);
    }

    fn total(&self, keep: impl Fn(ClassId) -> bool) -> PqCounts {
        let mut t = PqCounts::default();
        for (l, c) in &self.per_class {
            if keep(*l) {
                t.add(c);
            }
        }
        t
    }

    pub fn report(&self, classes: &ClassTable) -> PqReport {
        let all = self.total(|_| true);
        let thing = self.total(|l| classes.is_thing(l));
        let stuff = self.total(|l| classes.is_stuff(l));
        PqReport {
            pq: all.pq(),
            rq: all.rq(),
            sq: all.sq(),
            pq_thing: thing.pq(),
            pq_stuff: stuff.pq(),
            tp: all.tp,
            fp: all.fp,
            fn_: all.fn_,
            per_class: self
                .per_class
                .iter()
                .map(|(&label, c)| ClassRow {
                    label,
                    name: classes.name(label).unwrap_or("unknown").to_string(),
                    thing: classes.is_thing(label),
                    pq: c.pq(),
                    rq: c.rq(),
                    sq: c.sq(),
                    counts: *c,
                })
                .collect(),
        }
    }
}

/// PQ of one drawing, with thing/stuff splits over class-restricted symbol subsets.
pub fn panoptic_quality(pred: &SymbolSet, gt: &SymbolSet, lengths: &Lengths, classes: &ClassTable) -> Result<PqReport> {
    let mut acc = PqAccumulator::default();
    acc.add(&match_symbols(pred, gt, lengths)?);
    let mut report = acc.report(classes);
    // Restricting both sides to a class subset leaves per-class matches unchanged.
    let thing = match_symbols(&pred.restricted(|l| classes.is_thing(l)), &gt.restricted(|l| classes.is_thing(l)), lengths)?;
    let stuff = match_symbols(&pred.restricted(|l| classes.is_stuff(l)), &gt.restricted(|l| classes.is_stuff(l)), lengths)?;
    let sum = |m: &BTreeMap<ClassId, PqCounts>| {
        let mut t = PqCounts::default();
        m.values().for_each(|c| t.add(c));
        t
    };
    report.pq_thing = sum(&thing).pq();
    report.pq_stuff = sum(&stuff).pq();
    Ok(report)
}

/// How primitives are weighted in wF1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Length,
    LogLength,
}

impl WeightMode {
    pub fn weight(self, length: f64) -> f64 {
        match self {
            WeightMode::Length => length,
            WeightMode::LogLength => length.ln_1p(),
        }
    }
}

/// Weighted micro-averaged true/false positive tallies over primitives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct F1Counts {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl F1Counts {
    pub fn add(&mut self, other: &F1Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn f1(&self) -> f64 {
        let denom = 2.0 * self.tp + self.fp + self.fn_;
        if denom > 0.0 {
            2.0 * self.tp / denom
        } else {
            0.0
        }
    }
}

/// Tallies primitive labels; `None` is background on either side.
pub fn f1_counts(pred: &[Option<ClassId>], gt: &[Option<ClassId>], weights: &[f64]) -> Result<F1Counts> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if weights.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: gt.len(),
        });
    }
    let mut c = F1Counts::default();
    for ((p, g), &w) in pred.iter().zip(gt).zip(weights) {
        match (p, g) {
            (Some(p), Some(g)) if p == g => c.tp += w,
            _ => {
                if p.is_some() {
                    c.fp += w;
                }
                if g.is_some() {
                    c.fn_ += w;
                }
            }
        }
    }
    Ok(c)
}

/// `(F1, wF1)` over aligned primitive label arrays.
pub fn semantic_f1(pred: &[Option<ClassId>], gt: &[Option<ClassId>], lengths: &[f64], mode: WeightMode) -> Result<(f64, f64)> {
    let ones = vec![1.0; gt.len()];
    let weighted: Vec<f64> = lengths.iter().map(|&l| mode.weight(l)).collect();
    Ok((f1_counts(pred, gt, &ones)?.f1(), f1_counts(pred, gt, &weighted)?.f1()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ClassInfo;
    use std::f64::consts::E;

    fn sym(label: ClassId, instance: i64, members: &[PrimitiveId]) -> Symbol {
        Symbol {
            label,
            instance,
            members: members.iter().copied().collect(),
        }
    }

    fn classes() -> ClassTable {
        let c = |id, name: &str| ClassInfo { id, name: name.into() };
        ClassTable {
            things: vec![c(1, "door"), c(2, "window")],
            stuffs: vec![c(3, "wall")],
        }
    }

    #[test]
    fn iou_cases() {
        let lengths: Lengths = [(1, E - 1.0), (2, E * E - 1.0), (3, E - 1.0)].into_iter().collect();
        let a = sym(1, 0, &[1, 2]);
        let b = sym(1, 0, &[2, 3]);
        assert_eq!(symbol_iou(&a, &b, &lengths).unwrap(), 0.5);
        assert_eq!(symbol_iou(&a, &a, &lengths).unwrap(), 1.0);
        assert_eq!(symbol_iou(&sym(1, 0, &[1]), &sym(1, 0, &[3]), &lengths).unwrap(), 0.0);
        assert_eq!(symbol_iou(&sym(1, 0, &[]), &sym(1, 0, &[]), &lengths).unwrap(), 0.0);
        assert!(matches!(symbol_iou(&a, &sym(1, 0, &[9]), &lengths), Err(Error::UnknownPrimitive(9))));
    }

    #[test]
    fn log_base_cancels() {
        let lengths: Lengths = [(1, 3.0), (2, 10.0), (3, 0.5)].into_iter().collect();
        let (a, b) = (sym(1, 0, &[1, 2]), sym(1, 0, &[2, 3]));
        let natural = symbol_iou(&a, &b, &lengths).unwrap();
        let base10 = weighted_iou(&a, &b, |id| Ok((1.0 + lengths.get(id)?).log10())).unwrap();
        assert!((natural - base10).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let lengths: Lengths = (1..=4).map(|i| (i, i as f64)).collect();
        let gt = SymbolSet {
            symbols: vec![sym(1, 0, &[1, 2]), sym(3, 0, &[3, 4])],
        };
        let r = panoptic_quality(&gt, &gt, &lengths, &classes()).unwrap();
        assert_eq!((r.pq, r.fp, r.fn_), (1.0, 0, 0));
        assert_eq!((r.pq_thing, r.pq_stuff), (1.0, 1.0));
        let r = panoptic_quality(&SymbolSet::default(), &gt, &lengths, &classes()).unwrap();
        assert_eq!((r.pq, r.tp, r.fn_), (0.0, 0, 2));
    }

    #[test]
    fn overlapping_symbols_are_rejected() {
        let lengths: Lengths = (1..=3).map(|i| (i, 1.0)).collect();
        let bad = SymbolSet {
            symbols: vec![sym(1, 0, &[1, 2]), sym(1, 1, &[2, 3])],
        };
        assert!(matches!(
            panoptic_quality(&bad, &SymbolSet::default(), &lengths, &classes()),
            Err(Error::OverlappingSymbols(2))
        ));
    }

    #[test]
    fn pq_decomposes_into_rq_times_sq() {
        let lengths: Lengths = (1..=6).map(|i| (i, i as f64)).collect();
        let gt = SymbolSet {
            symbols: vec![sym(1, 0, &[1, 2, 3]), sym(2, 0, &[4, 5]), sym(3, 0, &[6])],
        };
        let pred = SymbolSet {
            symbols: vec![sym(1, 0, &[1, 2]), sym(2, 7, &[4, 5, 6])],
        };
        let r = panoptic_quality(&pred, &gt, &lengths, &classes()).unwrap();
        assert_eq!(r.tp, 2);
        assert!((r.pq - r.rq * r.sq).abs() < 1e-12);
    }

    #[test]
    fn f1_cases() {
        let gt = [Some(1), Some(2)];
        assert_eq!(semantic_f1(&gt, &gt, &[1.0, 3.0], WeightMode::Length).unwrap(), (1.0, 1.0));
        assert_eq!(semantic_f1(&[Some(2), Some(1)], &gt, &[1.0, 3.0], WeightMode::Length).unwrap(), (0.0, 0.0));
        let (f1, wf1) = semantic_f1(&[Some(1), Some(1)], &gt, &[1.0, 3.0], WeightMode::Length).unwrap();
        assert!((f1 - 0.5).abs() < 1e-15);
        assert!((wf1 - 0.25).abs() < 1e-15);
        assert!(matches!(
            semantic_f1(&[Some(1)], &gt, &[1.0, 3.0], WeightMode::Length),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
