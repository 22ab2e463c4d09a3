//! End-to-end orchestration: inference, refinement, panoptic assembly,
//! evaluation and token-count reporting over sets of drawings.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bfr::{assemble_panoptic, assemble_unrefined, refine, PanopticAssignment};
use crate::error::{Error, Result};
use crate::geometry::{ClassId, ClassTable, Drawing};
use crate::io::panoptic::PanopticResult;
use crate::io::prediction::Predictions;
use crate::metrics::{f1_counts, match_symbols, F1Counts, Lengths, PqAccumulator, PqCounts, PqReport, SymbolSet, WeightMode};
use crate::model::SpotterModel;
use crate::sampler::{point_tokens, tokenize_drawing, SamplingConfig};

/// Branch fusion refinement (when `bfr`) followed by panoptic assembly.
pub fn panoptic(preds: &Predictions, classes: &ClassTable, bfr: bool) -> PanopticResult {
    let (semantic, assignment) = if bfr {
        let refined = refine(&preds.semantic, &preds.proposals, classes.count());
        let a = assemble_panoptic(&refined, classes);
        (refined.semantic, a)
    } else {
        (preds.semantic.clone(), assemble_unrefined(&preds.semantic, &preds.proposals, classes))
    };
    PanopticResult {
        classes: classes.clone(),
        ids: preds.ids.clone(),
        assignment,
        semantic,
    }
}

/// Seed for drawing `index` derived from a run seed.
pub fn drawing_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawingScore {
    pub pq_counts: BTreeMap<ClassId, PqCounts>,
    pub f1: F1Counts,
    pub wf1: F1Counts,
}

/// Scores a panoptic result against the drawing's ground truth. Primitives
/// without a result entry count as unassigned background.
pub fn score_drawing(result: &PanopticResult, drawing: &Drawing, mode: WeightMode) -> Result<DrawingScore> {
    let mut index = HashMap::with_capacity(result.ids.len());
    for (i, &id) in result.ids.iter().enumerate() {
        if drawing.primitive(id).is_none() {
            return Err(Error::UnknownPrimitive(id));
        }
        index.insert(id, i);
    }
    let missing = drawing.primitives.iter().filter(|p| !index.contains_key(&p.id)).count();
    if missing > 0 {
        log::warn!("{missing} primitives missing from the prediction; scoring them as background");
    }
    let pred_symbols = SymbolSet::from_assignment(&result.assignment, &result.ids);
    pred_symbols.check_disjoint()?;
    let gt_symbols = SymbolSet::ground_truth(drawing);
    gt_symbols.check_disjoint()?;
    let lengths = Lengths::of(drawing);
    let pq_counts = match_symbols(&pred_symbols, &gt_symbols, &lengths)?;

    let semantic = result.semantic_labels();
    let pred: Vec<Option<ClassId>> = drawing.primitives.iter().map(|p| index.get(&p.id).and_then(|&i| semantic[i])).collect();
    let gt: Vec<Option<ClassId>> = drawing.primitives.iter().map(|p| p.gt_label).collect();
    let raw = drawing.lengths();
    let weights: Vec<f64> = raw.iter().map(|&l| mode.weight(l)).collect();
    Ok(DrawingScore {
        pq_counts,
        f1: f1_counts(&pred, &gt, &vec![1.0; gt.len()])?,
        wf1: f1_counts(&pred, &gt, &weights)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawingRow {
    pub index: usize,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wf1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub panoptic: PqReport,
    pub f1: f64,
    pub wf1: f64,
    pub weight_mode: WeightMode,
    pub bfr: bool,
    pub drawings: Vec<DrawingRow>,
}

/// Aggregates per-drawing scores; rows are kept in index order.
#[derive(Debug, Default)]
pub struct Evaluator {
    pq: PqAccumulator,
    f1: F1Counts,
    wf1: F1Counts,
    rows: Vec<DrawingRow>,
}

impl Evaluator {
    pub fn add(&mut self, index: usize, name: &str, score: Result<DrawingScore>) {
        let row = match score {
            Ok(s) => {
                self.pq.add(&s.pq_counts);
                self.f1.add(&s.f1);
                self.wf1.add(&s.wf1);
                let mut acc = PqAccumulator::default();
                acc.add(&s.pq_counts);
                let mut total = PqCounts::default();
                acc.per_class.values().for_each(|c| total.add(c));
                DrawingRow {
                    index,
                    name: name.into(),
                    pq: Some(total.pq()),
                    f1: Some(s.f1.f1()),
                    wf1: Some(s.wf1.f1()),
                    error: None,
                }
            }
            Err(e) => DrawingRow {
                index,
                name: name.into(),
                pq: None,
                f1: None,
                wf1: None,
                error: Some(e.to_string()),
            },
        };
        self.rows.push(row);
    }

    pub fn finish(mut self, classes: &ClassTable, mode: WeightMode, bfr: bool) -> EvalReport {
        self.rows.sort_by_key(|r| r.index);
        EvalReport {
            panoptic: self.pq.report(classes),
            f1: self.f1.f1(),
            wf1: self.wf1.f1(),
            weight_mode: mode,
            bfr,
            drawings: self.rows,
        }
    }
}

/// Runs inference on one drawing and returns its panoptic result.
pub fn infer_drawing(model: &SpotterModel, drawing: &Drawing, seed: u64, bfr: bool) -> Result<(Predictions, PanopticResult)> {
    let prepared = model.prepare(drawing)?;
    let preds = model.predict(&prepared, seed)?;
    let result = panoptic(&preds, &model.classes, bfr);
    Ok((preds, result))
}

/// Inference and scoring over many drawings in parallel. A failing drawing is
/// recorded in its row; the others still count.
pub fn evaluate_model(model: &SpotterModel, drawings: &[Drawing], names: &[String], seed: u64, bfr: bool, mode: WeightMode) -> EvalReport {
    let scores: Vec<Result<DrawingScore>> = drawings
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let (_, result) = infer_drawing(model, d, drawing_seed(seed, i), bfr)?;
            score_drawing(&result, d, mode)
        })
        .collect();
    let mut eval = Evaluator::default();
    for (i, s) in scores.into_iter().enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| format!("drawing-{i}"));
        eval.add(i, &name, s);
    }
    eval.finish(&model.classes, mode, bfr)
}

/// Panoptic result that copies the ground truth, for checks and renders.
pub fn ground_truth_result(drawing: &Drawing) -> PanopticResult {
    let background = drawing.classes.background();
    PanopticResult {
        classes: drawing.classes.clone(),
        ids: drawing.primitives.iter().map(|p| p.id).collect(),
        assignment: PanopticAssignment {
            entries: drawing.primitives.iter().map(|p| p.gt_label.map(|l| (l, p.gt_instance.unwrap_or(-1)))).collect(),
        },
        semantic: crate::decoder::SemanticPrediction {
            labels: drawing.primitives.iter().map(|p| p.gt_label.unwrap_or(background)).collect(),
            scores: vec![1.0; drawing.primitives.len()],
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCountRow {
    pub name: String,
    pub primitives: usize,
    pub line_tokens: usize,
    pub point_tokens: usize,
    /// `line_tokens / point_tokens`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    pub alpha_sample: f64,
    pub line_tokens: usize,
    pub point_tokens: usize,
    pub ratio: f64,
    pub drawings: Vec<TokenCountRow>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Line-token versus point-token counts at the same sampling density.
pub fn token_report(drawings: &[Drawing], names: &[String], sampling: &SamplingConfig) -> TokenReport {
    let drawings: Vec<TokenCountRow> = drawings
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let lines = tokenize_drawing(d, sampling).len();
            let points = point_tokens(d, sampling).len();
            TokenCountRow {
                name: names.get(i).cloned().unwrap_or_else(|| format!("drawing-{i}")),
                primitives: d.primitives.len(),
                line_tokens: lines,
                point_tokens: points,
                ratio: ratio(lines, points),
            }
        })
        .collect();
    let line_tokens = drawings.iter().map(|r| r.line_tokens).sum();
    let point_tokens = drawings.iter().map(|r| r.point_tokens).sum();
    TokenReport {
        alpha_sample: sampling.alpha_sample,
        line_tokens,
        point_tokens,
        ratio: ratio(line_tokens, point_tokens),
        drawings,
    }
}

/// Everything a toy run produces.
#[derive(Debug, Clone)]
pub struct ToyRun {
    pub model: SpotterModel,
    pub train: crate::train::TrainReport,
    pub eval: EvalReport,
    pub eval_skip_bfr: EvalReport,
}

/// Synthesizes drawings, trains a model and evaluates it on the training set
/// with and without refinement. `progress` sees every epoch.
pub fn run_toy(cfg: &crate::config::RunConfig, progress: impl FnMut(&crate::train::EpochStats)) -> Result<(Vec<Drawing>, ToyRun)> {
    cfg.validate()?;
    let drawings = crate::synth::generate(&cfg.synth)?;
    let classes = crate::synth::class_table();
    let mut model = SpotterModel::new(cfg.model, &classes)?;
    let train = crate::train::train(&mut model, &drawings, &cfg.train, progress)?;
    let names: Vec<String> = (0..drawings.len()).map(crate::synth::drawing_name).collect();
    let eval = evaluate_model(&model, &drawings, &names, cfg.inference_seed, true, cfg.weight_mode);
    let eval_skip_bfr = evaluate_model(&model, &drawings, &names, cfg.inference_seed, false, cfg.weight_mode);
    Ok((
        drawings,
        ToyRun {
            model,
            train,
            eval,
            eval_skip_bfr,
        },
    ))
}
