//! The full spotting model: line encoder, line pooling, layer feature
//! enhancement, query decoder and the instance/semantic heads, sharing one
//! parameter store.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::decoder::{
    instance_proposals, losses, query_select, semantic_prediction, DecoderConfig, GroundTruth, GtInstance, Heads, LossBreakdown,
    LossWeights, QueryDecoder,
};
use crate::encoder::{pool_lines, EncoderConfig, LayerFeatureEnhancement, LineEncoder};
use crate::error::{Error, Result};
use crate::features::{featurize, LineToken, PriorMode};
use crate::geometry::{ClassId, ClassTable, Drawing, LayerId, PrimitiveId};
use crate::io::checkpoint::Checkpoint;
use crate::io::drawing::ClassesDoc;
use crate::io::prediction::Predictions;
use crate::nn::{ParamStore, Tape, Var};
use crate::sampler::{tokenize_drawing, SamplingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub sampling: SamplingConfig,
    pub prior_mode: PriorMode,
    pub layer_enhancement: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            sampling: SamplingConfig::default(),
            prior_mode: PriorMode::default(),
            layer_enhancement: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate(self.encoder.embed_dim)?;
        self.sampling.validate()
    }
}

/// Thing instances and per-primitive labels for training. Stuff classes are
/// learned by the semantic branch only.
pub fn ground_truth(drawing: &Drawing) -> GroundTruth {
    let background = drawing.classes.background();
    let labels = drawing.primitives.iter().map(|p| p.gt_label.unwrap_or(background)).collect();
    let mut groups: BTreeMap<(ClassId, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in drawing.primitives.iter().enumerate() {
        if let Some(l) = p.gt_label.filter(|&l| drawing.classes.is_thing(l)) {
            groups.entry((l, p.gt_instance.unwrap_or(-1))).or_default().push(i);
        }
    }
    GroundTruth {
        labels,
        instances: groups.into_iter().map(|((label, _), members)| GtInstance { label, members }).collect(),
    }
}

/// A drawing tokenized and featurized for the model.
#[derive(Debug, Clone)]
pub struct PreparedDrawing {
    pub ids: Vec<PrimitiveId>,
    pub layers: Vec<LayerId>,
    pub tokens: Vec<LineToken>,
    pub ranges: Vec<Range<usize>>,
    pub capped: Vec<PrimitiveId>,
    pub gt: GroundTruth,
}

impl PreparedDrawing {
    pub fn new(drawing: &Drawing, sampling: &SamplingConfig, mode: PriorMode) -> Result<Self> {
        drawing.validate()?;
        let tokenization = tokenize_drawing(drawing, sampling);
        let tokens = featurize(drawing, &tokenization, mode)?;
        Ok(Self {
            ids: drawing.primitives.iter().map(|p| p.id).collect(),
            layers: drawing.primitives.iter().map(|p| p.layer).collect(),
            tokens,
            ranges: tokenization.ranges,
            capped: tokenization.capped,
            gt: ground_truth(drawing),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Raw head outputs on the tape.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    pub class_logits: Var,
    pub mask_logits: Var,
    pub semantic_logits: Var,
}

#[derive(Debug, Clone)]
pub struct SpotterModel {
    pub config: ModelConfig,
    pub classes: ClassTable,
    pub store: ParamStore,
    encoder: LineEncoder,
    lfe: LayerFeatureEnhancement,
    decoder: QueryDecoder,
    heads: Heads,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: ModelConfig,
    classes: ClassesDoc,
}

impl SpotterModel {
    pub fn new(config: ModelConfig, classes: &ClassTable) -> Result<Self> {
        config.validate()?;
        classes.check()?;
        if classes.count() == 0 {
            return Err(Error::Config("model needs at least one class".into()));
        }
        let dim = config.encoder.embed_dim;
        let mut store = ParamStore::default();
        let mut rng = crate::seeded_rng(config.encoder.seed);
        let encoder = LineEncoder::new(&mut store, &mut rng, config.encoder);
        let lfe = LayerFeatureEnhancement::new(&mut store, &mut rng, dim);
        let mut rng = crate::seeded_rng(config.decoder.seed);
        let decoder = QueryDecoder::new(&mut store, &mut rng, dim, &config.decoder);
        let heads = Heads::new(&mut store, &mut rng, dim, classes.count());
        Ok(Self {
            config,
            classes: classes.clone(),
            store,
            encoder,
            lfe,
            decoder,
            heads,
        })
    }

    pub fn class_count(&self) -> usize {
        self.classes.count()
    }

    pub fn prepare(&self, drawing: &Drawing) -> Result<PreparedDrawing> {
        if drawing.classes != self.classes {
            return Err(Error::Config("drawing class table differs from the model's".into()));
        }
        PreparedDrawing::new(drawing, &self.config.sampling, self.config.prior_mode)
    }

    /// Forward pass with queries seeded by the primitives in `selected`.
    pub fn forward(&self, tape: &mut Tape, p: &PreparedDrawing, selected: &[usize]) -> Result<Outputs> {
        if p.is_empty() || selected.is_empty() {
            return Err(Error::Shape {
                op: "forward",
                detail: "drawing has no primitives".into(),
            });
        }
        let lines = self.encoder.forward(tape, &self.store, &p.tokens);
        let mut prims = pool_lines(tape, lines, &p.ranges)?;
        if self.config.layer_enhancement {
            prims = self.lfe.forward(tape, &self.store, prims, &p.layers);
        }
        let queries = tape.gather_rows(prims, selected);
        let queries = self.decoder.forward(tape, &self.store, queries, prims, None);
        let (class_logits, mask_logits, semantic_logits) = self.heads.forward(tape, &self.store, queries, prims);
        Ok(Outputs {
            class_logits,
            mask_logits,
            semantic_logits,
        })
    }

    pub fn loss(&self, tape: &mut Tape, p: &PreparedDrawing, selected: &[usize], weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
        let out = self.forward(tape, p, selected)?;
        Ok(losses(
            tape,
            out.class_logits,
            out.mask_logits,
            out.semantic_logits,
            selected,
            &p.gt,
            weights,
        ))
    }

    /// Inference; query selection is seeded by `seed`.
    pub fn predict(&self, p: &PreparedDrawing, seed: u64) -> Result<Predictions> {
        let n = p.len();
        if n == 0 {
            let background = self.classes.background();
            return Ok(Predictions {
                ids: Vec::new(),
                semantic: crate::decoder::SemanticPrediction {
                    labels: vec![background; 0],
                    scores: Vec::new(),
                },
                proposals: Vec::new(),
            });
        }
        let selected = query_select(n, self.config.decoder.alpha_select_infer, &mut crate::seeded_rng(seed));
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, p, &selected)?;
        let proposals = instance_proposals(
            tape.value(out.class_logits),
            tape.value(out.mask_logits),
            self.config.decoder.mask_threshold,
        );
        let semantic = semantic_prediction(tape.value(out.semantic_logits), &selected, n)?;
        Ok(Predictions {
            ids: p.ids.clone(),
            semantic,
            proposals,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let metadata = serde_json::to_value(Metadata {
            config: self.config,
            classes: (&self.classes).into(),
        })
        .map_err(|e| Error::decode("checkpoint metadata", e.to_string()))?;
        Ok(Checkpoint::from_store(&self.store, metadata))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: Metadata = crate::io::decode_with(&ckpt.metadata, crate::io::Strictness::Strict, "/metadata")?;
        let mut model = Self::new(meta.config, &(&meta.classes).into())?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }
}
