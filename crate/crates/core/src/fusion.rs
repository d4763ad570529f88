//! The end-to-end fusion network:
//!
//! ```text
//! backbones → [self-attention per modality] → [bi-directional cross-modal
//! attention per modality pair] → concatenate → linear decision layer → 3 logits
//! ```
//!
//! Each backbone emits a `d_model`-wide vector per patient, which is viewed as
//! a sequence of `tokens` tokens of width `d_model / tokens` for attention.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{cross_modal_pair, self_attention, AttentionBlock, AttentionConfig};
use crate::backbones::{ConvBackbone, ConvSpec, DenseBackbone, Phase};
use crate::data::{Modality, ModalitySet, MultimodalBatch, MultimodalDataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::rng::child_rng;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionMode {
    SelfAndCross,
    SelfOnly,
    CrossOnly,
    NoAttention,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 4] = [
        AttentionMode::SelfAndCross,
        AttentionMode::CrossOnly,
        AttentionMode::SelfOnly,
        AttentionMode::NoAttention,
    ];

    pub fn uses_self(self) -> bool {
        matches!(self, AttentionMode::SelfAndCross | AttentionMode::SelfOnly)
    }

    pub fn uses_cross(self) -> bool {
        matches!(self, AttentionMode::SelfAndCross | AttentionMode::CrossOnly)
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttentionMode::SelfAndCross => "self+cross",
            AttentionMode::SelfOnly => "self",
            AttentionMode::CrossOnly => "cross",
            AttentionMode::NoAttention => "none",
        };
        f.write_str(s)
    }
}

impl FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self+cross" | "SelfAndCross" => Ok(AttentionMode::SelfAndCross),
            "self" | "SelfOnly" => Ok(AttentionMode::SelfOnly),
            "cross" | "CrossOnly" => Ok(AttentionMode::CrossOnly),
            "none" | "NoAttention" => Ok(AttentionMode::NoAttention),
            other => Err(Error::Config(format!("unknown attention mode {other:?}"))),
        }
    }
}

/// Architecture and training hyperparameters. Field order is the JSON order,
/// which the config hash depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: AttentionMode,
    pub modalities: ModalitySet,
    pub d_model: usize,
    pub num_heads: usize,
    pub tokens: usize,
    /// Adds the input back onto each self-attention output.
    pub self_residual: bool,
    /// Scale applied to the Glorot-uniform query/key projections at init.
    pub qk_init_gain: f64,
    pub dropout: [f64; 3],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clinical_width: usize,
    pub snp_count: usize,
    pub clinical_hidden: [usize; 2],
    pub genetic_hidden: [usize; 2],
    pub conv: ConvSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: AttentionMode::SelfAndCross,
            modalities: ModalitySet::all(),
            d_model: 32,
            num_heads: 2,
            tokens: 4,
            self_residual: true,
            qk_init_gain: 3.0,
            dropout: [0.2, 0.3, 0.5],
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            clinical_width: 29,
            snp_count: 1000,
            clinical_hidden: [128, 64],
            genetic_hidden: [256, 64],
            conv: ConvSpec::default(),
        }
    }
}

impl ModelConfig {
    /// Copies the input geometry (clinical width, SNP count, image size) from
    /// a dataset.
    pub fn fit_to(mut self, data: &MultimodalDataset) -> Self {
        self.clinical_width = data.clinical_width();
        self.snp_count = data.snp_count;
        self.conv.image_size = data.image_size;
        self
    }

    pub fn with_mode(mut self, mode: AttentionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_modalities(mut self, mods: ModalitySet) -> Self {
        self.modalities = mods;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn token_width(&self) -> usize {
        self.d_model / self.tokens
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.tokens == 0 || !self.d_model.is_multiple_of(self.tokens) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of tokens {}",
                self.d_model, self.tokens
            )));
        }
        AttentionConfig::new(self.token_width(), self.num_heads)?;
        if !(self.qk_init_gain > 0.0 && self.qk_init_gain.is_finite()) {
            return Err(Error::Config(format!(
                "qk_init_gain {} must be positive",
                self.qk_init_gain
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} invalid", self.learning_rate)));
        }
        if let Some(r) = self.dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::Config(format!("dropout rate {r} outside [0, 1)")));
        }
        if self.modalities.contains(Modality::Imaging) {
            self.conv.spatial_sizes()?;
        }
        Ok(())
    }

    /// Mode actually wired: cross-modal attention needs at least two
    /// modalities, so single-modality configs fall back to self-attention.
    pub fn effective_mode(&self) -> AttentionMode {
        if self.modalities.len() < 2 && self.mode.uses_cross() {
            AttentionMode::SelfOnly
        } else {
            self.mode
        }
    }

    /// Width of the concatenated representation fed to the decision layer.
    pub fn decision_width(&self) -> usize {
        let mode = self.effective_mode();
        if mode.uses_cross() {
            self.modalities.pairs().len() * 2 * self.d_model
        } else {
            self.modalities.len() * self.d_model
        }
    }

    /// Canonical JSON (struct field order).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct CrossPair {
    a: Modality,
    b: Modality,
    ab: AttentionBlock,
    ba: AttentionBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    config: ModelConfig,
    mode: AttentionMode,
    store: ParamStore,
    clinical: Option<DenseBackbone>,
    genetic: Option<DenseBackbone>,
    imaging: Option<ConvBackbone>,
    self_blocks: Vec<(Modality, AttentionBlock)>,
    cross_pairs: Vec<CrossPair>,
    decision_w: ParamId,
    decision_b: ParamId,
    decision_width: usize,
}

impl FusionModel {
    /// Deterministic construction: each component draws its initial weights
    /// from its own stream derived from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mode = config.effective_mode();
        if mode != config.mode {
            log::warn!(
                "{} attention needs two modalities; {} runs with self-attention only",
                config.mode,
                config.modalities
            );
        }
        let seed = config.seed;
        let d = config.d_model;
        let mut store = ParamStore::new();

        let clinical = if config.modalities.contains(Modality::Clinical) {
            let [h1, h2] = config.clinical_hidden;
            Some(DenseBackbone::new(
                &mut store,
                "clinical",
                [config.clinical_width, h1, h2, d],
                config.dropout,
                &mut child_rng(seed, "init/clinical"),
            )?)
        } else {
            None
        };
        let genetic = if config.modalities.contains(Modality::Genetic) {
            let [h1, h2] = config.genetic_hidden;
            Some(DenseBackbone::new(
                &mut store,
                "genetic",
                [config.snp_count, h1, h2, d],
                config.dropout,
                &mut child_rng(seed, "init/genetic"),
            )?)
        } else {
            None
        };
        let imaging = if config.modalities.contains(Modality::Imaging) {
            Some(ConvBackbone::new(
                &mut store,
                "imaging",
                config.conv.clone(),
                d,
                &mut child_rng(seed, "init/imaging"),
            )?)
        } else {
            None
        };

        let att = AttentionConfig::new(config.token_width(), config.num_heads)?;
        let mut self_blocks = Vec::new();
        if mode.uses_self() {
            for m in config.modalities.iter() {
                let name = format!("self.{}", m.short());
                let block = AttentionBlock::with_qk_gain(
                    &mut store,
                    &name,
                    att,
                    config.qk_init_gain,
                    &mut child_rng(seed, &format!("init/{name}")),
                );
                self_blocks.push((m, block));
            }
        }
        let mut cross_pairs = Vec::new();
        if mode.uses_cross() {
            for (a, b) in config.modalities.pairs() {
                let ab_name = format!("cross.{}{}", a.short(), b.short());
                let ba_name = format!("cross.{}{}", b.short(), a.short());
                let ab = AttentionBlock::with_qk_gain(
                    &mut store,
                    &ab_name,
                    att,
                    config.qk_init_gain,
                    &mut child_rng(seed, &format!("init/{ab_name}")),
                );
                let ba = AttentionBlock::with_qk_gain(
                    &mut store,
                    &ba_name,
                    att,
                    config.qk_init_gain,
                    &mut child_rng(seed, &format!("init/{ba_name}")),
                );
                cross_pairs.push(CrossPair { a, b, ab, ba });
            }
        }

        let decision_width = config.decision_width();
        let mut rng = child_rng(seed, "init/decision");
        let decision_w = store.add(
            "decision.w",
            glorot_uniform(&mut rng, &[decision_width, NUM_CLASSES], decision_width, NUM_CLASSES),
        );
        let decision_b = store.add("decision.b", Tensor::zeros(&[NUM_CLASSES]));
        assert_eq!(store.get(decision_w).shape()[0], decision_width);

        Ok(Self {
            config: config.clone(),
            mode,
            store,
            clinical,
            genetic,
            imaging,
            self_blocks,
            cross_pairs,
            decision_w,
            decision_b,
            decision_width,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> AttentionMode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    pub fn decision_width(&self) -> usize {
        self.decision_width
    }

    /// Backbone output for one modality, `[batch×d_model]`.
    pub fn backbone_forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        m: Modality,
        batch: &MultimodalBatch,
        phase: &mut Phase<'_>,
    ) -> Result<Var> {
        let input = batch
            .get(m)
            .ok_or_else(|| Error::Data(format!("batch is missing the {m} modality")))?;
        let x = g.input(input.clone());
        match m {
            Modality::Clinical => self.clinical.as_ref().expect("built").forward(g, params, x, phase),
            Modality::Genetic => self.genetic.as_ref().expect("built").forward(g, params, x, phase),
            Modality::Imaging => self.imaging.as_ref().expect("built").forward(g, params, x),
        }
    }

    /// Logits `[batch×3]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        batch: &MultimodalBatch,
        phase: &mut Phase<'_>,
    ) -> Result<Var> {
        let present = batch.modalities();
        let wanted: Vec<Modality> = self.config.modalities.iter().collect();
        if present != wanted {
            return Err(Error::Data(format!(
                "batch carries {present:?}, model expects {wanted:?}"
            )));
        }
        let n = batch.len();
        let (t, w) = (self.config.tokens, self.config.token_width());

        let mut feats: Vec<(Modality, Var)> = Vec::with_capacity(wanted.len());
        for &m in &wanted {
            let h = self.backbone_forward(g, params, m, batch, phase)?;
            feats.push((m, g.reshape(h, &[n, t, w])?));
        }

        if self.mode.uses_self() {
            for (m, x) in feats.iter_mut() {
                let block = self
                    .self_blocks
                    .iter()
                    .find(|(bm, _)| bm == m)
                    .map(|(_, b)| b)
                    .expect("self block per modality");
                let y = self_attention(g, params, block, *x)?;
                *x = if self.config.self_residual { g.add(*x, y)? } else { y };
            }
        }

        let parts: Vec<Var> = if self.mode.uses_cross() {
            let lookup = |m: Modality| feats.iter().find(|(fm, _)| *fm == m).map(|(_, v)| *v).expect("feature");
            let mut out = Vec::with_capacity(self.cross_pairs.len());
            for p in &self.cross_pairs {
                let y = cross_modal_pair(g, params, &p.ab, &p.ba, lookup(p.a), lookup(p.b))?;
                out.push(g.reshape(y, &[n, 2 * self.config.d_model])?);
            }
            out
        } else {
            let mut out = Vec::with_capacity(feats.len());
            for &(_, x) in &feats {
                out.push(g.reshape(x, &[n, self.config.d_model])?);
            }
            out
        };
        let joined = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_last(&parts)?
        };
        g.linear(joined, params[self.decision_w.index()], params[self.decision_b.index()])
    }

    /// Eval-mode logits as a plain tensor.
    pub fn logits(&self, batch: &MultimodalBatch) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.store.bind_frozen(&mut g);
        let out = self.forward(&mut g, &params, batch, &mut Phase::Eval)?;
        Ok(g.value(out).clone())
    }

    pub fn predict(&self, batch: &MultimodalBatch) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(batch)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.store.write_checkpoint(dir, serde_json::to_value(&self.config)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, cfg) = ParamStore::read_checkpoint(dir)?;
        let config: ModelConfig = serde_json::from_value(cfg)?;
        let mut model = Self::build(&config)?;
        let same_layout = model.store.names() == store.names()
            && model
                .store
                .tensors()
                .iter()
                .zip(store.tensors())
                .all(|(a, b)| a.shape() == b.shape());
        if !same_layout {
            return Err(Error::Data("checkpoint parameters do not match its config".into()));
        }
        model.store = store;
        Ok(model)
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = *logits.shape().last().expect("rank >= 1");
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
