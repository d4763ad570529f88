use rand::Rng;
use xmf_core::backbones::{ConvSpec, Phase};
use xmf_core::data::{Modality, ModalitySet, MultimodalBatch};
use xmf_core::fusion::{AttentionMode, FusionModel, ModelConfig};
use xmf_core::rng::{rng_from, XRng};
use xmf_core::tensor::{Graph, Tensor};

fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        num_heads: 2,
        tokens: 2,
        clinical_width: 7,
        snp_count: 10,
        clinical_hidden: [9, 6],
        genetic_hidden: [11, 6],
        conv: ConvSpec {
            in_channels: 3,
            image_size: 16,
            channels: [2, 3, 4],
            kernel: 3,
            strides: [2, 1, 1],
        },
        ..ModelConfig::default()
    }
}

fn batch(rng: &mut XRng, n: usize, cfg: &ModelConfig) -> MultimodalBatch {
    let s = cfg.conv.image_size;
    let mk = |rng: &mut XRng, shape: &[usize], lo: f64, hi: f64| {
        let k = shape.iter().product();
        Tensor::new(shape, (0..k).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    };
    let has = |m| cfg.modalities.contains(m);
    MultimodalBatch {
        clinical: has(Modality::Clinical).then(|| mk(rng, &[n, cfg.clinical_width], -1.0, 1.0)),
        genetic: has(Modality::Genetic).then(|| mk(rng, &[n, cfg.snp_count], 0.0, 1.0)),
        imaging: has(Modality::Imaging).then(|| mk(rng, &[n, 3, s, s], 0.0, 1.0)),
        labels: (0..n).map(|i| i % 3).collect(),
    }
}

#[test]
fn every_mode_and_subset_gives_batch_by_three_logits() {
    let mut rng = rng_from(1);
    for mode in AttentionMode::ALL {
        for mods in ModalitySet::subsets() {
            let cfg = small_config().with_mode(mode).with_modalities(mods.clone());
            let model = FusionModel::build(&cfg).unwrap();
            let b = batch(&mut rng, 5, &cfg);
            let logits = model.logits(&b).unwrap();
            assert_eq!(logits.shape(), &[5, 3], "{mode} {mods}");
            assert!(logits.is_finite());
            let want_width = match model.mode() {
                m if m.uses_cross() => mods.pairs().len() * 2 * cfg.d_model,
                _ => mods.len() * cfg.d_model,
            };
            assert_eq!(model.decision_width(), want_width, "{mode} {mods}");
        }
    }
}

#[test]
fn three_modality_cross_width_is_six_d_model() {
    for d in [8, 16, 32] {
        let cfg = ModelConfig {
            d_model: d,
            ..small_config()
        }
        .with_mode(AttentionMode::SelfAndCross);
        assert_eq!(FusionModel::build(&cfg).unwrap().decision_width(), 6 * d);
        let cfg = cfg.with_mode(AttentionMode::CrossOnly);
        assert_eq!(FusionModel::build(&cfg).unwrap().decision_width(), 6 * d);
    }
}

#[test]
fn single_modality_cross_modes_fall_back_to_self() {
    let cfg = small_config()
        .with_mode(AttentionMode::SelfAndCross)
        .with_modalities(ModalitySet::new([Modality::Genetic]).unwrap());
    let model = FusionModel::build(&cfg).unwrap();
    assert_eq!(model.mode(), AttentionMode::SelfOnly);
    assert_eq!(model.decision_width(), cfg.d_model);
}

#[test]
fn parameter_counts_are_strictly_ordered() {
    for cfg in [small_config(), ModelConfig::default()] {
        let count = |mode| FusionModel::build(&cfg.clone().with_mode(mode)).unwrap().param_count();
        let none = count(AttentionMode::NoAttention);
        let selfonly = count(AttentionMode::SelfOnly);
        let cross = count(AttentionMode::CrossOnly);
        let both = count(AttentionMode::SelfAndCross);
        assert!(none < selfonly && selfonly < both, "{none} {selfonly} {both}");
        assert!(none < cross && cross < both, "{none} {cross} {both}");
    }
}

#[test]
fn parameter_order_is_backbones_then_blocks_then_decision() {
    let model = FusionModel::build(&small_config()).unwrap();
    let names = model.params().names();
    let first = |prefix: &str| names.iter().position(|n| n.starts_with(prefix)).unwrap();
    assert!(first("clinical.") < first("genetic."));
    assert!(first("genetic.") < first("imaging."));
    assert!(first("imaging.") < first("self."));
    assert!(first("self.") < first("cross."));
    assert!(first("cross.") < first("decision."));
    assert_eq!(names.last().unwrap(), "decision.b");
}

#[test]
fn no_attention_is_linear_map_of_concatenated_backbones() {
    let cfg = small_config().with_mode(AttentionMode::NoAttention);
    let model = FusionModel::build(&cfg).unwrap();
    let mut rng = rng_from(2);
    let b = batch(&mut rng, 4, &cfg);
    let logits = model.logits(&b).unwrap();

    let mut g = Graph::new();
    let params = model.params().bind_frozen(&mut g);
    let feats: Vec<Tensor> = cfg
        .modalities
        .iter()
        .map(|m| {
            let v = model
                .backbone_forward(&mut g, &params, m, &b, &mut Phase::Eval)
                .unwrap();
            g.value(v).clone()
        })
        .collect();
    let store = model.params();
    let w = store.get(store.find("decision.w").unwrap());
    let bias = store.get(store.find("decision.b").unwrap());
    let d = cfg.d_model;
    for i in 0..4 {
        let row: Vec<f64> = feats
            .iter()
            .flat_map(|f| f.data()[i * d..(i + 1) * d].to_vec())
            .collect();
        for c in 0..3 {
            let want: f64 = row
                .iter()
                .enumerate()
                .map(|(j, x)| x * w.data()[j * 3 + c])
                .sum::<f64>()
                + bias.data()[c];
            assert!((logits.data()[i * 3 + c] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn logits_are_independent_per_sample() {
    let cfg = small_config();
    let model = FusionModel::build(&cfg).unwrap();
    let mut rng = rng_from(3);
    let b = batch(&mut rng, 4, &cfg);
    let all = model.logits(&b).unwrap();
    let first = MultimodalBatch {
        clinical: b
            .clinical
            .as_ref()
            .map(|t| Tensor::new(&[1, 7], t.data()[..7].to_vec()).unwrap()),
        genetic: b
            .genetic
            .as_ref()
            .map(|t| Tensor::new(&[1, 10], t.data()[..10].to_vec()).unwrap()),
        imaging: b
            .imaging
            .as_ref()
            .map(|t| Tensor::new(&[1, 3, 16, 16], t.data()[..768].to_vec()).unwrap()),
        labels: vec![0],
    };
    let one = model.logits(&first).unwrap();
    for c in 0..3 {
        assert!((one.data()[c] - all.data()[c]).abs() < 1e-12);
    }
}

#[test]
fn build_is_deterministic_per_seed() {
    let a = FusionModel::build(&small_config().with_seed(4)).unwrap();
    let b = FusionModel::build(&small_config().with_seed(4)).unwrap();
    let c = FusionModel::build(&small_config().with_seed(5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params().tensors(), c.params().tensors());
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small_config().with_seed(6);
    let model = FusionModel::build(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = FusionModel::load(dir.path()).unwrap();
    assert_eq!(back, model);
    let mut rng = rng_from(7);
    let b = batch(&mut rng, 3, &cfg);
    assert_eq!(model.logits(&b).unwrap(), back.logits(&b).unwrap());
}

#[test]
fn missing_modality_in_batch_is_rejected() {
    let cfg = small_config();
    let model = FusionModel::build(&cfg).unwrap();
    let mut rng = rng_from(8);
    let mut b = batch(&mut rng, 2, &cfg);
    b.genetic = None;
    assert!(model.logits(&b).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(FusionModel::build(&ModelConfig {
        tokens: 3,
        ..small_config()
    })
    .is_err());
    assert!(FusionModel::build(&ModelConfig {
        num_heads: 3,
        ..small_config()
    })
    .is_err());
    assert!(FusionModel::build(&ModelConfig {
        qk_init_gain: 0.0,
        ..small_config()
    })
    .is_err());
    assert!(FusionModel::build(&ModelConfig {
        dropout: [0.1, 1.0, 0.1],
        ..small_config()
    })
    .is_err());
}

#[test]
fn config_hash_tracks_content() {
    let a = small_config();
    assert_eq!(a.config_hash(), a.clone().config_hash());
    assert_eq!(a.config_hash().len(), 16);
    assert_ne!(a.config_hash(), a.clone().with_seed(1).config_hash());
    let json = serde_json::to_string(&a).unwrap();
    let back: ModelConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a);
}
