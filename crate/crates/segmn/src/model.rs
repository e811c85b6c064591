//! End-to-end model: encoder, cross-graph interaction, SPM, and readout
//! assembled over one tape per graph pair, plus checkpoint round-trips.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{
    bind_encoder, embed_graph, init_encoder_params, EncoderDims, GraphFeatures, Variant,
};
use crate::graph::{AssignmentGraph, NodeGraph};
use crate::matcher::{
    bind_matcher, cross_conv_readout, cross_graph_similarity, init_matcher_params,
    matrix_self_attention, spm_apply, MatcherDims, MatcherError, SimilarityMatrix, SpmContext,
};
use crate::params::{CheckpointError, ModelParams};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata `{0}` is missing or invalid")]
    Meta(String),
    #[error("checkpoint was saved by model `{got}`, expected `{expected}`")]
    WrongModel { got: String, expected: String },
}

/// Hyperparameters of the full model.
#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Node feature width (label vocabulary size, or 1 when unlabeled).
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dk: usize,
    pub spm_layers: usize,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub mlp_hidden: usize,
    pub n_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Dual,
            input_dim: 1,
            hidden: 64,
            layers: 3,
            dk: 64,
            spm_layers: 1,
            conv_layers: 2,
            conv_channels: 8,
            mlp_hidden: 16,
            n_max: 10,
        }
    }
}

impl ModelConfig {
    fn encoder_dims(&self) -> EncoderDims {
        EncoderDims { input_dim: self.input_dim, hidden: self.hidden, layers: self.layers }
    }

    fn matcher_dims(&self) -> MatcherDims {
        MatcherDims {
            embed_dim: self.variant.embed_dim(self.hidden),
            dk: self.dk,
            spm_layers: self.spm_layers,
            conv_layers: self.conv_layers,
            conv_channels: self.conv_channels,
            mlp_hidden: self.mlp_hidden,
        }
    }

    fn write_meta(&self, params: &mut ModelParams) {
        params.set_meta("model", "segmn");
        params.set_meta("variant", self.variant.name());
        params.set_meta("input_dim", self.input_dim);
        params.set_meta("hidden", self.hidden);
        params.set_meta("layers", self.layers);
        params.set_meta("dk", self.dk);
        params.set_meta("spm_layers", self.spm_layers);
        params.set_meta("conv_layers", self.conv_layers);
        params.set_meta("conv_channels", self.conv_channels);
        params.set_meta("mlp_hidden", self.mlp_hidden);
        params.set_meta("n_max", self.n_max);
    }

    fn read_meta(params: &ModelParams) -> Result<ModelConfig, ModelError> {
        let get = |key: &str| -> Result<usize, ModelError> {
            params
                .meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ModelError::Meta(key.to_string()))
        };
        let variant = params
            .meta("variant")
            .and_then(Variant::parse)
            .ok_or_else(|| ModelError::Meta("variant".into()))?;
        Ok(ModelConfig {
            variant,
            input_dim: get("input_dim")?,
            hidden: get("hidden")?,
            layers: get("layers")?,
            dk: get("dk")?,
            spm_layers: get("spm_layers")?,
            conv_layers: get("conv_layers")?,
            conv_channels: get("conv_channels")?,
            mlp_hidden: get("mlp_hidden")?,
            n_max: get("n_max")?,
        })
    }
}

/// Everything pair-specific a forward pass needs: per-graph constants plus
/// the assignment-graph contexts for both matrix orientations.
pub struct PairData<'a> {
    pub g1: &'a GraphFeatures,
    pub g2: &'a GraphFeatures,
    pub spm12: Option<SpmContext>,
    pub spm21: Option<SpmContext>,
}

impl<'a> PairData<'a> {
    pub fn build(
        ga: &NodeGraph,
        gb: &NodeGraph,
        gfa: &'a GraphFeatures,
        gfb: &'a GraphFeatures,
        need_spm: bool,
    ) -> PairData<'a> {
        let (spm12, spm21) = if need_spm {
            (
                Some(SpmContext::new(&AssignmentGraph::build(ga, gb))),
                Some(SpmContext::new(&AssignmentGraph::build(gb, ga))),
            )
        } else {
            (None, None)
        };
        PairData { g1: gfa, g2: gfb, spm12, spm21 }
    }
}

/// A trainable graph-pair scoring model.
pub trait PairModel: Sync {
    fn params(&self) -> &ModelParams;
    fn params_mut(&mut self) -> &mut ModelParams;
    /// Scalar prediction in (0, 1) as a 1x1 tensor on `tape`.
    fn predict(&self, tape: &Tape, pair: &PairData) -> Result<Tensor, MatcherError>;
    /// Whether [`PairData::build`] must prepare assignment-graph contexts.
    fn needs_spm(&self) -> bool;
    fn n_max(&self) -> usize;
    /// How many SPM layer applications this model has executed.
    fn spm_executions(&self) -> u64;
}

/// Intermediate matrices of one forward pass, for inspection and dumps.
pub struct Prediction {
    pub s_hat: Tensor,
    /// S1 straight out of cross-graph interaction.
    pub s1_initial: SimilarityMatrix,
    /// S1 after the SPM layers (equal to `s1_initial` when spm_layers = 0).
    pub s1_enhanced: SimilarityMatrix,
    pub s2_initial: SimilarityMatrix,
    pub s2_enhanced: SimilarityMatrix,
}

/// The full structure-enhanced graph matching model.
#[derive(Debug)]
pub struct SegmnModel {
    cfg: ModelConfig,
    params: ModelParams,
    spm_count: AtomicU64,
}

impl SegmnModel {
    /// Fresh model with seeded initialization.
    pub fn new(cfg: ModelConfig, seed: u64) -> SegmnModel {
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_encoder_params(&mut params, &cfg.encoder_dims(), cfg.variant, &mut rng);
        init_matcher_params(&mut params, &cfg.matcher_dims(), &mut rng);
        cfg.write_meta(&mut params);
        SegmnModel { cfg, params, spm_count: AtomicU64::new(0) }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Padding size is a per-dataset constant; the parameters do not depend
    /// on it, so it can be adjusted for the corpus at hand.
    pub fn set_n_max(&mut self, n_max: usize) {
        self.cfg.n_max = n_max;
        self.cfg.write_meta(&mut self.params);
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.params.save(path)?)
    }

    pub fn load(path: &Path) -> Result<SegmnModel, ModelError> {
        let params = ModelParams::load(path)?;
        match params.meta("model") {
            Some("segmn") => {}
            other => {
                return Err(ModelError::WrongModel {
                    got: other.unwrap_or("<none>").to_string(),
                    expected: "segmn".to_string(),
                })
            }
        }
        let cfg = ModelConfig::read_meta(&params)?;
        Ok(SegmnModel { cfg, params, spm_count: AtomicU64::new(0) })
    }

    /// Forward pass keeping the intermediate similarity matrices.
    pub fn predict_detailed(
        &self,
        tape: &Tape,
        pair: &PairData,
    ) -> Result<Prediction, MatcherError> {
        let cfg = &self.cfg;
        let enc = bind_encoder(tape, &self.params, &cfg.encoder_dims(), cfg.variant);
        let mat = bind_matcher(tape, &self.params, &cfg.matcher_dims());

        let h1 = embed_graph(tape, &enc, pair.g1, cfg.variant);
        let h2 = embed_graph(tape, &enc, pair.g2, cfg.variant);
        let (s1_initial, s2_initial) = cross_graph_similarity(tape, &mat, h1, h2, cfg.n_max)?;

        let mut s1 = s1_initial;
        let mut s2 = s2_initial;
        for l in 0..cfg.spm_layers {
            let ctx12 = pair.spm12.as_ref().expect("pair built without SPM contexts");
            let ctx21 = pair.spm21.as_ref().expect("pair built without SPM contexts");
            s1 = spm_apply(tape, &s1, ctx12, mat.spm_wa[l]);
            s2 = spm_apply(tape, &s2, ctx21, mat.spm_wa[l]);
            self.spm_count.fetch_add(2, Ordering::Relaxed);
        }
        let (s1_enhanced, s2_enhanced) = (s1, s2);

        let s1_att = matrix_self_attention(tape, &mat, &s1_enhanced);
        let s2_att = matrix_self_attention(tape, &mat, &s2_enhanced);
        let s_hat = cross_conv_readout(tape, &mat, &s1_att, &s2_att);
        Ok(Prediction { s_hat, s1_initial, s1_enhanced, s2_initial, s2_enhanced })
    }
}

impl PairModel for SegmnModel {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn predict(&self, tape: &Tape, pair: &PairData) -> Result<Tensor, MatcherError> {
        Ok(self.predict_detailed(tape, pair)?.s_hat)
    }

    fn needs_spm(&self) -> bool {
        self.cfg.spm_layers > 0
    }

    fn n_max(&self) -> usize {
        self.cfg.n_max
    }

    fn spm_executions(&self) -> u64 {
        self.spm_count.load(Ordering::Relaxed)
    }
}

/// Per-graph constants for every graph in a corpus, indexed like the corpus.
pub fn precompute_features(graphs: &[NodeGraph]) -> Vec<GraphFeatures> {
    graphs.iter().map(GraphFeatures::from_graph).collect()
}

/// Convenience for scoring one pair outside training loops.
pub fn score_pair(
    model: &SegmnModel,
    ga: &NodeGraph,
    gb: &NodeGraph,
) -> Result<f64, MatcherError> {
    let gfa = GraphFeatures::from_graph(ga);
    let gfb = GraphFeatures::from_graph(gb);
    let pair = PairData::build(ga, gb, &gfa, &gfb, model.needs_spm());
    let tape = Tape::inference();
    let pred = model.predict(&tape, &pair)?;
    Ok(tape.value(pred)[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            variant: Variant::Dual,
            input_dim: 1,
            hidden: 6,
            layers: 2,
            dk: 5,
            spm_layers: 1,
            conv_layers: 2,
            conv_channels: 3,
            mlp_hidden: 4,
            n_max: 8,
        }
    }

    fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> NodeGraph {
        loop {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(0.45) {
                        edges.push((i, j));
                    }
                }
            }
            let g = NodeGraph::new("t", n, &edges, None).unwrap();
            if !edges.is_empty() {
                return g;
            }
        }
    }

    #[test]
    fn prediction_is_in_unit_interval_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = SegmnModel::new(small_cfg(), 11);
        let g1 = random_connected(&mut rng, 5);
        let g2 = random_connected(&mut rng, 6);
        let a = score_pair(&model, &g1, &g2).unwrap();
        let b = score_pair(&model, &g1, &g2).unwrap();
        assert!(a > 0.0 && a < 1.0);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn same_seed_same_model_different_seed_different_model() {
        let a = SegmnModel::new(small_cfg(), 5);
        let b = SegmnModel::new(small_cfg(), 5);
        let c = SegmnModel::new(small_cfg(), 6);
        assert_eq!(a.params().checksum(), b.params().checksum());
        assert_ne!(a.params().checksum(), c.params().checksum());
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = SegmnModel::new(small_cfg(), 3);
        let g1 = random_connected(&mut rng, 4);
        let g2 = random_connected(&mut rng, 7);
        let before = score_pair(&model, &g1, &g2).unwrap();

        let dir = std::env::temp_dir().join(format!("segmn-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        model.save(&path).unwrap();
        let loaded = SegmnModel::load(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();

        assert_eq!(loaded.config().hidden, 6);
        assert_eq!(loaded.config().variant, Variant::Dual);
        let after = score_pair(&loaded, &g1, &g2).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
    }

    #[test]
    fn padding_stays_zero_through_the_whole_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = SegmnModel::new(small_cfg(), 7);
        let g1 = random_connected(&mut rng, 4);
        let g2 = random_connected(&mut rng, 5);
        let gf1 = GraphFeatures::from_graph(&g1);
        let gf2 = GraphFeatures::from_graph(&g2);
        let pair = PairData::build(&g1, &g2, &gf1, &gf2, true);
        let tape = Tape::new();
        let pred = model.predict_detailed(&tape, &pair).unwrap();

        for s in [&pred.s1_initial, &pred.s1_enhanced, &pred.s2_initial, &pred.s2_enhanced] {
            let v = tape.value(s.scores);
            for i in 0..s.n_max {
                for j in 0..s.n_max {
                    if i >= s.n1 || j >= s.n2 {
                        assert_eq!(v[(i, j)], 0.0, "padding leaked at ({i}, {j})");
                    }
                }
            }
        }
    }

    #[test]
    fn pad_invariance_of_the_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g1 = random_connected(&mut rng, 5);
        let g2 = random_connected(&mut rng, 7);
        let base = SegmnModel::new(small_cfg(), 9);
        let small = score_pair(&base, &g1, &g2).unwrap();

        // Same parameters, larger padding target.
        let mut grown = SegmnModel::new(small_cfg(), 9);
        grown.set_n_max(12);
        let large = score_pair(&grown, &g1, &g2).unwrap();
        assert!(
            (small - large).abs() <= 1e-9,
            "prediction moved under padding growth: {small} vs {large}"
        );
    }

    #[test]
    fn relabeling_either_graph_leaves_prediction_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = SegmnModel::new(small_cfg(), 13);
        let g1 = random_connected(&mut rng, 6);
        let g2 = random_connected(&mut rng, 5);
        let base = score_pair(&model, &g1, &g2).unwrap();

        let p1 = vec![3, 5, 0, 2, 4, 1];
        let p2 = vec![2, 4, 1, 0, 3];
        let relabeled1 = score_pair(&model, &g1.permuted(&p1), &g2).unwrap();
        let relabeled2 = score_pair(&model, &g1, &g2.permuted(&p2)).unwrap();
        assert!((base - relabeled1).abs() <= 1e-9);
        assert!((base - relabeled2).abs() <= 1e-9);
    }

    #[test]
    fn spm_layers_zero_skips_assignment_graphs_entirely() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ModelConfig { spm_layers: 0, ..small_cfg() };
        let model = SegmnModel::new(cfg, 1);
        let g1 = random_connected(&mut rng, 4);
        let g2 = random_connected(&mut rng, 4);
        let s = score_pair(&model, &g1, &g2).unwrap();
        assert!(s.is_finite());
        assert_eq!(model.spm_executions(), 0);
    }

    #[test]
    fn variant_models_run_and_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g1 = random_connected(&mut rng, 5);
        let g2 = random_connected(&mut rng, 6);
        let mut scores = Vec::new();
        for variant in [Variant::NodeOnly, Variant::EdgeOnly, Variant::Dual] {
            let cfg = ModelConfig { variant, ..small_cfg() };
            let model = SegmnModel::new(cfg, 21);
            scores.push(score_pair(&model, &g1, &g2).unwrap());
        }
        assert!(scores.iter().all(|s| s.is_finite()));
        assert_ne!(scores[0].to_bits(), scores[2].to_bits());
    }

    #[test]
    fn parameter_names_follow_the_checkpoint_interface() {
        let model = SegmnModel::new(small_cfg(), 1);
        let names: Vec<&str> = model.params().names().collect();
        for expected in [
            "enc.P_node",
            "enc.P_line",
            "enc.ng.W.0",
            "enc.ng.W.1",
            "enc.lg.W_E.0",
            "enc.lg.W_E.1",
            "enc.W2",
            "enc.b",
            "enc.gate",
            "match.Wq1",
            "match.Wk1",
            "match.Wq2",
            "match.Wk2",
            "spm.WA.0",
            "att.Wq",
            "att.Wo",
            "conv.0.row",
            "conv.1.col",
            "mlp.W1",
            "mlp.b2",
        ] {
            assert!(names.contains(&expected), "missing parameter `{expected}`");
        }
    }

    #[test]
    fn wrong_checkpoint_kind_is_rejected() {
        let dir = std::env::temp_dir().join(format!("segmn-wrongmodel-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("other.ckpt");
        let mut p = ModelParams::new();
        p.set_meta("model", "other");
        p.insert("w", Matrix::scalar(1.0));
        p.save(&path).unwrap();
        let err = SegmnModel::load(&path).unwrap_err();
        std::fs::remove_dir_all(&dir).ok();
        assert!(matches!(err, ModelError::WrongModel { .. }));
    }
}
