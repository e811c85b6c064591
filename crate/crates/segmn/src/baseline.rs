//! Minimal GraphSim-style baseline for the SPM portability harness.
//!
//! Plain GCN layers over each node graph; after every layer a similarity
//! matrix is formed from the current node embeddings (scaled dot product
//! with masked row softmax), optionally rectified by an SPM layer, and
//! pooled with the same cross-shaped readout. The per-layer matrix features
//! are concatenated and fed to an MLP with a sigmoid.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matcher::{pooled_features, spm_apply, MatcherError, SimilarityMatrix, SpmContext};
use crate::matrix::Matrix;
use crate::model::{ModelError, PairData, PairModel};
use crate::params::{xavier_uniform, ModelParams};
use crate::tensor::{Mask, Tape, Tensor};

#[derive(Clone, Debug)]
pub struct BaselineConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    /// 1-based GCN layers after which an SPM layer is inserted.
    pub spm_positions: BTreeSet<usize>,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub mlp_hidden: usize,
    pub n_max: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            input_dim: 1,
            hidden: 32,
            layers: 3,
            spm_positions: BTreeSet::new(),
            conv_layers: 2,
            conv_channels: 8,
            mlp_hidden: 16,
            n_max: 10,
        }
    }
}

#[derive(Debug)]
pub struct GraphSimStub {
    cfg: BaselineConfig,
    params: ModelParams,
    spm_count: AtomicU64,
}

impl GraphSimStub {
    pub fn new(cfg: BaselineConfig, seed: u64) -> GraphSimStub {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        params.insert("gs.P_in", xavier_uniform(&mut rng, cfg.input_dim, cfg.hidden));
        for l in 1..=cfg.layers {
            params.insert(format!("gs.W.{l}"), xavier_uniform(&mut rng, cfg.hidden, cfg.hidden));
        }
        for &pos in &cfg.spm_positions {
            params.insert(format!("gs.spm.WA.{pos}"), Matrix::scalar(1.0));
        }
        for l in 0..cfg.conv_layers {
            let c_in = if l == 0 { 1 } else { cfg.conv_channels };
            params.insert(format!("gs.conv.{l}.row"), xavier_uniform(&mut rng, cfg.conv_channels, c_in));
            params.insert(format!("gs.conv.{l}.col"), xavier_uniform(&mut rng, cfg.conv_channels, c_in));
        }
        let per_layer = if cfg.conv_layers == 0 { 1 } else { cfg.conv_channels };
        let feat = cfg.layers * per_layer;
        params.insert("gs.mlp.W1", xavier_uniform(&mut rng, feat, cfg.mlp_hidden));
        params.insert("gs.mlp.b1", Matrix::zeros(1, cfg.mlp_hidden));
        params.insert("gs.mlp.W2", xavier_uniform(&mut rng, cfg.mlp_hidden, 1));
        params.insert("gs.mlp.b2", Matrix::zeros(1, 1));
        params.set_meta("model", "graphsim-stub");
        write_meta(&cfg, &mut params);
        GraphSimStub { cfg, params, spm_count: AtomicU64::new(0) }
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    /// Parameters do not depend on the padding size, so it can follow the
    /// corpus at hand.
    pub fn set_n_max(&mut self, n_max: usize) {
        self.cfg.n_max = n_max;
        let cfg = self.cfg.clone();
        write_meta(&cfg, &mut self.params);
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.params.save(path)?)
    }

    pub fn load(path: &Path) -> Result<GraphSimStub, ModelError> {
        let params = ModelParams::load(path)?;
        match params.meta("model") {
            Some("graphsim-stub") => {}
            other => {
                return Err(ModelError::WrongModel {
                    got: other.unwrap_or("<none>").to_string(),
                    expected: "graphsim-stub".to_string(),
                })
            }
        }
        let cfg = read_meta(&params)?;
        Ok(GraphSimStub { cfg, params, spm_count: AtomicU64::new(0) })
    }
}

fn write_meta(cfg: &BaselineConfig, params: &mut ModelParams) {
    params.set_meta("input_dim", cfg.input_dim);
    params.set_meta("hidden", cfg.hidden);
    params.set_meta("layers", cfg.layers);
    let positions: Vec<String> = cfg.spm_positions.iter().map(|p| p.to_string()).collect();
    params.set_meta(
        "spm_positions",
        if positions.is_empty() { "-".to_string() } else { positions.join(",") },
    );
    params.set_meta("conv_layers", cfg.conv_layers);
    params.set_meta("conv_channels", cfg.conv_channels);
    params.set_meta("mlp_hidden", cfg.mlp_hidden);
    params.set_meta("n_max", cfg.n_max);
}

fn read_meta(params: &ModelParams) -> Result<BaselineConfig, ModelError> {
    let get = |key: &str| -> Result<usize, ModelError> {
        params
            .meta(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ModelError::Meta(key.to_string()))
    };
    let spm_positions = match params.meta("spm_positions") {
        Some("-") => BTreeSet::new(),
        Some(list) => list
            .split(',')
            .map(|p| p.parse().map_err(|_| ModelError::Meta("spm_positions".into())))
            .collect::<Result<BTreeSet<usize>, _>>()?,
        None => return Err(ModelError::Meta("spm_positions".into())),
    };
    Ok(BaselineConfig {
        input_dim: get("input_dim")?,
        hidden: get("hidden")?,
        layers: get("layers")?,
        spm_positions,
        conv_layers: get("conv_layers")?,
        conv_channels: get("conv_channels")?,
        mlp_hidden: get("mlp_hidden")?,
        n_max: get("n_max")?,
    })
}

impl PairModel for GraphSimStub {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn predict(&self, tape: &Tape, pair: &PairData) -> Result<Tensor, MatcherError> {
        let cfg = &self.cfg;
        let (n1, n2) = (pair.g1.n, pair.g2.n);
        if n1 > cfg.n_max || n2 > cfg.n_max {
            return Err(MatcherError::ExceedsNMax { n1, n2, n_max: cfg.n_max });
        }
        let bind = |name: &str| tape.param_named(name, Arc::clone(self.params.get(name)));

        let p_in = bind("gs.P_in");
        let conv: Vec<(Tensor, Tensor)> = (0..cfg.conv_layers)
            .map(|l| (bind(&format!("gs.conv.{l}.row")), bind(&format!("gs.conv.{l}.col"))))
            .collect();

        let adj1 = tape.constant_arc(Arc::clone(&pair.g1.adj_norm));
        let adj2 = tape.constant_arc(Arc::clone(&pair.g2.adj_norm));
        let mut h1 = tape.matmul(tape.constant_arc(Arc::clone(&pair.g1.x)), p_in);
        let mut h2 = tape.matmul(tape.constant_arc(Arc::clone(&pair.g2.x)), p_in);

        let inv_sqrt_d = 1.0 / (cfg.hidden as f64).sqrt();
        let mut feats: Option<Tensor> = None;
        for l in 1..=cfg.layers {
            let w = bind(&format!("gs.W.{l}"));
            h1 = tape.relu(tape.matmul(tape.matmul(adj1, h1), w));
            h2 = tape.relu(tape.matmul(tape.matmul(adj2, h2), w));

            let logits = tape.scale(tape.matmul(h1, tape.transpose(h2)), inv_sqrt_d);
            let scores = tape.row_softmax_masked(
                tape.pad_to(logits, cfg.n_max, cfg.n_max),
                Some(&Mask::block(cfg.n_max, cfg.n_max, n1, n2)),
            );
            let mut sim = SimilarityMatrix { scores, n1, n2, n_max: cfg.n_max };

            if cfg.spm_positions.contains(&l) {
                let ctx: &SpmContext =
                    pair.spm12.as_ref().expect("pair built without SPM contexts");
                let w_a = bind(&format!("gs.spm.WA.{l}"));
                sim = spm_apply(tape, &sim, ctx, w_a);
                self.spm_count.fetch_add(1, Ordering::Relaxed);
            }

            let f = pooled_features(tape, &conv, &sim);
            feats = Some(match feats {
                None => f,
                Some(acc) => tape.concat_cols(acc, f),
            });
        }

        let feats = feats.expect("at least one GCN layer");
        let w1 = bind("gs.mlp.W1");
        let b1 = bind("gs.mlp.b1");
        let w2 = bind("gs.mlp.W2");
        let b2 = bind("gs.mlp.b2");
        let hidden = tape.relu(tape.add_row(tape.matmul(feats, w1), b1));
        Ok(tape.sigmoid(tape.add_row(tape.matmul(hidden, w2), b2)))
    }

    fn needs_spm(&self) -> bool {
        !self.cfg.spm_positions.is_empty()
    }

    fn n_max(&self) -> usize {
        self.cfg.n_max
    }

    fn spm_executions(&self) -> u64 {
        self.spm_count.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::GraphFeatures;
    use crate::graph::NodeGraph;

    fn small_cfg(positions: &[usize]) -> BaselineConfig {
        BaselineConfig {
            input_dim: 1,
            hidden: 6,
            layers: 3,
            spm_positions: positions.iter().copied().collect(),
            conv_layers: 1,
            conv_channels: 2,
            mlp_hidden: 4,
            n_max: 6,
        }
    }

    fn score(model: &GraphSimStub, g1: &NodeGraph, g2: &NodeGraph) -> f64 {
        let gf1 = GraphFeatures::from_graph(g1);
        let gf2 = GraphFeatures::from_graph(g2);
        let pair = PairData::build(g1, g2, &gf1, &gf2, model.needs_spm());
        let tape = Tape::inference();
        let pred = model.predict(&tape, &pair).unwrap();
        tape.value(pred)[(0, 0)]
    }

    #[test]
    fn baseline_without_spm_never_touches_the_spm_path() {
        let g1 = NodeGraph::new("a", 4, &[(0, 1), (1, 2), (2, 3)], None).unwrap();
        let g2 = NodeGraph::new("b", 5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], None).unwrap();
        let model = GraphSimStub::new(small_cfg(&[]), 3);
        let s = score(&model, &g1, &g2);
        assert!(s > 0.0 && s < 1.0);
        assert_eq!(model.spm_executions(), 0);
    }

    #[test]
    fn inserting_spm_changes_predictions() {
        let g1 = NodeGraph::new("a", 4, &[(0, 1), (1, 2), (2, 3), (0, 3)], None).unwrap();
        let g2 = NodeGraph::new("b", 5, &[(0, 1), (1, 2), (2, 3), (3, 4)], None).unwrap();
        let without = GraphSimStub::new(small_cfg(&[]), 3);
        let with = GraphSimStub::new(small_cfg(&[1]), 3);
        let a = score(&without, &g1, &g2);
        let b = score(&with, &g1, &g2);
        assert_ne!(a.to_bits(), b.to_bits());
        assert_eq!(with.spm_executions(), 1);
    }

    #[test]
    fn spm_counter_counts_positions_times_pairs() {
        let g1 = NodeGraph::new("a", 3, &[(0, 1), (1, 2)], None).unwrap();
        let g2 = NodeGraph::new("b", 3, &[(0, 1), (0, 2)], None).unwrap();
        let model = GraphSimStub::new(small_cfg(&[1, 2, 3]), 5);
        for _ in 0..4 {
            score(&model, &g1, &g2);
        }
        assert_eq!(model.spm_executions(), 12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let g1 = NodeGraph::new("a", 3, &[(0, 1), (1, 2)], None).unwrap();
        let g2 = NodeGraph::new("b", 4, &[(0, 1), (1, 2), (2, 3)], None).unwrap();
        let model = GraphSimStub::new(small_cfg(&[2]), 9);
        let before = score(&model, &g1, &g2);

        let dir = std::env::temp_dir().join(format!("segmn-gs-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("gs.ckpt");
        model.save(&path).unwrap();
        let loaded = GraphSimStub::load(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();

        assert_eq!(loaded.config().spm_positions, small_cfg(&[2]).spm_positions);
        assert_eq!(before.to_bits(), score(&loaded, &g1, &g2).to_bits());
    }
}
