//! Dataset ingestion, synthetic corpus generation, and pair enumeration.
//!
//! A dataset on disk is a directory: `manifest.json` (name, label
//! vocabulary, train/test split), a `graphs/` directory with one JSON record
//! per graph, and an optional `labels.tsv` cache of exact GED values with
//! one `id_i id_j ged` line per pair.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ged::{self, EditCostModel, GedError};
use crate::graph::{GraphError, NodeGraph};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph {id}: unknown label `{label}` (not in manifest vocabulary)")]
    UnknownLabel { id: String, label: String },
    #[error("graph {id}: labeled graph in an unlabeled corpus (or vice versa)")]
    LabelMismatch { id: String },
    #[error("dataset has no graphs")]
    NoGraphs,
    #[error("duplicate graph id `{id}`")]
    DuplicateId { id: String },
    #[error("split references unknown graph id `{id}`")]
    UnknownSplitId { id: String },
    #[error("split is not a disjoint, exhaustive partition of the graph ids")]
    BadSplit,
    #[error("labels.tsv line {line}: {msg}")]
    LabelParse { line: usize, msg: String },
    #[error("missing GED label for pair ({id_i}, {id_j}); run the label step first")]
    CacheMiss { id_i: String, id_j: String },
    #[error(transparent)]
    Ged(#[from] GedError),
    #[error("synthetic generation: {0}")]
    Synthetic(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// One graph record as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    /// Needed when `node_labels` is absent and the graph has isolated nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_labels: Option<Vec<String>>,
    pub edges: Vec<[usize; 2]>,
}

impl GraphRecord {
    pub fn from_graph(g: &NodeGraph, vocab: &[String]) -> GraphRecord {
        GraphRecord {
            id: g.id().to_string(),
            num_nodes: Some(g.num_nodes()),
            node_labels: g
                .node_labels()
                .map(|ls| ls.iter().map(|&l| vocab[l as usize].clone()).collect()),
            edges: g.edges().iter().map(|&(i, j)| [i, j]).collect(),
        }
    }

    /// Validates and converts to a graph, mapping label names through the
    /// vocabulary and attaching one-hot features.
    pub fn into_graph(self, vocab: &[String]) -> Result<NodeGraph, DataError> {
        let n = match (&self.node_labels, self.num_nodes) {
            (_, Some(n)) => n,
            (Some(labels), None) => labels.len(),
            (None, None) => self.edges.iter().flatten().max().map_or(0, |&m| m + 1),
        };
        let labels = match &self.node_labels {
            Some(names) => {
                let mut ids = Vec::with_capacity(names.len());
                for name in names {
                    let Some(pos) = vocab.iter().position(|v| v == name) else {
                        return Err(DataError::UnknownLabel {
                            id: self.id.clone(),
                            label: name.clone(),
                        });
                    };
                    ids.push(pos as u32);
                }
                Some(ids)
            }
            None => None,
        };
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&[i, j]| (i, j)).collect();
        let g = NodeGraph::new(self.id, n, &edges, labels)?;
        Ok(g.with_onehot_features(vocab.len())?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub label_vocab: Vec<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// A training pair with its exact-GED regression target.
#[derive(Clone, Copy, Debug)]
pub struct LabeledPair {
    pub i: usize,
    pub j: usize,
    pub ged: u32,
    pub target: f64,
}

/// One evaluation query: a test graph scored against every train graph.
#[derive(Clone, Debug)]
pub struct EvalQuery {
    pub query: usize,
    pub candidates: Vec<usize>,
    pub targets: Vec<f64>,
}

/// A validated in-memory dataset.
#[derive(Clone, Debug)]
pub struct Corpus {
    name: String,
    graphs: Vec<NodeGraph>,
    label_vocab: Vec<String>,
    train: Vec<usize>,
    test: Vec<usize>,
    n_max: usize,
    label_cache: HashMap<(usize, usize), u32>,
}

impl Corpus {
    fn assemble(
        name: String,
        mut graphs: Vec<NodeGraph>,
        label_vocab: Vec<String>,
        train_ids: &[String],
        test_ids: &[String],
    ) -> Result<Corpus, DataError> {
        if graphs.is_empty() {
            return Err(DataError::NoGraphs);
        }
        graphs.sort_by(|a, b| a.id().cmp(b.id()));
        let mut index = HashMap::new();
        for (pos, g) in graphs.iter().enumerate() {
            if index.insert(g.id().to_string(), pos).is_some() {
                return Err(DataError::DuplicateId { id: g.id().to_string() });
            }
            let labeled = g.node_labels().is_some();
            if labeled != !label_vocab.is_empty() {
                return Err(DataError::LabelMismatch { id: g.id().to_string() });
            }
        }
        let resolve = |ids: &[String]| -> Result<Vec<usize>, DataError> {
            ids.iter()
                .map(|id| {
                    index
                        .get(id)
                        .copied()
                        .ok_or_else(|| DataError::UnknownSplitId { id: id.clone() })
                })
                .collect()
        };
        let train = resolve(train_ids)?;
        let test = resolve(test_ids)?;
        let mut seen = vec![false; graphs.len()];
        for &i in train.iter().chain(&test) {
            if seen[i] {
                return Err(DataError::BadSplit);
            }
            seen[i] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(DataError::BadSplit);
        }
        let n_max = graphs.iter().map(|g| g.num_nodes()).max().unwrap_or(0);
        Ok(Corpus {
            name,
            graphs,
            label_vocab,
            train,
            test,
            n_max,
            label_cache: HashMap::new(),
        })
    }

    pub fn load(dir: &Path) -> Result<Corpus, DataError> {
        let manifest_path = dir.join("manifest.json");
        let manifest_text =
            std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        let manifest: DatasetManifest = serde_json::from_str(&manifest_text)
            .map_err(|source| DataError::Json { path: manifest_path.clone(), source })?;

        let graphs_dir = dir.join("graphs");
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&graphs_dir)
            .map_err(io_err(&graphs_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        entries.sort();

        let mut graphs = Vec::with_capacity(entries.len());
        for path in entries {
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let record: GraphRecord = serde_json::from_str(&text)
                .map_err(|source| DataError::Json { path: path.clone(), source })?;
            graphs.push(record.into_graph(&manifest.label_vocab)?);
        }

        let mut corpus = Corpus::assemble(
            manifest.name,
            graphs,
            manifest.label_vocab,
            &manifest.train_ids,
            &manifest.test_ids,
        )?;

        let labels_path = dir.join("labels.tsv");
        if labels_path.exists() {
            corpus.load_labels(&labels_path)?;
        }
        Ok(corpus)
    }

    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        let graphs_dir = dir.join("graphs");
        std::fs::create_dir_all(&graphs_dir).map_err(io_err(&graphs_dir))?;
        let manifest = DatasetManifest {
            name: self.name.clone(),
            label_vocab: self.label_vocab.clone(),
            train_ids: self.train.iter().map(|&i| self.graphs[i].id().to_string()).collect(),
            test_ids: self.test.iter().map(|&i| self.graphs[i].id().to_string()).collect(),
        };
        let manifest_path = dir.join("manifest.json");
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(io_err(&manifest_path))?;
        for g in &self.graphs {
            let record = GraphRecord::from_graph(g, &self.label_vocab);
            let path = graphs_dir.join(format!("{}.json", g.id()));
            std::fs::write(&path, serde_json::to_string(&record).expect("record serializes"))
                .map_err(io_err(&path))?;
        }
        if !self.label_cache.is_empty() {
            self.save_labels(&dir.join("labels.tsv"))?;
        }
        Ok(())
    }

    fn load_labels(&mut self, path: &Path) -> Result<(), DataError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let index: HashMap<&str, usize> =
            self.graphs.iter().enumerate().map(|(i, g)| (g.id(), i)).collect();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            let err = |msg: &str| DataError::LabelParse { line: lineno + 1, msg: msg.into() };
            let a = parts.next().ok_or_else(|| err("missing first id"))?;
            let b = parts.next().ok_or_else(|| err("missing second id"))?;
            let ged: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("missing or invalid ged value"))?;
            let &ia = index.get(a).ok_or_else(|| err("unknown first id"))?;
            let &ib = index.get(b).ok_or_else(|| err("unknown second id"))?;
            self.label_cache.insert((ia.min(ib), ia.max(ib)), ged);
        }
        Ok(())
    }

    fn save_labels(&self, path: &Path) -> Result<(), DataError> {
        let mut keys: Vec<&(usize, usize)> = self.label_cache.keys().collect();
        keys.sort();
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        let mut w = std::io::BufWriter::new(file);
        for &&(i, j) in &keys {
            writeln!(
                w,
                "{} {} {}",
                self.graphs[i].id(),
                self.graphs[j].id(),
                self.label_cache[&(i, j)]
            )
            .map_err(io_err(path))?;
        }
        Ok(())
    }

    /// Computes the exact GED for every unordered pair of distinct graphs
    /// with the A* oracle, in parallel. Self pairs are implicit (GED 0).
    pub fn compute_labels(&mut self, budget: usize) -> Result<(), DataError> {
        let cost = EditCostModel::default();
        type PairGed = ((usize, usize), u32);
        let pairs: Vec<(usize, usize)> = (0..self.graphs.len())
            .flat_map(|i| (i + 1..self.graphs.len()).map(move |j| (i, j)))
            .filter(|key| !self.label_cache.contains_key(key))
            .collect();
        let results: Result<Vec<PairGed>, GedError> = pairs
            .par_iter()
            .map(|&(i, j)| {
                ged::exact_ged_astar(&self.graphs[i], &self.graphs[j], &cost, budget)
                    .map(|d| ((i, j), d))
            })
            .collect();
        for (key, d) in results? {
            self.label_cache.insert(key, d);
        }
        Ok(())
    }

    pub fn ged(&self, i: usize, j: usize) -> Option<u32> {
        if i == j {
            return Some(0);
        }
        self.label_cache.get(&(i.min(j), i.max(j))).copied()
    }

    /// Exp-normalized regression target for a pair, from the label cache.
    pub fn target(&self, i: usize, j: usize) -> Result<f64, DataError> {
        let d = self.ged(i, j).ok_or_else(|| DataError::CacheMiss {
            id_i: self.graphs[i].id().to_string(),
            id_j: self.graphs[j].id().to_string(),
        })?;
        Ok(ged::normalized_target(d, self.graphs[i].num_nodes(), self.graphs[j].num_nodes()))
    }

    /// All unordered train x train pairs, shuffled by `seed`. Self pairs
    /// (target exactly 1) are excluded unless requested.
    pub fn train_pairs(
        &self,
        seed: u64,
        include_self: bool,
    ) -> Result<Vec<LabeledPair>, DataError> {
        let mut pairs = Vec::new();
        for (a, &i) in self.train.iter().enumerate() {
            for &j in &self.train[a + 1..] {
                pairs.push(self.labeled_pair(i, j)?);
            }
        }
        if include_self {
            for &i in &self.train {
                pairs.push(self.labeled_pair(i, i)?);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates, so the order is a pure function of the seed.
        for k in (1..pairs.len()).rev() {
            pairs.swap(k, rng.gen_range(0..=k));
        }
        Ok(pairs)
    }

    fn labeled_pair(&self, i: usize, j: usize) -> Result<LabeledPair, DataError> {
        let d = self.ged(i, j).ok_or_else(|| DataError::CacheMiss {
            id_i: self.graphs[i].id().to_string(),
            id_j: self.graphs[j].id().to_string(),
        })?;
        Ok(LabeledPair {
            i,
            j,
            ged: d,
            target: ged::normalized_target(
                d,
                self.graphs[i].num_nodes(),
                self.graphs[j].num_nodes(),
            ),
        })
    }

    /// Each test graph against all train graphs: the query structure that
    /// the ranking metrics (rho, tau, p@k) are computed over.
    pub fn eval_queries(&self) -> Result<Vec<EvalQuery>, DataError> {
        let mut queries = Vec::with_capacity(self.test.len());
        for &q in &self.test {
            let mut targets = Vec::with_capacity(self.train.len());
            for &c in &self.train {
                targets.push(self.target(q, c)?);
            }
            queries.push(EvalQuery { query: q, candidates: self.train.clone(), targets });
        }
        Ok(queries)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn graphs(&self) -> &[NodeGraph] {
        &self.graphs
    }

    pub fn graph(&self, idx: usize) -> &NodeGraph {
        &self.graphs[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.graphs.iter().position(|g| g.id() == id)
    }

    pub fn label_vocab(&self) -> &[String] {
        &self.label_vocab
    }

    /// Width of the node feature rows: vocabulary size for labeled corpora,
    /// a single constant feature otherwise.
    pub fn input_dim(&self) -> usize {
        if self.label_vocab.is_empty() {
            1
        } else {
            self.label_vocab.len()
        }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn labeled_pair_count(&self) -> usize {
        self.label_cache.len()
    }
}

/// Settings for the synthetic corpus generator.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticConfig {
    pub n_graphs: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub edge_prob: f64,
    /// 0 means unlabeled.
    pub label_count: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_graphs: 200,
            n_min: 4,
            n_max: 8,
            edge_prob: 0.35,
            label_count: 0,
            seed: 7,
        }
    }
}

const CONNECT_RETRIES: usize = 10_000;

/// Deterministic G(n, p) corpus of connected graphs with an 80/20 split.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Corpus, DataError> {
    if cfg.n_min < 2 || cfg.n_max > 10 || cfg.n_min > cfg.n_max {
        return Err(DataError::Synthetic(format!(
            "node range [{}, {}] must lie within [2, 10]",
            cfg.n_min, cfg.n_max
        )));
    }
    if !(0.0..=1.0).contains(&cfg.edge_prob) {
        return Err(DataError::Synthetic(format!("edge_prob {} not in [0, 1]", cfg.edge_prob)));
    }
    if cfg.n_graphs < 2 {
        return Err(DataError::Synthetic("need at least 2 graphs".into()));
    }

    let vocab: Vec<String> = (0..cfg.label_count).map(|k| format!("L{k}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = cfg.n_graphs.to_string().len().max(4);
    let mut graphs = Vec::with_capacity(cfg.n_graphs);
    for g in 0..cfg.n_graphs {
        let n = rng.gen_range(cfg.n_min..=cfg.n_max);
        let mut edges = Vec::new();
        let mut ok = false;
        for _ in 0..CONNECT_RETRIES {
            edges.clear();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(cfg.edge_prob) {
                        edges.push((i, j));
                    }
                }
            }
            if connected(n, &edges) {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(DataError::Synthetic(format!(
                "could not sample a connected {n}-node graph at edge_prob {} within {} tries",
                cfg.edge_prob, CONNECT_RETRIES
            )));
        }
        let labels = if cfg.label_count > 0 {
            Some((0..n).map(|_| rng.gen_range(0..cfg.label_count as u32)).collect())
        } else {
            None
        };
        let id = format!("g{g:0width$}");
        graphs.push(NodeGraph::new(id, n, &edges, labels)?.with_onehot_features(vocab.len())?);
    }

    // Seeded 80/20 split by graph.
    let mut order: Vec<usize> = (0..cfg.n_graphs).collect();
    for k in (1..order.len()).rev() {
        order.swap(k, rng.gen_range(0..=k));
    }
    let n_test = (cfg.n_graphs / 5).max(1);
    let is_test = {
        let mut flags = vec![false; cfg.n_graphs];
        for &i in &order[..n_test] {
            flags[i] = true;
        }
        flags
    };
    let train_ids: Vec<String> = (0..cfg.n_graphs)
        .filter(|&i| !is_test[i])
        .map(|i| graphs[i].id().to_string())
        .collect();
    let test_ids: Vec<String> = (0..cfg.n_graphs)
        .filter(|&i| is_test[i])
        .map(|i| graphs[i].id().to_string())
        .collect();

    Corpus::assemble("synthetic".into(), graphs, vocab, &train_ids, &test_ids)
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("segmn-data-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let cfg = SyntheticConfig { n_graphs: 20, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.graphs().len(), b.graphs().len());
        for (ga, gb) in a.graphs().iter().zip(b.graphs()) {
            assert_eq!(ga.id(), gb.id());
            assert_eq!(ga.edges(), gb.edges());
            assert_eq!(ga.node_labels(), gb.node_labels());
        }
        assert_eq!(a.train_indices(), b.train_indices());
    }

    #[test]
    fn edge_prob_one_gives_complete_graphs() {
        let cfg = SyntheticConfig {
            n_graphs: 5,
            n_min: 3,
            n_max: 3,
            edge_prob: 1.0,
            ..Default::default()
        };
        let c = generate_synthetic(&cfg).unwrap();
        for g in c.graphs() {
            assert_eq!(g.num_nodes(), 3);
            assert_eq!(g.num_edges(), 3);
        }
    }

    #[test]
    fn invalid_node_range_is_rejected() {
        let cfg = SyntheticConfig { n_min: 1, ..Default::default() };
        assert!(matches!(generate_synthetic(&cfg), Err(DataError::Synthetic(_))));
        let cfg = SyntheticConfig { n_max: 11, ..Default::default() };
        assert!(matches!(generate_synthetic(&cfg), Err(DataError::Synthetic(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = SyntheticConfig { n_graphs: 12, label_count: 3, ..Default::default() };
        let mut c = generate_synthetic(&cfg).unwrap();
        c.compute_labels(10).unwrap();
        let dir = temp_dir("roundtrip");
        c.save(&dir).unwrap();
        let loaded = Corpus::load(&dir).unwrap();
        std::fs::remove_dir_all(&dir).ok();

        assert_eq!(loaded.graphs().len(), c.graphs().len());
        assert_eq!(loaded.n_max(), c.n_max());
        assert_eq!(loaded.label_vocab(), c.label_vocab());
        assert_eq!(loaded.train_indices(), c.train_indices());
        for (ga, gb) in c.graphs().iter().zip(loaded.graphs()) {
            assert_eq!(ga.id(), gb.id());
            assert_eq!(ga.edges(), gb.edges());
            assert_eq!(ga.node_labels(), gb.node_labels());
            assert_eq!(ga.node_features(), gb.node_features());
        }
        for i in 0..c.graphs().len() {
            for j in i + 1..c.graphs().len() {
                assert_eq!(c.ged(i, j), loaded.ged(i, j));
            }
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = temp_dir("empty");
        std::fs::write(
            dir.join("manifest.json"),
            r#"{"name":"x","label_vocab":[],"train_ids":[],"test_ids":[]}"#,
        )
        .unwrap();
        std::fs::create_dir_all(dir.join("graphs")).unwrap();
        let err = Corpus::load(&dir).unwrap_err();
        std::fs::remove_dir_all(&dir).ok();
        assert!(matches!(err, DataError::NoGraphs));
    }

    #[test]
    fn record_with_self_loop_is_rejected_citing_the_edge() {
        let record = GraphRecord {
            id: "bad".into(),
            num_nodes: Some(3),
            node_labels: None,
            edges: vec![[0, 1], [2, 2]],
        };
        let err = record.into_graph(&[]).unwrap_err();
        assert_eq!(err.to_string(), "graph bad: self-loop at node 2");
    }

    #[test]
    fn unknown_label_is_rejected() {
        let record = GraphRecord {
            id: "bad".into(),
            num_nodes: None,
            node_labels: Some(vec!["C".into(), "Xx".into()]),
            edges: vec![[0, 1]],
        };
        let err = record.into_graph(&["C".into(), "N".into()]).unwrap_err();
        assert!(matches!(err, DataError::UnknownLabel { .. }));
    }

    #[test]
    fn pair_enumeration_counts() {
        let cfg = SyntheticConfig { n_graphs: 10, n_min: 3, n_max: 5, ..Default::default() };
        let mut c = generate_synthetic(&cfg).unwrap();
        c.compute_labels(10).unwrap();
        let n_train = c.train_indices().len();
        let n_test = c.test_indices().len();
        assert_eq!(n_train, 8);
        assert_eq!(n_test, 2);

        // C(8, 2) pairs without self pairs, plus 8 with them.
        let pairs = c.train_pairs(1, false).unwrap();
        assert_eq!(pairs.len(), n_train * (n_train - 1) / 2);
        let with_self = c.train_pairs(1, true).unwrap();
        assert_eq!(with_self.len(), pairs.len() + n_train);
        assert!(with_self.iter().filter(|p| p.i == p.j).all(|p| p.target == 1.0));

        let queries = c.eval_queries().unwrap();
        assert_eq!(queries.len(), n_test);
        assert_eq!(queries[0].candidates.len(), n_train);

        // Targets are in (0, 1]; 1 exactly when ged = 0.
        for p in &pairs {
            assert!(p.target > 0.0 && p.target <= 1.0);
            assert_eq!(p.target == 1.0, p.ged == 0);
        }
    }

    #[test]
    fn pair_order_is_seeded_and_deterministic() {
        let cfg = SyntheticConfig { n_graphs: 10, n_min: 3, n_max: 4, ..Default::default() };
        let mut c = generate_synthetic(&cfg).unwrap();
        c.compute_labels(10).unwrap();
        let a = c.train_pairs(5, false).unwrap();
        let b = c.train_pairs(5, false).unwrap();
        let other = c.train_pairs(6, false).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x.i, x.j) == (y.i, y.j)));
        assert!(a.iter().zip(&other).any(|(x, y)| (x.i, x.j) != (y.i, y.j)));
    }

    #[test]
    fn cache_miss_is_reported() {
        let cfg = SyntheticConfig { n_graphs: 6, n_min: 3, n_max: 4, ..Default::default() };
        let c = generate_synthetic(&cfg).unwrap();
        let err = c.train_pairs(0, false).unwrap_err();
        assert!(matches!(err, DataError::CacheMiss { .. }));
    }

    #[test]
    fn all_synthetic_pairs_labelable_within_budget() {
        let cfg = SyntheticConfig { n_graphs: 30, n_min: 4, n_max: 8, ..Default::default() };
        let mut c = generate_synthetic(&cfg).unwrap();
        c.compute_labels(10).unwrap();
        assert_eq!(c.labeled_pair_count(), 30 * 29 / 2);
    }
}
