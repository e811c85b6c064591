//! Self-similarity sanity: after training with self pairs included (the
//! `include_self_pairs` flag exists exactly for this check), a held-out
//! graph's self score should rank above its score against structurally
//! different candidates (GED >= 2) for at least 90% of held-out graphs.

use segmn::config::ExperimentConfig;
use segmn::data::{generate_synthetic, SyntheticConfig};
use segmn::encoder::Variant;
use segmn::model::{precompute_features, PairData, PairModel, SegmnModel};
use segmn::train;
use segmn::Tape;

#[test]
fn trained_model_ranks_self_similarity_on_top() {
    let mut corpus = generate_synthetic(&SyntheticConfig {
        n_graphs: 100,
        n_min: 4,
        n_max: 8,
        edge_prob: 0.35,
        label_count: 3,
        seed: 21,
    })
    .unwrap();
    corpus.compute_labels(10).unwrap();

    let cfg = ExperimentConfig {
        seed: 21,
        variant: Variant::Dual,
        spm_layers: 1,
        hidden: 32,
        dk: 32,
        layers: 3,
        conv_channels: 8,
        mlp_hidden: 16,
        lr: 1e-3,
        batch_size: 128,
        epochs: 200,
        pairs_per_epoch: 1024,
        eval_every: 10,
        include_self_pairs: true,
        ..Default::default()
    };
    let mut model =
        SegmnModel::new(cfg.model_config(corpus.input_dim(), corpus.n_max()), cfg.seed);
    train::train(&mut model, &corpus, &cfg, None).unwrap();

    let features = precompute_features(corpus.graphs());
    let predict = |a: usize, b: usize| -> f64 {
        let pair = PairData::build(
            corpus.graph(a),
            corpus.graph(b),
            &features[a],
            &features[b],
            model.needs_spm(),
        );
        let tape = Tape::inference();
        let pred = model.predict(&tape, &pair).unwrap();
        tape.value(pred)[(0, 0)]
    };

    let mut ranked_top = 0usize;
    for &q in corpus.test_indices() {
        let self_score = predict(q, q);
        let mut worst: Option<(usize, f64, u32)> = None;
        for &c in corpus.train_indices() {
            let ged = corpus.ged(q, c).unwrap();
            if ged < 2 {
                continue;
            }
            let s = predict(q, c);
            if worst.as_ref().is_none_or(|&(_, w, _)| s > w) {
                worst = Some((c, s, ged));
            }
        }
        let (c, top, ged) = worst.unwrap();
        if top < self_score {
            ranked_top += 1;
        } else {
            println!(
                "query {}: self {:.4} <= candidate {} (ged {}) at {:.4}",
                corpus.graph(q).id(),
                self_score,
                corpus.graph(c).id(),
                ged,
                top
            );
        }
    }
    let total = corpus.test_indices().len();
    assert!(
        ranked_top as f64 >= 0.9 * total as f64,
        "self similarity ranked on top for only {ranked_top}/{total} held-out graphs"
    );
    println!("self-similarity sanity: {ranked_top}/{total} held-out graphs rank self on top");
}
