//! Evaluation metrics: MSE, Spearman's rho, Kendall's tau-b, and p@k.
//!
//! Rank correlations are computed per query (over that query's candidate
//! list) and averaged. Both use the tie-corrected forms: rho is Pearson over
//! midranks, tau is the tau-b sign-product form. p@k expands the true top-k
//! set by ties at the boundary and breaks predicted ties by candidate index,
//! so it is deterministic and favors no model.

use serde::Serialize;

/// Metrics for one query's candidate ranking.
#[derive(Clone, Debug, Serialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub spearman: f64,
    pub kendall: f64,
    pub p_at_10: Option<f64>,
    pub p_at_20: Option<f64>,
    pub mse: f64,
    pub num_candidates: usize,
}

/// Aggregated evaluation results.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    /// Plain MSE over all (prediction, target) pairs; multiply by 1e3 for
    /// the conventional reporting scale.
    pub mse: f64,
    pub spearman: f64,
    pub kendall: f64,
    pub p_at_10: Option<f64>,
    pub p_at_20: Option<f64>,
    pub num_pairs: usize,
    pub per_query: Vec<QueryMetrics>,
    pub warnings: Vec<String>,
    pub runtime_secs: f64,
    pub config_echo: String,
}

impl EvalReport {
    /// One-line human summary; MSE shown at the 1e-3 scale.
    pub fn summary(&self) -> String {
        format!(
            "mse(x1e-3)={:.3} rho={:.3} tau={:.3} p@10={} p@20={} pairs={}",
            self.mse * 1e3,
            self.spearman,
            self.kendall,
            self.p_at_10.map_or("n/a".to_string(), |v| format!("{v:.3}")),
            self.p_at_20.map_or("n/a".to_string(), |v| format!("{v:.3}")),
            self.num_pairs
        )
    }
}

/// Midranks (1-based, ties averaged).
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Positions i..=j share the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman's rho: Pearson correlation of midranks. Returns 0 when either
/// input is constant (the correlation is undefined there).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "spearman: length mismatch");
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Kendall's tau-b via pairwise sign products:
/// sum sgn(xi-xj) sgn(yi-yj) / sqrt(sum sgn(xi-xj)^2 * sum sgn(yi-yj)^2).
pub fn kendall(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "kendall: length mismatch");
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mut num = 0i64;
    let mut nx = 0i64;
    let mut ny = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let sx = sgn(xs[i] - xs[j]);
            let sy = sgn(ys[i] - ys[j]);
            num += (sx * sy) as i64;
            nx += (sx * sx) as i64;
            ny += (sy * sy) as i64;
        }
    }
    if nx == 0 || ny == 0 {
        return 0.0;
    }
    num as f64 / ((nx as f64) * (ny as f64)).sqrt()
}

fn sgn(v: f64) -> i32 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Precision at k: |predicted top-k and true top-k| / k. The true set is
/// expanded to every candidate tied with the k-th true value; the predicted
/// set takes exactly k items, ties broken by index. `None` when there are
/// fewer than k candidates.
pub fn precision_at_k(pred: &[f64], truth: &[f64], k: usize) -> Option<f64> {
    assert_eq!(pred.len(), truth.len(), "precision_at_k: length mismatch");
    let n = pred.len();
    if n < k || k == 0 {
        return None;
    }
    let mut true_order: Vec<usize> = (0..n).collect();
    true_order.sort_by(|&a, &b| truth[b].total_cmp(&truth[a]).then(a.cmp(&b)));
    let threshold = truth[true_order[k - 1]];
    let true_set: Vec<bool> = truth.iter().map(|&t| t >= threshold).collect();

    let mut pred_order: Vec<usize> = (0..n).collect();
    pred_order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]).then(a.cmp(&b)));
    let hits = pred_order[..k].iter().filter(|&&i| true_set[i]).count();
    Some(hits as f64 / k as f64)
}

/// Per-query predictions and targets, plus an id for reporting.
pub struct QueryScores {
    pub query_id: String,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Aggregates per-query metrics into an [`EvalReport`]. Queries with fewer
/// than k candidates are excluded from the p@k average with a warning.
pub fn compute_metrics(queries: &[QueryScores]) -> EvalReport {
    let mut per_query = Vec::with_capacity(queries.len());
    let mut warnings = Vec::new();
    let mut sq_err = 0.0;
    let mut num_pairs = 0usize;

    for q in queries {
        assert_eq!(
            q.predictions.len(),
            q.targets.len(),
            "query {}: predictions and targets differ in length",
            q.query_id
        );
        for (p, t) in q.predictions.iter().zip(&q.targets) {
            sq_err += (p - t) * (p - t);
        }
        num_pairs += q.predictions.len();
        let p10 = precision_at_k(&q.predictions, &q.targets, 10);
        let p20 = precision_at_k(&q.predictions, &q.targets, 20);
        if p10.is_none() {
            warnings.push(format!(
                "query {}: only {} candidates, p@10 undefined",
                q.query_id,
                q.predictions.len()
            ));
        }
        if p20.is_none() && p10.is_some() {
            warnings.push(format!(
                "query {}: only {} candidates, p@20 undefined",
                q.query_id,
                q.predictions.len()
            ));
        }
        per_query.push(QueryMetrics {
            query_id: q.query_id.clone(),
            spearman: spearman(&q.predictions, &q.targets),
            kendall: kendall(&q.predictions, &q.targets),
            p_at_10: p10,
            p_at_20: p20,
            mse: q
                .predictions
                .iter()
                .zip(&q.targets)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / q.predictions.len().max(1) as f64,
            num_candidates: q.predictions.len(),
        });
    }

    fn mean(vals: Vec<f64>) -> Option<f64> {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    EvalReport {
        mse: if num_pairs == 0 { 0.0 } else { sq_err / num_pairs as f64 },
        spearman: mean(per_query.iter().map(|m| m.spearman).collect()).unwrap_or(0.0),
        kendall: mean(per_query.iter().map(|m| m.kendall).collect()).unwrap_or(0.0),
        p_at_10: mean(per_query.iter().filter_map(|m| m.p_at_10).collect()),
        p_at_20: mean(per_query.iter().filter_map(|m| m.p_at_20).collect()),
        num_pairs,
        per_query,
        warnings,
        runtime_secs: 0.0,
        config_echo: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rankings_score_one() {
        let xs: Vec<f64> = (0..15).map(|i| i as f64).collect();
        assert!((spearman(&xs, &xs) - 1.0).abs() < 1e-12);
        assert!((kendall(&xs, &xs) - 1.0).abs() < 1e-12);
        assert_eq!(precision_at_k(&xs, &xs, 10), Some(1.0));
    }

    #[test]
    fn reversed_rankings_score_minus_one() {
        let xs: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| -v).collect();
        assert!((spearman(&xs, &ys) + 1.0).abs() < 1e-12);
        assert!((kendall(&xs, &ys) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_input_scores_zero() {
        let xs = vec![1.0; 8];
        let ys: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(spearman(&xs, &ys), 0.0);
        assert_eq!(kendall(&xs, &ys), 0.0);
    }

    #[test]
    fn midranks_average_ties() {
        let r = ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
    }

    /// Textbook rank-difference Spearman with tie-correction terms:
    /// rho = [(n^3-n)/6 - sum d^2 - Tx - Ty] /
    ///       sqrt([(n^3-n)/6 - 2Tx] [(n^3-n)/6 - 2Ty]),
    /// where T = sum (t^3 - t)/12 over tie groups.
    fn spearman_reference(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let rx = ranks(xs);
        let ry = ranks(ys);
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let tie_term = |vals: &[f64]| -> f64 {
            let mut sorted = vals.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut t_sum = 0.0;
            let mut i = 0;
            while i < sorted.len() {
                let mut j = i;
                while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                    j += 1;
                }
                let t = (j - i + 1) as f64;
                t_sum += (t * t * t - t) / 12.0;
                i = j + 1;
            }
            t_sum
        };
        let tx = tie_term(xs);
        let ty = tie_term(ys);
        let s = (n * n * n - n) / 6.0;
        let denom = ((s - 2.0 * tx) * (s - 2.0 * ty)).sqrt();
        if denom == 0.0 {
            return 0.0;
        }
        (s - d2 - tx - ty) / denom
    }

    /// Textbook tau-b from explicit concordant/discordant/tie counts:
    /// tau_b = (C - D) / sqrt((n0 - n1)(n0 - n2)), where n1/n2 count pairs
    /// tied in x resp. y (pairs tied in both count toward each).
    fn kendall_reference(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len();
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = xs[i] - xs[j];
                let dy = ys[i] - ys[j];
                if dx == 0.0 {
                    tx += 1;
                }
                if dy == 0.0 {
                    ty += 1;
                }
                if dx != 0.0 && dy != 0.0 {
                    if (dx > 0.0) == (dy > 0.0) {
                        c += 1;
                    } else {
                        d += 1;
                    }
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as f64;
        let denom = ((n0 - tx as f64) * (n0 - ty as f64)).sqrt();
        if denom == 0.0 {
            return 0.0;
        }
        (c - d) as f64 / denom
    }

    #[test]
    fn correlations_match_reference_formulas_including_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let n = rng.gen_range(5..=25);
            // Quantized values force ties in roughly half the trials.
            let quantize = trial % 2 == 0;
            let sample = |rng: &mut ChaCha8Rng| {
                let v: f64 = rng.gen_range(-1.0..1.0);
                if quantize {
                    (v * 4.0).round() / 4.0
                } else {
                    v
                }
            };
            let xs: Vec<f64> = (0..n).map(|_| sample(&mut rng)).collect();
            let ys: Vec<f64> = (0..n).map(|_| sample(&mut rng)).collect();
            let rho = spearman(&xs, &ys);
            let rho_ref = spearman_reference(&xs, &ys);
            assert!(
                (rho - rho_ref).abs() <= 1e-12,
                "trial {trial}: rho {rho} vs reference {rho_ref}"
            );
            let tau = kendall(&xs, &ys);
            let tau_ref = kendall_reference(&xs, &ys);
            assert!(
                (tau - tau_ref).abs() <= 1e-12,
                "trial {trial}: tau {tau} vs reference {tau_ref}"
            );
        }
    }

    #[test]
    fn p_at_k_expands_true_ties_at_the_boundary() {
        // Three candidates tied at the k-th true value: all belong to the
        // true set, so any of them found in the predicted top-2 counts.
        let truth = vec![1.0, 0.5, 0.5, 0.5, 0.1];
        let pred = vec![0.9, 0.0, 0.8, 0.1, 0.2];
        // true top-2 threshold = 0.5, true set = {0, 1, 2, 3}.
        // predicted top-2 = {0, 2}; both hit.
        assert_eq!(precision_at_k(&pred, &truth, 2), Some(1.0));
    }

    #[test]
    fn p_at_k_undefined_for_short_lists() {
        let v = vec![1.0, 0.5];
        assert_eq!(precision_at_k(&v, &v, 10), None);
    }

    #[test]
    fn metrics_are_insensitive_to_candidate_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let base = (
            spearman(&pred, &truth),
            kendall(&pred, &truth),
            precision_at_k(&pred, &truth, 10),
        );
        let mut idx: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            idx.swap(k, rng.gen_range(0..=k));
        }
        let pred_p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let truth_p: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
        assert!((spearman(&pred_p, &truth_p) - base.0).abs() < 1e-12);
        assert!((kendall(&pred_p, &truth_p) - base.1).abs() < 1e-12);
        assert_eq!(precision_at_k(&pred_p, &truth_p, 10), base.2);
    }

    #[test]
    fn report_aggregates_and_warns() {
        let queries = vec![
            QueryScores {
                query_id: "q0".into(),
                predictions: (0..12).map(|i| i as f64).collect(),
                targets: (0..12).map(|i| i as f64).collect(),
            },
            QueryScores {
                query_id: "q1".into(),
                predictions: vec![1.0, 2.0, 3.0],
                targets: vec![3.0, 2.0, 1.0],
            },
        ];
        let report = compute_metrics(&queries);
        assert_eq!(report.num_pairs, 15);
        // q0 is exact; q1 contributes (1-3)^2 + 0 + (3-1)^2 = 8 over 15 pairs.
        assert!((report.mse - 8.0 / 15.0).abs() < 1e-12);
        // rho averages +1 and -1.
        assert!((report.spearman - 0.0).abs() < 1e-12);
        // p@10 defined only for the first query.
        assert_eq!(report.p_at_10, Some(1.0));
        assert!(!report.warnings.is_empty());
    }
}
