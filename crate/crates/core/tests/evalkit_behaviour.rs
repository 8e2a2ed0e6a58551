mod common;

use craft_core::dataprep::{RankingQuery, SplitSpec};
use craft_core::evalkit::{
    edgebank_score, evaluate, mean_reciprocal_rank, rank_of_positive, run_ablation, CraftScorer,
    EdgeBank, EvalError, Scorer, Toggle,
};
use craft_core::model::{CraftModel, ModelConfig};
use craft_core::numerics::{AdamConfig, ParamStore};
use craft_core::pipeline::{FitOptions, Prepared};
use craft_core::synthetic::{least_recent_stream, unseen_only_stream};
use craft_core::tgstore::NeighborIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn harmonic(n: usize) -> f64 {
    (1..=n).map(|r| 1.0 / r as f64).sum()
}

#[test]
fn mrr_of_random_scores_matches_the_uniform_rank_mean() {
    let q = 100;
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ranks: Vec<usize> = (0..n)
        .map(|_| {
            let scores: Vec<f64> = (0..=q).map(|_| rng.gen()).collect();
            rank_of_positive(&scores).unwrap()
        })
        .collect();
    let mean = harmonic(q + 1) / (q + 1) as f64;
    let second = (1..=q + 1).map(|r| 1.0 / (r * r) as f64).sum::<f64>() / (q + 1) as f64;
    let sd = ((second - mean * mean) / n as f64).sqrt();
    let mrr = mean_reciprocal_rank(&ranks);
    assert!((mrr - mean).abs() < 3.0 * sd, "{mrr} vs {mean} (sd {sd})");
}

struct Constant;

impl Scorer for Constant {
    fn score_queries(
        &self,
        _: &NeighborIndex,
        queries: &[RankingQuery],
    ) -> Result<Vec<f64>, EvalError> {
        Ok(queries
            .iter()
            .flat_map(|q| q.candidates().map(|_| 0.5))
            .collect())
    }
}

#[test]
fn all_ties_rank_the_positive_last() {
    let (edges, index) = common::random_stream(1, 200, 2000);
    let queries = common::warm_queries(&edges, &index, 100, 50, 2);
    let report = evaluate(&Constant, &index, &queries, 16, "fp").unwrap();
    assert!((report.mrr - 1.0 / 101.0).abs() < 1e-15);
    assert!(report.ranks.iter().all(|&r| r == 101));
    assert_eq!(report.config_fingerprint, "fp");
}

#[test]
fn edgebank_matches_a_linear_scan() {
    let (edges, index) = common::random_stream(2, 15, 600);
    let queries = common::warm_queries(&edges, &index, 5, 100, 3);
    let scores = EdgeBank.score_queries(&index, &queries).unwrap();
    let mut at = 0;
    for q in &queries {
        for d in q.candidates() {
            let seen = edges
                .iter()
                .any(|e| e.src == q.s && e.dst == d && e.t < q.t);
            assert_eq!(scores[at], if seen { 1.0 } else { 0.0 });
            assert_eq!(edgebank_score(&index, q.s, d, q.t), scores[at]);
            at += 1;
        }
    }
    assert_eq!(at, scores.len());
}

#[test]
fn cold_sources_are_skipped_for_every_scorer() {
    let (edges, index) = common::random_stream(3, 400, 500);
    let pool = craft_core::dataprep::CandidatePool::from_index(&index);
    let queries = craft_core::dataprep::make_eval_queries(
        1,
        craft_core::dataprep::Phase::Test,
        &edges[300..],
        &index,
        &pool,
        10,
    )
    .unwrap();
    let cold = queries
        .iter()
        .filter(|q| index.history_len(q.s, q.t) == 0)
        .count();
    assert!(cold > 0);
    let report = evaluate(&EdgeBank, &index, &queries, 32, "").unwrap();
    assert_eq!(report.skipped, cold);
    assert_eq!(report.queries + report.skipped, queries.len());
}

#[test]
fn evaluation_does_not_depend_on_batch_size() {
    let (edges, index) = common::random_stream(4, 60, 1500);
    let queries = common::warm_queries(&edges, &index, 20, 90, 5);
    let config = ModelConfig {
        dim: 16,
        neighbors: 6,
        use_repeat: true,
        ..ModelConfig::default()
    };
    let (model, store): (CraftModel, ParamStore<f64>) = CraftModel::init(config, 60, 3).unwrap();
    let scorer = CraftScorer {
        model: &model,
        store: &store,
    };
    let whole = evaluate(&scorer, &index, &queries, 90, "").unwrap();
    for batch in [1, 7, 32] {
        let r = evaluate(&scorer, &index, &queries, batch, "").unwrap();
        assert_eq!(r.ranks, whole.ranks, "batch {batch}");
    }
}

fn small_options(max_epochs: u64) -> FitOptions {
    FitOptions {
        batch_size: 100,
        max_epochs,
        patience: 3,
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        eval_batch_size: 64,
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        dim: 16,
        neighbors: 4,
        use_repeat: true,
        ..ModelConfig::default()
    }
}

#[test]
fn ablation_tables_are_reproducible() {
    let g = least_recent_stream(10, 120, 1500, 1);
    let data = Prepared::new(g.edges, g.meta, &SplitSpec::default(), 4, 20).unwrap();
    let toggles = [Toggle::PosEnc, Toggle::Repeat];
    let a = run_ablation::<f32>(&small_config(), &data, &small_options(2), 4, &toggles).unwrap();
    let b = run_ablation::<f32>(&small_config(), &data, &small_options(2), 4, &toggles).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 3);
    assert_eq!(a.rows[0].variant, "base");
    assert_eq!(a.rows[0].delta, 0.0);
    assert_eq!(a.rows[1].variant, "w/o PosEnc");
}

#[test]
fn dropping_repeat_counts_is_harmless_without_repeats() {
    let g = unseen_only_stream(40, 2000, 6000, 2);
    let data = Prepared::new(g.edges, g.meta, &SplitSpec::default(), 5, 100).unwrap();
    let table = run_ablation::<f32>(
        &small_config(),
        &data,
        &small_options(10),
        5,
        &[Toggle::Repeat],
    )
    .unwrap();
    let delta = table.rows[1].delta;
    assert!(delta.abs() < 0.03, "{table:?}");
}

#[test]
fn dropping_elapsed_time_hurts_when_it_is_the_signal() {
    let g = least_recent_stream(20, 200, 6000, 3);
    let data = Prepared::new(g.edges, g.meta, &SplitSpec::default(), 6, 100).unwrap();
    let table = run_ablation::<f32>(
        &small_config(),
        &data,
        &small_options(15),
        6,
        &[Toggle::Elapsed],
    )
    .unwrap();
    let delta = table.rows[1].delta;
    assert!(delta <= -0.10, "{table:?}");
}
