use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use modicf::cfmr::{AdjustedScores, Scores, Scorer};
use modicf::numerics::{sigmoid, Tensor};

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn argsort(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}

fn scores(rows: usize, cols: usize, raw: Vec<f64>, item: Vec<f64>) -> Scores<f64> {
    Scores { raw: Tensor::matrix(rows, cols, raw).unwrap(), item }
}

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 2usize..12).prop_flat_map(|(u, i)| {
        // sixteenths keep distinct raw scores distinct after scaling
        (Just(u), Just(i), prop::collection::vec((-1000i32..1000).prop_map(|x| x as f64 / 16.0), u * i))
    })
}

/// A shared item score leaves every user's ordering unchanged.
pub fn constant_item_invariance(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(matrix(), -30.0f64..30.0, -5.0f64..5.0), |((nu, ni, raw), c, gamma)| {
            let s = scores(nu, ni, raw, vec![c; ni]);
            let adjusted = AdjustedScores { scores: &s, gamma: Some(gamma) }.ranking_scores().unwrap();
            for (u, row) in adjusted.iter().enumerate() {
                let order = argsort(s.raw.row(u));
                prop_assert_eq!(argsort(row), order.clone());
                prop_assert_eq!(argsort(row)[0], order[0]);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// `adjusted − raw·sigm(ŷ_i)` depends on the item alone.
pub fn user_independent_correction(cases: u32) -> Result<(), String> {
    let strat = (2usize..5, 1usize..8).prop_flat_map(|(u, i)| {
        (
            Just(u),
            Just(i),
            prop::collection::vec(-10.0f64..10.0, u * i),
            prop::collection::vec(-30.0f64..30.0, i),
            -3.0f64..3.0,
        )
    });
    runner(cases)
        .run(&strat, |(nu, ni, raw, item, gamma)| {
            let s = scores(nu, ni, raw, item);
            let view = AdjustedScores { scores: &s, gamma: Some(gamma) };
            for i in 0..ni {
                let sig = sigmoid(s.item[i]);
                let expect = -gamma * sig;
                for u in 0..nu {
                    let term = view.score(u, i) - s.raw.get(u, i) * sig;
                    if (term - expect).abs() > 1e-12 {
                        return Err(TestCaseError::fail(format!("user {u} item {i}: {term} vs {expect}")));
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// A larger matching score always ranks strictly higher for the same item.
pub fn strict_monotonicity(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(-100.0f64..100.0, 1e-3f64..100.0, -30.0f64..30.0, -5.0f64..5.0), |(a, d, item, gamma)| {
            let s = scores(2, 1, vec![a, a + d], vec![item]);
            let view = AdjustedScores { scores: &s, gamma: Some(gamma) };
            prop_assert!(view.score(1, 0) > view.score(0, 0), "{} !> {}", view.score(1, 0), view.score(0, 0));
            Ok(())
        })
        .map_err(|e| e.to_string())
}
