//! Metrics against a brute-force evaluation of their definitions.

use modicf::dataset::{generate_synthetic, SynthConfig};
use modicf::metrics::{accuracy_metrics, fairness_f, paired_ttest, rank_topk, RankingResult};
use modicf::rng;
use rand::Rng as _;

/// All ordered selections of `k` distinct items out of `n`.
fn arrangements(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for head in arrangements(n, k - 1) {
        for i in 0..n {
            if !head.contains(&i) {
                let mut l = head.clone();
                l.push(i);
                out.push(l);
            }
        }
    }
    out
}

/// Subsets of `0..n` with at most `max` elements.
fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n).filter(|m| m.count_ones() as usize <= max).map(|m| (0..n).filter(|&i| m >> i & 1 == 1).collect()).collect()
}

fn ranking(lists: &[Vec<usize>], k: usize) -> RankingResult {
    RankingResult { k, lists: lists.iter().map(|l| l.iter().map(|&i| (i, 0.0)).collect()).collect() }
}

struct Oracle {
    recall: f64,
    precision: f64,
    ndcg: f64,
    f: Option<f64>,
}

fn oracle(lists: &[Vec<usize>], positives: &[Vec<usize>], k: usize, incomplete: &[bool]) -> Oracle {
    let (mut recall, mut precision, mut ndcg, mut users) = (0.0, 0.0, 0.0, 0usize);
    for (list, pos) in lists.iter().zip(positives) {
        if pos.is_empty() {
            continue;
        }
        users += 1;
        let mut hits = 0usize;
        let mut dcg = 0.0;
        for rank in 1..=k {
            if pos.contains(&list[rank - 1]) {
                hits += 1;
                dcg += 1.0 / ((rank + 1) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for rank in 1..=k.min(pos.len()) {
            idcg += 1.0 / ((rank + 1) as f64).log2();
        }
        recall += hits as f64 / pos.len() as f64;
        precision += hits as f64 / k as f64;
        ndcg += dcg / idcg;
    }
    if users > 0 {
        recall /= users as f64;
        precision /= users as f64;
        ndcg /= users as f64;
    }
    let p_d = incomplete.iter().filter(|&&x| x).count() as f64 / incomplete.len() as f64;
    let mut p_r = 0.0;
    for list in lists {
        p_r += list.iter().filter(|&&i| incomplete[i]).count() as f64 / k as f64;
    }
    p_r /= lists.len() as f64;
    let f = (p_d > 0.0).then(|| 1.0 - (p_r - p_d).abs() / p_d);
    Oracle { recall, precision, ndcg, f }
}

fn compare(lists: &[Vec<usize>], positives: &[Vec<usize>], k: usize, incomplete: &[bool]) {
    let r = ranking(lists, k);
    let a = accuracy_metrics(&r, positives);
    let o = oracle(lists, positives, k, incomplete);
    let p_d = incomplete.iter().filter(|&&x| x).count() as f64 / incomplete.len() as f64;
    assert_eq!(
        (a.recall, a.precision, a.ndcg, fairness_f(&r, incomplete, p_d)),
        (o.recall, o.precision, o.ndcg, o.f),
        "lists {lists:?} positives {positives:?} k {k} incomplete {incomplete:?}"
    );
}

pub fn every_single_user_instance_up_to_six_items() {
    let mut count = 0;
    for n in 1..=6 {
        let masks: Vec<Vec<bool>> = (0u32..1 << n).map(|m| (0..n).map(|i| m >> i & 1 == 1).collect()).collect();
        for k in 1..=n {
            for list in arrangements(n, k) {
                for pos in subsets(n, 3) {
                    for mask in &masks {
                        compare(std::slice::from_ref(&list), std::slice::from_ref(&pos), k, mask);
                        count += 1;
                    }
                }
            }
        }
    }
    assert!(count > 5_000_000);
}

pub fn every_four_user_instance_on_three_items() {
    let n = 3;
    let masks: Vec<Vec<bool>> = (1u32..1 << n).map(|m| (0..n).map(|i| m >> i & 1 == 1).collect()).collect();
    for k in 1..=n {
        let lists = arrangements(n, k);
        let sets = subsets(n, 3);
        let per_user: Vec<(usize, usize)> = (0..lists.len()).flat_map(|l| (0..sets.len()).map(move |s| (l, s))).collect();
        let m = per_user.len();
        for code in 0..m.pow(4) {
            let users: Vec<(usize, usize)> = (0..4).map(|j| per_user[code / m.pow(j) % m]).collect();
            let ls: Vec<Vec<usize>> = users.iter().map(|&(l, _)| lists[l].clone()).collect();
            let ps: Vec<Vec<usize>> = users.iter().map(|&(_, s)| sets[s].clone()).collect();
            compare(&ls, &ps, k, &masks[code % masks.len()]);
        }
    }
}

pub fn sampled_four_user_instances_on_six_items() {
    let mut r = rng::stream(17, "metric-oracle");
    let sets = subsets(6, 3);
    for _ in 0..50_000 {
        let k = r.random_range(1..=6);
        let lists: Vec<Vec<usize>> = (0..4)
            .map(|_| {
                let mut items: Vec<usize> = (0..6).collect();
                for i in 0..k {
                    let j = r.random_range(i..6);
                    items.swap(i, j);
                }
                items[..k].to_vec()
            })
            .collect();
        let ps: Vec<Vec<usize>> = (0..4).map(|_| sets[r.random_range(0..sets.len())].clone()).collect();
        let mut mask: Vec<bool> = (0..6).map(|_| r.random_bool(0.4)).collect();
        mask[r.random_range(0..6)] = true;
        compare(&lists, &ps, k, &mask);
    }
}

pub fn hand_cases() {
    let a = accuracy_metrics(&ranking(&[vec![4, 2]], 2), &[vec![2]]);
    assert!((a.ndcg - 1.0 / 3f64.log2()).abs() < 1e-15);
    assert_eq!(format!("{:.4}", a.ndcg), "0.6309");

    // P_r = 1/5 with P_d = 4/10
    let inc: Vec<bool> = (0..10).map(|i| i < 4).collect();
    let f = fairness_f(&ranking(&[vec![0, 5, 6, 7, 8]], 5), &inc, 0.4).unwrap();
    assert!((f - 0.5).abs() < 1e-15);
    let f = fairness_f(&ranking(&[vec![0, 1, 2, 3, 8], vec![0, 1, 2, 3, 4]], 5), &inc, 0.4).unwrap();
    assert!(f.abs() < 1e-12);

    let t = paired_ttest(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
    assert!((t.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(t.significant, Some(false));
    assert_eq!(paired_ttest(&[0.5, 0.7], &[0.5, 0.7]).unwrap().t, 0.0);
    assert_eq!(paired_ttest(&[1.5, 1.7], &[0.5, 0.7]).unwrap().significant, None);
}

pub fn topk_matches_full_sort_and_tie_rule() {
    let b = generate_synthetic(&SynthConfig::new(8, 6, vec![2, 2], 2, 0.3, 5)).unwrap();
    let mut r = rng::stream(2, "scores");
    for trial in 0..300 {
        // coarse scores force ties
        let scores: Vec<Vec<f64>> =
            (0..8).map(|_| (0..6).map(|_| r.random_range(0..4) as f64 * 0.5 - trial as f64 % 3.0).collect()).collect();
        let kmax = (0..8).map(|u| 6 - b.train_items(u).len()).min().unwrap();
        for k in 1..=kmax {
            let got = rank_topk(&scores, &b, k).unwrap();
            for u in 0..8 {
                let mut cand: Vec<(usize, f64)> =
                    (0..6).filter(|&i| !b.is_train_positive(u, i)).map(|i| (i, scores[u][i])).collect();
                cand.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
                cand.truncate(k);
                assert_eq!(got.lists[u], cand);
            }
            // any strictly increasing transform keeps the ranking
            let moved: Vec<Vec<f64>> = scores.iter().map(|row| row.iter().map(|s| (s * 3.0).exp() - 2.0).collect()).collect();
            let again = rank_topk(&moved, &b, k).unwrap();
            for u in 0..8 {
                assert!(got.items(u).eq(again.items(u)));
            }
        }
    }
    let too_many = 6 - (0..8).map(|u| b.train_items(u).len()).max().unwrap() + 1;
    assert!(rank_topk(&vec![vec![0.0; 6]; 8], &b, too_many.max(7)).is_err());
}
