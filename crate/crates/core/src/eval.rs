//! Split, candidate construction and ranking metrics.
//!
//! Each evaluated user gets a list made of one held-out positive and
//! `num_negatives` items the user never interacted with. Lists are ranked by
//! descending score with ties broken by ascending item id.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AucMode, ColdStart};
use crate::data::{Interaction, InteractionLog};
use crate::error::{Error, Result};
use crate::ids::{ItemId, UserId};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_KS: [usize; 7] = [1, 2, 4, 5, 6, 8, 10];

/// Anything that scores a (user, item) pair; higher ranks first.
pub trait Scorer: Sync {
    fn score(&self, user: UserId, item: ItemId) -> f64;
}

impl<F> Scorer for F
where
    F: Fn(UserId, ItemId) -> f64 + Sync,
{
    fn score(&self, user: UserId, item: ItemId) -> f64 {
        self(user, item)
    }
}

/// Scores drawn from a hash of `(seed, user, item)`: a model with no signal.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, user: UserId, item: ItemId) -> f64 {
        let mut z = self.seed ^ ((user.0 as u64) << 32 | item.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_ratio: f64,
    /// Interaction cap; 0 disables the filter.
    pub cold_start_max: usize,
    pub cold_start_mode: ColdStart,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_ratio: 0.7,
            cold_start_max: 20,
            cold_start_mode: ColdStart::Drop,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitInteractions {
    /// Training records in original record order.
    pub train: InteractionLog,
    pub test: InteractionLog,
    pub counts: Vec<UserCounts>,
    pub dropped_users: Vec<UserId>,
}

impl SplitInteractions {
    /// Users with at least one test item.
    pub fn evaluated_users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.test > 0)
            .map(|(u, _)| UserId::from(u))
    }
}

/// Per-user shuffled split. Users at or above the cap are dropped or cut to
/// their first `cap - 1` records. Users below two interactions stay entirely
/// in train; otherwise the test share is `round((1 - ratio) * total)` clamped to
/// `[1, total - 1]`.
pub fn split_interactions(log: &InteractionLog, num_users: usize, config: &SplitConfig) -> Result<SplitInteractions> {
    if log.is_empty() {
        return Err(Error::Config("cannot split an empty interaction log".into()));
    }
    if !(config.train_ratio > 0.0 && config.train_ratio < 1.0) {
        return Err(Error::Config("train_ratio must lie in (0, 1)".into()));
    }
    let capped;
    let log = if config.cold_start_max > 0 && config.cold_start_mode == ColdStart::Truncate {
        let mut seen = vec![0usize; num_users];
        capped = InteractionLog::new(
            log.records
                .iter()
                .filter(|r| {
                    seen[r.user.index()] += 1;
                    seen[r.user.index()] < config.cold_start_max
                })
                .copied()
                .collect(),
        );
        &capped
    } else {
        log
    };
    let per_user = log.by_user(num_users);
    let mut dropped_users = Vec::new();
    let mut test_pairs: HashSet<(UserId, ItemId)> = HashSet::new();
    let mut counts = vec![UserCounts::default(); num_users];
    for (u, items) in per_user.iter().enumerate() {
        let user = UserId::from(u);
        let total = items.len();
        if total == 0 {
            continue;
        }
        if config.cold_start_max > 0 && total >= config.cold_start_max {
            dropped_users.push(user);
            continue;
        }
        let test = if total < 2 {
            0
        } else {
            (((1.0 - config.train_ratio) * total as f64).round() as usize).clamp(1, total - 1)
        };
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut stream_rng(config.seed, Stream::Split, u as u64));
        for &item in &shuffled[total - test..] {
            test_pairs.insert((user, item));
        }
        counts[u] = UserCounts {
            train: total - test,
            test,
        };
    }
    let dropped: HashSet<UserId> = dropped_users.iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &log.records {
        if dropped.contains(&r.user) {
            continue;
        }
        if test_pairs.contains(&(r.user, r.item)) {
            test.push(*r);
        } else {
            train.push(*r);
        }
    }
    if train.is_empty() {
        return Err(Error::Config("no interactions left after the cold-start filter".into()));
    }
    Ok(SplitInteractions {
        train: InteractionLog::new(train),
        test: InteractionLog::new(test),
        counts,
        dropped_users,
    })
}

/// Moves `round(fraction * |train|)` randomly chosen training records into a
/// validation log, never taking a user's last remaining training record.
pub fn holdout_validation(
    train: &InteractionLog,
    num_users: usize,
    fraction: f64,
    seed: u64,
) -> (InteractionLog, InteractionLog) {
    let target = (fraction * train.len() as f64).round() as usize;
    let mut remaining = vec![0usize; num_users];
    for r in &train.records {
        remaining[r.user.index()] += 1;
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Validation, 0));
    let mut held = vec![false; train.len()];
    let mut taken = 0;
    for i in order {
        if taken == target {
            break;
        }
        let u = train.records[i].user.index();
        if remaining[u] > 1 {
            remaining[u] -= 1;
            held[i] = true;
            taken += 1;
        }
    }
    let (mut kept, mut val) = (Vec::new(), Vec::new());
    for (r, h) in train.records.iter().zip(held) {
        if h {
            val.push(*r);
        } else {
            kept.push(*r);
        }
    }
    (InteractionLog::new(kept), InteractionLog::new(val))
}

/// Unscored candidate list; `candidates[0]` is the positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateList {
    pub user: UserId,
    pub positive: ItemId,
    pub candidates: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: UserId,
    /// Candidates in rank order.
    pub candidates: Vec<ItemId>,
    pub scores: Vec<f64>,
    pub positive: ItemId,
    /// 1-based.
    pub rank_of_positive: usize,
}

fn sample_negatives_for_list(
    rng: &mut crate::rng::Rng,
    user: UserId,
    eligible: &[ItemId],
    num_negatives: usize,
) -> Result<Vec<ItemId>> {
    if eligible.len() < num_negatives {
        return Err(Error::Protocol(format!(
            "user {user} has only {} never-interacted items, {num_negatives} needed",
            eligible.len()
        )));
    }
    Ok(index::sample(rng, eligible.len(), num_negatives)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

fn eligible_items(interacted: &[ItemId], num_items: usize) -> Vec<ItemId> {
    let seen: HashSet<ItemId> = interacted.iter().copied().collect();
    (0..num_items).map(ItemId::from).filter(|i| !seen.contains(i)).collect()
}

/// One list for `user`: a positive drawn from `test_items` and
/// `num_negatives` distinct items outside `interacted` (all of the user's
/// train and test items).
pub fn build_candidates(
    user: UserId,
    interacted: &[ItemId],
    test_items: &[ItemId],
    num_items: usize,
    num_negatives: usize,
    seed: u64,
) -> Result<CandidateList> {
    let mut lists = build_user_lists(user, interacted, test_items, num_items, num_negatives, false, seed)?;
    Ok(lists.remove(0))
}

/// Lists for one user: one sampled positive, or every test item when
/// `all_positives` (each with its own negatives).
pub fn build_user_lists(
    user: UserId,
    interacted: &[ItemId],
    test_items: &[ItemId],
    num_items: usize,
    num_negatives: usize,
    all_positives: bool,
    seed: u64,
) -> Result<Vec<CandidateList>> {
    if test_items.is_empty() {
        return Err(Error::Protocol(format!("user {user} has no test positive")));
    }
    let mut rng = stream_rng(seed, Stream::Eval, user.0 as u64);
    let eligible = eligible_items(interacted, num_items);
    let positives: Vec<ItemId> = if all_positives {
        test_items.to_vec()
    } else {
        vec![test_items[rng.gen_range(0..test_items.len())]]
    };
    positives
        .into_iter()
        .map(|positive| {
            let negatives = sample_negatives_for_list(&mut rng, user, &eligible, num_negatives)?;
            let mut candidates = Vec::with_capacity(num_negatives + 1);
            candidates.push(positive);
            candidates.extend(negatives);
            Ok(CandidateList {
                user,
                positive,
                candidates,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub num_negatives: usize,
    pub all_positives: bool,
    pub auc_mode: AucMode,
    pub seed: u64,
}

/// Candidate lists for every user with test items. Users whose catalog
/// complement is too small are skipped with a warning when `lenient`,
/// otherwise they abort the evaluation.
pub fn build_eval_lists(
    test: &[Vec<ItemId>],
    interacted: &[Vec<ItemId>],
    num_items: usize,
    config: &EvalConfig,
    lenient: bool,
) -> Result<Vec<CandidateList>> {
    let per_user: Vec<Result<Vec<CandidateList>>> = test
        .par_iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(u, t)| {
            build_user_lists(
                UserId::from(u),
                &interacted[u],
                t,
                num_items,
                config.num_negatives,
                config.all_positives,
                config.seed,
            )
        })
        .collect();
    let mut out = Vec::new();
    for r in per_user {
        match r {
            Ok(lists) => out.extend(lists),
            Err(e @ Error::Protocol(_)) if lenient => warn!("skipping user: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Scores and sorts one list.
pub fn rank_and_score<S: Scorer + ?Sized>(scorer: &S, list: &CandidateList) -> RankedList {
    let mut scored: Vec<(ItemId, f64)> = list
        .candidates
        .iter()
        .map(|&i| (i, scorer.score(list.user, i)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let rank_of_positive = scored
        .iter()
        .position(|(i, _)| *i == list.positive)
        .expect("positive is a candidate")
        + 1;
    RankedList {
        user: list.user,
        candidates: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
        positive: list.positive,
        rank_of_positive,
    }
}

/// Fraction of negatives scored strictly below the positive, ties counting
/// one half.
pub fn user_auc(list: &RankedList) -> f64 {
    let pos = list.scores[list.rank_of_positive - 1];
    let (mut below, mut ties) = (0usize, 0usize);
    for (i, &s) in list.scores.iter().enumerate() {
        if i + 1 == list.rank_of_positive {
            continue;
        }
        if s < pos {
            below += 1;
        } else if s == pos {
            ties += 1;
        }
    }
    let negatives = list.scores.len() - 1;
    (below as f64 + 0.5 * ties as f64) / negatives as f64
}

/// AUC over all (positive, negative) score pairs pooled across lists.
pub fn global_auc(lists: &[RankedList]) -> f64 {
    let mut all: Vec<(f64, bool)> = Vec::new();
    for l in lists {
        for (i, &s) in l.scores.iter().enumerate() {
            all.push((s, i + 1 == l.rank_of_positive));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut rank_sum, mut n_pos) = (0.0, 0usize);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        for e in &all[i..j] {
            if e.1 {
                rank_sum += mid_rank;
                n_pos += 1;
            }
        }
        i = j;
    }
    let n_neg = all.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub users: usize,
    pub lists: usize,
}

impl MetricsReport {
    /// `metric,K,value` rows; AUC has an empty K.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,K,value\n");
        writeln!(s, "auc,,{}", self.auc).unwrap();
        for (name, map) in [("precision", &self.precision), ("recall", &self.recall), ("mrr", &self.mrr)] {
            for (k, v) in map {
                writeln!(s, "{name},{k},{v}").unwrap();
            }
        }
        s
    }
}

/// Precision, recall and MRR at each cutoff plus AUC, computed per user
/// (averaging that user's lists) and then averaged over users.
pub fn metrics_at_k(lists: &[RankedList], ks: &[usize]) -> Result<MetricsReport> {
    if lists.is_empty() {
        return Err(Error::Protocol("no ranked lists to score".into()));
    }
    let mut by_user: BTreeMap<UserId, Vec<&RankedList>> = BTreeMap::new();
    for l in lists {
        by_user.entry(l.user).or_default().push(l);
    }
    let users = by_user.len() as f64;
    let mut auc = 0.0;
    let mut precision: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut recall = precision.clone();
    let mut mrr = precision.clone();
    for user_lists in by_user.values() {
        let m = user_lists.len() as f64;
        auc += user_lists.iter().map(|l| user_auc(l)).sum::<f64>() / m;
        for &k in ks {
            let mut hit = 0.0;
            let mut rr = 0.0;
            for l in user_lists {
                if l.rank_of_positive <= k {
                    hit += 1.0;
                    rr += 1.0 / l.rank_of_positive as f64;
                }
            }
            *recall.get_mut(&k).unwrap() += hit / m;
            *precision.get_mut(&k).unwrap() += hit / m / k as f64;
            *mrr.get_mut(&k).unwrap() += rr / m;
        }
    }
    for map in [&mut precision, &mut recall, &mut mrr] {
        for v in map.values_mut() {
            *v /= users;
        }
    }
    Ok(MetricsReport {
        auc: auc / users,
        precision,
        recall,
        mrr,
        users: by_user.len(),
        lists: lists.len(),
    })
}

/// Ranks every list and reports metrics under `config.auc_mode`.
pub fn evaluate_lists<S: Scorer + ?Sized>(
    scorer: &S,
    lists: &[CandidateList],
    ks: &[usize],
    auc_mode: AucMode,
) -> Result<(MetricsReport, Vec<RankedList>)> {
    let ranked: Vec<RankedList> = lists.par_iter().map(|l| rank_and_score(scorer, l)).collect();
    let mut report = metrics_at_k(&ranked, ks)?;
    if auc_mode == AucMode::Global {
        report.auc = global_auc(&ranked);
    }
    Ok((report, ranked))
}

/// `user<TAB>positive<TAB>rank<TAB>item:score,...` audit lines.
pub fn dump_ranked_lists(lists: &[RankedList]) -> String {
    let mut s = String::new();
    for l in lists {
        write!(s, "{}\t{}\t{}\t", l.user, l.positive, l.rank_of_positive).unwrap();
        for (i, (item, score)) in l.candidates.iter().zip(&l.scores).enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{item}:{score}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Every item a user interacted with across both splits, sorted.
pub fn interacted_items(logs: &[&InteractionLog], num_users: usize) -> Vec<Vec<ItemId>> {
    let mut out = vec![Vec::new(); num_users];
    for log in logs {
        for &Interaction { user, item } in &log.records {
            out[user.index()].push(item);
        }
    }
    for v in &mut out {
        v.sort_unstable();
        v.dedup();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_for(user_items: &[(u32, u32)]) -> InteractionLog {
        InteractionLog::new(
            user_items
                .iter()
                .map(|&(u, i)| Interaction { user: UserId(u), item: ItemId(i) })
                .collect(),
        )
    }

    fn ranked_with_rank(rank: usize, len: usize) -> RankedList {
        let scores: Vec<f64> = (0..len).map(|i| (len - i) as f64).collect();
        let candidates: Vec<ItemId> = (0..len as u32).map(ItemId).collect();
        RankedList {
            user: UserId(0),
            positive: candidates[rank - 1],
            candidates,
            scores,
            rank_of_positive: rank,
        }
    }

    #[test]
    fn seven_three_split() {
        let log = log_for(&(0..10).map(|i| (0, i)).collect::<Vec<_>>());
        let s = split_interactions(&log, 1, &SplitConfig::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        assert_eq!(s.counts[0], UserCounts { train: 7, test: 3 });
        let train: HashSet<_> = s.train.records.iter().collect();
        assert!(s.test.records.iter().all(|r| !train.contains(r)));
        // train keeps record order
        assert!(s.train.records.windows(2).all(|w| w[0].item < w[1].item));
    }

    #[test]
    fn cold_start_filter_and_degenerate_users() {
        let mut pairs: Vec<(u32, u32)> = (0..25).map(|i| (0, i)).collect();
        pairs.push((1, 3));
        pairs.extend((0..4).map(|i| (2, i)));
        let log = log_for(&pairs);
        let s = split_interactions(&log, 3, &SplitConfig::default()).unwrap();
        assert_eq!(s.dropped_users, vec![UserId(0)]);
        assert!(s.train.records.iter().all(|r| r.user != UserId(0)));
        assert_eq!(s.counts[1], UserCounts { train: 1, test: 0 });
        assert_eq!(s.evaluated_users().collect::<Vec<_>>(), vec![UserId(2)]);

        let off = SplitConfig {
            cold_start_max: 0,
            ..SplitConfig::default()
        };
        let s = split_interactions(&log, 3, &off).unwrap();
        assert!(s.dropped_users.is_empty());
        assert_eq!(s.counts[0].test, 8);

        let truncate = SplitConfig {
            cold_start_mode: ColdStart::Truncate,
            ..SplitConfig::default()
        };
        let s = split_interactions(&log, 3, &truncate).unwrap();
        assert!(s.dropped_users.is_empty());
        assert_eq!(s.counts[0].train + s.counts[0].test, 19);
        let kept: Vec<u32> = s
            .train
            .records
            .iter()
            .chain(&s.test.records)
            .filter(|r| r.user == UserId(0))
            .map(|r| r.item.0)
            .collect();
        assert!(kept.iter().all(|&i| i < 19));

        let only_heavy = log_for(&(0..30).map(|i| (0, i)).collect::<Vec<_>>());
        assert!(matches!(
            split_interactions(&only_heavy, 1, &SplitConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation_holdout_keeps_one_per_user() {
        let log = log_for(&[(0, 1), (0, 2), (1, 3), (0, 4), (1, 5), (2, 6)]);
        let (kept, val) = holdout_validation(&log, 3, 0.5, 1);
        assert_eq!(val.len(), 3);
        assert_eq!(kept.len() + val.len(), 6);
        for u in 0..3 {
            assert!(kept.records.iter().any(|r| r.user == UserId(u)));
        }
    }

    #[test]
    fn candidate_counting() {
        let interacted: Vec<ItemId> = (0..9).map(ItemId).collect();
        let test = vec![ItemId(7), ItemId(8)];
        let c = build_candidates(UserId(4), &interacted, &test, 60, 50, 3).unwrap();
        assert_eq!(c.candidates.len(), 51);
        assert!(test.contains(&c.positive));
        let distinct: HashSet<_> = c.candidates.iter().collect();
        assert_eq!(distinct.len(), 51);
        assert!(c.candidates[1..].iter().all(|i| i.0 >= 9));

        let other = build_candidates(UserId(4), &interacted, &test, 60, 50, 4).unwrap();
        assert_eq!(other.candidates.len(), 51);
        assert_ne!(
            c.candidates[1..].iter().collect::<HashSet<_>>(),
            other.candidates[1..].iter().collect::<HashSet<_>>()
        );
        assert!(matches!(
            build_candidates(UserId(4), &interacted, &test, 58, 50, 3),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(user_auc(&ranked_with_rank(1, 51)), 1.0);
        assert_eq!(user_auc(&ranked_with_rank(51, 51)), 0.0);
        assert_eq!(user_auc(&ranked_with_rank(26, 51)), 0.5);
    }

    #[test]
    fn auc_ties_count_half() {
        let l = RankedList {
            user: UserId(0),
            candidates: vec![ItemId(0), ItemId(1), ItemId(2)],
            scores: vec![1.0, 1.0, 0.0],
            positive: ItemId(1),
            rank_of_positive: 2,
        };
        assert_eq!(user_auc(&l), 0.75);
    }

    #[test]
    fn ranking_breaks_ties_by_item_id() {
        let list = CandidateList {
            user: UserId(0),
            positive: ItemId(5),
            candidates: vec![ItemId(5), ItemId(2), ItemId(9)],
        };
        let r = rank_and_score(&|_u: UserId, _i: ItemId| 0.5, &list);
        assert_eq!(r.candidates, vec![ItemId(2), ItemId(5), ItemId(9)]);
        assert_eq!(r.rank_of_positive, 2);
    }

    #[test]
    fn metric_examples() {
        let m = metrics_at_k(&[ranked_with_rank(1, 51)], &[1]).unwrap();
        assert_eq!((m.precision[&1], m.recall[&1], m.mrr[&1]), (1.0, 1.0, 1.0));
        let m = metrics_at_k(&[ranked_with_rank(3, 51)], &[2, 4]).unwrap();
        assert_eq!((m.precision[&2], m.recall[&2], m.mrr[&2]), (0.0, 0.0, 0.0));
        assert_eq!(m.precision[&4], 0.25);
        assert_eq!(m.recall[&4], 1.0);
        assert!((m.mrr[&4] - 1.0 / 3.0).abs() < 1e-15);
        assert!(metrics_at_k(&[], &[1]).is_err());
    }

    #[test]
    fn global_auc_matches_per_list_for_single_list() {
        let l = ranked_with_rank(10, 51);
        assert!((global_auc(std::slice::from_ref(&l)) - user_auc(&l)).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let m = metrics_at_k(&[ranked_with_rank(2, 5)], &[1, 2]).unwrap();
        let csv = m.to_csv();
        assert!(csv.starts_with("metric,K,value\nauc,,0.75\n"));
        assert!(csv.contains("precision,2,0.5\n"));
        assert!(csv.contains("mrr,2,0.5\n"));
    }
}
