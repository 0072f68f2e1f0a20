//! User histories and user encoders.
//!
//! The recurrent encoder runs `h_i = ReLU(W v_i + H h_{i-1} + U u)` over the
//! history item representations from `h_0 = 0` and returns the last state.
//! The ablation encoder returns `u + Σ v̂` over the history.

use rand::seq::index;

use crate::config::HistoryOrder;
use crate::data::InteractionLog;
use crate::error::{Error, Result};
use crate::ids::{ItemId, UserId};
use crate::numeric::{ModelParams, ParamId, Tape, Var};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRepresentation {
    pub user: UserId,
    pub vector: Vec<f64>,
    pub hidden_trace: Option<Vec<Vec<f64>>>,
}

/// At most `n` of the user's training items, kept in record order.
pub fn build_history(
    user: UserId,
    train: &[ItemId],
    n: usize,
    order: HistoryOrder,
    seed: u64,
) -> Result<UserHistory> {
    if n == 0 {
        return Err(Error::Config("history length n must be positive".into()));
    }
    let items = if train.len() <= n {
        train.to_vec()
    } else {
        match order {
            HistoryOrder::Last => train[train.len() - n..].to_vec(),
            HistoryOrder::First => train[..n].to_vec(),
            HistoryOrder::Random => {
                let mut rng = stream_rng(seed, Stream::History, user.0 as u64);
                let mut idx = index::sample(&mut rng, train.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| train[i]).collect()
            }
        }
    };
    Ok(UserHistory { user, items })
}

/// Histories for every user `0..num_users` from the training log.
pub fn build_histories(
    train: &InteractionLog,
    num_users: usize,
    n: usize,
    order: HistoryOrder,
    seed: u64,
) -> Result<Vec<UserHistory>> {
    train
        .by_user(num_users)
        .iter()
        .enumerate()
        .map(|(u, items)| build_history(UserId::from(u), items, n, order, seed))
        .collect()
}

fn check_len(tape: &Tape, op: &'static str, v: Var, d: usize) -> Result<()> {
    let got = tape.value(v).len();
    if got != d {
        return Err(Error::dim(op, format!("vector length {got} != d = {d}")));
    }
    Ok(())
}

/// One recurrence step.
pub fn rnn_step(tape: &mut Tape, params: &ModelParams, item: Var, h_prev: Var, user: Var) -> Result<Var> {
    let d = params.dims.d;
    for v in [item, h_prev, user] {
        check_len(tape, "rnn_step", v, d)?;
    }
    let w = tape.param(params, ParamId::RnnW);
    let h = tape.param(params, ParamId::RnnH);
    let u = tape.param(params, ParamId::RnnU);
    let a = tape.affine(w, item, None)?;
    let b = tape.affine(h, h_prev, None)?;
    let c = tape.affine(u, user, None)?;
    let ab = tape.add(a, b)?;
    let pre = tape.add(ab, c)?;
    Ok(tape.relu(pre))
}

/// Recurrent encoder on `tape`; returns the final state and every hidden
/// state. An empty history yields the raw user embedding.
pub fn encode_user_on(
    tape: &mut Tape,
    params: &ModelParams,
    user: UserId,
    history: &[Var],
) -> Result<(Var, Vec<Var>)> {
    let u = tape.param_row(params, ParamId::UserEmb, user.index())?;
    if history.is_empty() {
        return Ok((u, Vec::new()));
    }
    let mut h = tape.constant(vec![0.0; params.dims.d]);
    let mut trace = Vec::with_capacity(history.len());
    for &v in history {
        h = rnn_step(tape, params, v, h, u)?;
        trace.push(h);
    }
    Ok((h, trace))
}

/// Order-invariant ablation encoder on `tape`.
pub fn encode_user_ablation_on(
    tape: &mut Tape,
    params: &ModelParams,
    user: UserId,
    history: &[Var],
) -> Result<Var> {
    let u = tape.param_row(params, ParamId::UserEmb, user.index())?;
    if history.is_empty() {
        return Ok(u);
    }
    let mut terms = Vec::with_capacity(history.len() + 1);
    terms.push(u);
    for &v in history {
        check_len(tape, "encode_user_ablation", v, params.dims.d)?;
        terms.push(v);
    }
    tape.sum(&terms)
}

/// Recurrent encoder over precomputed item vectors.
pub fn encode_user(params: &ModelParams, user: UserId, history: &[Vec<f64>]) -> Result<UserRepresentation> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = history.iter().map(|v| tape.constant(v.clone())).collect();
    let (out, trace) = encode_user_on(&mut tape, params, user, &vars)?;
    Ok(UserRepresentation {
        user,
        vector: tape.value(out).to_vec(),
        hidden_trace: Some(trace.iter().map(|&h| tape.value(h).to_vec()).collect()),
    })
}

/// Ablation encoder over precomputed item vectors.
pub fn encode_user_ablation(
    params: &ModelParams,
    user: UserId,
    history: &[Vec<f64>],
) -> Result<UserRepresentation> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = history.iter().map(|v| tape.constant(v.clone())).collect();
    let out = encode_user_ablation_on(&mut tape, params, user, &vars)?;
    Ok(UserRepresentation {
        user,
        vector: tape.value(out).to_vec(),
        hidden_trace: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use crate::numeric::ModelDims;

    fn dims(d: usize) -> ModelDims {
        ModelDims {
            users: 2,
            entities: 4,
            relations: 1,
            d,
            d_h: d,
        }
    }

    fn items(ids: &[u32]) -> Vec<ItemId> {
        ids.iter().map(|&i| ItemId(i)).collect()
    }

    #[test]
    fn history_truncation() {
        let h = build_history(UserId(0), &items(&[1, 2, 3]), 5, HistoryOrder::Last, 0).unwrap();
        assert_eq!(h.items, items(&[1, 2, 3]));
        let seven = items(&[10, 11, 12, 13, 14, 15, 16]);
        let h = build_history(UserId(0), &seven, 5, HistoryOrder::Last, 0).unwrap();
        assert_eq!(h.items, items(&[12, 13, 14, 15, 16]));
        let h = build_history(UserId(0), &seven, 5, HistoryOrder::First, 0).unwrap();
        assert_eq!(h.items, items(&[10, 11, 12, 13, 14]));
        let a = build_history(UserId(3), &seven, 3, HistoryOrder::Random, 8).unwrap();
        let b = build_history(UserId(3), &seven, 3, HistoryOrder::Random, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.items.windows(2).all(|w| w[0] < w[1]));
        assert!(build_history(UserId(0), &seven, 0, HistoryOrder::Last, 0).is_err());
    }

    #[test]
    fn histories_only_see_training_log() {
        let train = InteractionLog::new(vec![
            Interaction { user: UserId(0), item: ItemId(1) },
            Interaction { user: UserId(1), item: ItemId(2) },
            Interaction { user: UserId(0), item: ItemId(3) },
        ]);
        let hs = build_histories(&train, 3, 5, HistoryOrder::Last, 0).unwrap();
        assert_eq!(hs[0].items, items(&[1, 3]));
        assert_eq!(hs[1].items, items(&[2]));
        assert!(hs[2].items.is_empty());
    }

    #[test]
    fn zero_step_is_zero() {
        let params = ModelParams::zeros(dims(2)).unwrap();
        let mut tape = Tape::new();
        let z = tape.constant(vec![0.0; 2]);
        let h = rnn_step(&mut tape, &params, z, z, z).unwrap();
        assert_eq!(tape.value(h), &[0.0, 0.0]);
    }

    #[test]
    fn identity_pass_through() {
        let mut params = ModelParams::zeros(dims(2)).unwrap();
        params.get_mut(ParamId::RnnW).values_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let v = tape.constant(vec![1.0, -1.0]);
        let z = tape.constant(vec![0.0; 2]);
        let u = tape.constant(vec![5.0, 5.0]);
        let h = rnn_step(&mut tape, &params, v, z, u).unwrap();
        assert_eq!(tape.value(h), &[1.0, 0.0]);
    }

    #[test]
    fn step_matches_matrix_oracle() {
        let params = ModelParams::init(dims(3), 17).unwrap();
        let (v, hp, u) = ([0.3, -0.2, 0.9], [0.1, 0.4, 0.0], [-0.5, 0.2, 0.7]);
        let mv = |id: ParamId, x: &[f64; 3]| -> [f64; 3] {
            let m = params.get(id).values();
            [0, 1, 2].map(|r| m[3 * r] * x[0] + m[3 * r + 1] * x[1] + m[3 * r + 2] * x[2])
        };
        let (a, b, c) = (mv(ParamId::RnnW, &v), mv(ParamId::RnnH, &hp), mv(ParamId::RnnU, &u));
        let want: Vec<f64> = (0..3).map(|i| (a[i] + b[i] + c[i]).max(0.0)).collect();
        let mut tape = Tape::new();
        let (vv, hv, uv) = (tape.constant(v.to_vec()), tape.constant(hp.to_vec()), tape.constant(u.to_vec()));
        let h = rnn_step(&mut tape, &params, vv, hv, uv).unwrap();
        for (x, y) in tape.value(h).iter().zip(&want) {
            assert!((x - y).abs() < 1e-15);
        }
        let bad = tape.constant(vec![1.0; 2]);
        assert!(rnn_step(&mut tape, &params, bad, hv, uv).is_err());
    }

    #[test]
    fn single_step_unrolling_ignores_h() {
        let params = ModelParams::init(dims(3), 4).unwrap();
        let mut other = params.clone();
        other.get_mut(ParamId::RnnH).values_mut().fill(7.0);
        let hist = vec![vec![0.4, -0.1, 0.8]];
        let a = encode_user(&params, UserId(1), &hist).unwrap();
        let b = encode_user(&other, UserId(1), &hist).unwrap();
        assert_eq!(a.vector, b.vector);
        assert_eq!(a.hidden_trace.unwrap().len(), 1);
    }

    #[test]
    fn empty_history_falls_back_to_embedding() {
        let params = ModelParams::init(dims(3), 4).unwrap();
        let emb = params.get(ParamId::UserEmb).row(1).to_vec();
        assert_eq!(encode_user(&params, UserId(1), &[]).unwrap().vector, emb);
        assert_eq!(encode_user_ablation(&params, UserId(1), &[]).unwrap().vector, emb);
    }

    #[test]
    fn ablation_sum() {
        let mut params = ModelParams::zeros(dims(2)).unwrap();
        params.get_mut(ParamId::UserEmb).row_mut(0).copy_from_slice(&[1.0, 0.0]);
        let hist = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(encode_user_ablation(&params, UserId(0), &hist).unwrap().vector, vec![2.0, 2.0]);
        let rev: Vec<_> = hist.iter().rev().cloned().collect();
        assert_eq!(encode_user_ablation(&params, UserId(0), &rev).unwrap().vector, vec![2.0, 2.0]);
    }

    #[test]
    fn recurrent_encoder_is_order_sensitive() {
        let params = ModelParams::init(dims(4), 23).unwrap();
        let hist = vec![vec![0.9, -0.3, 0.5, 0.2], vec![-0.4, 0.8, 0.1, -0.6], vec![0.3, 0.3, -0.9, 0.7]];
        let rev: Vec<_> = hist.iter().rev().cloned().collect();
        let a = encode_user(&params, UserId(0), &hist).unwrap().vector;
        let b = encode_user(&params, UserId(0), &rev).unwrap().vector;
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
        assert!(a.iter().all(|x| *x >= 0.0));
    }
}
