//! Knowledge-aware attentive item encoding.
//!
//! Each triple in a level gets a logit from a three-layer ReLU MLP over the
//! concatenated head, relation and tail embeddings. Logits are softmax
//! normalized within the level and weight the tail embeddings. The item
//! representation is the mean of the item's own embedding and its level
//! vectors; an empty level contributes a zero vector but still counts in the
//! denominator.

use crate::error::{Error, Result};
use crate::graph::{RippleSets, Triple};
use crate::ids::ItemId;
use crate::numeric::{ModelParams, ParamId, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemEncoderConfig {
    pub levels: usize,
    /// Apply ReLU to the final attention logit.
    pub logit_relu: bool,
}

/// Tape handles of one encoded item.
#[derive(Debug, Clone)]
pub struct ItemVars {
    pub vector: Var,
    pub per_level: Vec<Var>,
    /// Normalized attention weights per level; `None` for empty levels.
    pub weights: Vec<Option<Var>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemRepresentation {
    pub item: ItemId,
    pub vector: Vec<f64>,
    pub per_level: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

/// Unnormalized attention logit of one triple.
pub fn triple_logit(
    tape: &mut Tape,
    params: &ModelParams,
    head: Var,
    relation: Var,
    tail: Var,
    logit_relu: bool,
) -> Result<Var> {
    let d = params.dims.d;
    for v in [head, relation, tail] {
        if tape.value(v).len() != d {
            return Err(Error::dim(
                "triple_logit",
                format!("embedding length {} != d = {d}", tape.value(v).len()),
            ));
        }
    }
    let z0 = tape.concat(&[head, relation, tail]);
    let (w1, b1) = (tape.param(params, ParamId::W1), tape.param(params, ParamId::B1));
    let (w2, b2) = (tape.param(params, ParamId::W2), tape.param(params, ParamId::B2));
    let (w3, b3) = (tape.param(params, ParamId::W3), tape.param(params, ParamId::B3));
    let a1 = tape.affine(w1, z0, Some(b1))?;
    let z1 = tape.relu(a1);
    let a2 = tape.affine(w2, z1, Some(b2))?;
    let z2 = tape.relu(a2);
    let a3 = tape.affine(w3, z2, Some(b3))?;
    Ok(if logit_relu { tape.relu(a3) } else { a3 })
}

/// Softmax over the logits of one non-empty level.
pub fn normalize_level(tape: &mut Tape, logits: &[Var]) -> Result<Var> {
    if logits.is_empty() {
        return Err(Error::dim("normalize_level", "empty level"));
    }
    let stacked = tape.stack(logits)?;
    Ok(tape.softmax(stacked))
}

/// Attention-weighted sum of the level's tail embeddings.
pub fn aggregate_level(
    tape: &mut Tape,
    params: &ModelParams,
    level: &[Triple],
    weights: Var,
) -> Result<Var> {
    let tails = level
        .iter()
        .map(|t| tape.param_row(params, ParamId::EntityEmb, t.tail.index()))
        .collect::<Result<Vec<_>>>()?;
    tape.weighted_sum(weights, &tails)
}

/// Encodes one item on `tape`.
pub fn encode_item_on(
    tape: &mut Tape,
    params: &ModelParams,
    ripple: &RippleSets,
    config: &ItemEncoderConfig,
) -> Result<ItemVars> {
    if ripple.level_count() != config.levels {
        return Err(Error::Config(format!(
            "ripple sets of item {} have {} levels, model expects {}",
            ripple.item,
            ripple.level_count(),
            config.levels
        )));
    }
    let own = tape.param_row(params, ParamId::EntityEmb, ripple.item.index())?;
    let mut per_level = Vec::with_capacity(config.levels);
    let mut weights = Vec::with_capacity(config.levels);
    for level in &ripple.levels {
        if level.is_empty() {
            per_level.push(tape.constant(vec![0.0; params.dims.d]));
            weights.push(None);
            continue;
        }
        let mut logits = Vec::with_capacity(level.len());
        for t in level {
            let h = tape.param_row(params, ParamId::EntityEmb, t.head.index())?;
            let r = tape.param_row(params, ParamId::RelationEmb, t.relation.index())?;
            let tl = tape.param_row(params, ParamId::EntityEmb, t.tail.index())?;
            logits.push(triple_logit(tape, params, h, r, tl, config.logit_relu)?);
        }
        let w = normalize_level(tape, &logits)?;
        per_level.push(aggregate_level(tape, params, level, w)?);
        weights.push(Some(w));
    }
    let mut terms = per_level.clone();
    terms.push(own);
    let total = tape.sum(&terms)?;
    let vector = tape.scale(total, 1.0 / (config.levels as f64 + 1.0));
    Ok(ItemVars {
        vector,
        per_level,
        weights,
    })
}

/// Encodes one item on a fresh tape and returns plain values.
pub fn encode_item(
    params: &ModelParams,
    ripple: &RippleSets,
    config: &ItemEncoderConfig,
) -> Result<ItemRepresentation> {
    let mut tape = Tape::new();
    let vars = encode_item_on(&mut tape, params, ripple, config)?;
    Ok(ItemRepresentation {
        item: ripple.item,
        vector: tape.value(vars.vector).to_vec(),
        per_level: vars.per_level.iter().map(|&v| tape.value(v).to_vec()).collect(),
        weights: vars
            .weights
            .iter()
            .map(|w| w.map(|w| tape.value(w).to_vec()).unwrap_or_default())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_ripple_sets, KnowledgeGraph, RippleConfig};
    use crate::numeric::ModelDims;

    fn dims(entities: usize, d: usize, d_h: usize) -> ModelDims {
        ModelDims {
            users: 1,
            entities,
            relations: 2,
            d,
            d_h,
        }
    }

    fn set_all(params: &mut ModelParams, id: ParamId, value: f64) {
        params.get_mut(id).values_mut().fill(value);
    }

    fn logit_of(params: &ModelParams, h: Vec<f64>, r: Vec<f64>, t: Vec<f64>, relu: bool) -> f64 {
        let mut tape = Tape::new();
        let (h, r, t) = (tape.constant(h), tape.constant(r), tape.constant(t));
        let v = triple_logit(&mut tape, params, h, r, t, relu).unwrap();
        tape.scalar(v)
    }

    #[test]
    fn zero_inputs_give_zero_logit() {
        let params = ModelParams::init(dims(3, 4, 4), 1).unwrap();
        assert_eq!(logit_of(&params, vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], true), 0.0);
    }

    #[test]
    fn hand_evaluated_stack() {
        // d = 2, d_h = 2, every weight 0.5, zero biases, all-ones embeddings:
        // z0 = 1 (len 6); z1 = relu(0.5 * 6) = 3; z2 = relu(0.5 * 3 * 2) = 3;
        // pi = relu(0.5 * 3 * 2) = 3.
        let mut params = ModelParams::zeros(dims(3, 2, 2)).unwrap();
        for id in [ParamId::W1, ParamId::W2, ParamId::W3] {
            set_all(&mut params, id, 0.5);
        }
        let one = vec![1.0, 1.0];
        assert_eq!(logit_of(&params, one.clone(), one.clone(), one, true), 3.0);
    }

    #[test]
    fn negative_preactivation_clamps() {
        let mut params = ModelParams::zeros(dims(3, 2, 2)).unwrap();
        set_all(&mut params, ParamId::W1, 0.5);
        set_all(&mut params, ParamId::W2, 0.5);
        set_all(&mut params, ParamId::W3, -0.5);
        let one = vec![1.0, 1.0];
        assert_eq!(logit_of(&params, one.clone(), one.clone(), one.clone(), true), 0.0);
        assert_eq!(logit_of(&params, one.clone(), one.clone(), one, false), -3.0);
    }

    #[test]
    fn logit_dimension_error() {
        let params = ModelParams::zeros(dims(3, 2, 2)).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(vec![1.0; 3]);
        let b = tape.constant(vec![1.0; 2]);
        assert!(matches!(
            triple_logit(&mut tape, &params, a, b, b, true),
            Err(Error::Dimension { op: "triple_logit", .. })
        ));
    }

    #[test]
    fn level_normalization_examples() {
        let mut tape = Tape::new();
        let one = tape.constant(vec![0.7]);
        let w = normalize_level(&mut tape, &[one]).unwrap();
        assert_eq!(tape.value(w), &[1.0]);

        let l2 = std::f64::consts::LN_2;
        let xs: Vec<Var> = (0..3).map(|_| tape.constant(vec![l2])).collect();
        let w = normalize_level(&mut tape, &xs).unwrap();
        for v in tape.value(w) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let a = tape.constant(vec![1.0]);
        let b = tape.constant(vec![0.0]);
        let w = normalize_level(&mut tape, &[a, b]).unwrap();
        let e = std::f64::consts::E;
        assert!((tape.value(w)[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((tape.value(w)[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    fn params_with_entities(rows: &[[f64; 2]]) -> ModelParams {
        let mut params = ModelParams::zeros(dims(rows.len(), 2, 2)).unwrap();
        for (i, r) in rows.iter().enumerate() {
            params.get_mut(ParamId::EntityEmb).row_mut(i).copy_from_slice(r);
        }
        params
    }

    #[test]
    fn aggregation_examples() {
        let params = params_with_entities(&[[0.0, 0.0], [1.0, 2.0], [2.0, 0.0], [0.0, 2.0]]);
        let mut tape = Tape::new();
        let w = tape.constant(vec![1.0]);
        let v = aggregate_level(&mut tape, &params, &[Triple::new(0, 0, 1)], w).unwrap();
        assert_eq!(tape.value(v), &[1.0, 2.0]);
        let w = tape.constant(vec![0.5, 0.5]);
        let v = aggregate_level(&mut tape, &params, &[Triple::new(0, 0, 2), Triple::new(0, 1, 3)], w).unwrap();
        assert_eq!(tape.value(v), &[1.0, 1.0]);
    }

    #[test]
    fn isolated_item_averages_with_zero_levels() {
        let params = params_with_entities(&[[3.0, 3.0], [0.0, 0.0]]);
        let kg = KnowledgeGraph::empty(2, 1);
        let ripple = build_ripple_sets(&kg, ItemId(0), &RippleConfig::new(2, 4, 0)).unwrap();
        let cfg = ItemEncoderConfig {
            levels: 2,
            logit_relu: true,
        };
        let rep = encode_item(&params, &ripple, &cfg).unwrap();
        assert_eq!(rep.vector, vec![1.0, 1.0]);
        assert_eq!(rep.per_level, vec![vec![0.0, 0.0]; 2]);
    }

    #[test]
    fn single_level_average() {
        // item 0 = [0, 1]; its only neighbor 1 = [1, 0] gets weight 1.
        let params = params_with_entities(&[[0.0, 1.0], [1.0, 0.0]]);
        let (kg, _) = KnowledgeGraph::from_triples(2, 2, [Triple::new(0, 0, 1)]).unwrap();
        let ripple = build_ripple_sets(&kg, ItemId(0), &RippleConfig::new(1, 4, 0)).unwrap();
        let cfg = ItemEncoderConfig {
            levels: 1,
            logit_relu: true,
        };
        let rep = encode_item(&params, &ripple, &cfg).unwrap();
        assert_eq!(rep.vector, vec![0.5, 0.5]);
        assert_eq!(rep.weights, vec![vec![1.0]]);
    }

    #[test]
    fn level_count_mismatch_and_bad_item() {
        let params = ModelParams::zeros(dims(2, 2, 2)).unwrap();
        let kg = KnowledgeGraph::empty(2, 1);
        let ripple = build_ripple_sets(&kg, ItemId(0), &RippleConfig::new(2, 1, 0)).unwrap();
        let cfg = ItemEncoderConfig {
            levels: 1,
            logit_relu: true,
        };
        assert!(matches!(encode_item(&params, &ripple, &cfg), Err(Error::Config(_))));
        let bad = RippleSets {
            item: ItemId(9),
            levels: vec![vec![]],
            visited: vec![],
        };
        assert!(matches!(encode_item(&params, &bad, &cfg), Err(Error::Index { .. })));
    }

    /// Straight-line re-evaluation of the item encoder with plain loops.
    fn oracle_item(params: &ModelParams, ripple: &RippleSets, relu: bool) -> Vec<f64> {
        let ent = params.get(ParamId::EntityEmb);
        let rel = params.get(ParamId::RelationEmb);
        let mat = |id: ParamId, x: &[f64]| -> Vec<f64> {
            let t = params.get(id);
            (0..t.rows())
                .map(|r| t.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
                .collect()
        };
        let add_relu = |mut a: Vec<f64>, b: &[f64], on: bool| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
                if on {
                    *x = x.max(0.0);
                }
            }
            a
        };
        let d = params.dims.d;
        let mut acc = ent.row(ripple.item.index()).to_vec();
        for level in &ripple.levels {
            if level.is_empty() {
                continue;
            }
            let logits: Vec<f64> = level
                .iter()
                .map(|t| {
                    let mut z0 = ent.row(t.head.index()).to_vec();
                    z0.extend_from_slice(rel.row(t.relation.index()));
                    z0.extend_from_slice(ent.row(t.tail.index()));
                    let z1 = add_relu(mat(ParamId::W1, &z0), params.get(ParamId::B1).values(), true);
                    let z2 = add_relu(mat(ParamId::W2, &z1), params.get(ParamId::B2).values(), true);
                    add_relu(mat(ParamId::W3, &z2), params.get(ParamId::B3).values(), relu)[0]
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for (t, l) in level.iter().zip(&logits) {
                let w = (l - mx).exp() / z;
                for j in 0..d {
                    acc[j] += w * ent.row(t.tail.index())[j];
                }
            }
        }
        acc.iter().map(|x| x / (ripple.levels.len() as f64 + 1.0)).collect()
    }

    #[test]
    fn matches_straight_line_oracle() {
        let triples = [
            Triple::new(0, 0, 1),
            Triple::new(0, 1, 2),
            Triple::new(0, 0, 3),
            Triple::new(1, 1, 4),
            Triple::new(2, 0, 5),
            Triple::new(3, 1, 0),
            Triple::new(5, 0, 6),
        ];
        let (kg, _) = KnowledgeGraph::from_triples(7, 2, triples).unwrap();
        let mut params = ModelParams::init(dims(7, 3, 4), 42).unwrap();
        // nonzero biases so every layer is exercised
        for (i, v) in params.get_mut(ParamId::B1).values_mut().iter_mut().enumerate() {
            *v = 0.1 * i as f64;
        }
        params.get_mut(ParamId::B3).values_mut()[0] = 0.05;
        for relu in [true, false] {
            let ripple = build_ripple_sets(&kg, ItemId(0), &RippleConfig::new(2, 2, 5)).unwrap();
            let cfg = ItemEncoderConfig {
                levels: 2,
                logit_relu: relu,
            };
            let rep = encode_item(&params, &ripple, &cfg).unwrap();
            let want = oracle_item(&params, &ripple, relu);
            for (a, b) in rep.vector.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            for w in rep.weights.iter().filter(|w| !w.is_empty()) {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
