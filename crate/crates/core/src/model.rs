//! Full forward pass: item encoding, user encoding and the sigmoid
//! inner-product prediction.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::config::{TrainConfig, UserEncoderKind};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::graph::RippleSets;
use crate::ids::{ItemId, UserId};
use crate::item_encoder::{encode_item, encode_item_on, ItemEncoderConfig};
use crate::numeric::{dot, sigmoid, ModelParams, Tape, Var};
use crate::user_encoder::{
    encode_user, encode_user_ablation, encode_user_ablation_on, encode_user_on, UserHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub levels: usize,
    pub logit_relu: bool,
    pub user_encoder: UserEncoderKind,
}

impl ModelConfig {
    pub fn item_encoder(&self) -> ItemEncoderConfig {
        ItemEncoderConfig {
            levels: self.levels,
            logit_relu: self.logit_relu,
        }
    }
}

impl From<&TrainConfig> for ModelConfig {
    fn from(c: &TrainConfig) -> Self {
        ModelConfig {
            levels: c.levels,
            logit_relu: c.logit_relu,
            user_encoder: c.user_encoder,
        }
    }
}

/// Non-learned inputs of the model: per-item ripple sets (indexed by item)
/// and per-user histories (indexed by user).
#[derive(Debug, Clone, Copy)]
pub struct ModelContext<'a> {
    pub ripples: &'a [RippleSets],
    pub histories: &'a [UserHistory],
    pub config: ModelConfig,
}

impl<'a> ModelContext<'a> {
    fn ripple(&self, item: ItemId) -> Result<&'a RippleSets> {
        self.ripples.get(item.index()).ok_or(Error::Index {
            kind: "item",
            id: item.index(),
            count: self.ripples.len(),
        })
    }

    fn history(&self, user: UserId) -> Result<&'a UserHistory> {
        self.histories.get(user.index()).ok_or(Error::Index {
            kind: "user",
            id: user.index(),
            count: self.histories.len(),
        })
    }
}

/// `sigmoid(û · v̂)`.
pub fn predict(user: &[f64], item: &[f64]) -> f64 {
    sigmoid(dot(user, item))
}

/// One differentiable forward pass. Item and user encodings are memoized so
/// a batch encodes each distinct item and user once.
pub struct Forward<'a> {
    pub tape: Tape,
    params: &'a ModelParams,
    ctx: ModelContext<'a>,
    items: HashMap<ItemId, Var>,
    users: HashMap<UserId, Var>,
}

impl<'a> Forward<'a> {
    pub fn new(params: &'a ModelParams, ctx: ModelContext<'a>) -> Self {
        Forward {
            tape: Tape::new(),
            params,
            ctx,
            items: HashMap::new(),
            users: HashMap::new(),
        }
    }

    pub fn item(&mut self, item: ItemId) -> Result<Var> {
        if let Some(&v) = self.items.get(&item) {
            return Ok(v);
        }
        let ripple = self.ctx.ripple(item)?;
        let vars = encode_item_on(&mut self.tape, self.params, ripple, &self.ctx.config.item_encoder())?;
        self.items.insert(item, vars.vector);
        Ok(vars.vector)
    }

    pub fn user(&mut self, user: UserId) -> Result<Var> {
        if let Some(&v) = self.users.get(&user) {
            return Ok(v);
        }
        let history = self.ctx.history(user)?;
        let reps = history
            .items
            .iter()
            .map(|&i| self.item(i))
            .collect::<Result<Vec<_>>>()?;
        let v = match self.ctx.config.user_encoder {
            UserEncoderKind::Rnn => encode_user_on(&mut self.tape, self.params, user, &reps)?.0,
            UserEncoderKind::Sum => encode_user_ablation_on(&mut self.tape, self.params, user, &reps)?,
        };
        self.users.insert(user, v);
        Ok(v)
    }

    /// Interaction probability node.
    pub fn predict(&mut self, user: UserId, item: ItemId) -> Result<Var> {
        let u = self.user(user)?;
        let v = self.item(item)?;
        let logit = self.tape.dot(u, v)?;
        Ok(self.tape.sigmoid(logit))
    }
}

/// Precomputed user and item representations for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    items: Vec<Vec<f64>>,
    users: Vec<Vec<f64>>,
}

impl FrozenModel {
    pub fn build(params: &ModelParams, ctx: ModelContext<'_>) -> Result<Self> {
        let item_cfg = ctx.config.item_encoder();
        let items = ctx
            .ripples
            .par_iter()
            .map(|r| encode_item(params, r, &item_cfg).map(|rep| rep.vector))
            .collect::<Result<Vec<_>>>()?;
        let users = ctx
            .histories
            .par_iter()
            .map(|h| {
                let reps: Vec<Vec<f64>> = h
                    .items
                    .iter()
                    .map(|i| {
                        items.get(i.index()).cloned().ok_or(Error::Index {
                            kind: "item",
                            id: i.index(),
                            count: items.len(),
                        })
                    })
                    .collect::<Result<_>>()?;
                let rep = match ctx.config.user_encoder {
                    UserEncoderKind::Rnn => encode_user(params, h.user, &reps)?,
                    UserEncoderKind::Sum => encode_user_ablation(params, h.user, &reps)?,
                };
                Ok(rep.vector)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FrozenModel { items, users })
    }

    pub fn item_vector(&self, item: ItemId) -> Option<&[f64]> {
        self.items.get(item.index()).map(Vec::as_slice)
    }

    pub fn user_vector(&self, user: UserId) -> Option<&[f64]> {
        self.users.get(user.index()).map(Vec::as_slice)
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    /// `id<TAB>comma-separated floats` lines.
    pub fn export_items(&self) -> String {
        export(&self.items)
    }

    pub fn export_users(&self) -> String {
        export(&self.users)
    }
}

fn export(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&i.to_string());
        out.push('\t');
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

impl Scorer for FrozenModel {
    fn score(&self, user: UserId, item: ItemId) -> f64 {
        match (self.users.get(user.index()), self.items.get(item.index())) {
            (Some(u), Some(v)) => predict(u, v),
            _ => f64::NAN,
        }
    }
}
