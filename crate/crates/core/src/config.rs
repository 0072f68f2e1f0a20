//! Run configuration and its flat `key = value` text format.
//!
//! Keys mirror the [`TrainConfig`] field names. Blank lines and lines
//! starting with `#` are ignored.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Exclusion, RippleConfig, Sampling};

/// Positives-to-negatives ratio used when sampling training negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegRatio {
    pub positives: u32,
    pub negatives: u32,
}

impl NegRatio {
    /// Negatives drawn for a user with `positives` training positives:
    /// `ceil(positives * negatives / self.positives)`.
    pub fn negatives_for(&self, positives: usize) -> usize {
        let num = positives as u64 * self.negatives as u64;
        num.div_ceil(self.positives as u64) as usize
    }
}

impl Default for NegRatio {
    fn default() -> Self {
        NegRatio {
            positives: 4,
            negatives: 1,
        }
    }
}

impl fmt::Display for NegRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.positives, self.negatives)
    }
}

impl FromStr for NegRatio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("neg_ratio must look like 4:1, got {s:?}"));
        let (p, n) = s.split_once(':').ok_or_else(bad)?;
        let positives: u32 = p.trim().parse().map_err(|_| bad())?;
        let negatives: u32 = n.trim().parse().map_err(|_| bad())?;
        if positives == 0 || negatives == 0 {
            return Err(bad());
        }
        Ok(NegRatio {
            positives,
            negatives,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserEncoderKind {
    /// ReLU recurrence over the history conditioned on the user embedding.
    #[default]
    Rnn,
    /// User embedding plus the sum of history item representations.
    Sum,
}

/// Which `n` training items form a user's history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryOrder {
    /// The last `n` in record order.
    #[default]
    Last,
    First,
    /// `n` drawn with a seeded RNG, kept in record order.
    Random,
}

/// What happens to users at or above the interaction cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColdStart {
    /// The user is removed.
    #[default]
    Drop,
    /// Only the user's first `cap - 1` records are kept.
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AucMode {
    /// Mean over users of the per-list AUC.
    #[default]
    PerList,
    /// One AUC over all pooled (positive, negative) pairs.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Job,
    Ml,
    Yelp,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "job" => Ok(Preset::Job),
            "ml" => Ok(Preset::Ml),
            "yelp" => Ok(Preset::Yelp),
            _ => Err(Error::Config(format!("unknown dataset preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    pub d_h: usize,
    pub k: usize,
    pub levels: usize,
    pub n: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub neg_ratio: NegRatio,
    pub seed: u64,

    pub sampling: Sampling,
    pub exclusion: Exclusion,
    /// Apply ReLU to the attention logit before the softmax.
    pub logit_relu: bool,
    pub user_encoder: UserEncoderKind,
    pub history_order: HistoryOrder,

    pub train_ratio: f64,
    /// Users with this many interactions or more are dropped; 0 disables.
    pub cold_start_max: usize,
    pub cold_start_mode: ColdStart,
    pub val_fraction: f64,
    pub num_negatives: usize,
    pub auc_mode: AucMode,
    /// Rank every test positive instead of one sampled positive per user.
    pub all_positives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset(Preset::Job)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let (learning_rate, epochs, d, k, levels, n, l2, batch_size) = match preset {
            Preset::Job => (0.02, 11, 8, 4, 1, 5, 0.001, 256),
            Preset::Ml => (0.05, 10, 64, 16, 1, 5, 0.0001, 256),
            Preset::Yelp => (0.05, 6, 64, 16, 1, 5, 0.0001, 256),
        };
        TrainConfig {
            d,
            d_h: d,
            k,
            levels,
            n,
            learning_rate,
            epochs,
            batch_size,
            l2,
            neg_ratio: NegRatio::default(),
            seed: 0,
            sampling: Sampling::default(),
            exclusion: Exclusion::default(),
            logit_relu: true,
            user_encoder: UserEncoderKind::default(),
            history_order: HistoryOrder::default(),
            train_ratio: 0.7,
            cold_start_max: 20,
            cold_start_mode: ColdStart::Drop,
            val_fraction: 0.1,
            num_negatives: 50,
            auc_mode: AucMode::default(),
            all_positives: false,
        }
    }

    pub fn ripple(&self) -> RippleConfig {
        RippleConfig {
            levels: self.levels,
            k: self.k,
            seed: self.seed,
            sampling: self.sampling,
            exclusion: self.exclusion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("d_h", self.d_h),
            ("k", self.k),
            ("levels", self.levels),
            ("n", self.n),
            ("batch_size", self.batch_size),
            ("num_negatives", self.num_negatives),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config("train_ratio must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
            }
        }
        fn choice<T>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T>
        where
            T: Copy,
        {
            options
                .iter()
                .find(|(name, _)| *name == value)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "d" => self.d = num(key, value)?,
            "d_h" => self.d_h = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "levels" | "L" => self.levels = num(key, value)?,
            "n" => self.n = num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "l2" | "lambda" => self.l2 = num(key, value)?,
            "neg_ratio" => self.neg_ratio = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "sampling" => self.sampling = value.parse()?,
            "exclusion" => self.exclusion = value.parse()?,
            "logit_relu" => self.logit_relu = flag(key, value)?,
            "user_encoder" => {
                self.user_encoder = choice(
                    key,
                    value,
                    &[("rnn", UserEncoderKind::Rnn), ("sum", UserEncoderKind::Sum)],
                )?
            }
            "history_order" => {
                self.history_order = choice(
                    key,
                    value,
                    &[
                        ("last", HistoryOrder::Last),
                        ("first", HistoryOrder::First),
                        ("random", HistoryOrder::Random),
                    ],
                )?
            }
            "train_ratio" => self.train_ratio = num(key, value)?,
            "cold_start_max" => self.cold_start_max = num(key, value)?,
            "cold_start_mode" => {
                self.cold_start_mode = choice(
                    key,
                    value,
                    &[("drop", ColdStart::Drop), ("truncate", ColdStart::Truncate)],
                )?
            }
            "val_fraction" => self.val_fraction = num(key, value)?,
            "num_negatives" => self.num_negatives = num(key, value)?,
            "auc_mode" => {
                self.auc_mode = choice(
                    key,
                    value,
                    &[("per-list", AucMode::PerList), ("global", AucMode::Global)],
                )?
            }
            "all_positives" => self.all_positives = flag(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sampling = match self.sampling {
            Sampling::WithoutReplacement => "without-replacement",
            Sampling::WithReplacement => "with-replacement",
        };
        let exclusion = match self.exclusion {
            Exclusion::AfterSampling => "after-sampling",
            Exclusion::BeforeSampling => "before-sampling",
        };
        let encoder = match self.user_encoder {
            UserEncoderKind::Rnn => "rnn",
            UserEncoderKind::Sum => "sum",
        };
        let order = match self.history_order {
            HistoryOrder::Last => "last",
            HistoryOrder::First => "first",
            HistoryOrder::Random => "random",
        };
        let auc = match self.auc_mode {
            AucMode::PerList => "per-list",
            AucMode::Global => "global",
        };
        let cold = match self.cold_start_mode {
            ColdStart::Drop => "drop",
            ColdStart::Truncate => "truncate",
        };
        let entries: [(&str, String); 23] = [
            ("d", self.d.to_string()),
            ("d_h", self.d_h.to_string()),
            ("k", self.k.to_string()),
            ("levels", self.levels.to_string()),
            ("n", self.n.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("l2", self.l2.to_string()),
            ("neg_ratio", self.neg_ratio.to_string()),
            ("seed", self.seed.to_string()),
            ("sampling", sampling.into()),
            ("exclusion", exclusion.into()),
            ("logit_relu", self.logit_relu.to_string()),
            ("user_encoder", encoder.into()),
            ("history_order", order.into()),
            ("train_ratio", self.train_ratio.to_string()),
            ("cold_start_max", self.cold_start_max.to_string()),
            ("cold_start_mode", cold.into()),
            ("val_fraction", self.val_fraction.to_string()),
            ("num_negatives", self.num_negatives.to_string()),
            ("auc_mode", auc.into()),
            ("all_positives", self.all_positives.to_string()),
        ];
        for (k, v) in entries {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}
