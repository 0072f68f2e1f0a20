//! A split dataset aligned with its knowledge graph, and the end-to-end
//! fit/evaluate pipeline over it.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{InteractionLog, RawInteractions};
use crate::error::{Error, Result};
use crate::eval::{
    build_eval_lists, evaluate_lists, holdout_validation, interacted_items, split_interactions,
    CandidateList, EvalConfig, MetricsReport, RankedList, SplitConfig, DEFAULT_KS,
};
use crate::graph::{build_all_ripple_sets, KnowledgeGraph, LoadedGraph, RippleSets, Triple};
use crate::ids::ItemId;
use crate::model::{FrozenModel, ModelConfig, ModelContext};
use crate::numeric::{ModelDims, ModelParams};
use crate::trainer::{sample_negatives, train, training_examples, TrainExample, TrainOptions, TrainOutcome};
use crate::user_encoder::{build_histories, UserHistory};
use crate::vocab::Vocabulary;

/// Interactions split into train, validation and test, with a graph whose
/// first `num_items` entities are the items.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub users: Vocabulary,
    pub entities: Vocabulary,
    pub relations: Vocabulary,
    pub num_items: usize,
    pub kg: KnowledgeGraph,
    pub train: InteractionLog,
    pub valid: InteractionLog,
    pub test: InteractionLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub items: usize,
    pub entities: usize,
    pub relations: usize,
    pub edges: usize,
    pub interactions: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub items_without_edges: usize,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            users: self.num_users(),
            items: self.num_items,
            entities: self.kg.entity_count(),
            relations: self.relations.len(),
            edges: self.kg.triple_count(),
            interactions: self.train.len() + self.valid.len() + self.test.len(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            items_without_edges: (0..self.num_items)
                .filter(|&i| self.kg.out_edges(ItemId::from(i).entity()).is_empty())
                .count(),
        }
    }

    /// Every item each user touched in any split, sorted.
    pub fn interacted(&self) -> Vec<Vec<ItemId>> {
        interacted_items(&[&self.train, &self.valid, &self.test], self.num_users())
    }

    pub fn dims(&self, config: &TrainConfig) -> ModelDims {
        ModelDims {
            users: self.num_users(),
            entities: self.kg.entity_count(),
            relations: self.kg.relation_count().max(1),
            d: config.d,
            d_h: config.d_h,
        }
    }

    /// Checks that every id is inside its vocabulary.
    pub fn validate(&self) -> Result<()> {
        if self.kg.entity_count() < self.num_items {
            return Err(Error::Data(format!(
                "graph has {} entities but there are {} items",
                self.kg.entity_count(),
                self.num_items
            )));
        }
        for log in [&self.train, &self.valid, &self.test] {
            for r in &log.records {
                if r.user.index() >= self.num_users() {
                    return Err(Error::Index {
                        kind: "user",
                        id: r.user.index(),
                        count: self.num_users(),
                    });
                }
                if r.item.index() >= self.num_items {
                    return Err(Error::Index {
                        kind: "item",
                        id: r.item.index(),
                        count: self.num_items,
                    });
                }
            }
        }
        if self.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        Ok(())
    }
}

/// Aligns interactions with a graph and splits them. `kg` must have been
/// loaded with an entity vocabulary seeded from `raw.items`; `None` means the
/// graph was empty and items get no knowledge.
pub fn assemble(raw: RawInteractions, kg: Option<LoadedGraph>, config: &TrainConfig) -> Result<Dataset> {
    config.validate()?;
    let num_items = raw.items.len();
    let (graph, entities, relations) = match kg {
        Some(g) => {
            if g.entities.iter().take(num_items).any(|(t, id)| raw.items.token(id) != Some(t)) {
                return Err(Error::Data("entity vocabulary is not seeded with the item tokens".into()));
            }
            (g.graph, g.entities, g.relations)
        }
        None => {
            warn!("knowledge graph is empty; items are encoded from their own embedding only");
            (KnowledgeGraph::empty(num_items, 1), raw.items.clone(), Vocabulary::new())
        }
    };
    let num_users = raw.users.len();
    let split = split_interactions(
        &raw.log,
        num_users,
        &SplitConfig {
            train_ratio: config.train_ratio,
            cold_start_max: config.cold_start_max,
            cold_start_mode: config.cold_start_mode,
            seed: config.seed,
        },
    )?;
    if !split.dropped_users.is_empty() {
        info!(
            "dropped {} user(s) with {} or more interactions",
            split.dropped_users.len(),
            config.cold_start_max
        );
    }
    let (train, valid) = holdout_validation(&split.train, num_users, config.val_fraction, config.seed);
    let ds = Dataset {
        users: raw.users,
        entities,
        relations,
        num_items,
        kg: graph,
        train,
        valid,
        test: split.test,
    };
    let s = ds.summary();
    if s.items_without_edges > 0 {
        info!("{} of {} items have no outgoing edges", s.items_without_edges, s.items);
    }
    ds.validate()?;
    Ok(ds)
}

/// Builds a dataset straight from id-level data; entity and relation tokens
/// are their decimal ids.
pub fn from_ids(
    num_users: usize,
    num_items: usize,
    triples: Vec<Triple>,
    train: InteractionLog,
    valid: InteractionLog,
    test: InteractionLog,
) -> Result<Dataset> {
    let entity_count = triples
        .iter()
        .map(|t| t.head.index().max(t.tail.index()) + 1)
        .max()
        .unwrap_or(0)
        .max(num_items);
    let relation_count = triples.iter().map(|t| t.relation.index() + 1).max().unwrap_or(0);
    let (kg, _) = KnowledgeGraph::from_triples(entity_count, relation_count.max(1), triples)?;
    let vocab = |n: usize, prefix: &str| {
        let mut v = Vocabulary::new();
        for i in 0..n {
            v.get_or_insert(&format!("{prefix}{i}"));
        }
        v
    };
    let ds = Dataset {
        users: vocab(num_users, "u"),
        entities: vocab(entity_count, "e"),
        relations: vocab(relation_count.max(1), "r"),
        num_items,
        kg,
        train,
        valid,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

/// Everything the model reads besides its parameters.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub ripples: Vec<RippleSets>,
    pub histories: Vec<UserHistory>,
    pub config: ModelConfig,
}

impl ModelInputs {
    pub fn build(ds: &Dataset, config: &TrainConfig) -> Result<Self> {
        let ripples = build_all_ripple_sets(&ds.kg, ds.num_items, &config.ripple())?;
        Self::with_ripples(ds, config, ripples)
    }

    /// Inputs around ripple sets built earlier (e.g. read from a cache).
    pub fn with_ripples(ds: &Dataset, config: &TrainConfig, ripples: Vec<RippleSets>) -> Result<Self> {
        if ripples.len() != ds.num_items {
            return Err(Error::Data(format!(
                "{} ripple sets for {} items",
                ripples.len(),
                ds.num_items
            )));
        }
        Ok(ModelInputs {
            ripples,
            histories: build_histories(&ds.train, ds.num_users(), config.n, config.history_order, config.seed)?,
            config: ModelConfig::from(config),
        })
    }

    pub fn context(&self) -> ModelContext<'_> {
        ModelContext {
            ripples: &self.ripples,
            histories: &self.histories,
            config: self.config,
        }
    }
}

pub fn eval_config(config: &TrainConfig) -> EvalConfig {
    EvalConfig {
        num_negatives: config.num_negatives,
        all_positives: config.all_positives,
        auc_mode: config.auc_mode,
        seed: config.seed,
    }
}

/// Candidate lists over the validation split. They use the complement of
/// the seed so they never coincide with the test lists.
pub fn validation_lists(ds: &Dataset, config: &TrainConfig) -> Result<Vec<CandidateList>> {
    if ds.valid.is_empty() {
        return Ok(Vec::new());
    }
    let eval = EvalConfig {
        all_positives: false,
        seed: !config.seed,
        ..eval_config(config)
    };
    build_eval_lists(&ds.valid.by_user(ds.num_users()), &ds.interacted(), ds.num_items, &eval, true)
}

pub fn training_set(ds: &Dataset, config: &TrainConfig) -> Vec<TrainExample> {
    let negatives = sample_negatives(&ds.train, &ds.interacted(), ds.num_items, config.neg_ratio, config.seed);
    training_examples(&ds.train, &negatives)
}

pub fn train_options(config: &TrainConfig) -> TrainOptions {
    TrainOptions {
        learning_rate: config.learning_rate,
        epochs: config.epochs,
        batch_size: config.batch_size,
        l2: config.l2,
        seed: config.seed,
    }
}

/// Initializes and trains a model on `ds`.
pub fn fit(ds: &Dataset, inputs: &ModelInputs, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let init = ModelParams::init(ds.dims(config), config.seed)?;
    let examples = training_set(ds, config);
    let validation = validation_lists(ds, config)?;
    info!(
        "training on {} examples ({} positives), {} validation lists",
        examples.len(),
        ds.train.len(),
        validation.len()
    );
    train(init, inputs.context(), &examples, &validation, &train_options(config))
}

/// Test-split metrics. Users who cannot supply enough negatives abort with a
/// protocol error.
pub fn evaluate(
    ds: &Dataset,
    inputs: &ModelInputs,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<(MetricsReport, Vec<RankedList>)> {
    let lists = build_eval_lists(
        &ds.test.by_user(ds.num_users()),
        &ds.interacted(),
        ds.num_items,
        &eval_config(config),
        false,
    )?;
    let frozen = FrozenModel::build(params, inputs.context())?;
    evaluate_lists(&frozen, &lists, &DEFAULT_KS, config.auc_mode)
}
