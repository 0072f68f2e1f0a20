//! On-disk form of a prepared dataset and the per-run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::data::{load_interactions, InteractionLog};
use crate::dataset::{assemble, Dataset, DatasetSummary};
use crate::error::{Error, Result};
use crate::graph::{load_kg_with_vocab, KnowledgeGraph, Triple};
use crate::numeric::Fingerprint;
use crate::vocab::Vocabulary;

const FORMAT_VERSION: u32 = 1;

/// Files hashed into the bundle digest, in hashing order.
const CONTENT_FILES: [&str; 7] = [
    "users.vocab",
    "entities.vocab",
    "relations.vocab",
    "kg.tsv",
    "train.tsv",
    "valid.tsv",
    "test.tsv",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub num_items: usize,
    pub summary: DatasetSummary,
    /// Configuration used to prepare the bundle, as `key = value` text.
    pub config: String,
    pub sha256: String,
}

/// Loads token files and builds a split dataset. An empty graph file only
/// produces a warning.
pub fn prepare_from_files(interactions: &Path, kg: &Path, config: &TrainConfig) -> Result<Dataset> {
    let raw = load_interactions(interactions)?;
    let loaded = match load_kg_with_vocab(kg, raw.items.clone(), Vocabulary::new()) {
        Ok(g) => Some(g),
        Err(Error::EmptyGraph(path)) => {
            warn!("{}: no triples", path.display());
            None
        }
        Err(e) => return Err(e),
    };
    assemble(raw, loaded, config)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn content_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in CONTENT_FILES {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

fn write_kg(path: &Path, kg: &KnowledgeGraph) -> Result<()> {
    let mut s = String::new();
    for t in kg.triples() {
        s.push_str(&format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_kg(path: &Path, entities: usize, relations: usize) -> Result<KnowledgeGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let ids: Vec<u32> = line
            .split('\t')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: "expected numeric head<TAB>relation<TAB>tail".into(),
            })?;
        let [h, r, t] = ids[..] else {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: "expected three fields".into(),
            });
        };
        triples.push(Triple::new(h, r, t));
    }
    Ok(KnowledgeGraph::from_triples(entities, relations, triples)?.0)
}

/// Writes the dataset into `dir` and returns the bundle digest.
pub fn write_bundle(dir: &Path, ds: &Dataset, config: &TrainConfig) -> Result<BundleMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ds.users.write(&dir.join("users.vocab"))?;
    ds.entities.write(&dir.join("entities.vocab"))?;
    ds.relations.write(&dir.join("relations.vocab"))?;
    write_kg(&dir.join("kg.tsv"), &ds.kg)?;
    ds.train.write(&dir.join("train.tsv"))?;
    ds.valid.write(&dir.join("valid.tsv"))?;
    ds.test.write(&dir.join("test.tsv"))?;
    let meta = BundleMeta {
        format_version: FORMAT_VERSION,
        num_items: ds.num_items,
        summary: ds.summary(),
        config: config.to_text(),
        sha256: content_hash(dir)?,
    };
    let path = dir.join("bundle.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

/// Reads a bundle, rejecting it when its files no longer match the digest.
pub fn read_bundle(dir: &Path) -> Result<(Dataset, BundleMeta)> {
    let path = dir.join("bundle.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: BundleMeta = serde_json::from_str(&text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported bundle version {}",
            dir.display(),
            meta.format_version
        )));
    }
    let actual = content_hash(dir)?;
    if actual != meta.sha256 {
        return Err(Error::Data(format!("{}: bundle files do not match bundle.json", dir.display())));
    }
    let users = Vocabulary::read(&dir.join("users.vocab"))?;
    let entities = Vocabulary::read(&dir.join("entities.vocab"))?;
    let relations = Vocabulary::read(&dir.join("relations.vocab"))?;
    let kg = read_kg(&dir.join("kg.tsv"), entities.len(), relations.len().max(1))?;
    let ds = Dataset {
        users,
        entities,
        relations,
        num_items: meta.num_items,
        kg,
        train: InteractionLog::read(&dir.join("train.tsv"))?,
        valid: InteractionLog::read(&dir.join("valid.tsv"))?,
        test: InteractionLog::read(&dir.join("test.tsv"))?,
    };
    ds.validate()?;
    Ok((ds, meta))
}

/// Configuration parsed from `key = value` text on top of the defaults.
pub fn config_from_text(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply_text(text)?;
    Ok(cfg)
}

/// Hyperparameters a checkpoint is only valid for.
pub fn fingerprint(cfg: &TrainConfig) -> Fingerprint {
    Fingerprint {
        d: cfg.d,
        d_h: cfg.d_h,
        levels: cfg.levels,
        k: cfg.k,
        n: cfg.n,
        seed: cfg.seed,
    }
}

/// The training configuration saved next to a checkpoint as
/// `<checkpoint>.config`, if present.
pub fn checkpoint_config(checkpoint: &Path) -> Result<Option<TrainConfig>> {
    let mut side = checkpoint.as_os_str().to_owned();
    side.push(".config");
    let side = PathBuf::from(side);
    match fs::read_to_string(&side) {
        Ok(text) => Ok(Some(config_from_text(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(side, e)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one CLI invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: String,
    pub inputs: Vec<InputDigest>,
    pub artifacts: Vec<PathBuf>,
    pub seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &TrainConfig) -> Self {
        RunManifest {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: config.seed,
            config: config.to_text(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.to_owned(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
