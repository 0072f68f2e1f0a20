//! Knowledge graph storage and level-wise neighbor expansion.
//!
//! An item's level-`l` triple set holds the triples whose head was reached at
//! level `l - 1`, restricted to tails not seen at any earlier level. Level 0
//! is the item itself. Each expanded node contributes at most `k` sampled
//! triples.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{EntityId, ItemId, RelationId};
use crate::rng::{stream_rng, Stream};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// Immutable adjacency over `(head, relation, tail)` triples. Each head's
/// out-list is sorted by `(relation, tail)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
    entity_count: usize,
    relation_count: usize,
    triple_count: usize,
}

impl KnowledgeGraph {
    /// Builds a graph from triples, dropping duplicates. Returns the graph and
    /// the number of duplicates dropped.
    pub fn from_triples(
        entity_count: usize,
        relation_count: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<(Self, usize)> {
        let mut adjacency = vec![Vec::new(); entity_count];
        for t in triples {
            for (kind, id, count) in [
                ("entity", t.head.index(), entity_count),
                ("entity", t.tail.index(), entity_count),
                ("relation", t.relation.index(), relation_count),
            ] {
                if id >= count {
                    return Err(Error::Index { kind, id, count });
                }
            }
            adjacency[t.head.index()].push((t.relation, t.tail));
        }
        let mut duplicates = 0;
        let mut triple_count = 0;
        for list in &mut adjacency {
            list.sort_unstable();
            let before = list.len();
            list.dedup();
            duplicates += before - list.len();
            triple_count += list.len();
        }
        Ok((
            KnowledgeGraph {
                adjacency,
                entity_count,
                relation_count,
                triple_count,
            },
            duplicates,
        ))
    }

    pub fn empty(entity_count: usize, relation_count: usize) -> Self {
        KnowledgeGraph {
            adjacency: vec![Vec::new(); entity_count],
            entity_count,
            relation_count,
            triple_count: 0,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count(&self) -> usize {
        self.relation_count
    }

    pub fn triple_count(&self) -> usize {
        self.triple_count
    }

    pub fn out_edges(&self, head: EntityId) -> &[(RelationId, EntityId)] {
        self.adjacency
            .get(head.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(h, list)| {
            list.iter().map(move |&(relation, tail)| Triple {
                head: EntityId::from(h),
                relation,
                tail,
            })
        })
    }

    /// Grows the entity table (e.g. to cover catalog items that never appear
    /// in the graph file).
    pub fn with_entity_count(mut self, entity_count: usize) -> Self {
        if entity_count > self.entity_count {
            self.adjacency.resize(entity_count, Vec::new());
            self.entity_count = entity_count;
        }
        self
    }
}

/// A graph loaded from a token file together with its vocabularies.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: KnowledgeGraph,
    pub entities: Vocabulary,
    pub relations: Vocabulary,
    pub duplicates: usize,
}

/// Loads a `head<TAB>relation<TAB>tail` file with fresh vocabularies.
pub fn load_kg(path: &Path) -> Result<LoadedGraph> {
    load_kg_with_vocab(path, Vocabulary::new(), Vocabulary::new())
}

/// Loads a triple file, extending pre-seeded vocabularies. Seeding the entity
/// vocabulary with item tokens gives items the lowest entity ids.
pub fn load_kg_with_vocab(
    path: &Path,
    mut entities: Vocabulary,
    mut relations: Vocabulary,
) -> Result<LoadedGraph> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut triples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: format!("expected head<TAB>relation<TAB>tail, got {} field(s)", fields.len()),
            });
        }
        let head = entities.get_or_insert(fields[0]);
        let relation = relations.get_or_insert(fields[1]);
        let tail = entities.get_or_insert(fields[2]);
        triples.push(Triple::new(head, relation, tail));
    }
    if triples.is_empty() {
        return Err(Error::EmptyGraph(path.to_owned()));
    }
    let (graph, duplicates) =
        KnowledgeGraph::from_triples(entities.len(), relations.len(), triples)?;
    if duplicates > 0 {
        warn!("{}: dropped {duplicates} duplicate triple(s)", path.display());
    }
    Ok(LoadedGraph {
        graph,
        entities,
        relations,
        duplicates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// `k` distinct out-edges when a node has more than `k`, all otherwise.
    #[default]
    WithoutReplacement,
    /// Exactly `k` independent draws from a node's out-edges.
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exclusion {
    /// Sample from a node's out-edges, then drop visited tails.
    #[default]
    AfterSampling,
    /// Drop visited tails, then sample from what remains.
    BeforeSampling,
}

impl FromStr for Sampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "without-replacement" | "without" => Ok(Sampling::WithoutReplacement),
            "with-replacement" | "with" => Ok(Sampling::WithReplacement),
            _ => Err(Error::Config(format!("unknown sampling mode {s:?}"))),
        }
    }
}

impl FromStr for Exclusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "after-sampling" | "after" => Ok(Exclusion::AfterSampling),
            "before-sampling" | "before" => Ok(Exclusion::BeforeSampling),
            _ => Err(Error::Config(format!("unknown exclusion order {s:?}"))),
        }
    }
}

impl Sampling {
    fn as_str(self) -> &'static str {
        match self {
            Sampling::WithoutReplacement => "without-replacement",
            Sampling::WithReplacement => "with-replacement",
        }
    }
}

impl Exclusion {
    fn as_str(self) -> &'static str {
        match self {
            Exclusion::AfterSampling => "after-sampling",
            Exclusion::BeforeSampling => "before-sampling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RippleConfig {
    pub levels: usize,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub exclusion: Exclusion,
}

impl RippleConfig {
    pub fn new(levels: usize, k: usize, seed: u64) -> Self {
        RippleConfig {
            levels,
            k,
            seed,
            sampling: Sampling::default(),
            exclusion: Exclusion::default(),
        }
    }
}

/// Level-wise triple sets of one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RippleSets {
    pub item: ItemId,
    /// `levels[l - 1]` holds the level-`l` triples, `l = 1..=L`.
    pub levels: Vec<Vec<Triple>>,
    /// `visited[l]` holds the sorted level-`l` entities; `visited[0] == [item]`.
    pub visited: Vec<Vec<EntityId>>,
}

impl RippleSets {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn is_isolated(&self) -> bool {
        self.levels.iter().all(Vec::is_empty)
    }
}

/// Expands `item` level by level over `kg`. Deterministic in
/// `(kg, item, config)`; independent of other items.
pub fn build_ripple_sets(kg: &KnowledgeGraph, item: ItemId, config: &RippleConfig) -> Result<RippleSets> {
    if config.levels == 0 || config.k == 0 {
        return Err(Error::Config(format!(
            "ripple expansion needs levels >= 1 and k >= 1 (got L={}, k={})",
            config.levels, config.k
        )));
    }
    if item.index() >= kg.entity_count() {
        return Err(Error::Index {
            kind: "item",
            id: item.index(),
            count: kg.entity_count(),
        });
    }
    let mut rng = stream_rng(config.seed, Stream::Ripple, item.0 as u64);
    let mut seen: HashSet<EntityId> = HashSet::from([item.entity()]);
    let mut visited = vec![vec![item.entity()]];
    let mut levels = Vec::with_capacity(config.levels);
    let mut candidates: Vec<(RelationId, EntityId)> = Vec::new();

    for _ in 0..config.levels {
        let frontier = visited.last().expect("level 0 present");
        let mut level = Vec::new();
        for &head in frontier {
            candidates.clear();
            match config.exclusion {
                Exclusion::AfterSampling => candidates.extend_from_slice(kg.out_edges(head)),
                Exclusion::BeforeSampling => candidates.extend(
                    kg.out_edges(head).iter().filter(|(_, t)| !seen.contains(t)),
                ),
            }
            let picked: Vec<usize> = match config.sampling {
                Sampling::WithoutReplacement if candidates.len() <= config.k => {
                    (0..candidates.len()).collect()
                }
                Sampling::WithoutReplacement => {
                    let mut idx = index::sample(&mut rng, candidates.len(), config.k).into_vec();
                    idx.sort_unstable();
                    idx
                }
                Sampling::WithReplacement if candidates.is_empty() => Vec::new(),
                Sampling::WithReplacement => (0..config.k)
                    .map(|_| rng.gen_range(0..candidates.len()))
                    .collect(),
            };
            for i in picked {
                let (relation, tail) = candidates[i];
                if config.exclusion == Exclusion::AfterSampling && seen.contains(&tail) {
                    continue;
                }
                level.push(Triple { head, relation, tail });
            }
        }
        let mut tails: Vec<EntityId> = level.iter().map(|t| t.tail).collect();
        tails.sort_unstable();
        tails.dedup();
        seen.extend(tails.iter().copied());
        visited.push(tails);
        levels.push(level);
    }
    Ok(RippleSets {
        item,
        levels,
        visited,
    })
}

/// Ripple sets for items `0..item_count`, built in parallel.
pub fn build_all_ripple_sets(
    kg: &KnowledgeGraph,
    item_count: usize,
    config: &RippleConfig,
) -> Result<Vec<RippleSets>> {
    use rayon::prelude::*;
    (0..item_count)
        .into_par_iter()
        .map(|i| build_ripple_sets(kg, ItemId::from(i), config))
        .collect()
}

const CACHE_MAGIC: &str = "#kgrec-ripple v1";

fn cache_header(config: &RippleConfig, items: usize) -> String {
    format!(
        "{CACHE_MAGIC} levels={} k={} seed={} sampling={} exclusion={} items={items}",
        config.levels,
        config.k,
        config.seed,
        config.sampling.as_str(),
        config.exclusion.as_str()
    )
}

/// Serializes ripple sets as line-delimited text: a header line keyed by the
/// expansion config, then `item<TAB>level<TAB>h:r:t,h:r:t,...` per level.
pub fn encode_ripple_cache(config: &RippleConfig, sets: &[RippleSets]) -> String {
    let mut out = cache_header(config, sets.len());
    out.push('\n');
    for set in sets {
        for (l, level) in set.levels.iter().enumerate() {
            write!(out, "{}\t{}\t", set.item, l + 1).unwrap();
            for (i, t) in level.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{}:{}:{}", t.head, t.relation, t.tail).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Writes through a temporary file and a rename so concurrent readers never
/// see a partial cache.
pub fn write_ripple_cache(path: &Path, config: &RippleConfig, sets: &[RippleSets]) -> Result<()> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".{}.{}.tmp", std::process::id(), COUNTER.fetch_add(1, Ordering::Relaxed)));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, encode_ripple_cache(config, sets)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a cache written for exactly `config` and `items`; `Ok(None)` when
/// the file is missing or was built with different settings.
pub fn read_ripple_cache(path: &Path, config: &RippleConfig, items: usize) -> Result<Option<Vec<RippleSets>>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut lines = text.lines();
    if lines.next() != Some(cache_header(config, items).as_str()) {
        return Ok(None);
    }
    let bad = |line: usize, message: &str| Error::Parse {
        path: path.to_owned(),
        line,
        message: message.to_owned(),
    };
    let mut sets: Vec<RippleSets> = (0..items)
        .map(|i| RippleSets {
            item: ItemId::from(i),
            levels: vec![Vec::new(); config.levels],
            visited: Vec::new(),
        })
        .collect();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let mut fields = line.splitn(3, '\t');
        let (Some(item), Some(level), Some(body)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad(lineno, "expected item<TAB>level<TAB>triples"));
        };
        let item: usize = item.parse().map_err(|_| bad(lineno, "bad item id"))?;
        let level: usize = level.parse().map_err(|_| bad(lineno, "bad level"))?;
        if item >= items || level == 0 || level > config.levels {
            return Err(bad(lineno, "item or level out of range"));
        }
        let triples = &mut sets[item].levels[level - 1];
        for tok in body.split(',').filter(|s| !s.is_empty()) {
            let parts: Vec<u32> = tok
                .split(':')
                .map(|p| p.parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(lineno, "bad triple"))?;
            let [h, r, t] = parts[..] else {
                return Err(bad(lineno, "triple must be h:r:t"));
            };
            triples.push(Triple::new(h, r, t));
        }
    }
    for set in &mut sets {
        set.visited.push(vec![set.item.entity()]);
        for level in &set.levels {
            let mut tails: Vec<EntityId> = level.iter().map(|t| t.tail).collect();
            tails.sort_unstable();
            tails.dedup();
            set.visited.push(tails);
        }
    }
    Ok(Some(sets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn graph(n: usize, edges: &[(u32, u32, u32)]) -> KnowledgeGraph {
        let rels = edges.iter().map(|e| e.1 as usize + 1).max().unwrap_or(1);
        KnowledgeGraph::from_triples(n, rels, edges.iter().map(|&(h, r, t)| Triple::new(h, r, t)))
            .unwrap()
            .0
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_drops_duplicates() {
        let f = write_tmp("a\tlikes\tb\nb\tlikes\tc\na\tlikes\tb\n");
        let g = load_kg(f.path()).unwrap();
        assert_eq!(g.graph.entity_count(), 3);
        assert_eq!(g.graph.relation_count(), 1);
        assert_eq!(g.graph.triple_count(), 2);
        assert_eq!(g.duplicates, 1);
    }

    #[test]
    fn load_reports_malformed_line() {
        let f = write_tmp("a\tlikes\n");
        match load_kg(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("a\tr\tb\n\nx y\n");
        assert!(matches!(load_kg(f.path()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn load_empty_file() {
        let f = write_tmp("\n");
        assert!(matches!(load_kg(f.path()), Err(Error::EmptyGraph(_))));
    }

    #[test]
    fn adjacency_sorted_and_counted() {
        let g = graph(4, &[(0, 1, 3), (0, 0, 2), (0, 1, 1), (2, 0, 3)]);
        let out: Vec<_> = g.out_edges(EntityId(0)).iter().map(|&(r, t)| (r.0, t.0)).collect();
        assert_eq!(out, vec![(0, 2), (1, 1), (1, 3)]);
        let total: usize = (0..4).map(|e| g.out_edges(EntityId(e)).len()).sum();
        assert_eq!(total, g.triple_count());
        assert_eq!(g.triples().count(), 4);
    }

    #[test]
    fn chain_graph() {
        // v=0 -> a=1 -> b=2 -> c=3
        let g = graph(4, &[(0, 0, 1), (1, 0, 2), (2, 0, 3)]);
        let rs = build_ripple_sets(&g, ItemId(0), &RippleConfig::new(2, 4, 7)).unwrap();
        assert_eq!(rs.levels, vec![vec![Triple::new(0, 0, 1)], vec![Triple::new(1, 0, 2)]]);
        assert_eq!(rs.visited[2], vec![EntityId(2)]);
    }

    #[test]
    fn triangle_excludes_origin() {
        let g = graph(2, &[(0, 0, 1), (1, 0, 0)]);
        let rs = build_ripple_sets(&g, ItemId(0), &RippleConfig::new(2, 4, 7)).unwrap();
        assert_eq!(rs.levels[0].len(), 1);
        assert!(rs.levels[1].is_empty());
    }

    #[test]
    fn isolated_item_yields_empty_levels() {
        let g = graph(3, &[(1, 0, 2)]);
        let rs = build_ripple_sets(&g, ItemId(0), &RippleConfig::new(3, 2, 1)).unwrap();
        assert_eq!(rs.levels.len(), 3);
        assert!(rs.is_isolated());
    }

    #[test]
    fn rejects_bad_arguments() {
        let g = graph(2, &[(0, 0, 1)]);
        assert!(build_ripple_sets(&g, ItemId(0), &RippleConfig::new(0, 1, 0)).is_err());
        assert!(build_ripple_sets(&g, ItemId(0), &RippleConfig::new(1, 0, 0)).is_err());
        assert!(build_ripple_sets(&g, ItemId(5), &RippleConfig::new(1, 1, 0)).is_err());
    }

    #[test]
    fn samples_k_per_node() {
        let edges: Vec<_> = (1..=10).map(|t| (0, 0, t)).collect();
        let g = graph(11, &edges);
        let rs = build_ripple_sets(&g, ItemId(0), &RippleConfig::new(1, 3, 99)).unwrap();
        assert_eq!(rs.levels[0].len(), 3);
        let mut with = RippleConfig::new(1, 3, 99);
        with.sampling = Sampling::WithReplacement;
        let rs = build_ripple_sets(&g, ItemId(0), &with).unwrap();
        assert_eq!(rs.levels[0].len(), 3);
    }

    #[test]
    fn exclusion_before_sampling_refills() {
        // node 1 points back at the item plus two fresh tails; with k=2,
        // excluding first guarantees both fresh tails survive.
        let g = graph(4, &[(0, 0, 1), (1, 0, 0), (1, 0, 2), (1, 0, 3)]);
        let mut cfg = RippleConfig::new(2, 2, 3);
        cfg.exclusion = Exclusion::BeforeSampling;
        for seed in 0..20 {
            cfg.seed = seed;
            let rs = build_ripple_sets(&g, ItemId(0), &cfg).unwrap();
            assert_eq!(rs.visited[2], vec![EntityId(2), EntityId(3)]);
        }
    }

    #[test]
    fn cache_roundtrip_and_invalidation() {
        let g = graph(5, &[(0, 0, 1), (1, 1, 2), (0, 1, 3), (3, 0, 4), (2, 0, 0)]);
        let cfg = RippleConfig::new(2, 1, 11);
        let sets = build_all_ripple_sets(&g, 3, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ripple.cache");
        write_ripple_cache(&path, &cfg, &sets).unwrap();
        assert_eq!(read_ripple_cache(&path, &cfg, 3).unwrap().unwrap(), sets);
        let other = RippleConfig::new(2, 2, 11);
        assert!(read_ripple_cache(&path, &other, 3).unwrap().is_none());
        assert!(read_ripple_cache(&dir.path().join("none"), &cfg, 3).unwrap().is_none());
    }
}
