//! Seeded synthetic datasets with known structure, for smoke runs and
//! calibration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{Interaction, InteractionLog};
use crate::dataset::{from_ids, Dataset};
use crate::error::{Error, Result};
use crate::graph::Triple;
use crate::ids::{ItemId, UserId};
use crate::rng::{stream_rng, Stream};

fn write_pair(dir: &Path, interactions: &str, kg: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ip = dir.join("interactions.tsv");
    let kp = dir.join("kg.tsv");
    fs::write(&ip, interactions).map_err(|e| Error::io(&ip, e))?;
    fs::write(&kp, kg).map_err(|e| Error::io(&kp, e))?;
    Ok((ip, kp))
}

/// Two item clusters; every user consumes exactly one cluster. The graph
/// links each item to its cluster, to a few cluster-specific attributes and
/// to other items of the same cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedSpec {
    pub users: usize,
    /// Even; half per cluster.
    pub items: usize,
    pub attributes_per_cluster: usize,
    pub links_per_item: usize,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            users: 200,
            items: 50,
            attributes_per_cluster: 4,
            links_per_item: 2,
            seed: 0,
        }
    }
}

/// Writes `interactions.tsv` and `kg.tsv` token files into `dir`.
pub fn write_planted(dir: &Path, spec: &PlantedSpec) -> Result<(PathBuf, PathBuf)> {
    if spec.items < 4 || !spec.items.is_multiple_of(2) {
        return Err(Error::Config("planted data needs an even item count of at least 4".into()));
    }
    let half = spec.items / 2;
    let mut rng = stream_rng(spec.seed, Stream::Synthetic, 0);
    let mut inter = String::new();
    for u in 0..spec.users {
        let cluster = u % 2;
        let mut items: Vec<usize> = (cluster * half..(cluster + 1) * half).collect();
        items.shuffle(&mut rng);
        for i in items {
            writeln!(inter, "user{u}\titem{i}").unwrap();
        }
    }
    let mut kg = String::new();
    for i in 0..spec.items {
        let cluster = i / half;
        writeln!(kg, "item{i}\tin_cluster\tcluster{cluster}").unwrap();
        let attr = rng.gen_range(0..spec.attributes_per_cluster);
        writeln!(kg, "item{i}\thas_attr\tattr{cluster}_{attr}").unwrap();
        for _ in 0..spec.links_per_item {
            let j = cluster * half + rng.gen_range(0..half);
            if j != i {
                writeln!(kg, "item{i}\tsimilar_to\titem{j}").unwrap();
            }
        }
    }
    write_pair(dir, &inter, &kg)
}

/// Interactions and edges drawn uniformly at random: nothing to learn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformSpec {
    pub users: usize,
    pub items: usize,
    pub per_user: usize,
    pub extra_entities: usize,
    pub relations: usize,
    pub edges: usize,
    pub seed: u64,
}

impl Default for UniformSpec {
    fn default() -> Self {
        UniformSpec {
            users: 500,
            items: 100,
            per_user: 10,
            extra_entities: 100,
            relations: 3,
            edges: 1000,
            seed: 0,
        }
    }
}

pub fn write_uniform(dir: &Path, spec: &UniformSpec) -> Result<(PathBuf, PathBuf)> {
    if spec.per_user > spec.items || spec.relations == 0 {
        return Err(Error::Config("uniform data needs per_user <= items and relations > 0".into()));
    }
    let mut rng = stream_rng(spec.seed, Stream::Synthetic, 1);
    let mut inter = String::new();
    let mut order: Vec<usize> = (0..spec.items).collect();
    for u in 0..spec.users {
        order.shuffle(&mut rng);
        for &i in &order[..spec.per_user] {
            writeln!(inter, "user{u}\titem{i}").unwrap();
        }
    }
    let entity = |e: usize| {
        if e < spec.items {
            format!("item{e}")
        } else {
            format!("ent{e}")
        }
    };
    let total = spec.items + spec.extra_entities;
    let mut kg = String::new();
    for _ in 0..spec.edges {
        let h = rng.gen_range(0..total);
        let t = rng.gen_range(0..total);
        let r = rng.gen_range(0..spec.relations);
        writeln!(kg, "{}\trel{r}\t{}", entity(h), entity(t)).unwrap();
    }
    write_pair(dir, &inter, &kg)
}

/// Users see one item from group X and one from group Y; the order of the
/// two decides whether their next item comes from group A (X first) or B
/// (Y first). "Teacher" users carry the target items in training;
/// "student" users only have the ordered pair in training and the target in
/// test. Only an order-aware user encoder can tell the students apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderSpec {
    pub pair_items: usize,
    pub target_items: usize,
    pub teachers: usize,
    pub students: usize,
    pub targets_per_teacher: usize,
    pub seed: u64,
}

impl Default for OrderSpec {
    fn default() -> Self {
        OrderSpec {
            pair_items: 5,
            target_items: 20,
            teachers: 300,
            students: 200,
            targets_per_teacher: 3,
            seed: 0,
        }
    }
}

/// Item layout: `X = 0..p`, `Y = p..2p`, `A = 2p..2p+t`, `B = 2p+t..2p+2t`.
/// Entities `2p+2t..` are the four group nodes.
pub fn order_signal_dataset(spec: &OrderSpec) -> Result<Dataset> {
    let p = spec.pair_items;
    let t = spec.target_items;
    if p == 0 || t <= spec.targets_per_teacher {
        return Err(Error::Config("order data needs pair items and more target items than targets per teacher".into()));
    }
    let num_items = 2 * p + 2 * t;
    let group_of = |i: usize| {
        if i < p {
            0
        } else if i < 2 * p {
            1
        } else if i < 2 * p + t {
            2
        } else {
            3
        }
    };
    let triples: Vec<Triple> = (0..num_items)
        .map(|i| Triple::new(i as u32, 0, (num_items + group_of(i)) as u32))
        .collect();

    let mut rng = stream_rng(spec.seed, Stream::Synthetic, 2);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let push = |v: &mut Vec<Interaction>, u: usize, i: usize| {
        v.push(Interaction {
            user: UserId::from(u),
            item: ItemId::from(i),
        })
    };
    for u in 0..spec.teachers + spec.students {
        let x = rng.gen_range(0..p);
        let y = p + rng.gen_range(0..p);
        let x_first = rng.gen_bool(0.5);
        let (first, second) = if x_first { (x, y) } else { (y, x) };
        let base = if x_first { 2 * p } else { 2 * p + t };
        let mut targets: Vec<usize> = (base..base + t).collect();
        targets.shuffle(&mut rng);
        if u < spec.teachers {
            let k = spec.targets_per_teacher;
            for &i in &targets[..k] {
                push(&mut train, u, i);
            }
            if u % 3 == 0 {
                push(&mut valid, u, targets[k]);
            }
            push(&mut train, u, first);
            push(&mut train, u, second);
        } else {
            push(&mut train, u, first);
            push(&mut train, u, second);
            push(&mut test, u, targets[0]);
        }
    }
    from_ids(
        spec.teachers + spec.students,
        num_items,
        triples,
        InteractionLog::new(train),
        InteractionLog::new(valid),
        InteractionLog::new(test),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_users_stay_in_their_cluster() {
        let dir = tempfile::tempdir().unwrap();
        let (inter, _) = write_planted(dir.path(), &PlantedSpec::default()).unwrap();
        let text = fs::read_to_string(inter).unwrap();
        assert_eq!(text.lines().count(), 200 * 25);
        for line in text.lines() {
            let (u, i) = line.split_once('\t').unwrap();
            let u: usize = u[4..].parse().unwrap();
            let i: usize = i[4..].parse().unwrap();
            assert_eq!(u % 2, i / 25);
        }
    }

    #[test]
    fn order_dataset_shape() {
        let ds = order_signal_dataset(&OrderSpec::default()).unwrap();
        assert_eq!(ds.num_items, 50);
        assert_eq!(ds.test.len(), 200);
        assert_eq!(ds.train.len(), 300 * 5 + 200 * 2);
        assert_eq!(ds.kg.triple_count(), 50);
        // the last two training records of each user are the ordered pair
        let by_user = ds.train.by_user(ds.num_users());
        for items in &by_user {
            let tail = &items[items.len() - 2..];
            assert!(tail.iter().all(|i| i.index() < 10));
        }
    }

    #[test]
    fn generators_are_seeded() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = UniformSpec::default();
        let (ia, ka) = write_uniform(a.path(), &spec).unwrap();
        let (ib, kb) = write_uniform(b.path(), &spec).unwrap();
        assert_eq!(fs::read(ia).unwrap(), fs::read(ib).unwrap());
        assert_eq!(fs::read(ka).unwrap(), fs::read(kb).unwrap());
    }
}
