//! Implicit-feedback interaction logs.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::ids::{ItemId, UserId};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
}

/// Interactions in record order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

impl InteractionLog {
    pub fn new(records: Vec<Interaction>) -> Self {
        InteractionLog { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-user item lists in record order.
    pub fn by_user(&self, num_users: usize) -> Vec<Vec<ItemId>> {
        let mut out = vec![Vec::new(); num_users];
        for r in &self.records {
            out[r.user.index()].push(r.item);
        }
        out
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.records.iter().any(|r| r.user == user && r.item == item)
    }

    /// Writes `user<TAB>item` id lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            writeln!(out, "{}\t{}", r.user, r.item).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads `user<TAB>item` id lines written by [`InteractionLog::write`].
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: "expected user<TAB>item ids".into(),
            };
            let (u, v) = line.split_once('\t').ok_or_else(bad)?;
            records.push(Interaction {
                user: UserId(u.parse().map_err(|_| bad())?),
                item: ItemId(v.parse().map_err(|_| bad())?),
            });
        }
        Ok(InteractionLog { records })
    }
}

/// Interactions loaded from a token file.
#[derive(Debug, Clone)]
pub struct RawInteractions {
    pub log: InteractionLog,
    pub users: Vocabulary,
    pub items: Vocabulary,
    pub duplicates: usize,
}

/// Loads `user<TAB>item[<TAB>rating][<TAB>timestamp]` lines. Every record
/// counts as a positive; repeated `(user, item)` pairs keep their first
/// occurrence.
pub fn load_interactions(path: &Path) -> Result<RawInteractions> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut users = Vocabulary::new();
    let mut items = Vocabulary::new();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut duplicates = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if !(2..=4).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: "expected user<TAB>item[<TAB>rating][<TAB>timestamp]".into(),
            });
        }
        let user = UserId(users.get_or_insert(fields[0]));
        let item = ItemId(items.get_or_insert(fields[1]));
        if seen.insert((user, item)) {
            records.push(Interaction { user, item });
        } else {
            duplicates += 1;
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no interactions", path.display())));
    }
    if duplicates > 0 {
        warn!("{}: dropped {duplicates} repeated interaction(s)", path.display());
    }
    Ok(RawInteractions {
        log: InteractionLog { records },
        users,
        items,
        duplicates,
    })
}
