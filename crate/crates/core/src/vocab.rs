use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Token → dense id mapping assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = u32::try_from(self.tokens.len()).expect("vocabulary exceeds u32 range");
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32))
    }

    /// Writes `token<TAB>id` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (token, id) in self.iter() {
            writeln!(out, "{token}\t{id}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocabulary::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: message.to_owned(),
            };
            let (token, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| parse_err("expected token<TAB>id"))?;
            let id: u32 = id.parse().map_err(|_| parse_err("id is not an integer"))?;
            if vocab.get_or_insert(token) != id {
                return Err(parse_err("ids must be dense and in order"));
            }
        }
        Ok(vocab)
    }
}
