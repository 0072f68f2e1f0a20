//! Converts the MovieLens-100k release into interaction and triple files.
//!
//! Interactions come from `u.data`, ordered by user and timestamp. The graph
//! links each movie to its genres and release year, and each year to its
//! decade.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const GENRES: [&str; 19] = [
    "unknown",
    "action",
    "adventure",
    "animation",
    "children",
    "comedy",
    "crime",
    "documentary",
    "drama",
    "fantasy",
    "film-noir",
    "horror",
    "musical",
    "mystery",
    "romance",
    "sci-fi",
    "thriller",
    "war",
    "western",
];

fn read_latin1(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn parse_err(path: &Path, line: usize, message: &str) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.to_owned(),
    }
}

/// Reads `dir/u.data` and `dir/u.item` and writes `interactions.tsv` and
/// `kg.tsv` into `out`.
pub fn import_ml100k(dir: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let data_path = dir.join("u.data");
    let data = read_latin1(&data_path)?;
    let mut rows: Vec<(u32, u64, u32)> = Vec::new();
    for (i, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(&data_path, i + 1, "expected user item rating timestamp"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| parse_err(&data_path, i + 1, "non-numeric field"));
        rows.push((num(f[0])? as u32, num(f[3])?, num(f[1])? as u32));
    }
    rows.sort_unstable();
    let mut inter = String::new();
    for (user, _, item) in &rows {
        writeln!(inter, "u{user}\tm{item}").unwrap();
    }

    let item_path = dir.join("u.item");
    let items = read_latin1(&item_path)?;
    let mut kg = String::new();
    for (i, line) in items.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 5 + GENRES.len() {
            return Err(parse_err(&item_path, i + 1, "expected 24 |-separated fields"));
        }
        let movie = format!("m{}", f[0]);
        for (g, flag) in GENRES.iter().zip(&f[5..]) {
            if *flag == "1" {
                writeln!(kg, "{movie}\thas_genre\tgenre:{g}").unwrap();
            }
        }
        // release dates look like 01-Jan-1995
        if let Some(year) = f[2].rsplit('-').next().and_then(|y| y.parse::<u32>().ok()) {
            writeln!(kg, "{movie}\treleased_in\tyear:{year}").unwrap();
            writeln!(kg, "year:{year}\tin_decade\tdecade:{}", year / 10 * 10).unwrap();
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ip = out.join("interactions.tsv");
    let kp = out.join("kg.tsv");
    fs::write(&ip, inter).map_err(|e| Error::io(&ip, e))?;
    fs::write(&kp, kg).map_err(|e| Error::io(&kp, e))?;
    Ok((ip, kp))
}
