//! Rating triples, the sparse user × item matrix and reproducible
//! train/test splits.
//!
//! Ids are opaque strings mapped to dense indices in first-seen order.
//! Matrices produced by [`split`] keep the full index of their source so that
//! a user or item index means the same thing in train and test.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A single observed rating.
#[derive(Debug, Clone, PartialEq)]
pub struct Rating {
    pub user_id: String,
    pub item_id: String,
    pub value: f64,
}

/// Immutable sparse user × item rating store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingsMatrix {
    users: Vec<String>,
    items: Vec<String>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
    // Rows sorted by item index, columns sorted by user index.
    by_user: Vec<Vec<(usize, f64)>>,
    by_item: Vec<Vec<(usize, f64)>>,
    len: usize,
}

impl RatingsMatrix {
    /// Builds a matrix over a fixed index from `(user, item, value)` entries.
    ///
    /// Later duplicates of a pair overwrite earlier ones.
    pub fn from_entries<I>(users: Vec<String>, items: Vec<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut map = BTreeMap::new();
        for (u, i, v) in entries {
            if u >= users.len() || i >= items.len() {
                return Err(Error::Argument(format!(
                    "entry ({u}, {i}) outside a {}x{} index",
                    users.len(),
                    items.len()
                )));
            }
            if !v.is_finite() {
                return Err(Error::Argument(format!("rating value {v} is not finite")));
            }
            map.insert((u, i), v);
        }
        Ok(Self::assemble(users, items, map))
    }

    fn assemble(users: Vec<String>, items: Vec<String>, map: BTreeMap<(usize, usize), f64>) -> Self {
        let mut by_user = vec![Vec::new(); users.len()];
        let mut by_item = vec![Vec::new(); items.len()];
        for (&(u, i), &v) in &map {
            by_user[u].push((i, v));
            by_item[i].push((u, v));
        }
        let user_lookup = users.iter().enumerate().map(|(k, id)| (id.clone(), k)).collect();
        let item_lookup = items.iter().enumerate().map(|(k, id)| (id.clone(), k)).collect();
        Self {
            users,
            items,
            user_lookup,
            item_lookup,
            by_user,
            by_item,
            len: map.len(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Number of stored entries.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_lookup.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_lookup.get(id).copied()
    }

    /// Ratings of user `u` as `(item, value)`, sorted by item.
    pub fn user_row(&self, u: usize) -> &[(usize, f64)] {
        &self.by_user[u]
    }

    /// Ratings of item `i` as `(user, value)`, sorted by user.
    pub fn item_column(&self, i: usize) -> &[(usize, f64)] {
        &self.by_item[i]
    }

    pub fn rating(&self, u: usize, i: usize) -> Option<f64> {
        let row = &self.by_user[u];
        row.binary_search_by_key(&i, |&(item, _)| item)
            .ok()
            .map(|k| row[k].1)
    }

    /// All entries in `(user, item)` order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.by_user
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(i, v)| (u, i, v)))
    }

    pub fn ratings(&self) -> impl Iterator<Item = Rating> + '_ {
        self.entries().map(|(u, i, v)| Rating {
            user_id: self.users[u].clone(),
            item_id: self.items[i].clone(),
            value: v,
        })
    }

    pub fn user_mean(&self, u: usize) -> Option<f64> {
        mean(&self.by_user[u])
    }

    pub fn item_mean(&self, i: usize) -> Option<f64> {
        mean(&self.by_item[i])
    }

    pub fn global_mean(&self) -> Option<f64> {
        if self.len == 0 {
            return None;
        }
        Some(self.entries().map(|(_, _, v)| v).sum::<f64>() / self.len as f64)
    }

    /// Smallest and largest stored rating.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.entries().map(|(_, _, v)| v).fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

fn mean(values: &[(usize, f64)]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().map(|&(_, v)| v).sum::<f64>() / values.len() as f64)
    }
}

/// Incrementally ingests rating triples with last-write-wins de-duplication.
#[derive(Debug, Default)]
pub struct RatingsBuilder {
    users: Vec<String>,
    items: Vec<String>,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
    entries: BTreeMap<(usize, usize), f64>,
    duplicates: usize,
}

impl RatingsBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, user: &str, item: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Argument(format!("rating value {value} is not finite")));
        }
        let u = intern(&mut self.users, &mut self.user_lookup, user);
        let i = intern(&mut self.items, &mut self.item_lookup, item);
        if self.entries.insert((u, i), value).is_some() {
            self.duplicates += 1;
        }
        Ok(())
    }

    /// Number of pairs overwritten so far.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn build(self) -> RatingsMatrix {
        RatingsMatrix::assemble(self.users, self.items, self.entries)
    }
}

fn intern(ids: &mut Vec<String>, lookup: &mut HashMap<String, usize>, id: &str) -> usize {
    if let Some(&k) = lookup.get(id) {
        return k;
    }
    ids.push(id.to_owned());
    lookup.insert(id.to_owned(), ids.len() - 1);
    ids.len() - 1
}

/// A line that could not be ingested.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

/// Result of reading a ratings file.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub matrix: RatingsMatrix,
    pub duplicates: usize,
    pub malformed: Vec<LineError>,
}

/// Reads a comma- or tab-separated `user,item,rating` file.
///
/// A first line whose rating field is not numeric is treated as a header.
/// Malformed lines are skipped and reported with their line numbers.
pub fn load_ratings(path: impl AsRef<Path>) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let report = read_ratings(BufReader::new(file)).map_err(|e| Error::io(path, e))?;
    if report.duplicates > 0 {
        warn!("{}: {} duplicate user/item pairs, kept the last value", path.display(), report.duplicates);
    }
    if !report.malformed.is_empty() {
        warn!("{}: skipped {} malformed lines", path.display(), report.malformed.len());
        for e in &report.malformed {
            warn!("{}:{}: {}", path.display(), e.line, e.message);
        }
    }
    Ok(report)
}

/// Parses ratings from any buffered reader. See [`load_ratings`].
pub fn read_ratings<R: BufRead>(reader: R) -> std::io::Result<LoadReport> {
    let mut builder = RatingsBuilder::new();
    let mut malformed = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse_line(trimmed) {
            Ok((user, item, value)) => {
                if let Err(e) = builder.push(user, item, value) {
                    malformed.push(LineError {
                        line: lineno,
                        message: e.to_string(),
                    });
                }
            }
            Err(_) if lineno == 1 => {} // header
            Err(message) => malformed.push(LineError { line: lineno, message }),
        }
    }
    let duplicates = builder.duplicates();
    Ok(LoadReport {
        matrix: builder.build(),
        duplicates,
        malformed,
    })
}

fn parse_line(line: &str) -> std::result::Result<(&str, &str, f64), String> {
    let delimiter = if line.contains('\t') { '\t' } else { ',' };
    let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 fields, found {}", fields.len()));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err("empty user or item id".to_owned());
    }
    let value: f64 = fields[2]
        .parse()
        .map_err(|_| format!("rating '{}' is not a number", fields[2]))?;
    if !value.is_finite() {
        return Err(format!("rating '{}' is not finite", fields[2]));
    }
    Ok((fields[0], fields[1], value))
}

/// Writes `user,item,rating` rows (with header) in index order.
pub fn write_ratings(matrix: &RatingsMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_ratings_to(matrix, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_ratings_to<W: Write>(matrix: &RatingsMatrix, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "user,item,rating")?;
    for r in matrix.ratings() {
        writeln!(out, "{},{},{}", r.user_id, r.item_id, r.value)?;
    }
    Ok(())
}

/// Disjoint train/test partition of a ratings matrix.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: RatingsMatrix,
    pub test: RatingsMatrix,
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl DatasetSplit {
    /// Writes the two halves as ratings files.
    pub fn write(&self, train_path: impl AsRef<Path>, test_path: impl AsRef<Path>) -> Result<()> {
        write_ratings(&self.train, train_path)?;
        write_ratings(&self.test, test_path)
    }
}

/// Uniform per-rating holdout. `|test| = round(fraction × |entries|)`.
pub fn split(matrix: &RatingsMatrix, holdout_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    if matrix.is_empty() {
        return Err(Error::Argument("cannot split an empty ratings matrix".to_owned()));
    }
    let mut entries: Vec<(usize, usize, f64)> = matrix.entries().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    let n_test = (holdout_fraction * entries.len() as f64).round() as usize;
    let train_entries = entries.split_off(n_test);
    let test = RatingsMatrix::from_entries(matrix.users.clone(), matrix.items.clone(), entries)?;
    let train = RatingsMatrix::from_entries(matrix.users.clone(), matrix.items.clone(), train_entries)?;
    Ok(DatasetSplit {
        train,
        test,
        seed,
        holdout_fraction,
    })
}
