//! Rating data: loading, entity indexing and chronological splitting.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: rating out of scale: {rating} not in [{min}, {max}]")]
    OutOfScale {
        line: usize,
        rating: f64,
        min: f64,
        max: f64,
    },
    #[error("rating file {0} contains no ratings")]
    Empty(String),
    #[error("invalid rating scale [{0}, {1}]")]
    InvalidScale(f64, f64),
    #[error("split needs at least 2 ratings, dataset has {0}")]
    TooSmallToSplit(usize),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
}

/// Users or items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    User,
    Item,
}

impl EntityKind {
    pub fn other(self) -> Self {
        match self {
            EntityKind::User => EntityKind::Item,
            EntityKind::Item => EntityKind::User,
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityKind::User => f.write_str("user"),
            EntityKind::Item => f.write_str("item"),
        }
    }
}

/// Closed interval of valid ratings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Result<Self, DataError> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(DataError::InvalidScale(min, max));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        Self { min: 1.0, max: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingTriple {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: i64,
}

impl RatingTriple {
    pub fn new(user: impl Into<String>, item: impl Into<String>, rating: f64, timestamp: i64) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
            rating,
            timestamp,
        }
    }
}

/// Options for [`load_ratings_with`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub scale: RatingScale,
    pub delimiter: char,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            scale: RatingScale::default(),
            delimiter: ',',
        }
    }
}

/// Ratings of one domain or system, with dense user and item indices.
///
/// Indices are assigned in first-appearance order and never change after
/// construction. Datasets produced by [`chronological_split`] keep the
/// parent's indices so both halves agree on entity positions.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    triples: Vec<RatingTriple>,
    users: IndexSet<String>,
    items: IndexSet<String>,
    scale: RatingScale,
    user_counts: Vec<usize>,
    item_counts: Vec<usize>,
    indexed: Vec<(usize, usize, f64)>,
}

impl RatingDataset {
    /// Builds a dataset from raw triples, validating the scale and collapsing
    /// duplicate (user, item) pairs to the one with the latest timestamp.
    pub fn from_triples(raw: Vec<RatingTriple>, scale: RatingScale) -> Result<Self, DataError> {
        for (i, t) in raw.iter().enumerate() {
            if !t.rating.is_finite() || !scale.contains(t.rating) {
                return Err(DataError::OutOfScale {
                    line: i + 1,
                    rating: t.rating,
                    min: scale.min,
                    max: scale.max,
                });
            }
        }
        let mut users = IndexSet::new();
        let mut items = IndexSet::new();
        let mut slot: HashMap<(String, String), usize> = HashMap::new();
        let mut triples: Vec<RatingTriple> = Vec::with_capacity(raw.len());
        for t in raw {
            users.insert(t.user.clone());
            items.insert(t.item.clone());
            match slot.get(&(t.user.clone(), t.item.clone())) {
                // later lines win timestamp ties
                Some(&pos) => {
                    if t.timestamp >= triples[pos].timestamp {
                        triples[pos] = t;
                    }
                }
                None => {
                    slot.insert((t.user.clone(), t.item.clone()), triples.len());
                    triples.push(t);
                }
            }
        }
        Ok(Self::assemble(triples, users, items, scale))
    }

    fn assemble(
        triples: Vec<RatingTriple>,
        users: IndexSet<String>,
        items: IndexSet<String>,
        scale: RatingScale,
    ) -> Self {
        let mut user_counts = vec![0; users.len()];
        let mut item_counts = vec![0; items.len()];
        let indexed = triples
            .iter()
            .map(|t| {
                let u = users.get_index_of(&t.user).expect("user indexed");
                let i = items.get_index_of(&t.item).expect("item indexed");
                user_counts[u] += 1;
                item_counts[i] += 1;
                (u, i, t.rating)
            })
            .collect();
        Self {
            triples,
            users,
            items,
            scale,
            user_counts,
            item_counts,
            indexed,
        }
    }

    /// Subset of this dataset's triples sharing this dataset's indices.
    fn subset(&self, triples: Vec<RatingTriple>) -> Self {
        Self::assemble(triples, self.users.clone(), self.items.clone(), self.scale)
    }

    pub fn triples(&self) -> &[RatingTriple] {
        &self.triples
    }

    /// `(user index, item index, rating)` for every triple, in triple order.
    pub fn indexed(&self) -> &[(usize, usize, f64)] {
        &self.indexed
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &IndexSet<String> {
        &self.users
    }

    pub fn items(&self) -> &IndexSet<String> {
        &self.items
    }

    pub fn index(&self, kind: EntityKind) -> &IndexSet<String> {
        match kind {
            EntityKind::User => &self.users,
            EntityKind::Item => &self.items,
        }
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.get_index_of(id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.get_index_of(id)
    }

    /// Number of ratings referencing `entity`; zero for unknown ids.
    pub fn rating_count(&self, entity: &str, kind: EntityKind) -> usize {
        match kind {
            EntityKind::User => self.users.get_index_of(entity).map_or(0, |i| self.user_counts[i]),
            EntityKind::Item => self.items.get_index_of(entity).map_or(0, |i| self.item_counts[i]),
        }
    }

    /// Per-index rating counts for one entity kind.
    pub fn counts(&self, kind: EntityKind) -> &[usize] {
        match kind {
            EntityKind::User => &self.user_counts,
            EntityKind::Item => &self.item_counts,
        }
    }

    pub fn mean_rating(&self) -> Option<f64> {
        if self.triples.is_empty() {
            None
        } else {
            Some(self.triples.iter().map(|t| t.rating).sum::<f64>() / self.triples.len() as f64)
        }
    }

    /// Writes the triples in the same line format accepted by [`load_ratings`].
    pub fn write_to(&self, path: &Path, delimiter: char) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for t in &self.triples {
            writeln!(
                out,
                "{}{d}{}{d}{}{d}{}",
                t.user,
                t.item,
                t.rating,
                t.timestamp,
                d = delimiter
            )?;
        }
        out.flush()
    }
}

/// Loads a rating file with the default comma delimiter.
pub fn load_ratings(path: &Path, scale: RatingScale) -> Result<RatingDataset, DataError> {
    load_ratings_with(
        path,
        &LoadOptions {
            scale,
            ..LoadOptions::default()
        },
    )
}

/// Loads a rating file of `user,item,rating[,timestamp]` lines.
///
/// Blank lines and lines starting with `#` are skipped. When the timestamp
/// column is missing the line number stands in for it.
pub fn load_ratings_with(path: &Path, opts: &LoadOptions) -> Result<RatingDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let raw = parse_ratings(&text, opts)?;
    if raw.is_empty() {
        return Err(DataError::Empty(path.display().to_string()));
    }
    RatingDataset::from_triples(raw, opts.scale)
}

pub fn parse_ratings(text: &str, opts: &LoadOptions) -> Result<Vec<RatingTriple>, DataError> {
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split(opts.delimiter).map(str::trim).collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 3 or 4 columns, found {}", cols.len()),
            });
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(DataError::Parse {
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        let rating: f64 = cols[2].parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("bad rating {:?}", cols[2]),
        })?;
        let timestamp = match cols.get(3) {
            Some(ts) => ts.parse::<i64>().map_err(|_| DataError::Parse {
                line: line_no,
                message: format!("bad timestamp {:?}", ts),
            })?,
            None => line_no as i64,
        };
        if !rating.is_finite() || !opts.scale.contains(rating) {
            return Err(DataError::OutOfScale {
                line: line_no,
                rating,
                min: opts.scale.min,
                max: opts.scale.max,
            });
        }
        raw.push(RatingTriple::new(cols[0], cols[1], rating, timestamp));
    }
    Ok(raw)
}

/// Splits ratings into early (train) and late (test) parts.
///
/// Triples are ordered by timestamp, then by `(user, item)` id; the first
/// `floor(train_fraction * len)` go to the training half.
pub fn chronological_split(
    d: &RatingDataset,
    train_fraction: f64,
) -> Result<(RatingDataset, RatingDataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    if d.len() < 2 {
        return Err(DataError::TooSmallToSplit(d.len()));
    }
    let mut sorted = d.triples.clone();
    sorted.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.user.cmp(&b.user))
            .then_with(|| a.item.cmp(&b.item))
    });
    let cut = (train_fraction * sorted.len() as f64).floor() as usize;
    let test = sorted.split_off(cut);
    Ok((d.subset(sorted), d.subset(test)))
}
