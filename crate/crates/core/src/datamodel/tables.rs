//! Trial tables, fold assignments and the per-item matrices built on them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Repeats shown per item in a complete presentation schedule.
pub const FULL_REPEATS: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub item_id: u64,
    pub session_id: u32,
    pub repeat_index: u8,
}

/// One participant's trials. Row `r` of the response matrix belongs to the
/// trial with `trial_id == r`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialTable {
    trials: Vec<Trial>,
}

impl TrialTable {
    /// Builds a table, checking that trial ids are `0..n` in order, that
    /// repeat indices are below 3 and that `(item_id, repeat_index)` pairs
    /// are unique.
    pub fn new(trials: Vec<Trial>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(trials.len());
        for (row, t) in trials.iter().enumerate() {
            if t.trial_id != row {
                return Err(Error::InvalidInput(format!(
                    "trial at row {row} has trial_id {}",
                    t.trial_id
                )));
            }
            if t.repeat_index >= FULL_REPEATS {
                return Err(Error::InvalidInput(format!(
                    "trial {} has repeat_index {} (must be < {FULL_REPEATS})",
                    t.trial_id, t.repeat_index
                )));
            }
            if !seen.insert((t.item_id, t.repeat_index)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate (item {}, repeat {})",
                    t.item_id, t.repeat_index
                )));
            }
        }
        Ok(Self { trials })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Number of trials per item.
    pub fn repeat_counts(&self) -> BTreeMap<u64, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.trials {
            *counts.entry(t.item_id).or_insert(0) += 1;
        }
        counts
    }

    pub fn item_ids(&self) -> BTreeSet<u64> {
        self.trials.iter().map(|t| t.item_id).collect()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let trials = reader
            .deserialize::<Trial>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(trials).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut writer = csv::Writer::from_path(path)?;
        for t in &self.trials {
            writer.serialize(t)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Val,
    Test,
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fold::Train => "train",
            Fold::Val => "val",
            Fold::Test => "test",
        })
    }
}

impl FromStr for Fold {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Fold::Train),
            "val" => Ok(Fold::Val),
            "test" => Ok(Fold::Test),
            other => Err(Error::InvalidInput(format!("unknown fold `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldEntry {
    pub fold: Fold,
    pub shared: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldRow {
    item_id: u64,
    fold: Fold,
    shared: bool,
}

/// Fold label per item. A `BTreeMap` keeps item order (and hence every
/// derived file) deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FoldAssignment {
    entries: BTreeMap<u64, FoldEntry>,
}

impl FoldAssignment {
    pub fn from_entries(entries: BTreeMap<u64, FoldEntry>) -> Self {
        Self { entries }
    }

    pub fn get(&self, item_id: u64) -> Option<FoldEntry> {
        self.entries.get(&item_id).copied()
    }

    pub fn fold_of(&self, item_id: u64) -> Option<Fold> {
        self.get(item_id).map(|e| e.fold)
    }

    pub fn entries(&self) -> &BTreeMap<u64, FoldEntry> {
        &self.entries
    }

    /// Items of one fold, ascending.
    pub fn items(&self, fold: Fold) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|(_, e)| e.fold == fold)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Rows (trial ids) of `trials` whose item falls in `fold`.
    pub fn trial_rows(&self, trials: &TrialTable, fold: Fold) -> Vec<usize> {
        trials
            .trials()
            .iter()
            .filter(|t| self.fold_of(t.item_id) == Some(fold))
            .map(|t| t.trial_id)
            .collect()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut entries = BTreeMap::new();
        for row in reader.deserialize::<FoldRow>() {
            let row = row?;
            let entry = FoldEntry {
                fold: row.fold,
                shared: row.shared,
            };
            if entries.insert(row.item_id, entry).is_some() {
                return Err(Error::format(path, format!("item {} listed twice", row.item_id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut writer = csv::Writer::from_path(path)?;
        for (&item_id, e) in &self.entries {
            writer.serialize(FoldRow {
                item_id,
                fold: e.fold,
                shared: e.shared,
            })?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Rows keyed by item id, ascending. Used for target embeddings and for
/// repeat-averaged predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemMatrix {
    pub item_ids: Vec<u64>,
    pub values: Array2<f32>,
}

impl ItemMatrix {
    pub fn new(item_ids: Vec<u64>, values: Array2<f32>) -> Result<Self> {
        if item_ids.len() != values.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} item ids for {} rows",
                item_ids.len(),
                values.nrows()
            )));
        }
        if item_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "item ids must be strictly ascending".into(),
            ));
        }
        Ok(Self { item_ids, values })
    }

    pub fn row_of(&self, item_id: u64) -> Option<usize> {
        self.item_ids.binary_search(&item_id).ok()
    }

    pub fn row(&self, item_id: u64) -> Option<ArrayView1<'_, f32>> {
        self.row_of(item_id).map(|r| self.values.row(r))
    }

    /// Sub-matrix for `items` in the given order.
    pub fn select(&self, items: &[u64]) -> Result<Array2<f32>> {
        let mut out = Array2::zeros((items.len(), self.values.ncols()));
        for (r, &id) in items.iter().enumerate() {
            let src = self
                .row(id)
                .ok_or_else(|| Error::InvalidInput(format!("item {id} has no row")))?;
            out.row_mut(r).assign(&src);
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ItemRow {
    item_id: u64,
}

/// Single-column `item_id` CSV, used for target row order and shared-item
/// lists.
pub fn read_item_ids(path: &Path) -> Result<Vec<u64>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize::<ItemRow>()
        .map(|r| r.map(|r| r.item_id).map_err(Error::from))
        .collect()
}

pub fn write_item_ids(path: &Path, ids: &[u64]) -> Result<()> {
    ensure_parent(path)?;
    let mut writer = csv::Writer::from_path(path)?;
    for &item_id in ids {
        writer.serialize(ItemRow { item_id })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}
