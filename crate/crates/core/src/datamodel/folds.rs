use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tables::{Fold, FoldAssignment, FoldEntry, TrialTable, FULL_REPEATS};
use crate::error::{Error, Result};

/// Number of fully repeated items placed in the validation and test folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSizes {
    pub val_items: usize,
    pub test_items: usize,
}

impl Default for FoldSizes {
    fn default() -> Self {
        Self {
            val_items: 1000,
            test_items: 1000,
        }
    }
}

/// Splits with the default 1000/1000 validation and test sizes.
pub fn split_folds(
    trials: &TrialTable,
    shared_items: &BTreeSet<u64>,
    seed: u64,
) -> Result<FoldAssignment> {
    split_folds_with(trials, shared_items, FoldSizes::default(), seed)
}

/// Assigns every item to exactly one fold.
///
/// Shared items with all three repeats go to Test; the remaining Test slots
/// and all Val slots are drawn (seeded) from the other three-repeat items.
/// Items with fewer than three repeats always train.
pub fn split_folds_with(
    trials: &TrialTable,
    shared_items: &BTreeSet<u64>,
    sizes: FoldSizes,
    seed: u64,
) -> Result<FoldAssignment> {
    if trials.is_empty() {
        return Err(Error::InvalidInput("trial table is empty".into()));
    }
    let counts = trials.repeat_counts();
    let full: Vec<u64> = counts
        .iter()
        .filter(|(_, &n)| n >= FULL_REPEATS as usize)
        .map(|(&id, _)| id)
        .collect();
    let required = sizes.val_items + sizes.test_items;
    if full.len() < required {
        return Err(Error::InsufficientRepeats {
            required,
            found: full.len(),
        });
    }

    let (shared_full, mut others): (Vec<u64>, Vec<u64>) =
        full.iter().partition(|id| shared_items.contains(id));
    if shared_full.len() > sizes.test_items {
        return Err(Error::InvalidInput(format!(
            "{} fully repeated shared items exceed the test fold size {}",
            shared_full.len(),
            sizes.test_items
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    others.shuffle(&mut rng);

    let test_extra = sizes.test_items - shared_full.len();
    let mut entries: BTreeMap<u64, FoldEntry> = counts
        .keys()
        .map(|&id| {
            (
                id,
                FoldEntry {
                    fold: Fold::Train,
                    shared: shared_items.contains(&id),
                },
            )
        })
        .collect();
    let test = shared_full.iter().chain(&others[..test_extra]);
    for id in test {
        entries.get_mut(id).expect("item from table").fold = Fold::Test;
    }
    for id in &others[test_extra..test_extra + sizes.val_items] {
        entries.get_mut(id).expect("item from table").fold = Fold::Val;
    }
    Ok(FoldAssignment::from_entries(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::tables::Trial;

    /// `shared` 3-repeat shared items, `other` 3-repeat items, `partial`
    /// items with 1 or 2 repeats.
    fn table(shared: u64, other: u64, partial: u64) -> (TrialTable, BTreeSet<u64>) {
        let mut trials = Vec::new();
        let mut push = |item_id: u64, repeats: u8| {
            for r in 0..repeats {
                trials.push(Trial {
                    trial_id: trials.len(),
                    item_id,
                    session_id: (trials.len() / 500) as u32,
                    repeat_index: r,
                });
            }
        };
        for id in 0..shared {
            push(id, 3);
        }
        for id in shared..shared + other {
            push(id, 3);
        }
        for id in shared + other..shared + other + partial {
            push(id, 1 + (id % 2) as u8);
        }
        (TrialTable::new(trials).unwrap(), (0..shared).collect())
    }

    #[test]
    fn forced_shared_items_fill_test() {
        let (t, shared) = table(413, 1587, 500);
        let f = split_folds(&t, &shared, 7).unwrap();
        let test = f.items(Fold::Test);
        let val = f.items(Fold::Val);
        let train = f.items(Fold::Train);
        assert_eq!(test.len(), 1000);
        assert_eq!(val.len(), 1000);
        assert_eq!(train.len(), 500);
        assert_eq!(test.iter().filter(|id| shared.contains(id)).count(), 413);
        assert!(val.iter().all(|id| !shared.contains(id)));
        assert!(train.iter().all(|&id| id >= 2000));
        let counts = t.repeat_counts();
        assert!(test.iter().chain(&val).all(|id| counts[id] == 3));
        assert!(f.get(0).unwrap().shared);
        assert!(!f.get(500).unwrap().shared);
    }

    #[test]
    fn deterministic_given_seed() {
        let (t, shared) = table(413, 1800, 50);
        assert_eq!(
            split_folds(&t, &shared, 3).unwrap(),
            split_folds(&t, &shared, 3).unwrap()
        );
        assert_ne!(
            split_folds(&t, &shared, 3).unwrap(),
            split_folds(&t, &shared, 4).unwrap()
        );
    }

    #[test]
    fn two_repeat_items_are_insufficient() {
        let mut trials = Vec::new();
        for id in 0..3000u64 {
            for r in 0..2u8 {
                trials.push(Trial {
                    trial_id: trials.len(),
                    item_id: id,
                    session_id: 0,
                    repeat_index: r,
                });
            }
        }
        let t = TrialTable::new(trials).unwrap();
        let err = split_folds(&t, &BTreeSet::new(), 0).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientRepeats {
                required: 2000,
                found: 0
            }
        ));
    }

    #[test]
    fn partial_shared_item_trains() {
        let (t, _) = table(0, 20, 4);
        let shared: BTreeSet<u64> = [20, 0].into_iter().collect();
        let sizes = FoldSizes {
            val_items: 5,
            test_items: 5,
        };
        let f = split_folds_with(&t, &shared, sizes, 1).unwrap();
        assert_eq!(f.fold_of(20), Some(Fold::Train));
        assert!(f.get(20).unwrap().shared);
        assert_eq!(f.fold_of(0), Some(Fold::Test));
    }
}
