//! Data model: matrices, trial tables, fold splitting, noise-ceiling voxel
//! selection, session normalization and repeat averaging.

mod folds;
mod matrix;
mod noise_ceiling;
mod normalize;
mod tables;

use std::path::Path;

pub use folds::{split_folds, split_folds_with, FoldSizes};
pub use matrix::{read_matrix, read_matrix_meta, sidecar_path, write_matrix, MatrixF32, MatrixMeta};
pub use noise_ceiling::{compute_noise_ceiling, select_voxels};
pub use normalize::{average_repeats, normalize_by_session};
pub(crate) use tables::ensure_parent;
pub use tables::{
    read_item_ids, write_item_ids, Fold, FoldAssignment, FoldEntry, ItemMatrix, Trial, TrialTable,
    FULL_REPEATS,
};

use crate::error::{Error, Result};

/// Embedding width of the target space.
pub const EMBEDDING_DIM: usize = 512;

/// One participant's raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantDataset {
    pub participant_id: u32,
    /// trials x voxels
    pub responses: MatrixF32,
    /// items x embedding dim, rows keyed by item id
    pub targets: ItemMatrix,
    pub trials: TrialTable,
}

pub const RESPONSES_FILE: &str = "responses.f32";
pub const TARGETS_FILE: &str = "targets.f32";
pub const TARGET_ITEMS_FILE: &str = "target_items.csv";
pub const TRIALS_FILE: &str = "trials.csv";

impl ParticipantDataset {
    pub fn validate(&self) -> Result<()> {
        if self.responses.nrows() != self.trials.len() {
            return Err(Error::ShapeMismatch(format!(
                "participant {}: {} response rows for {} trials",
                self.participant_id,
                self.responses.nrows(),
                self.trials.len()
            )));
        }
        if let Some(t) = self
            .trials
            .trials()
            .iter()
            .find(|t| self.targets.row_of(t.item_id).is_none())
        {
            return Err(Error::InvalidInput(format!(
                "participant {}: trial {} references item {} without a target row",
                self.participant_id, t.trial_id, t.item_id
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.responses.ncols()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_matrix(&dir.join(RESPONSES_FILE), &self.responses, "responses")?;
        write_matrix(&dir.join(TARGETS_FILE), &self.targets.values, "targets")?;
        write_item_ids(&dir.join(TARGET_ITEMS_FILE), &self.targets.item_ids)?;
        self.trials.write_csv(&dir.join(TRIALS_FILE))
    }

    pub fn load(dir: &Path, participant_id: u32) -> Result<Self> {
        let (responses, _) = read_matrix(&dir.join(RESPONSES_FILE))?;
        let (targets, _) = read_matrix(&dir.join(TARGETS_FILE))?;
        let item_ids = read_item_ids(&dir.join(TARGET_ITEMS_FILE))?;
        let trials = TrialTable::read_csv(&dir.join(TRIALS_FILE))?;
        let ds = Self {
            participant_id,
            responses,
            targets: ItemMatrix::new(item_ids, targets)?,
            trials,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Directory name for a participant: `participant_01`, ...
pub fn participant_dir_name(participant_id: u32) -> String {
    format!("participant_{participant_id:02}")
}
