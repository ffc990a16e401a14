use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Feature channels inside the base network.
    pub channels: usize,
    /// Residual blocks.
    pub blocks: usize,
    /// Local controllable connections; each spans `blocks / groups` consecutive blocks.
    pub groups: usize,
    pub image_channels: usize,
    /// Length of the condition vector.
    pub condition_dim: usize,
}

impl ArchConfig {
    /// 64 channels, 32 blocks, one connection per block, 2-D condition.
    pub fn full() -> Self {
        Self {
            channels: 64,
            blocks: 32,
            groups: 32,
            image_channels: 3,
            condition_dim: 2,
        }
    }

    /// 32 channels, 8 blocks, one connection per block.
    pub fn desk() -> Self {
        Self {
            channels: 32,
            blocks: 8,
            groups: 8,
            image_channels: 3,
            condition_dim: 2,
        }
    }

    /// 8 channels, 2 blocks; small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            channels: 8,
            blocks: 2,
            groups: 2,
            image_channels: 3,
            condition_dim: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::InvalidArch(reason));
        if self.channels == 0 || self.channels % 4 != 0 {
            return bad(format!("channels {} must be a positive multiple of 4", self.channels));
        }
        if self.blocks == 0 || self.groups == 0 || self.blocks % self.groups != 0 {
            return bad(format!("groups {} must divide blocks {}", self.groups, self.blocks));
        }
        if !(self.image_channels == 1 || self.image_channels == 3) {
            return bad(format!("image_channels {} must be 1 or 3", self.image_channels));
        }
        if self.condition_dim == 0 {
            return bad("condition_dim must be positive".into());
        }
        Ok(())
    }

    pub fn blocks_per_group(&self) -> usize {
        self.blocks / self.groups
    }

    /// Fields as `(name, value)` pairs, for manifest comparison.
    pub fn fields(&self) -> [(&'static str, usize); 5] {
        [
            ("channels", self.channels),
            ("blocks", self.blocks),
            ("groups", self.groups),
            ("image_channels", self.image_channels),
            ("condition_dim", self.condition_dim),
        ]
    }

    /// First field that differs from `expected`, as `(name, expected, found)`.
    pub fn first_difference(&self, expected: &ArchConfig) -> Option<(&'static str, usize, usize)> {
        self.fields()
            .into_iter()
            .zip(expected.fields())
            .find(|((_, a), (_, b))| a != b)
            .map(|((name, found), (_, exp))| (name, exp, found))
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}
