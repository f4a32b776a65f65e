use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WARMUP: u64 = 10_000;
/// Constant rates a fine-tuning run may pick from.
pub const LR_GRID: [f64; 3] = [0.001, 0.0005, 0.0001];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum LrSchedule {
    /// `1 / √max(step, warmup)`.
    InverseSqrt {
        warmup: u64,
    },
    Constant {
        value: f64,
    },
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        match *self {
            Self::InverseSqrt { warmup } => 1.0 / (step.max(warmup).max(1) as f64).sqrt(),
            Self::Constant { value } => value,
        }
    }

    /// Rejects constant rates outside [`LR_GRID`].
    pub fn check_grid(&self) -> Result<()> {
        match *self {
            Self::Constant { value } if !LR_GRID.contains(&value) => Err(Error::Config(format!(
                "constant learning rate {value} is not one of {LR_GRID:?}"
            ))),
            _ => Ok(()),
        }
    }
}

pub fn lr_at(step: u64, schedule: &LrSchedule) -> f64 {
    schedule.lr_at(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_inverse_sqrt() {
        let c = LrSchedule::Constant { value: 0.001 };
        assert!([1, 7, 100_000].iter().all(|&s| lr_at(s, &c) == 0.001));
        let inv = LrSchedule::InverseSqrt { warmup: DEFAULT_WARMUP };
        assert_eq!(inv.lr_at(1), 0.01);
        assert_eq!(inv.lr_at(10_000), 0.01);
        assert_eq!(inv.lr_at(40_000) / inv.lr_at(10_000), 0.5);
        assert_eq!(inv.lr_at(160_000) / inv.lr_at(40_000), 0.5);
    }

    #[test]
    fn grid_check() {
        assert!(LrSchedule::Constant { value: 0.0005 }.check_grid().is_ok());
        assert!(LrSchedule::Constant { value: 0.01 }.check_grid().is_err());
        assert!(LrSchedule::InverseSqrt { warmup: 5 }.check_grid().is_ok());
    }
}
