use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Offset added to every inference timestep, as in the SD scheduler configs.
pub const DEFAULT_STEPS_OFFSET: usize = 1;

/// Maps inference indices to training timesteps and records from which
/// index a run starts.
///
/// `start_index` counts how many of the final inference steps are run:
/// `0` runs nothing, `inference_steps` runs the full schedule from pure noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepPlan {
    train_steps: usize,
    inference_steps: usize,
    start_index: usize,
    timesteps: Vec<usize>,
}

impl TimestepPlan {
    /// "Leading" spacing: `t_i = (N-1-i)·⌊T/N⌋ + offset`, descending.
    ///
    /// The offset is reduced when it would push the first timestep past
    /// `T - 1`.
    pub fn leading(train_steps: usize, inference_steps: usize, steps_offset: usize) -> Result<Self> {
        if train_steps == 0 {
            return Err(CoreError::param("train_steps must be at least 1"));
        }
        if inference_steps > train_steps {
            return Err(CoreError::param(format!(
                "inference_steps {inference_steps} exceeds train_steps {train_steps}"
            )));
        }
        let timesteps = if inference_steps == 0 {
            Vec::new()
        } else {
            let ratio = train_steps / inference_steps;
            let top = (inference_steps - 1) * ratio;
            let offset = steps_offset.min(train_steps - 1 - top);
            (0..inference_steps).rev().map(|i| i * ratio + offset).collect()
        };
        Ok(Self {
            train_steps,
            inference_steps,
            start_index: inference_steps,
            timesteps,
        })
    }

    /// Plan with the default offset over `train_steps`.
    pub fn standard(train_steps: usize, inference_steps: usize) -> Result<Self> {
        Self::leading(train_steps, inference_steps, DEFAULT_STEPS_OFFSET)
    }

    pub fn with_start_index(mut self, start_index: usize) -> Result<Self> {
        if start_index > self.inference_steps {
            return Err(CoreError::param(format!(
                "start_index {start_index} exceeds inference_steps {}",
                self.inference_steps
            )));
        }
        self.start_index = start_index;
        Ok(self)
    }

    /// Image-to-image strength: runs `⌊N·strength⌋` of the final steps.
    pub fn with_strength(self, strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(CoreError::param(format!("strength must lie in [0, 1], got {strength}")));
        }
        let n = ((self.inference_steps as f64) * strength).floor() as usize;
        let n = n.min(self.inference_steps);
        self.with_start_index(n)
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    pub fn inference_steps(&self) -> usize {
        self.inference_steps
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    /// Every inference timestep, descending.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// The timesteps actually visited from `start_index` down.
    pub fn active(&self) -> &[usize] {
        &self.timesteps[self.inference_steps - self.start_index..]
    }

    /// Timestep the run is noised to, `None` for a zero-step run.
    pub fn start_timestep(&self) -> Option<usize> {
        self.active().first().copied()
    }

    /// Timestep of the inference step `n` steps before the end, the one a
    /// refinement of `n` steps is noised to.
    pub fn timestep_for_remaining(&self, n: usize) -> Option<usize> {
        if n == 0 || n > self.inference_steps {
            return None;
        }
        Some(self.timesteps[self.inference_steps - n])
    }

    pub fn is_from_pure_noise(&self) -> bool {
        self.start_index == self.inference_steps && self.inference_steps > 0
    }

    /// `(t, t_prev)` pairs of the active steps; the final pair has no
    /// successor, meaning the clean sample.
    pub fn step_pairs(&self) -> Vec<(usize, Option<usize>)> {
        let active = self.active();
        active
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, active.get(i + 1).copied()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fifty_steps_over_thousand() {
        let plan = TimestepPlan::standard(1000, 50).unwrap();
        assert_eq!(plan.timesteps().len(), 50);
        assert_eq!(plan.timesteps()[0], 981);
        assert_eq!(plan.timesteps()[49], 1);
        assert_eq!(plan.timestep_for_remaining(10), Some(181));
        assert!(plan.is_from_pure_noise());
    }

    #[test]
    fn start_index_selects_tail() {
        let plan = TimestepPlan::standard(1000, 50).unwrap().with_start_index(10).unwrap();
        assert_eq!(plan.active().len(), 10);
        assert_eq!(plan.start_timestep(), Some(181));
        let pairs = plan.step_pairs();
        assert_eq!(pairs[0], (181, Some(161)));
        assert_eq!(pairs[9], (1, None));
    }

    #[test]
    fn zero_start_has_no_steps() {
        let plan = TimestepPlan::standard(1000, 50).unwrap().with_start_index(0).unwrap();
        assert!(plan.active().is_empty());
        assert_eq!(plan.start_timestep(), None);
        assert!(!plan.is_from_pure_noise());
    }

    #[test]
    fn strength_floors_like_img2img() {
        let plan = TimestepPlan::standard(1000, 30).unwrap().with_strength(0.91).unwrap();
        assert_eq!(plan.start_index(), 27);
        assert!(TimestepPlan::standard(1000, 30).unwrap().with_strength(1.5).is_err());
    }

    #[test]
    fn invalid_plans_rejected() {
        assert!(TimestepPlan::standard(10, 11).is_err());
        assert!(TimestepPlan::standard(1000, 50).unwrap().with_start_index(51).is_err());
        assert!(TimestepPlan::standard(0, 0).is_err());
    }

    #[test]
    fn offset_is_clamped_when_every_timestep_is_used() {
        let plan = TimestepPlan::standard(10, 10).unwrap();
        assert_eq!(plan.timesteps(), &[9, 8, 7, 6, 5, 4, 3, 2, 1, 0]);
    }

    proptest! {
        #[test]
        fn timesteps_strictly_decrease_and_stay_in_range(t in 1usize..2000, frac in 0.0f64..=1.0) {
            let n = ((t as f64) * frac) as usize;
            let plan = TimestepPlan::standard(t, n).unwrap();
            prop_assert!(plan.timesteps().windows(2).all(|w| w[1] < w[0]));
            prop_assert!(plan.timesteps().iter().all(|&ts| ts < t));
        }
    }
}
