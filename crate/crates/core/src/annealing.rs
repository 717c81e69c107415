//! Annealing schedules for the Sinkhorn regularization strength during
//! training: epsilon starts high and decays toward a floor, refining the
//! learned cost coarse-to-fine.

use serde::{Deserialize, Serialize};

use crate::error::{GwError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Geometric,
    Staircase,
}

/// Schedule of epsilon over training steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub kind: ScheduleKind,
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_steps: usize,
    /// Step from which epsilon is held at eps_end; defaults to decay_steps.
    #[serde(default)]
    pub floor_after: Option<usize>,
}

/// Number of held levels in the staircase schedule.
const STAIRCASE_LEVELS: usize = 5;

impl AnnealSchedule {
    pub fn new(
        kind: ScheduleKind,
        eps_start: f64,
        eps_end: f64,
        decay_steps: usize,
        floor_after: Option<usize>,
    ) -> Result<Self> {
        let s = AnnealSchedule {
            kind,
            eps_start,
            eps_end,
            decay_steps,
            floor_after,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(eps: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant, eps, eps, 1, None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_end > 0.0) || !(self.eps_start >= self.eps_end) {
            return Err(GwError::invalid(format!(
                "schedule requires eps_start >= eps_end > 0, got start={} end={}",
                self.eps_start, self.eps_end
            )));
        }
        if self.decay_steps < 1 {
            return Err(GwError::invalid("schedule requires decay_steps >= 1"));
        }
        Ok(())
    }

    /// Epsilon at a given step. Non-increasing in `step`; equals eps_start at
    /// step 0 and eps_end from decay_steps (or floor_after) onward.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        if let Some(floor) = self.floor_after {
            if step >= floor {
                return self.eps_end;
            }
        }
        match self.kind {
            ScheduleKind::Constant => self.eps_start,
            ScheduleKind::Geometric => {
                let p = step.min(self.decay_steps) as f64 / self.decay_steps as f64;
                self.eps_start * (self.eps_end / self.eps_start).powf(p)
            }
            ScheduleKind::Staircase => {
                let p = step.min(self.decay_steps) as f64 / self.decay_steps as f64;
                let quantized = if p >= 1.0 {
                    1.0
                } else {
                    (p * STAIRCASE_LEVELS as f64).floor() / STAIRCASE_LEVELS as f64
                };
                self.eps_start * (self.eps_end / self.eps_start).powf(quantized)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric(start: f64, end: f64, steps: usize) -> AnnealSchedule {
        AnnealSchedule::new(ScheduleKind::Geometric, start, end, steps, None).unwrap()
    }

    #[test]
    fn boundaries() {
        let s = geometric(1.0, 0.01, 100);
        assert_eq!(s.epsilon_at(0), 1.0);
        assert_eq!(s.epsilon_at(100), 0.01);
        assert_eq!(s.epsilon_at(5000), 0.01);
    }

    #[test]
    fn geometric_midpoint() {
        let s = geometric(1.0, 0.01, 100);
        assert!((s.epsilon_at(50) - 0.1).abs() <= 1e-12);
    }

    #[test]
    fn constant_ignores_step() {
        let s = AnnealSchedule::constant(0.3).unwrap();
        assert_eq!(s.epsilon_at(0), 0.3);
        assert_eq!(s.epsilon_at(999), 0.3);
    }

    #[test]
    fn staircase_holds_levels_and_ends_at_floor() {
        let s = AnnealSchedule::new(ScheduleKind::Staircase, 1.0, 0.01, 100, None).unwrap();
        assert_eq!(s.epsilon_at(0), 1.0);
        assert_eq!(s.epsilon_at(10), 1.0); // first held level
        assert_eq!(s.epsilon_at(20), s.epsilon_at(39));
        assert_eq!(s.epsilon_at(100), 0.01);
        let mut distinct: Vec<f64> = (0..=100).map(|t| s.epsilon_at(t)).collect();
        distinct.dedup();
        assert_eq!(distinct.len(), STAIRCASE_LEVELS + 1);
    }

    #[test]
    fn monotone_non_increasing() {
        for s in [
            geometric(2.0, 0.05, 37),
            AnnealSchedule::new(ScheduleKind::Staircase, 2.0, 0.05, 37, None).unwrap(),
            AnnealSchedule::constant(0.5).unwrap(),
        ] {
            let mut prev = f64::INFINITY;
            for t in 0..80 {
                let e = s.epsilon_at(t);
                assert!(e <= prev + 1e-15, "kind {:?} step {t}", s.kind);
                prev = e;
            }
        }
    }

    #[test]
    fn floor_after_truncates_early() {
        let s = AnnealSchedule::new(ScheduleKind::Geometric, 1.0, 0.01, 100, Some(10)).unwrap();
        assert!(s.epsilon_at(9) > 0.01);
        assert_eq!(s.epsilon_at(10), 0.01);
    }

    #[test]
    fn invalid_fields_rejected() {
        assert!(AnnealSchedule::new(ScheduleKind::Geometric, 0.01, 1.0, 10, None).is_err());
        assert!(AnnealSchedule::new(ScheduleKind::Geometric, 1.0, 0.0, 10, None).is_err());
        assert!(AnnealSchedule::new(ScheduleKind::Geometric, 1.0, 0.1, 0, None).is_err());
    }
}
