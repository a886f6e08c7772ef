//! Progressive growing schedule.

/// Number of growth stages.
pub const STAGES: usize = 4;

/// Voxel resolution of stage 0.
const BASE_RESOLUTION: usize = 8;

/// Point count of stage 0 for the point critic.
const BASE_POINTS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthStage {
    pub index: usize,
    /// Blend weight of the newest block.
    pub alpha: f64,
}

impl GrowthStage {
    pub fn first() -> Self {
        Self { index: 0, alpha: 1.0 }
    }

    pub fn resolution(&self) -> usize {
        BASE_RESOLUTION << self.index
    }

    pub fn point_count(&self) -> usize {
        BASE_POINTS << self.index
    }
}

/// Equal-length stages with a linear fade-in over the first part of each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GrowthSchedule {
    Progressive {
        total_steps: usize,
        /// Fraction of a stage spent fading in.
        fade_fraction: f64,
    },
    /// Stays at one stage with the newest block fully blended in.
    Fixed(usize),
}

impl GrowthSchedule {
    pub fn progressive(total_steps: usize) -> Self {
        GrowthSchedule::Progressive {
            total_steps,
            fade_fraction: 0.5,
        }
    }

    pub fn stage_at(&self, step: usize) -> GrowthStage {
        match *self {
            GrowthSchedule::Fixed(index) => GrowthStage {
                index: index.min(STAGES - 1),
                alpha: 1.0,
            },
            GrowthSchedule::Progressive {
                total_steps,
                fade_fraction,
            } => {
                let len = (total_steps / STAGES).max(1);
                let index = (step / len).min(STAGES - 1);
                if index == 0 {
                    return GrowthStage { index, alpha: 1.0 };
                }
                let into = (step - index * len) as f64;
                let fade = fade_fraction * len as f64;
                let alpha = if fade <= 0.0 { 1.0 } else { (into / fade).min(1.0) };
                GrowthStage { index, alpha }
            }
        }
    }

    /// Stage for `step`, never moving backwards from `current`.
    pub fn grow(&self, current: GrowthStage, step: usize) -> GrowthStage {
        let next = self.stage_at(step);
        if next.index < current.index || (next.index == current.index && next.alpha < current.alpha) {
            current
        } else {
            next
        }
    }

    /// First step of every stage.
    pub fn boundaries(&self) -> Vec<usize> {
        match *self {
            GrowthSchedule::Fixed(_) => vec![0],
            GrowthSchedule::Progressive { total_steps, .. } => {
                let len = (total_steps / STAGES).max(1);
                (0..STAGES).map(|k| k * len).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_resets_alpha_and_doubles_resolution() {
        let s = GrowthSchedule::progressive(400);
        let before = s.stage_at(99);
        let at = s.stage_at(100);
        assert_eq!(before.index, 0);
        assert_eq!(at.index, 1);
        assert_eq!(at.alpha, 0.0);
        assert_eq!(at.resolution(), 2 * before.resolution());
        assert_eq!(s.stage_at(125).alpha, 0.5);
        assert_eq!(s.stage_at(150).alpha, 1.0);
    }

    #[test]
    fn final_stage_saturates() {
        let s = GrowthSchedule::progressive(400);
        for step in [300, 350, 399, 400, 10_000] {
            let g = s.stage_at(step);
            assert_eq!(g.index, 3);
            if step >= 350 {
                assert_eq!(g.alpha, 1.0);
            }
        }
        assert_eq!(s.stage_at(10_000).resolution(), 64);
    }

    #[test]
    fn four_stages() {
        let s = GrowthSchedule::progressive(2000);
        assert_eq!(s.boundaries(), vec![0, 500, 1000, 1500]);
        let res: Vec<usize> = s.boundaries().iter().map(|&b| s.stage_at(b).resolution()).collect();
        assert_eq!(res, vec![8, 16, 32, 64]);
        let pts: Vec<usize> = s.boundaries().iter().map(|&b| s.stage_at(b).point_count()).collect();
        assert_eq!(pts, vec![512, 1024, 2048, 4096]);
    }

    #[test]
    fn alpha_monotone_within_stage() {
        let s = GrowthSchedule::progressive(1000);
        let mut cur = s.stage_at(0);
        for step in 1..1000 {
            let next = s.grow(cur, step);
            if next.index == cur.index {
                assert!(next.alpha >= cur.alpha);
            }
            cur = next;
        }
    }
}
