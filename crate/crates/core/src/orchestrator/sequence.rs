use serde::{Deserialize, Serialize};

use super::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub lane: u8,
    pub frame: Vec<u8>,
    pub pre_delay_ms: u64,
}

impl Step {
    pub fn new(frame: Vec<u8>) -> Self {
        Step {
            lane: 0,
            frame,
            pre_delay_ms: 0,
        }
    }

    pub fn on_lane(mut self, lane: u8) -> Self {
        self.lane = lane;
        self
    }
}

/// Ordered steps; with `parallel` set, each lane runs concurrently.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FuzzSequence {
    pub steps: Vec<Step>,
    pub parallel: bool,
}

impl FuzzSequence {
    pub fn single(frame: Vec<u8>) -> Self {
        FuzzSequence::serial(vec![frame])
    }

    pub fn serial(frames: Vec<Vec<u8>>) -> Self {
        FuzzSequence {
            steps: frames.into_iter().map(Step::new).collect(),
            parallel: false,
        }
    }

    /// One frame per lane, all sent at once.
    pub fn parallel(frames: Vec<Vec<u8>>) -> Self {
        FuzzSequence {
            steps: frames
                .into_iter()
                .enumerate()
                .map(|(i, f)| Step::new(f).on_lane(i as u8))
                .collect(),
            parallel: true,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn lanes(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.lane as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.steps.is_empty() {
            return Err(OrchestratorError::InvalidSequence("no steps".into()));
        }
        let mut used = vec![false; self.lanes()];
        for s in &self.steps {
            used[s.lane as usize] = true;
        }
        if used.contains(&false) {
            return Err(OrchestratorError::InvalidSequence(
                "lanes are not contiguous from 0".into(),
            ));
        }
        Ok(())
    }

    /// The steps at `keep`, with lanes renumbered so they stay contiguous.
    pub fn subset(&self, keep: &[usize]) -> FuzzSequence {
        let mut steps: Vec<Step> = keep.iter().map(|&i| self.steps[i].clone()).collect();
        let mut lanes: Vec<u8> = steps.iter().map(|s| s.lane).collect();
        lanes.sort_unstable();
        lanes.dedup();
        for s in &mut steps {
            s.lane = lanes.binary_search(&s.lane).unwrap() as u8;
        }
        FuzzSequence {
            steps,
            parallel: self.parallel && lanes.len() > 1,
        }
    }

    /// Serial concatenation; concurrency of parallel parts is lost.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a FuzzSequence>) -> FuzzSequence {
        FuzzSequence {
            steps: parts
                .into_iter()
                .flat_map(|p| p.steps.iter().cloned())
                .map(|s| s.on_lane(0))
                .collect(),
            parallel: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_renumbers_lanes() {
        let seq = FuzzSequence::parallel(vec![vec![1], vec![2], vec![3]]);
        assert_eq!(seq.lanes(), 3);
        let sub = seq.subset(&[0, 2]);
        assert_eq!(
            sub.steps.iter().map(|s| s.lane).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert!(sub.parallel);
        let one = seq.subset(&[2]);
        assert_eq!(one.steps[0].lane, 0);
        assert!(!one.parallel);
        one.validate().unwrap();
    }

    #[test]
    fn validation() {
        assert!(FuzzSequence::serial(vec![]).validate().is_err());
        let mut gap = FuzzSequence::single(vec![1]);
        gap.steps[0].lane = 1;
        assert!(gap.validate().is_err());
    }
}
