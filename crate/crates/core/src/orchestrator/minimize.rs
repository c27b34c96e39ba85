use super::ddmin::{ddmin, one_minimal};
use super::CrashReport;
use super::{
    execute_sequence, Detection, ExecResult, FuzzSequence, Observation, OrchestratorError, Target,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MinimizeOptions {
    /// Also shrink the bytes of each surviving frame.
    pub bytes: bool,
}

/// Runs `seq` on a freshly reset target.
pub(crate) fn run_fresh(
    target: &mut dyn Target,
    seq: &FuzzSequence,
    obs: &Observation,
) -> Result<(ExecResult, Option<String>), OrchestratorError> {
    target.reset()?;
    let result = execute_sequence(seq, target.addr(), obs);
    let bug = if result.outcome.is_ok() {
        None
    } else {
        target.reported_bug()
    };
    Ok((result, bug))
}

/// Shrinks a crashing sequence: step-level ddmin, a single-removal pass, then
/// optionally byte-level ddmin on each frame. A candidate counts as crashing
/// when it is non-ok and, if the target reports bug ids, hits the same bug.
pub fn minimize(
    seq: &FuzzSequence,
    target: &mut dyn Target,
    obs: &Observation,
    opts: MinimizeOptions,
) -> Result<FuzzSequence, OrchestratorError> {
    seq.validate()?;
    let (first, bug) = run_fresh(target, seq, obs)?;
    if first.outcome.is_ok() {
        return Err(OrchestratorError::NotCrashing);
    }

    // An immediate crash does not need the delayed-death window to show.
    let obs = if first.failed_step.is_some() {
        obs.quick()
    } else {
        obs.clone()
    };
    let mut error = None;
    let mut crashes = |candidate: &FuzzSequence| -> bool {
        if error.is_some() || candidate.is_empty() {
            return false;
        }
        match run_fresh(target, candidate, &obs) {
            Ok((r, b)) => !r.outcome.is_ok() && b == bug,
            Err(e) => {
                error = Some(e);
                false
            }
        }
    };

    let indices: Vec<usize> = (0..seq.len()).collect();
    let kept = ddmin(&indices, |keep| crashes(&seq.subset(keep)));
    let kept = one_minimal(&kept, |keep| crashes(&seq.subset(keep)));
    let mut out = seq.subset(&kept);

    if opts.bytes {
        for i in 0..out.len() {
            let frame = out.steps[i].frame.clone();
            let shrunk = ddmin(&frame, |bytes| {
                let mut candidate = out.clone();
                candidate.steps[i].frame = bytes.to_vec();
                crashes(&candidate)
            });
            out.steps[i].frame = shrunk;
        }
    }
    match error {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayResult {
    pub reproduced: bool,
    pub attempts: u32,
}

/// Re-runs a report's sequence on a fresh target up to `attempts` times.
pub fn replay(
    report: &CrashReport,
    target: &mut dyn Target,
    attempts: u32,
    obs: &Observation,
) -> Result<ReplayResult, OrchestratorError> {
    for attempt in 1..=attempts {
        let (result, _) = run_fresh(target, &report.sequence, obs)?;
        if Detection::of(result.outcome) == Some(report.detection) {
            return Ok(ReplayResult {
                reproduced: true,
                attempts: attempt,
            });
        }
    }
    Ok(ReplayResult {
        reproduced: false,
        attempts,
    })
}
