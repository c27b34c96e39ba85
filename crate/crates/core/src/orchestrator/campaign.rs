use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exec::observe;
use super::minimize::run_fresh;
use super::{
    bucket, execute_sequence, minimize, mix_seed, probe_liveness, CampaignConfig, CrashReport,
    Detection, ExecResult, FuzzSequence, Liveness, MinimizeOptions, Observation, OrchestratorError,
    Target,
};
use crate::codec::{parse_frame, Profile};
use crate::mutate::{havoc_with, structural_candidates, HavocOptions, Origin, SeedCorpus};

/// Executions kept for triage are also capped by count.
const HISTORY_CAP: usize = 50_000;
const MAX_HAVOC_DEPTH: usize = 4;

#[derive(Debug, Clone, Default)]
pub struct CampaignReport {
    pub executions: u64,
    /// Executions that ended non-ok.
    pub detections: u64,
    /// Detections that triage could not reproduce.
    pub unconfirmed: u64,
    pub reports: Vec<CrashReport>,
    pub report_paths: Vec<PathBuf>,
    pub buckets: BTreeSet<String>,
    pub elapsed: Duration,
    /// The target stopped coming back after a crash.
    pub target_lost: bool,
}

impl CampaignReport {
    pub fn throughput(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            self.executions as f64 / secs
        } else {
            0.0
        }
    }
}

struct Generator {
    seeds: Vec<Vec<u8>>,
    structural: Vec<Vec<u8>>,
    lanes: usize,
    max_steps: usize,
    rng_seed: u64,
}

impl Generator {
    fn new(cfg: &CampaignConfig, corpus: &SeedCorpus) -> Self {
        let seeds: Vec<Vec<u8>> = corpus.entries.iter().map(|e| e.bytes.clone()).collect();
        let mut structural = Vec::new();
        if cfg.structural {
            let mut seen: HashSet<Vec<u8>> = seeds.iter().cloned().collect();
            for entry in corpus.entries.iter().filter(|e| e.origin == Origin::Parsed) {
                let Ok(msg) = parse_frame(&entry.bytes) else {
                    continue;
                };
                for c in structural_candidates(&msg, &Profile::default()) {
                    if seen.insert(c.clone()) {
                        structural.push(c);
                    }
                }
            }
        }
        Generator {
            seeds,
            structural,
            lanes: cfg.lanes as usize,
            max_steps: cfg.max_steps,
            rng_seed: cfg.rng_seed,
        }
    }

    fn frame(&self, rng: &mut ChaCha8Rng) -> Vec<u8> {
        let base = if !self.structural.is_empty() && rng.gen_bool(0.3) {
            &self.structural[rng.gen_range(0..self.structural.len())]
        } else {
            &self.seeds[rng.gen_range(0..self.seeds.len())]
        };
        let donor = &self.seeds[rng.gen_range(0..self.seeds.len())];
        let depth = rng.gen_range(1..=MAX_HAVOC_DEPTH);
        let opts = HavocOptions {
            preserve_magic: rng.gen_bool(0.9),
        };
        havoc_with(base, Some(donor), rng.gen(), depth, opts)
    }

    /// Execution `index`: structural candidates first, then havoc sequences.
    fn sequence(&self, index: u64) -> FuzzSequence {
        if let Some(c) = self.structural.get(index as usize) {
            return FuzzSequence::single(c.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.rng_seed, index));
        let roll = rng.gen_range(0..8);
        if self.lanes >= 2 && roll == 0 {
            let frames = (0..self.lanes).map(|_| self.frame(&mut rng)).collect();
            FuzzSequence::parallel(frames)
        } else if self.max_steps >= 2 && roll <= 2 {
            let n = rng.gen_range(2..=self.max_steps);
            FuzzSequence::serial((0..n).map(|_| self.frame(&mut rng)).collect())
        } else {
            FuzzSequence::single(self.frame(&mut rng))
        }
    }
}

struct Executed {
    seq: FuzzSequence,
    at: Instant,
}

/// Write-ahead log: each sequence is on disk before it is sent.
struct SequenceLog(BufWriter<File>);

impl SequenceLog {
    fn open(cfg: &CampaignConfig) -> Result<Self, OrchestratorError> {
        fs::create_dir_all(&cfg.workdir)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(cfg.workdir.join("sequences.log"))?;
        Ok(SequenceLog(BufWriter::new(file)))
    }

    fn record(&mut self, index: u64, seq: &FuzzSequence) -> std::io::Result<()> {
        write!(self.0, "exec={index} parallel={}", seq.parallel)?;
        for s in &seq.steps {
            write!(
                self.0,
                " {}:{}:{}",
                s.lane,
                s.pre_delay_ms,
                hex::encode(&s.frame)
            )?;
        }
        writeln!(self.0)?;
        self.0.flush()
    }
}

/// Runs a campaign against `target`, writing one report per new bucket under
/// `<workdir>/reports`.
pub fn run_campaign(
    cfg: &CampaignConfig,
    corpus: &SeedCorpus,
    target: &mut dyn Target,
) -> Result<CampaignReport, OrchestratorError> {
    cfg.validate()?;
    let mut report = CampaignReport::default();
    if cfg.max_execs == 0 {
        return Ok(report);
    }
    if corpus.is_empty() {
        return Err(crate::mutate::CorpusError::Empty("seed corpus".into()).into());
    }
    let obs = cfg.observation();
    let quick = obs.quick();
    if probe_liveness(target.addr(), &obs) == Liveness::Dead {
        return Err(OrchestratorError::TargetUnreachable(
            target.addr().to_string(),
        ));
    }

    let started = Instant::now();
    let generator = Generator::new(cfg, corpus);
    let mut log = SequenceLog::open(cfg)?;
    let reports_dir = cfg.workdir.join("reports");
    let mut history: VecDeque<Executed> = VecDeque::new();

    for index in 0..cfg.max_execs {
        let seq = generator.sequence(index);
        log.record(index, &seq)?;
        let at = Instant::now();
        let mut result = execute_sequence(&seq, target.addr(), &quick);
        report.executions += 1;
        if index + 1 == cfg.max_execs && result.outcome.is_ok() {
            // The last executions still get their delayed-death window.
            result.outcome = observe(target.addr(), &obs, Instant::now()).0;
        }
        history.push_back(Executed { seq, at });
        while history.len() > HISTORY_CAP
            || history
                .front()
                .is_some_and(|e| at.duration_since(e.at) > obs.window + obs.timeout)
        {
            history.pop_front();
        }
        if result.outcome.is_ok() {
            continue;
        }

        report.detections += 1;
        let history_vec: Vec<Executed> = history.drain(..).collect();
        let found = match triage(target, &history_vec, &obs, cfg) {
            Ok(found) => found,
            Err(OrchestratorError::TargetUnreachable(_)) => {
                // Nothing restarts the target: keep what was running when it died.
                report.target_lost = true;
                report.unconfirmed += 1;
                if let Some(crash) = crash_report(
                    history_vec[history_vec.len() - 1].seq.clone(),
                    &result,
                    None,
                    cfg,
                ) {
                    if report.buckets.insert(crash.bucket.clone()) {
                        report.report_paths.push(crash.write_to(&reports_dir)?);
                        report.reports.push(crash);
                    }
                }
                break;
            }
            Err(e) => return Err(e),
        };
        match found {
            Some(crash) => {
                if report.buckets.insert(crash.bucket.clone()) {
                    report.report_paths.push(crash.write_to(&reports_dir)?);
                    report.reports.push(crash);
                }
            }
            None => report.unconfirmed += 1,
        }
        if target.reset().is_err() {
            report.target_lost = true;
            break;
        }
        if cfg.stop_on_crash && !report.reports.is_empty() {
            break;
        }
    }
    report.elapsed = started.elapsed();
    Ok(report)
}

/// Turns a detection into a minimized, classified report, or `None` when it
/// does not reproduce on a fresh target.
fn triage(
    target: &mut dyn Target,
    history: &[Executed],
    obs: &Observation,
    cfg: &CampaignConfig,
) -> Result<Option<CrashReport>, OrchestratorError> {
    let Some(current) = history.last() else {
        return Ok(None);
    };
    let candidate = if !run_fresh(target, &current.seq, &obs.quick())?
        .0
        .outcome
        .is_ok()
    {
        current.seq.clone()
    } else {
        match locate(target, history, obs)? {
            Some(seq) => seq,
            None => return Ok(None),
        }
    };

    let minimal = if candidate.len() > 1 || cfg.minimize_bytes {
        let opts = MinimizeOptions {
            bytes: cfg.minimize_bytes,
        };
        match minimize(&candidate, target, obs, opts) {
            Ok(seq) => seq,
            Err(OrchestratorError::NotCrashing) => return Ok(None),
            Err(e) => return Err(e),
        }
    } else {
        candidate
    };

    let (result, bug_id) = run_fresh(target, &minimal, obs)?;
    Ok(crash_report(minimal, &result, bug_id, cfg))
}

fn crash_report(
    sequence: FuzzSequence,
    result: &ExecResult,
    bug_id: Option<String>,
    cfg: &CampaignConfig,
) -> Option<CrashReport> {
    let detection = Detection::of(result.outcome)?;
    let mut crash = CrashReport {
        sequence,
        detection,
        latency_ms: result.latency.as_millis() as u64,
        bug_id,
        bucket: String::new(),
        timestamp_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
        config: cfg.to_pairs(),
    };
    crash.bucket = bucket(&crash);
    Some(crash)
}

/// Forward gallop steps tried before bisecting the prefix range.
const PREFIX_GALLOP_LIMIT: usize = 8;

/// The crash did not come from the last execution alone. Replay the history
/// to see when the target dies, find the shortest failing prefix, then the
/// latest start that still fails within it.
fn locate(
    target: &mut dyn Target,
    history: &[Executed],
    obs: &Observation,
) -> Result<Option<FuzzSequence>, OrchestratorError> {
    target.reset()?;
    let quick = obs.quick();
    let origin = Instant::now();
    let mut sent_at = Vec::with_capacity(history.len());
    let mut died = None;
    for (k, e) in history.iter().enumerate() {
        sent_at.push(origin.elapsed());
        if !execute_sequence(&e.seq, target.addr(), &quick)
            .outcome
            .is_ok()
        {
            died = Some((k, origin.elapsed()));
            break;
        }
    }
    let (end, died_at) = match died {
        Some(d) => d,
        None => {
            if observe(target.addr(), obs, Instant::now()).0.is_ok() {
                return Ok(None);
            }
            (history.len() - 1, origin.elapsed())
        }
    };

    let margin = obs.probe_interval * 2 + obs.timeout / 4;
    // Replays history[from..=to]. If a step in the range caused the death
    // seen above, the target dies about died_at - sent_at[from] into the
    // run, and no later than died_at - sent_at[to] after its last step; an
    // ok verdict waits out both bounds plus slack.
    let mut run = |from: usize, to: usize| -> Result<bool, OrchestratorError> {
        let parts: Vec<&FuzzSequence> = history[from..=to].iter().map(|e| &e.seq).collect();
        let seq = if parts.len() == 1 {
            parts[0].clone()
        } else {
            FuzzSequence::concat(parts)
        };
        target.reset()?;
        let start = Instant::now();
        if !execute_sequence(&seq, target.addr(), &quick)
            .outcome
            .is_ok()
        {
            return Ok(true);
        }
        let since_start = died_at.saturating_sub(sent_at[from]).mul_f64(1.25) + margin;
        let after_last = died_at.saturating_sub(sent_at[to]) + margin;
        let wait = since_start
            .saturating_sub(start.elapsed())
            .max(after_last)
            .min(obs.window);
        let watch = obs.clone().with_window(wait);
        Ok(!observe(target.addr(), &watch, Instant::now()).0.is_ok())
    };

    // Shortest failing prefix [0..=p]; the full history is known to fail.
    let mut ok_below = None::<usize>;
    let mut p = end;
    let mut m = 0;
    while m < end && m < PREFIX_GALLOP_LIMIT {
        if run(0, m)? {
            p = m;
            break;
        }
        ok_below = Some(m);
        m = 2 * m + 1;
    }
    if p == end {
        let mut lo = ok_below.map_or(0, |x| x + 1);
        while lo < p {
            let mid = lo + (p - lo) / 2;
            if run(0, mid)? {
                p = mid;
            } else {
                lo = mid + 1;
            }
        }
    }

    // Latest q with [q..=p] failing: gallop back from p, then bisect.
    let mut ok_at = p + 1;
    let mut step = 1;
    let mut fail_at = None;
    loop {
        let q = (p + 1).saturating_sub(step);
        if run(q, p)? {
            fail_at = Some(q);
            break;
        }
        ok_at = q;
        if q == 0 {
            break;
        }
        step *= 2;
    }
    let Some(mut q) = fail_at else {
        return Ok(None);
    };
    while ok_at - q > 1 {
        let mid = q + (ok_at - q) / 2;
        if run(mid, p)? {
            q = mid;
        } else {
            ok_at = mid;
        }
    }

    // q and p are both needed. Try the pair before the whole range.
    if q == p {
        return Ok(Some(history[p].seq.clone()));
    }
    if q + 1 < p {
        let pair = FuzzSequence::concat([&history[q].seq, &history[p].seq]);
        target.reset()?;
        if !execute_sequence(&pair, target.addr(), obs).outcome.is_ok() {
            return Ok(Some(pair));
        }
    }
    Ok(Some(FuzzSequence::concat(
        history[q..=p].iter().map(|e| &e.seq),
    )))
}
