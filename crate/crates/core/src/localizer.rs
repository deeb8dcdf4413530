//! Greedy inference walks, the oscillation centroid and evaluation metrics.
//!
//! A walk takes `ceil(steps / 3)` step-sequences of greedy partial actions
//! (or `steps` six-way actions for the single-policy baselines). The agent
//! ends up oscillating around the landmark, so the estimate is the mean of
//! the last `L` visited positions.

use std::collections::BTreeSet;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::approximator::{Head, Mode, Network};
use crate::learner::{sample_start, EpisodeTrace, TraceStep, TrainConfig};
use crate::mdp::{transition, Action, Axis, Sign};
use crate::volume::{extract_state, Position, Volume};
use crate::{Error, Result};

/// A deterministic policy used at inference time.
pub trait Walker {
    /// Whether the walker acts by step-sequences of partial actions. Such a
    /// walker is asked for the axis `Axis::ALL[step % 3]` at every step.
    fn partial(&self) -> bool;

    fn greedy_action(&self, volume: &Volume, q: Position, step: usize) -> Result<Action>;
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Walker for Network<f32> {
    fn partial(&self) -> bool {
        self.mode() == Mode::Partial
    }

    fn greedy_action(&self, volume: &Volume, q: Position, step: usize) -> Result<Action> {
        let state = extract_state(volume, q, self.config().window);
        let head = match self.mode() {
            Mode::Partial => Head::PartialPolicy(Axis::ALL[step % 3]),
            Mode::ActorCritic => Head::Policy,
            Mode::QLearning => Head::Q,
        };
        let out = self.evaluate::<ChaCha8Rng>(state.as_slice(), &[head], None)?;
        let pick = argmax(&out[0]);
        Ok(match head {
            Head::PartialPolicy(axis) => Action::new(axis, if pick == 0 { Sign::Plus } else { Sign::Minus }),
            _ => Action::ALL[pick],
        })
    }
}

/// The analytic sign policy: along each axis move `+` iff the landmark lies
/// strictly above the current coordinate. Reads the volume's first landmark.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePolicy;

impl Walker for OraclePolicy {
    fn partial(&self) -> bool {
        true
    }

    fn greedy_action(&self, volume: &Volume, q: Position, step: usize) -> Result<Action> {
        let (_, p) = volume
            .primary_landmark()
            .ok_or_else(|| Error::config("landmarks", "oracle needs a landmark"))?;
        let axis = Axis::ALL[step % 3];
        let i = axis.index();
        Ok(Action::new(axis, if p[i] > q[i] as f64 { Sign::Plus } else { Sign::Minus }))
    }
}

/// Walk parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkConfig {
    pub steps: usize,
    pub last: usize,
    pub eta: i64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            steps: 300,
            last: 10,
            eta: 2,
        }
    }
}

/// Total number of moves a walker makes for a step budget.
pub fn walk_length<W: Walker + ?Sized>(walker: &W, steps: usize) -> usize {
    if walker.partial() {
        steps.div_ceil(3) * 3
    } else {
        steps
    }
}

/// Greedy walk from `start`. Rewards are recorded in the trace only when the
/// volume has a landmark; the walker never sees them.
pub fn walk<W: Walker + ?Sized>(
    walker: &W,
    volume: &Volume,
    start: Position,
    cfg: &WalkConfig,
) -> Result<EpisodeTrace> {
    let target = volume.primary_landmark().map(|(_, p)| p);
    let start = crate::volume::clamp_position(start, volume.dims());
    let mut trace = EpisodeTrace::new(0, start);
    let mut q = start;
    for step in 0..walk_length(walker, cfg.steps) {
        let action = walker.greedy_action(volume, q, step)?;
        let next = transition(q, action, cfg.eta, volume.dims());
        let reward = target.map_or(0, |p| crate::mdp::reward(q, next, p));
        trace.push(TraceStep {
            position: next,
            action,
            reward,
        });
        q = next;
    }
    Ok(trace)
}

/// Mean of the last `last` positions of a walk (fewer when the walk is
/// shorter; the start counts as a position).
pub fn centroid(trace: &EpisodeTrace, last: usize) -> [f64; 3] {
    let positions: Vec<Position> = trace.positions().collect();
    let tail = &positions[positions.len().saturating_sub(last.max(1))..];
    let n = tail.len() as f64;
    [0, 1, 2].map(|i| tail.iter().map(|p| p[i] as f64).sum::<f64>() / n)
}

/// Localize from one start and return the oscillation centroid.
pub fn localize<W: Walker + ?Sized>(
    walker: &W,
    volume: &Volume,
    start: Position,
    cfg: &WalkConfig,
) -> Result<[f64; 3]> {
    Ok(centroid(&walk(walker, volume, start, cfg)?, cfg.last))
}

/// A set of voxels making up a region-type target.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegionMask {
    voxels: BTreeSet<Position>,
}

impl RegionMask {
    pub fn new(voxels: impl IntoIterator<Item = Position>) -> Self {
        RegionMask {
            voxels: voxels.into_iter().collect(),
        }
    }

    /// Whether the voxel nearest to `p` belongs to the region.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.voxels.contains(&p.map(|c| c.round() as i64))
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Point([f64; 3]),
    Region(RegionMask),
}

/// One volume to evaluate on. A case without ground truth is skipped.
#[derive(Clone, Debug)]
pub struct EvalCase<'a> {
    pub volume_id: String,
    pub landmark: String,
    pub volume: &'a Volume,
    pub target: Option<Target>,
}

/// One case per volume, targeting its first landmark.
pub fn cases_from_volumes(volumes: &[Volume]) -> Result<Vec<EvalCase<'_>>> {
    Ok(volumes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let gt = v.primary_landmark();
            EvalCase {
                volume_id: format!("{i:03}"),
                landmark: gt.map_or_else(String::new, |(n, _)| n.to_string()),
                volume: v,
                target: gt.map(|(_, p)| Target::Point(p)),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub starts: usize,
    pub walk: WalkConfig,
    /// Starts are sampled at least `window / 2` voxels from every face.
    pub window: usize,
    pub workers: usize,
    pub seed: u64,
}

impl EvalSettings {
    /// Evaluation settings implied by a training configuration.
    pub fn from_train(cfg: &TrainConfig) -> Self {
        EvalSettings {
            starts: cfg.eval.starts,
            walk: WalkConfig {
                steps: cfg.eval.steps,
                last: cfg.eval.last,
                eta: cfg.eta,
            },
            window: cfg.window(),
            workers: cfg.eval.workers,
            seed: cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
        }
    }

    /// Start positions for case `index`; independent of the worker count.
    pub fn starts_for(&self, index: usize, dims: [usize; 3]) -> Vec<Position> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        (0..self.starts).map(|_| sample_start(dims, self.window, &mut rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub volume_id: String,
    pub landmark: String,
    /// Mean of the per-start estimates.
    pub estimate: [f64; 3],
    pub start_estimates: Vec<[f64; 3]>,
    /// Point targets: distance from the estimate to the landmark.
    pub error_mm: Option<f64>,
    pub error_vox: Option<f64>,
    /// Region targets: whether the aggregate estimate is inside, and the
    /// fraction of starts whose estimate fell outside.
    pub inside_region: Option<bool>,
    pub start_failure: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    /// Point-target cases.
    pub count: usize,
    pub mean_mm: f64,
    /// Sample standard deviation (0 for a single case).
    pub sd_mm: f64,
    pub median_mm: f64,
    pub mean_vox: f64,
    pub median_vox: f64,
    /// Region-target cases and their start failure percentage.
    pub region_count: usize,
    pub failure_pct: Option<f64>,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub cases: Vec<CaseResult>,
    pub summary: Summary,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Recompute the summary statistics from per-case rows.
pub fn summarize(cases: &[CaseResult], skipped: usize) -> Summary {
    let mut mm: Vec<f64> = cases.iter().filter_map(|c| c.error_mm).collect();
    let mut vox: Vec<f64> = cases.iter().filter_map(|c| c.error_vox).collect();
    let failures: Vec<f64> = cases.iter().filter_map(|c| c.start_failure).collect();
    let n = mm.len();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mean_mm = mean(&mm);
    let sd_mm = if n > 1 {
        (mm.iter().map(|e| (e - mean_mm).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else if n == 1 {
        0.0
    } else {
        f64::NAN
    };
    Summary {
        count: n,
        mean_mm,
        sd_mm,
        median_mm: median(&mut mm),
        mean_vox: mean(&vox),
        median_vox: median(&mut vox),
        region_count: failures.len(),
        failure_pct: (!failures.is_empty()).then(|| 100.0 * mean(&failures)),
        skipped,
    }
}

fn evaluate_case<W: Walker + ?Sized>(
    walker: &W,
    index: usize,
    case: &EvalCase<'_>,
    target: &Target,
    settings: &EvalSettings,
) -> Result<CaseResult> {
    let starts = settings.starts_for(index, case.volume.dims());
    let estimates = starts
        .iter()
        .map(|&s| localize(walker, case.volume, s, &settings.walk))
        .collect::<Result<Vec<_>>>()?;
    let n = estimates.len() as f64;
    let estimate = [0, 1, 2].map(|i| estimates.iter().map(|e| e[i]).sum::<f64>() / n);
    let mut result = CaseResult {
        volume_id: case.volume_id.clone(),
        landmark: case.landmark.clone(),
        estimate,
        start_estimates: estimates.clone(),
        error_mm: None,
        error_vox: None,
        inside_region: None,
        start_failure: None,
    };
    match target {
        Target::Point(p) => {
            let spacing = case.volume.spacing();
            let d = |scale: [f64; 3]| {
                (0..3).map(|i| ((estimate[i] - p[i]) * scale[i]).powi(2)).sum::<f64>().sqrt()
            };
            result.error_mm = Some(d(spacing));
            result.error_vox = Some(d([1.0; 3]));
        }
        Target::Region(mask) => {
            let outside = estimates.iter().filter(|e| !mask.contains(**e)).count();
            result.inside_region = Some(mask.contains(estimate));
            result.start_failure = Some(outside as f64 / n);
        }
    }
    Ok(result)
}

/// Localize every case from `settings.starts` seeded starts and aggregate.
/// Cases without ground truth are skipped and counted.
pub fn evaluate<W: Walker + Sync + ?Sized>(
    walker: &W,
    cases: &[EvalCase<'_>],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if settings.starts == 0 {
        return Err(Error::config("eval.starts", "must be positive"));
    }
    let jobs: Vec<(usize, &EvalCase<'_>, &Target)> = cases
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.target.as_ref().map(|t| (i, c, t)))
        .collect();
    let skipped = cases.len() - jobs.len();
    if skipped > 0 {
        log::warn!("{skipped} evaluation case(s) without ground truth skipped");
    }
    let workers = settings.workers.clamp(1, jobs.len().max(1));
    let mut results: Vec<Option<Result<CaseResult>>> = (0..jobs.len()).map(|_| None).collect();
    if workers == 1 {
        for (slot, &(i, c, t)) in results.iter_mut().zip(&jobs) {
            *slot = Some(evaluate_case(walker, i, c, t, settings));
        }
    } else {
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|scope| {
            for (slots, part) in results.chunks_mut(chunk).zip(jobs.chunks(chunk)) {
                scope.spawn(move || {
                    for (slot, &(i, c, t)) in slots.iter_mut().zip(part) {
                        *slot = Some(evaluate_case(walker, i, c, t, settings));
                    }
                });
            }
        });
    }
    let cases = results
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&cases, skipped);
    Ok(EvalReport { cases, summary })
}

/// Report CSV: `volume_id,landmark,err_mm,inside_region`. The column that
/// does not apply to a row's target type is left empty.
pub fn write_report_csv<W: Write>(report: &EvalReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "volume_id,landmark,err_mm,inside_region")?;
    for c in &report.cases {
        let err = c.error_mm.map(|e| e.to_string()).unwrap_or_default();
        let inside = c.inside_region.map(|b| b.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{err},{inside}", c.volume_id, c.landmark)?;
    }
    Ok(())
}
