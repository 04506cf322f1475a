//! Simulation-versus-theory checks built from the pipeline, process and
//! theory modules.

use serde::{Deserialize, Serialize};

use crate::compress::{CompressorSpec, FactorPrecision};
use crate::pipeline::{run_trajectory, LoopModel, PipelineError, PipelineMode, RunSettings, TrajectoryRun};
use crate::process::{make_process, measure_stats_window, ProcessError, ProcessSpec, Trajectory};
use crate::rng::Rng;
use crate::theory::{self, BoundParams, TheoryError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

/// One seeded bound-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCase {
    pub process: ProcessSpec,
    pub codec: CompressorSpec,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Steps at the end of the run over which errors and statistics are averaged.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_warmup() -> usize {
    1
}

fn default_window() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The measured δ̂ is below the feedback stability threshold, so theory
    /// gives no finite bound; the simulation error is reported, not judged.
    UnstableByTheory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeCheck {
    pub mode: PipelineMode,
    pub delta_hat: f64,
    pub lipschitz_hat: f64,
    /// σ̂_a² for the naive bound, σ̂_Δ² for the feedback bound.
    pub sigma_sq_hat: f64,
    pub bound: Option<f64>,
    pub empirical: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundOutcome {
    pub case: BoundCase,
    pub naive: ModeCheck,
    pub feedback: ModeCheck,
}

impl BoundOutcome {
    pub fn passed(&self) -> bool {
        self.naive.status != CheckStatus::Fail && self.feedback.status != CheckStatus::Fail
    }
}

/// Runs naive and feedback pipelines in the closed loop and compares the
/// late-window mean error with the closed-form bounds evaluated at the
/// measured δ̂, L̂ and energies.
pub fn check_bounds(case: &BoundCase) -> Result<BoundOutcome, ExperimentError> {
    let traj = make_process(&case.process)?;
    let stats = measure_stats_window(
        &traj,
        1,
        &mut Rng::stream(case.process.seed, 0x70726f6265),
        case.window,
    );
    let run = |mode| {
        run_trajectory(
            &traj,
            &RunSettings {
                codec: case.codec,
                mode,
                warmup: case.warmup,
                loop_model: LoopModel::Closed,
                seed: case.process.seed,
            },
        )
    };
    let naive_run = run(PipelineMode::Naive)?;
    let fb_run = run(PipelineMode::ResidualWithFeedback)?;

    let naive_delta = naive_run.delta_hat(case.window);
    let naive_sigma = naive_run.mean_target_energy(case.window);
    let naive_bound = theory::v_naive(&BoundParams {
        delta: naive_delta,
        lipschitz: stats.lipschitz,
        sigma_a_sq: naive_sigma,
        sigma_delta_sq: stats.sigma_delta_sq,
    })?;
    let naive = judge(
        PipelineMode::Naive,
        naive_delta,
        stats.lipschitz,
        naive_sigma,
        Some(naive_bound),
        naive_run.late_total_error(case.window),
    );

    let fb_delta = fb_run.delta_hat(case.window);
    let fb_params = BoundParams {
        delta: fb_delta,
        lipschitz: stats.lipschitz,
        sigma_a_sq: naive_sigma,
        sigma_delta_sq: stats.sigma_delta_sq,
    };
    let fb_bound = match theory::v_residual(&fb_params) {
        Ok(v) => Some(v),
        Err(TheoryError::Unstable { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let feedback = judge(
        PipelineMode::ResidualWithFeedback,
        fb_delta,
        stats.lipschitz,
        stats.sigma_delta_sq,
        fb_bound,
        fb_run.late_total_error(case.window),
    );
    Ok(BoundOutcome {
        case: case.clone(),
        naive,
        feedback,
    })
}

fn judge(
    mode: PipelineMode,
    delta_hat: f64,
    lipschitz_hat: f64,
    sigma_sq_hat: f64,
    bound: Option<f64>,
    empirical: f64,
) -> ModeCheck {
    let status = match bound {
        None => CheckStatus::UnstableByTheory,
        Some(b) if empirical <= b => CheckStatus::Pass,
        Some(_) => CheckStatus::Fail,
    };
    ModeCheck {
        mode,
        delta_hat,
        lipschitz_hat,
        sigma_sq_hat,
        bound,
        empirical,
        status,
    }
}

/// The 50-run validation grid: L cycles through {0.3, 0.5, 0.7} and the codec
/// through {1-bit, 2-bit, rank-32 INT4 low-rank} on 64×64, 200-step processes
/// with σ_a² = 100, σ_Δ² = 1.
pub fn standard_bound_suite(runs: usize, base_seed: u64) -> Vec<BoundCase> {
    const LS: [f64; 3] = [0.3, 0.5, 0.7];
    const CODECS: [CompressorSpec; 3] = [
        CompressorSpec::Sign1Bit,
        CompressorSpec::Quant2Bit,
        CompressorSpec::LowRank {
            rank: 32,
            iterations: 2,
            precision: FactorPrecision::Int4,
        },
    ];
    (0..runs)
        .map(|i| BoundCase {
            process: ProcessSpec {
                rows: 64,
                cols: 64,
                lipschitz: LS[i % 3],
                sigma_a_sq: 100.0,
                sigma_delta_sq: 1.0,
                steps: 200,
                seed: base_seed + i as u64,
                innovation_share: 0.0,
            },
            codec: CODECS[(i / 3) % 3],
            warmup: 1,
            window: 50,
        })
        .collect()
}

/// Ordinary least-squares slope of `ys` against `1, 2, …`.
pub fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n + 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        let dx = (i + 1) as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Growth of accumulated error without feedback against its linear
/// predictor, and flatness of the feedback run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceReport {
    pub no_feedback_slope: f64,
    /// `(1 − δ̂)σ̂_Δ²`.
    pub predicted_slope: f64,
    pub feedback_late_slope: f64,
    pub delta_hat: f64,
    pub sigma_delta_sq_hat: f64,
}

impl DivergenceReport {
    pub fn slope_ratio(&self) -> f64 {
        self.no_feedback_slope / self.predicted_slope
    }
}

/// Fits slopes on open-loop runs: no-feedback over all post-warmup steps,
/// feedback over the last `window` steps.
pub fn divergence(
    traj: &Trajectory,
    codec: CompressorSpec,
    warmup: usize,
    window: usize,
    seed: u64,
) -> Result<DivergenceReport, ExperimentError> {
    let run = |mode| {
        run_trajectory(
            traj,
            &RunSettings {
                codec,
                mode,
                warmup,
                loop_model: LoopModel::Open,
                seed,
            },
        )
    };
    let nofb = run(PipelineMode::ResidualNoFeedback)?;
    let fb = run(PipelineMode::ResidualWithFeedback)?;
    let stats = measure_stats_window(traj, 0, &mut Rng::seed_from(seed), traj.steps());
    let delta_hat = nofb.delta_hat(traj.steps());
    let tail = &fb.total_error[fb.total_error.len() - window..];
    Ok(DivergenceReport {
        no_feedback_slope: least_squares_slope(&nofb.total_error[warmup..]),
        predicted_slope: theory::no_feedback_growth(delta_hat, stats.sigma_delta_sq, 1.0),
        feedback_late_slope: least_squares_slope(tail),
        delta_hat,
        sigma_delta_sq_hat: stats.sigma_delta_sq,
    })
}

/// Runs every mode on `traj` with shared settings.
pub fn mode_sweep(
    traj: &Trajectory,
    codec: CompressorSpec,
    warmup: usize,
    loop_model: LoopModel,
    seed: u64,
) -> Result<Vec<TrajectoryRun>, ExperimentError> {
    PipelineMode::ALL
        .iter()
        .map(|&mode| {
            run_trajectory(
                traj,
                &RunSettings {
                    codec,
                    mode,
                    warmup,
                    loop_model,
                    seed,
                },
            )
            .map_err(Into::into)
        })
        .collect()
}
