//! Continuation driver for the transcribed problem.
//!
//! Free-switching problems relax the interface complementarity conditions by
//! `epsilon` and tighten it over a decreasing schedule, warm-starting each
//! stage from the previous one. This is the standard way to keep the central
//! path well defined where exact complementarity would violate constraint
//! qualifications. The relaxation cannot be tightened to zero, though: the
//! multipliers of the product constraints diverge at the complementarity
//! corners, so below roughly `1e-6` the subproblems stall regardless of
//! iteration budget. The driver therefore finishes with a polish phase: it
//! reads the engagement sequence off the tightest relaxed solution, pins it,
//! and re-solves the resulting fixed-schedule problem, whose interface
//! conditions are plain equality rows. The polished point satisfies
//! complementarity exactly (an open interface carries zero impulse, a closed
//! one has zero relative speed) and converges to the solver tolerance.
//!
//! Each relaxed stage is solved slightly tighter than its nominal level, so
//! that the products reported against `epsilon` hold even after accounting
//! for the solver's feasibility tolerance. Fixed-schedule problems have no
//! complementarity and solve in a single stage.

use ipsolve::{IpmOptions, IpmSolution, IpmStatus, WarmStart};
use thiserror::Error;

use crate::modes::{ModeSchedule, N_CONSTRAINTS};
use crate::transcription::{
    ObjectiveBreakdown, RelaxedNlp, Switching, Transcription, TranscriptionError,
};

/// One continuation stage: a relaxation level together with a scaling of the
/// switch objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomotopyStage {
    pub epsilon: f64,
    /// Factor on the switch-count weight.
    pub switch_weight: f64,
    /// Factor on the switch-count sharpness.
    pub switch_sharpness: f64,
}

impl HomotopyStage {
    fn scaling(&self) -> (f64, f64) {
        (self.switch_weight, self.switch_sharpness)
    }

    fn is_true_objective(&self) -> bool {
        self.switch_weight == 1.0 && self.switch_sharpness == 1.0
    }
}

/// Continuation schedule and solver settings.
#[derive(Debug, Clone)]
pub struct HomotopyConfig {
    /// Stages in solve order. Relaxation levels must not increase. Without a
    /// polish phase the last stage must run the true objective, since that is
    /// the problem the returned solution answers.
    pub stages: Vec<HomotopyStage>,
    /// Re-solve with the engagement sequence read off the tightest relaxed
    /// solution and pinned. This is what certifies exact complementarity;
    /// disable it only to study the bare relaxation path.
    pub polish: bool,
    /// Transmitted-torque threshold (N m) above which an interface counts as
    /// engaged when reading the sequence off a relaxed solution.
    pub extract_torque_eps: f64,
    /// Relative-speed threshold (rad/s) under which an engaged interface is
    /// considered still locked even while its torque crosses zero.
    pub extract_speed_eps: f64,
    pub ipm: IpmOptions,
}

impl Default for HomotopyConfig {
    /// Half-decade steps from 1e-1 to 1e-4, then the polish. A loose
    /// relaxation level buys the optimizer roughly `n * epsilon` of phantom
    /// interface work, so on long horizons each tightening step retracts a
    /// real chunk of objective; the half-decade ladder keeps every retraction
    /// small enough to re-solve quickly from the previous warm start.
    fn default() -> Self {
        Self::with_levels(&[1.0e-1, 3.0e-2, 1.0e-2, 3.0e-3, 1.0e-3, 3.0e-4, 1.0e-4])
    }
}

impl HomotopyConfig {
    /// Standard staging for a relaxation path: tighten through `levels` with
    /// the switch-count objective off, then identify and pin the engagement
    /// sequence and polish under the full objective.
    ///
    /// The count term stays out of the relaxed stages deliberately. At full
    /// sharpness it is a near-step function: its gradient vanishes wherever
    /// the engagement indicators are saturated and is enormous inside thin
    /// transition shells, so it cannot steer the relaxed solves and only
    /// destabilizes them; at reduced sharpness the shells widen until
    /// ordinary torque ramps read as perpetual switching and the term
    /// deforms the whole trajectory. On a fixed engagement sequence the count
    /// is constant, so the polish minimizes the true objective either way.
    /// Engagement changes are discouraged on the relaxed path by the physics
    /// instead: every engagement event dissipates kinetic energy through the
    /// impact law, so chattering is never optimal for the launch reward.
    pub fn with_levels(levels: &[f64]) -> Self {
        let stages: Vec<HomotopyStage> = levels
            .iter()
            .map(|&epsilon| HomotopyStage { epsilon, switch_weight: 0.0, switch_sharpness: 1.0 })
            .collect();
        HomotopyConfig {
            stages,
            polish: true,
            extract_torque_eps: 0.05,
            extract_speed_eps: 0.05,
            ipm: IpmOptions::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("continuation schedule is empty")]
    EmptySchedule,
    #[error("relaxation level {value} at stage {index} is not positive and finite")]
    BadEpsilon { index: usize, value: f64 },
    #[error("relaxation level rises at stage {index}")]
    IncreasingEpsilon { index: usize },
    #[error(
        "final relaxation {epsilon:.1e} cannot be certified against feasibility tolerance {tol_feas:.1e}; keep epsilon above twice the tolerance"
    )]
    FinalLevelTooTight { epsilon: f64, tol_feas: f64 },
    #[error(
        "without a polish phase the last stage must run the true objective (unit weight and sharpness factors)"
    )]
    FinalStageScaled,
    #[error("stage {index} scaling is invalid: weight factor {weight}, sharpness factor {sharpness}")]
    BadStageScaling { index: usize, weight: f64, sharpness: f64 },
    #[error("extraction threshold {what} = {value} is not positive and finite")]
    BadExtractionThreshold { what: &'static str, value: f64 },
    #[error("stage at relaxation {epsilon:.1e} failed: {status:?} after {iterations} iterations")]
    StageFailed { epsilon: f64, status: IpmStatus, iterations: usize },
    #[error("pinning the extracted engagement sequence failed: {0}")]
    PolishSetup(#[from] TranscriptionError),
    #[error("polish on the extracted engagement sequence failed: {status:?} after {iterations} iterations")]
    PolishFailed { status: IpmStatus, iterations: usize },
}

impl HomotopyConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if self.stages.is_empty() {
            return Err(SolveError::EmptySchedule);
        }
        for (index, stage) in self.stages.iter().enumerate() {
            if !(stage.epsilon > 0.0) || !stage.epsilon.is_finite() {
                return Err(SolveError::BadEpsilon { index, value: stage.epsilon });
            }
            if index > 0 && stage.epsilon > self.stages[index - 1].epsilon {
                return Err(SolveError::IncreasingEpsilon { index });
            }
            let (weight, sharpness) = stage.scaling();
            if !(weight >= 0.0)
                || !weight.is_finite()
                || !(sharpness > 0.0)
                || !sharpness.is_finite()
            {
                return Err(SolveError::BadStageScaling { index, weight, sharpness });
            }
        }
        let last = self.stages.last().expect("schedule checked non-empty");
        // Below twice the feasibility tolerance, no interior solve level can
        // keep the certified products under the nominal one.
        if last.epsilon <= 2.0 * self.ipm.tol_feas {
            return Err(SolveError::FinalLevelTooTight {
                epsilon: last.epsilon,
                tol_feas: self.ipm.tol_feas,
            });
        }
        if !self.polish && !last.is_true_objective() {
            return Err(SolveError::FinalStageScaled);
        }
        for (what, value) in [
            ("extract_torque_eps", self.extract_torque_eps),
            ("extract_speed_eps", self.extract_speed_eps),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SolveError::BadExtractionThreshold { what, value });
            }
        }
        Ok(())
    }
}

/// Outcome of one homotopy stage.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub epsilon: f64,
    pub status: IpmStatus,
    pub iterations: usize,
    pub objective: f64,
    /// Largest equality-constraint violation at the stage iterate.
    pub max_defect: f64,
    /// Largest relaxed complementarity product at the stage iterate (zero
    /// under a pinned schedule, which has no such products).
    pub max_product: f64,
    /// Largest interface slip work `|zeta * phi|` at the stage iterate. This
    /// is the encoding-independent complementarity measure; the polish stage
    /// drives it to the solver tolerance.
    pub max_slip_work: f64,
}

/// A solved problem, with enough context to decode, report, and warm-start
/// follow-up solves.
#[derive(Debug, Clone)]
pub struct Solved {
    pub z: Vec<f64>,
    pub warm: WarmStart,
    pub stages: Vec<StageReport>,
    pub breakdown: ObjectiveBreakdown,
    /// Level the complementarity products are guaranteed against (zero after
    /// a polish and for fixed-schedule problems, whose interface conditions
    /// hold as equalities).
    pub final_epsilon: f64,
    /// Engagement sequence of the solution: the pinned input sequence for
    /// fixed-schedule problems, the extracted and polished sequence for
    /// free-switching ones (absent only when the polish is disabled).
    pub schedule: Option<ModeSchedule>,
}

impl Solved {
    pub fn iterations_total(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }
}

/// Relaxation actually handed to the solver: tight enough that products
/// bounded by it plus the feasibility tolerance still sit below the nominal
/// level.
fn interior_epsilon(epsilon: f64, ipm: &IpmOptions) -> f64 {
    (0.99 * epsilon - ipm.tol_feas).max(0.5 * epsilon)
}

fn run_stage(
    trans: &Transcription,
    epsilon_nominal: f64,
    epsilon_solve: f64,
    ipm: &IpmOptions,
    warm: Option<&WarmStart>,
    mu_init: f64,
) -> (IpmSolution, StageReport) {
    let nlp = RelaxedNlp { trans, epsilon: epsilon_solve };
    let opts = IpmOptions { mu_init, ..ipm.clone() };
    let sol = ipsolve::solve(&nlp, &opts, warm);
    let report = StageReport {
        epsilon: epsilon_nominal,
        status: sol.status,
        iterations: sol.iterations,
        objective: trans.objective(&sol.z),
        max_defect: trans.max_defect(&sol.z),
        max_product: trans.max_complementarity_product(&sol.z),
        max_slip_work: trans.max_slip_work(&sol.z),
    };
    (sol, report)
}

fn log_stage(label: &str, report: &StageReport, sol: &IpmSolution) {
    log::info!(
        "{label}: {:?} in {} iterations, objective {:.6e}, defect {:.2e}, product {:.2e}, slip {:.2e}, end mu {:.1e}, prim {:.1e}, dual {:.1e}",
        report.status,
        report.iterations,
        report.objective,
        report.max_defect,
        report.max_product,
        report.max_slip_work,
        sol.mu,
        sol.primal_infeasibility,
        sol.dual_infeasibility,
    );
}

/// Solve the transcription: a single stage for fixed schedules, the full
/// relaxation continuation for free switching.
pub fn solve(trans: &Transcription, cfg: &HomotopyConfig) -> Result<Solved, SolveError> {
    // Fixed-schedule problems have no relaxation to continue over, so only
    // free-switching solves need the schedule well formed.
    if trans.is_free_switching() {
        cfg.validate()?;
    }
    let mut stages = Vec::new();
    let mut warm: Option<WarmStart> = None;
    let mut last: Option<IpmSolution> = None;

    let plan: Vec<HomotopyStage> = if trans.is_free_switching() {
        cfg.stages.clone()
    } else {
        vec![HomotopyStage { epsilon: 0.0, switch_weight: 1.0, switch_sharpness: 1.0 }]
    };
    let mut mu_next = cfg.ipm.mu_init;
    for (i, stage) in plan.iter().enumerate() {
        let eps_solve = if trans.is_free_switching() {
            interior_epsilon(stage.epsilon, &cfg.ipm)
        } else {
            0.0
        };
        let scaled;
        let stage_trans = if stage.is_true_objective() {
            trans
        } else {
            scaled = trans.with_switch_scaling(stage.switch_weight, stage.switch_sharpness);
            &scaled
        };
        // When the stage changes the objective, the carried multipliers
        // answer the wrong problem; when the previous stage ran out of
        // iterations, they never answered any problem at all. Either way the
        // carried barrier weight leaves no room to re-center. Keep the primal
        // iterate but re-estimate the rest.
        let prev_unconverged =
            stages.last().is_some_and(|r: &StageReport| r.status != IpmStatus::Converged);
        if i > 0 && (stage.scaling() != plan[i - 1].scaling() || prev_unconverged) {
            mu_next = mu_next.max(1e-4);
            if let Some(w) = warm.as_mut() {
                w.y_eq.clear();
                w.y_ineq.clear();
            }
        }
        let (sol, report) =
            run_stage(stage_trans, stage.epsilon, eps_solve, &cfg.ipm, warm.as_ref(), mu_next);
        log_stage(
            &format!(
                "stage eps={:.1e} w={:.2} sharp={:.2}",
                stage.epsilon, stage.switch_weight, stage.switch_sharpness
            ),
            &report,
            &sol,
        );
        // Warm-started stages resume near the previous central path; blasting
        // the barrier back to its cold-start size would undo the warm start.
        mu_next = (10.0 * sol.mu).clamp(cfg.ipm.tol, cfg.ipm.mu_init);
        // With a polish phase behind it, even the tightest relaxed stage only
        // has to leave a usable seed.
        let is_last = i + 1 == plan.len() && !(trans.is_free_switching() && cfg.polish);
        let acceptable = match report.status {
            IpmStatus::Converged => true,
            // An iteration-capped intermediate stage can still seed the next
            // level; anything else leaves no usable iterate behind.
            IpmStatus::MaxIterations => !is_last,
            _ => false,
        };
        if !acceptable {
            return Err(SolveError::StageFailed {
                epsilon: stage.epsilon,
                status: report.status,
                iterations: report.iterations,
            });
        }
        warm = Some(WarmStart {
            z: sol.z.clone(),
            y_eq: sol.y_eq.clone(),
            y_ineq: sol.y_ineq.clone(),
        });
        stages.push(report);
        last = Some(sol);
    }

    let mut sol = last.expect("at least one continuation stage ran");
    let mut final_epsilon = plan.last().map(|s| s.epsilon).unwrap_or(0.0);
    let mut schedule = trans.schedule().cloned();
    if trans.is_free_switching() && cfg.polish {
        let extracted =
            trans.extract_mode_schedule(&sol.z, cfg.extract_torque_eps, cfg.extract_speed_eps);
        log::info!(
            "extracted engagement sequence with {} switch times",
            extracted.switch_times.len()
        );
        let fixed = Transcription::new(
            trans.params().clone(),
            trans.config().clone(),
            Switching::Fixed(extracted.clone()),
        )?;
        // Same decision-vector layout; only the interface rows change. The
        // relaxation split variables are dead under pins, so seed them at the
        // values the pin objective holds them to.
        let mut z = sol.z.clone();
        let lay = trans.layout();
        for s in 0..lay.n {
            for i in 0..N_CONSTRAINTS {
                z[lay.pi(s, i)] = 0.0;
                z[lay.nu(s, i)] = 0.0;
                z[lay.gamma(s, i)] = 1.0;
            }
        }
        let warm_polish = WarmStart { z, y_eq: Vec::new(), y_ineq: Vec::new() };
        let (psol, report) = run_stage(&fixed, 0.0, 0.0, &cfg.ipm, Some(&warm_polish), 1e-4);
        log_stage("polish", &report, &psol);
        if report.status != IpmStatus::Converged {
            return Err(SolveError::PolishFailed {
                status: report.status,
                iterations: report.iterations,
            });
        }
        stages.push(report);
        sol = psol;
        final_epsilon = 0.0;
        schedule = Some(extracted);
    }

    let breakdown = trans.objective_breakdown(&sol.z);
    let warm =
        WarmStart { z: sol.z.clone(), y_eq: sol.y_eq.clone(), y_ineq: sol.y_ineq.clone() };
    Ok(Solved { z: sol.z, warm, stages, breakdown, final_epsilon, schedule })
}
