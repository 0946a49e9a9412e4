//! Constrained level-set descent: null-space search directions, a merit
//! line search over pseudo-time, reinitialization scheduling and the
//! one-time Brinkmann tightening.
//!
//! The heat flux `J` is maximized; internally the optimizer minimizes
//! `Ĵ = -J` subject to `G_i ≤ P_drop`.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::levelset::theta_max;
use crate::mesh_fem::Field;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub alpha_j: f64,
    pub alpha_c: f64,
    /// Largest pseudo-time a line search starts from; after an accepted
    /// step the next search starts from twice that step.
    pub t_hat: f64,
    pub max_trials: usize,
    pub d_max: f64,
    pub max_iter: usize,
    /// Stop once `‖θ‖_b` falls to this value.
    pub tol: f64,
    pub p_drop: f64,
    /// Constraints within this fraction of `P_drop` below the bound count as active.
    pub activity: f64,
    /// Da is divided by this once both constraints first hold; 1 disables.
    pub tighten_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            alpha_j: 1.0,
            alpha_c: 1.0,
            t_hat: 0.05,
            max_trials: 5,
            d_max: 0.08,
            max_iter: 300,
            tol: 0.0,
            p_drop: 2.0,
            activity: 0.01,
            tighten_factor: 10.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_trials >= 1
            && self.d_max > 0.0
            && self.p_drop > 0.0
            && self.t_hat > 0.0
            && self.alpha_j >= 0.0
            && self.alpha_c >= 0.0
            && self.activity >= 0.0
            && self.tighten_factor >= 1.0
            && !self.tol.is_nan();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid optimizer configuration {self:?}"
            )))
        }
    }
}

/// Functional values of one design.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub j: f64,
    pub g: Vec<f64>,
}

/// `α_J Ĵ + (α_C/2) Σ max(G_i - P, 0)² / max(P, 1)²`.
pub fn merit(j: f64, g: &[f64], p_drop: f64, config: &OptimizerConfig) -> f64 {
    let scale = p_drop.max(1.0).powi(2);
    let violation: f64 = g.iter().map(|&gi| (gi - p_drop).max(0.0).powi(2)).sum();
    config.alpha_j * (-j) + 0.5 * config.alpha_c * violation / scale
}

#[derive(Clone, Debug, PartialEq)]
pub struct NullSpaceDirection {
    pub theta: Field,
    /// `ξ^⊥`, the descent component.
    pub descent: Field,
    /// `ξ_C`, the Gauss-Newton correction of violated constraints.
    pub correction: Field,
    /// Constraints entering the projection, with their multipliers.
    pub projected: Vec<(usize, f64)>,
    /// Constraints entering the range-space correction, with their weights.
    pub corrected: Vec<(usize, f64)>,
}

/// `θ = -α_J ξ^⊥ - α_C ξ_C` from the Riesz representative `ζ_Ĵ` of the
/// minimized objective and those of the constraints.
///
/// `ξ^⊥ = ζ_Ĵ + Σ μ_i ζ_Gi` removes the components along active constraint
/// gradients that descent would push further up (`μ ≥ 0`, the KKT sign);
/// `ξ_C = Σ ν_i ζ_Gi` with `Gram ν = (G - P)` pulls violated constraints
/// back (`ν ≥ 0`). Negative coefficients are pruned one at a time.
pub fn nullspace_direction(
    zeta_obj: &Field,
    zeta_g: &[Field],
    g: &[f64],
    p_drop: f64,
    inner: &dyn Fn(&Field, &Field) -> f64,
    config: &OptimizerConfig,
) -> Result<NullSpaceDirection> {
    if zeta_g.len() != g.len() {
        return Err(Error::invalid(
            "one constraint value per constraint gradient",
        ));
    }
    if zeta_g
        .iter()
        .any(|z| z.values().len() != zeta_obj.values().len())
    {
        return Err(Error::invalid("velocities live on different spaces"));
    }
    let active: Vec<usize> = (0..g.len())
        .filter(|&i| g[i] >= p_drop * (1.0 - config.activity))
        .collect();
    let gram = |set: &[usize]| -> Vec<Vec<f64>> {
        set.iter()
            .map(|&i| set.iter().map(|&j| inner(&zeta_g[i], &zeta_g[j])).collect())
            .collect()
    };
    let pruned = |rhs: &dyn Fn(usize) -> f64| -> Result<Vec<(usize, f64)>> {
        let mut set = active.clone();
        loop {
            if set.is_empty() {
                return Ok(Vec::new());
            }
            let b: Vec<f64> = set.iter().map(|&i| rhs(i)).collect();
            let x = dense_solve(gram(&set), b)?;
            let (worst, value) = x
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, v)| (k, *v))
                .expect("non-empty");
            if value >= 0.0 {
                return Ok(set.into_iter().zip(x).collect());
            }
            set.remove(worst);
        }
    };
    let projected = pruned(&|i| -inner(&zeta_g[i], zeta_obj))?;
    let corrected = pruned(&|i| g[i] - p_drop)?;

    let mut descent = zeta_obj.values().to_vec();
    for &(i, mu) in &projected {
        for (t, z) in descent.iter_mut().zip(zeta_g[i].values()) {
            *t += mu * z;
        }
    }
    let mut correction = vec![0.0; descent.len()];
    for &(i, nu) in &corrected {
        for (t, z) in correction.iter_mut().zip(zeta_g[i].values()) {
            *t += nu * z;
        }
    }
    let theta = descent
        .iter()
        .zip(&correction)
        .map(|(d, c)| -config.alpha_j * d - config.alpha_c * c)
        .collect();
    let components = zeta_obj.components();
    Ok(NullSpaceDirection {
        theta: Field::from_values(components, theta)?,
        descent: Field::from_values(components, descent)?,
        correction: Field::from_values(components, correction)?,
        projected,
        corrected,
    })
}

/// Gaussian elimination with partial pivoting for the small Gram systems.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty");
        if !(a[piv][col].abs() > 1e-12 * scale) {
            return Err(Error::DegenerateConstraints { pivot: a[piv][col] });
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

#[derive(Clone, Debug)]
pub struct LineSearchOutcome<T> {
    pub candidate: T,
    pub merit: f64,
    pub t_hat: f64,
    /// Halvings performed.
    pub trials: usize,
    /// No candidate improved the merit; the last one is returned anyway.
    pub exhausted: bool,
}

/// Tries `t̂, t̂/2, …, t̂/2^maxtrials` until the merit does not increase.
pub fn line_search_step<T>(
    t_hat: f64,
    merit_n: f64,
    max_trials: usize,
    mut evaluate: impl FnMut(f64) -> Result<(T, f64)>,
) -> Result<LineSearchOutcome<T>> {
    let mut t = t_hat;
    for k in 0..=max_trials {
        let (candidate, m) = evaluate(t).map_err(|e| Error::LineSearch {
            trial: k,
            source: Box::new(e),
        })?;
        if m <= merit_n || k == max_trials {
            return Ok(LineSearchOutcome {
                candidate,
                merit: m,
                t_hat: t,
                trials: k,
                exhausted: m > merit_n,
            });
        }
        t *= 0.5;
    }
    unreachable!("the loop returns on its last trial")
}

/// Everything the optimizer needs from a concrete design problem.
pub trait DesignProblem {
    /// Solves the state equations for `phi` and evaluates `J` and `G`.
    fn evaluate(&mut self, phi: &Field) -> Result<Evaluation>;
    /// Riesz representatives of `DJ` and each `DG_i` at `phi`.
    fn gradients(&mut self, phi: &Field) -> Result<(Field, Vec<Field>)>;
    fn inner(&self, a: &Field, b: &Field) -> f64;
    fn advect(&self, phi: &Field, theta: &Field, t_hat: f64) -> Result<Field>;
    fn reinitialize(&self, phi: &Field) -> Result<Field>;
    fn darcy(&self) -> f64;
    fn set_darcy(&mut self, da: f64);
    /// Called with every record and the design left by that iteration,
    /// whose states are the most recently evaluated ones. An error aborts
    /// the run.
    fn observe(&mut self, _record: &IterationRecord, _phi: &Field) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub g: Vec<f64>,
    /// Merit of the design this record evaluates.
    pub merit: f64,
    /// Merit of the candidate taken by the line search.
    pub trial_merit: f64,
    pub t_hat: f64,
    pub theta_max: f64,
    pub theta_norm: f64,
    pub tau: f64,
    pub reinit: bool,
    pub da: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct OptimizationHistory {
    pub config: OptimizerConfig,
    pub records: Vec<IterationRecord>,
    /// Best design met since the last change of Da (see [`incumbent_rank`])
    /// and its functionals.
    pub final_evaluation: Option<Evaluation>,
    pub final_design: Option<Field>,
    pub wall_clock: Duration,
}

impl OptimizationHistory {
    pub fn initial(&self) -> Option<&IterationRecord> {
        self.records.first()
    }

    /// Index of the record after which Da was tightened.
    pub fn tightening(&self) -> Option<usize> {
        self.records.windows(2).position(|w| w[1].da != w[0].da)
    }
}

/// A run that stopped on an error, with everything recorded up to it.
#[derive(Debug)]
pub struct Aborted {
    pub history: OptimizationHistory,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "optimization aborted after {} iterations: {}",
            self.history.records.len(),
            self.error
        )
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Ordering used to keep the best design: feasible designs first, by
/// objective, then infeasible ones by merit.
pub fn incumbent_rank(e: &Evaluation, p_drop: f64, config: &OptimizerConfig) -> (bool, f64) {
    if e.g.iter().all(|&g| g <= p_drop) {
        (false, -e.j)
    } else {
        (true, merit(e.j, &e.g, p_drop, config))
    }
}

fn better(a: (bool, f64), b: (bool, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Runs the optimization loop from `phi`.
pub fn run_optimization<P: DesignProblem>(
    problem: &mut P,
    phi: Field,
    config: &OptimizerConfig,
) -> std::result::Result<OptimizationHistory, Aborted> {
    let start = Instant::now();
    let mut history = OptimizationHistory {
        config: config.clone(),
        records: Vec::new(),
        final_evaluation: None,
        final_design: None,
        wall_clock: Duration::ZERO,
    };
    let outcome = optimize(problem, phi, config, &mut history);
    history.wall_clock = start.elapsed();
    match outcome {
        Ok(()) => Ok(history),
        Err(error) => Err(Aborted { history, error }),
    }
}

fn optimize<P: DesignProblem>(
    problem: &mut P,
    mut phi: Field,
    config: &OptimizerConfig,
    history: &mut OptimizationHistory,
) -> Result<()> {
    config.validate()?;
    let p = config.p_drop;
    let mut eval = problem.evaluate(&phi)?;
    let mut tau = 0.0;
    let mut tightened = config.tighten_factor == 1.0;
    let mut t_start = config.t_hat;
    // G jumps whenever nodes change phase, so the last iterate is not
    // necessarily the best one
    let keep = |phi: &Field, eval: &Evaluation, history: &mut OptimizationHistory, reset: bool| {
        let rank = incumbent_rank(eval, p, config);
        let improves = match &history.final_evaluation {
            Some(best) if !reset => better(rank, incumbent_rank(best, p, config)),
            _ => true,
        };
        if improves {
            history.final_evaluation = Some(eval.clone());
            history.final_design = Some(phi.clone());
        }
    };
    keep(&phi, &eval, history, true);
    for iter in 1..=config.max_iter {
        let merit_n = merit(eval.j, &eval.g, p, config);
        let (zeta_j, zeta_g) = problem.gradients(&phi)?;
        let zeta_obj = Field::from_values(
            zeta_j.components(),
            zeta_j.values().iter().map(|v| -v).collect(),
        )?;
        let dir = {
            let inner = |a: &Field, b: &Field| problem.inner(a, b);
            nullspace_direction(&zeta_obj, &zeta_g, &eval.g, p, &inner, config)?
        };
        let theta_norm = problem.inner(&dir.theta, &dir.theta).max(0.0).sqrt();

        let step = line_search_step(t_start, merit_n, config.max_trials, |t| {
            let candidate = problem.advect(&phi, &dir.theta, t)?;
            let e = problem.evaluate(&candidate)?;
            let m = merit(e.j, &e.g, p, config);
            Ok(((candidate, e), m))
        })?;
        let record_eval = std::mem::replace(&mut eval, step.candidate.1);
        phi = step.candidate.0;
        // an exhausted search says the direction is poor here, not that steps must shrink
        t_start = if step.exhausted {
            config.t_hat
        } else {
            (2.0 * step.t_hat).min(config.t_hat)
        };

        let tmax = theta_max(&dir.theta);
        tau += tmax * step.t_hat;
        let reinit = tau >= config.d_max;
        if reinit {
            phi = problem.reinitialize(&phi)?;
            tau = 0.0;
            eval = problem.evaluate(&phi)?;
        }
        let record = IterationRecord {
            iter,
            j: record_eval.j,
            g: record_eval.g.clone(),
            merit: merit_n,
            trial_merit: step.merit,
            t_hat: step.t_hat,
            theta_max: tmax,
            theta_norm,
            tau,
            reinit,
            da: problem.darcy(),
            accepted: !step.exhausted,
        };
        log::info!(
            "iter {iter}: J {:.6} G {:?} merit {:.6} t_hat {:.4} trials {} reinit {reinit}",
            record.j,
            record.g,
            record.merit,
            record.t_hat,
            step.trials
        );
        problem.observe(&record, &phi)?;
        history.records.push(record);

        if !tightened && record_eval.g.iter().all(|&gi| gi <= p) {
            tightened = true;
            let da = problem.darcy() / config.tighten_factor;
            log::info!("both pressure drops satisfied; tightening Da to {da:e}");
            problem.set_darcy(da);
            eval = problem.evaluate(&phi)?;
            keep(&phi, &eval, history, true);
        } else {
            keep(&phi, &eval, history, false);
        }
        if theta_norm <= config.tol {
            break;
        }
    }
    Ok(())
}
