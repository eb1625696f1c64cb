//! optimize → bound → simulate → verify, with starts and path batches spread
//! over the rayon pool and reduced in a fixed order.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use dualbound_core::closed_form::{compute_g, BoundTable, GFunction};
use dualbound_core::constraints::ConstraintSpec;
use dualbound_core::drift_policy::{DriftPolicy, PolicyKind};
use dualbound_core::lower_bound::{
    default_checkpoints, BatchPartial, BudgetCheck, BudgetPartial, CandidateValue, ControlRule, SimulationConfig,
    SimulationPlan,
};
use dualbound_core::market::MarketScenario;
use dualbound_core::optimizer::{reduce_starts, run_start, upper_bound_objective, OptimizationTrace, OptimizerConfig};
use dualbound_core::quadrature::UniformGrid;

use crate::config::{Method, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub optimize: Duration,
    pub simulate: Duration,
    pub verify: Duration,
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub policy: DriftPolicy,
    pub trace: OptimizationTrace,
    pub table: BoundTable,
    pub upper: f64,
    /// `None` when only the verification checks were requested.
    pub candidate: Option<CandidateValue>,
    pub budget: BudgetCheck,
    pub times: PhaseTimes,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub outcomes: Vec<MethodOutcome>,
}

pub fn constraint() -> ConstraintSpec {
    ConstraintSpec::no_borrowing_no_shorting()
}

pub fn optimize(
    scenario: &MarketScenario,
    kind: PolicyKind,
    config: &OptimizerConfig,
    n_intervals: usize,
) -> Result<(DriftPolicy, OptimizationTrace), CliError> {
    config.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let c = constraint();
    let objective = upper_bound_objective(scenario, &c, kind, n_intervals);
    let results = (0..config.num_starts)
        .into_par_iter()
        .map(|i| run_start(&objective, kind, config, i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::numerical)?;
    let trace = reduce_starts(results).map_err(CliError::numerical)?;
    let policy = DriftPolicy::unflatten(kind, &trace.best_params, scenario.retirement, scenario.horizon)
        .map_err(CliError::numerical)?;
    Ok((policy, trace))
}

pub fn plan(
    scenario: &MarketScenario,
    policy: &DriftPolicy,
    config: SimulationConfig,
    rule: ControlRule,
) -> Result<SimulationPlan, CliError> {
    SimulationPlan::new(scenario, &constraint(), policy, config, rule).map_err(CliError::numerical)
}

pub fn simulate(plan: &SimulationPlan) -> Result<CandidateValue, CliError> {
    let batches: Vec<_> = plan.config().batches().collect();
    let partials = batches
        .par_iter()
        .map(|&(first, count)| plan.simulate_batch(first, count))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::numerical)?;
    let mut total = BatchPartial::empty(plan.config().n_steps + 1);
    partials.iter().for_each(|p| total.merge(p));
    Ok(plan.finish(total))
}

pub fn verify(plan: &SimulationPlan) -> Result<BudgetCheck, CliError> {
    let checkpoints = default_checkpoints(plan.config().n_steps);
    let batches: Vec<_> = plan.config().batches().collect();
    let partials = batches
        .par_iter()
        .map(|&(first, count)| plan.budget_batch(first, count, &checkpoints))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::numerical)?;
    let mut total = BudgetPartial::empty(checkpoints.len());
    partials.iter().for_each(|p| total.merge(p));
    Ok(plan.finish_budget(total, &checkpoints))
}

fn verify_config(cfg: &RunConfig) -> SimulationConfig {
    SimulationConfig {
        n_paths: cfg.verify_paths,
        ..cfg.simulation
    }
}

fn run_method(cfg: &RunConfig, method: Method, with_lower: bool) -> Result<MethodOutcome, CliError> {
    let s = &cfg.scenario;
    let clock = Instant::now();
    let (policy, trace) = optimize(s, method.kind, &cfg.optimizer, cfg.quad_intervals)?;
    let table = BoundTable::build(s, &constraint(), &policy, 0.0, cfg.quad_intervals).map_err(CliError::numerical)?;
    let upper = table
        .value_at_start(s.initial_wealth, s.income.initial)
        .map_err(CliError::numerical)?
        .value;
    let optimize_time = clock.elapsed();

    let clock = Instant::now();
    let candidate = if with_lower {
        Some(simulate(&plan(s, &policy, cfg.simulation, ControlRule::Feedback)?)?)
    } else {
        None
    };
    let simulate_time = clock.elapsed();

    let clock = Instant::now();
    let budget = verify(&plan(s, &policy, verify_config(cfg), ControlRule::Feedback)?)?;
    Ok(MethodOutcome {
        method,
        policy,
        trace,
        table,
        upper,
        candidate,
        budget,
        times: PhaseTimes {
            optimize: optimize_time,
            simulate: simulate_time,
            verify: clock.elapsed(),
        },
    })
}

fn check_scenario(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let report = cfg.scenario.validate();
    if let Some(f) = report.failures().next() {
        return Err(CliError::Validation(format!(
            "scenario condition `{}` fails at t = {:?}",
            f.name, f.first_violation
        )));
    }
    Ok(())
}

/// Full pipeline for every configured method.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    check_scenario(cfg)?;
    let outcomes = cfg
        .methods
        .iter()
        .map(|&m| run_method(cfg, m, true))
        .collect::<Result<_, _>>()?;
    Ok(RunOutput {
        config: cfg.clone(),
        outcomes,
    })
}

/// Optimization plus budget and martingale checks, without the lower bound.
pub fn run_verify(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    check_scenario(cfg)?;
    let outcomes = cfg
        .methods
        .iter()
        .map(|&m| run_method(cfg, m, false))
        .collect::<Result<_, _>>()?;
    Ok(RunOutput {
        config: cfg.clone(),
        outcomes,
    })
}

pub fn g_table(cfg: &RunConfig) -> Result<GFunction, CliError> {
    let grid = UniformGrid::new(0.0, cfg.scenario.horizon, cfg.quad_intervals)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    compute_g(&cfg.scenario, &grid).map_err(|e| CliError::Validation(e.to_string()))
}
