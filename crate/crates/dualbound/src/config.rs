//! Flat `section.key = value` run configuration.
//!
//! Curves accept a number, `sin(base, amplitude, frequency)` or
//! `table(t:v; t:v; …)`. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::PathBuf;

use dualbound_core::drift_policy::{Activation, PolicyKind, DEFAULT_SNAKE_FREQUENCY};
use dualbound_core::lower_bound::SimulationConfig;
use dualbound_core::market::{Curve, MarketScenario, PiecewiseLinear, Preset};
use dualbound_core::mortality::MortalityModel;
use dualbound_core::optimizer::{Algorithm, OptimizerConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Method {
    pub label: &'static str,
    pub kind: PolicyKind,
}

impl Method {
    pub fn parse(name: &str, snake_frequency: f64) -> Option<Self> {
        let kind = match name {
            "affine" => PolicyKind::Affine,
            "relu" => PolicyKind::Mlp(Activation::Relu),
            "snake" => PolicyKind::Mlp(Activation::Snake {
                frequency: snake_frequency,
            }),
            _ => return None,
        };
        let label = match name {
            "affine" => "affine",
            "relu" => "relu",
            _ => "snake",
        };
        Some(Self { label, kind })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub scenario: MarketScenario,
    pub methods: Vec<Method>,
    pub snake_frequency: f64,
    pub optimizer: OptimizerConfig,
    pub simulation: SimulationConfig,
    pub verify_paths: usize,
    pub quad_intervals: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_preset(Preset::Example1)
    }
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub desk_scale: bool,
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("config key `{key}`: {reason}"))
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| bad(key, format_args!("cannot parse `{value}`")))
}

fn preset(key: &str, value: &str) -> Result<Preset, CliError> {
    Preset::from_name(value).ok_or_else(|| bad(key, format_args!("unknown preset `{value}`")))
}

pub fn parse_curve(key: &str, value: &str) -> Result<Curve, CliError> {
    let v = value.trim();
    if let Some(inner) = v.strip_prefix("sin(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<f64> = inner
            .split(',')
            .map(|p| number(key, p.trim()))
            .collect::<Result<_, _>>()?;
        let [base, amplitude, frequency] = parts[..] else {
            return Err(bad(key, "sin(base, amplitude, frequency) takes three numbers"));
        };
        return Ok(Curve::Sinusoid {
            base,
            amplitude,
            frequency,
        });
    }
    if let Some(inner) = v.strip_prefix("table(").and_then(|r| r.strip_suffix(')')) {
        let knots = inner
            .split(';')
            .map(|pair| {
                let (t, x) = pair
                    .split_once(':')
                    .ok_or_else(|| bad(key, "table entries are t:value"))?;
                Ok((number(key, t.trim())?, number(key, x.trim())?))
            })
            .collect::<Result<Vec<(f64, f64)>, CliError>>()?;
        return PiecewiseLinear::new(knots).map(Curve::Table).map_err(|e| bad(key, e));
    }
    Ok(Curve::Constant(number(key, v)?))
}

pub fn render_curve(c: &Curve) -> String {
    match c {
        Curve::Constant(x) => format!("{x}"),
        Curve::Sinusoid {
            base,
            amplitude,
            frequency,
        } => format!("sin({base}, {amplitude}, {frequency})"),
        Curve::Table(t) => {
            let body: Vec<String> = t.knots().iter().map(|(a, b)| format!("{a}:{b}")).collect();
            format!("table({})", body.join("; "))
        }
    }
}

impl RunConfig {
    pub fn from_preset(p: Preset) -> Self {
        Self {
            preset: Some(p),
            scenario: MarketScenario::preset(p),
            methods: vec![
                Method::parse("affine", DEFAULT_SNAKE_FREQUENCY).unwrap(),
                Method::parse("relu", DEFAULT_SNAKE_FREQUENCY).unwrap(),
                Method::parse("snake", DEFAULT_SNAKE_FREQUENCY).unwrap(),
            ],
            snake_frequency: DEFAULT_SNAKE_FREQUENCY,
            optimizer: OptimizerConfig::default(),
            simulation: SimulationConfig::default(),
            verify_paths: 1 << 14,
            quad_intervals: dualbound_core::closed_form::DEFAULT_INTERVALS,
            out: PathBuf::from("results"),
            seed: 0,
        }
    }

    /// Parses configuration text, then applies command-line overrides.
    pub fn parse(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Validation(format!("line {}: expected key = value", lineno + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        // the preset is the base every other key modifies
        let base = match (&overrides.preset, entries.iter().find(|(k, _)| k == "scenario.preset")) {
            (Some(p), _) => preset("--preset", p)?,
            (None, Some((k, v))) => preset(k, v)?,
            (None, None) => Preset::Example1,
        };
        let mut cfg = Self::from_preset(base);
        let mut methods: Option<String> = None;
        let mut mortality = (
            cfg.scenario.mortality.initial_age(),
            cfg.scenario.mortality.modal_age(),
            cfg.scenario.mortality.dispersion(),
        );
        for (k, v) in &entries {
            let (k, v) = (k.as_str(), v.as_str());
            let s = &mut cfg.scenario;
            match k {
                "scenario.preset" => {}
                "market.rate" => s.rate = parse_curve(k, v)?,
                "market.drift" => s.drift = parse_curve(k, v)?,
                "market.volatility" => s.volatility = parse_curve(k, v)?,
                "income.drift" => s.income.drift = number(k, v)?,
                "income.volatility" => s.income.volatility = number(k, v)?,
                "income.initial" => s.income.initial = number(k, v)?,
                "wealth.initial" => s.initial_wealth = number(k, v)?,
                "prefs.gamma" => s.preferences.risk_aversion = number(k, v)?,
                "prefs.discount" => s.preferences.discount_rate = number(k, v)?,
                "life.retirement" => s.retirement = number(k, v)?,
                "life.horizon" => s.horizon = number(k, v)?,
                "mortality.age" => mortality.0 = number(k, v)?,
                "mortality.modal" => mortality.1 = number(k, v)?,
                "mortality.dispersion" => mortality.2 = number(k, v)?,
                "policy.methods" => methods = Some(v.to_string()),
                "policy.snake_frequency" => cfg.snake_frequency = number(k, v)?,
                "opt.num_starts" => cfg.optimizer.num_starts = number(k, v)?,
                "opt.iterations" => cfg.optimizer.iterations_per_start = number(k, v)?,
                "opt.algorithm" => {
                    cfg.optimizer.algorithm = match v {
                        "bfgs" => Algorithm::QuasiNewtonFd,
                        "nelder-mead" => Algorithm::NelderMead,
                        _ => return Err(bad(k, "expected bfgs or nelder-mead")),
                    }
                }
                "opt.fd_step" => cfg.optimizer.fd_step = number(k, v)?,
                "opt.objective_tol" => cfg.optimizer.objective_tol = number(k, v)?,
                "opt.param_tol" => cfg.optimizer.param_tol = number(k, v)?,
                "opt.init_std" => cfg.optimizer.init_std = Some(number(k, v)?),
                "sim.n_paths" => cfg.simulation.n_paths = number(k, v)?,
                "sim.n_steps" => cfg.simulation.n_steps = number(k, v)?,
                "sim.sobol_skip" => cfg.simulation.sobol_skip = number(k, v)?,
                "sim.batch_size" => cfg.simulation.batch_size = number(k, v)?,
                "verify.n_paths" => cfg.verify_paths = number(k, v)?,
                "quad.n_intervals" => cfg.quad_intervals = number(k, v)?,
                "seed" => cfg.seed = number(k, v)?,
                "out" => cfg.out = PathBuf::from(v),
                _ => return Err(bad(k, "unknown key")),
            }
        }
        cfg.scenario.mortality =
            MortalityModel::new(mortality.0, mortality.1, mortality.2).map_err(|e| bad("mortality", e))?;
        if let Some(list) = methods {
            cfg.methods = list
                .split(',')
                .map(|m| {
                    Method::parse(m.trim(), cfg.snake_frequency)
                        .ok_or_else(|| bad("policy.methods", format_args!("unknown method `{m}`")))
                })
                .collect::<Result<_, _>>()?;
        } else {
            cfg.methods = ["affine", "relu", "snake"]
                .iter()
                .map(|m| Method::parse(m, cfg.snake_frequency).unwrap())
                .collect();
        }
        if let Some(out) = &overrides.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if overrides.desk_scale {
            cfg.optimizer.num_starts = OptimizerConfig::desk_scale().num_starts;
            cfg.optimizer.iterations_per_start = OptimizerConfig::desk_scale().iterations_per_start;
        }
        cfg.optimizer.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |e: dualbound_core::Error| CliError::Validation(e.to_string());
        self.optimizer.validate().map_err(v)?;
        self.simulation.validate().map_err(v)?;
        self.scenario.check().map_err(v)?;
        if self.methods.is_empty() {
            return Err(bad("policy.methods", "at least one method is required"));
        }
        if self.verify_paths < 2 {
            return Err(bad("verify.n_paths", "need at least 2 paths"));
        }
        if self.quad_intervals < 2 {
            return Err(bad("quad.n_intervals", "need at least 2 intervals"));
        }
        if self.simulation.n_steps > dualbound_core::sobol::MAX_DIMENSIONS {
            return Err(bad("sim.n_steps", "one Sobol dimension per step; at most 1000 steps"));
        }
        Ok(())
    }

    /// Fully resolved configuration in the input format.
    pub fn render(&self) -> String {
        let s = &self.scenario;
        let m = &s.mortality;
        let o = &self.optimizer;
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        if let Some(p) = self.preset {
            line("scenario.preset", p.name().into());
        }
        line("market.rate", render_curve(&s.rate));
        line("market.drift", render_curve(&s.drift));
        line("market.volatility", render_curve(&s.volatility));
        line("income.drift", s.income.drift.to_string());
        line("income.volatility", s.income.volatility.to_string());
        line("income.initial", s.income.initial.to_string());
        line("wealth.initial", s.initial_wealth.to_string());
        line("prefs.gamma", s.preferences.risk_aversion.to_string());
        line("prefs.discount", s.preferences.discount_rate.to_string());
        line("life.retirement", s.retirement.to_string());
        line("life.horizon", s.horizon.to_string());
        line("mortality.age", m.initial_age().to_string());
        line("mortality.modal", m.modal_age().to_string());
        line("mortality.dispersion", m.dispersion().to_string());
        line(
            "policy.methods",
            self.methods.iter().map(|m| m.label).collect::<Vec<_>>().join(","),
        );
        line("policy.snake_frequency", self.snake_frequency.to_string());
        line("opt.num_starts", o.num_starts.to_string());
        line("opt.iterations", o.iterations_per_start.to_string());
        line(
            "opt.algorithm",
            match o.algorithm {
                Algorithm::QuasiNewtonFd => "bfgs".into(),
                Algorithm::NelderMead => "nelder-mead".into(),
            },
        );
        line("opt.fd_step", o.fd_step.to_string());
        line("opt.objective_tol", o.objective_tol.to_string());
        line("opt.param_tol", o.param_tol.to_string());
        if let Some(std) = o.init_std {
            line("opt.init_std", std.to_string());
        }
        line("sim.n_paths", self.simulation.n_paths.to_string());
        line("sim.n_steps", self.simulation.n_steps.to_string());
        line("sim.sobol_skip", self.simulation.sobol_skip.to_string());
        line("sim.batch_size", self.simulation.batch_size.to_string());
        line("verify.n_paths", self.verify_paths.to_string());
        line("quad.n_intervals", self.quad_intervals.to_string());
        line("seed", self.seed.to_string());
        line("out", self.out.display().to_string());
        out
    }
}
