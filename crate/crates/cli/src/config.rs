//! Flat TOML experiment configuration with layered overrides.
//!
//! Layers, lowest precedence first: the config file, `KPPLAB_<KEY>`
//! environment variables, explicit command-line values. Every layer is a
//! flat key/value table; unknown keys are rejected.

use std::path::{Path, PathBuf};

use kpplab::particle::ParticleConfig;
use kpplab::{GridSpec, InitialCondition, NoiseScheme, SpdeParams, WindowPolicy};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const ENV_PREFIX: &str = "KPPLAB_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Simulate,
    Couple,
    Particle,
    Speed,
    Wave,
    Duality,
    Sweep,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Couple => "couple",
            Kind::Particle => "particle",
            Kind::Speed => "speed",
            Kind::Wave => "wave",
            Kind::Duality => "duality",
            Kind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcKind {
    Zero,
    Bump,
    Heavyside,
    SplitHeavyside,
    ZetaRamp,
    ZetaRampRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Moving,
    Fixed,
    TrailingRight,
    TrailingLeft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Feller,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    Monotone,
    Theta,
    TwoIndependent,
    Immigration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleMode {
    /// One nested θ-family run with occupancy and density snapshots.
    Run,
    /// Laplace functional against the rescaled grid equation, per `ns`.
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    SelfDuality,
    Competition,
    MarkerCdf,
    UpperMeasure,
}

/// One experiment. Field names are the config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: Option<Kind>,
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Worker threads; 0 = all available cores.
    pub jobs: usize,

    pub theta: f64,
    /// θ-list for families, speed tables and sweeps; empty means `[theta]`
    /// except for `sweep`, where it is the (possibly empty) sweep grid.
    pub thetas: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub noise_amp: f64,

    pub dx: f64,
    pub dt: f64,
    pub window: WindowKind,
    pub window_lo: f64,
    pub window_hi: f64,
    pub scheme: Scheme,

    pub t_end: f64,
    pub snapshot_times: Vec<f64>,

    pub ic: IcKind,
    pub ic_scale: f64,
    pub ic_shift: f64,
    pub ic_eps: f64,
    pub ic_x0: f64,
    /// Second datum: lower member of a monotone pair, the second member of
    /// an independent pair, the dual datum or test function of a duality.
    pub ic2: IcKind,
    pub ic2_scale: f64,
    pub ic2_shift: f64,

    pub replicas: usize,
    pub n_cap: f64,

    pub coupling: CouplingKind,
    /// Immigration rate of the upper member (the lower one has none).
    pub immigration: f64,

    pub particle_mode: ParticleMode,
    pub n: u32,
    pub ns: Vec<u32>,
    pub c1: f64,
    pub spde_replicas: usize,

    pub identity: Identity,
    pub s: f64,
    pub x: f64,
    /// Amplitude of the competition term `amp·1_{[0,T/2]}(t)·f₂(x)`.
    pub competition: f64,

    pub wave_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: None,
            seed: 0,
            out: PathBuf::from("kpplab-out"),
            jobs: 0,
            theta: 2.0,
            thetas: Vec::new(),
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            noise_amp: 1.0,
            dx: kpplab::spde::DEFAULT_DX,
            dt: kpplab::spde::DEFAULT_DT,
            window: WindowKind::Moving,
            window_lo: -10.0,
            window_hi: 10.0,
            scheme: Scheme::Feller,
            t_end: 1.0,
            snapshot_times: Vec::new(),
            ic: IcKind::Bump,
            ic_scale: 1.0,
            ic_shift: 0.0,
            ic_eps: 1.0,
            ic_x0: 0.0,
            ic2: IcKind::Bump,
            ic2_scale: 1.0,
            ic2_shift: 0.0,
            replicas: 1,
            n_cap: 50.0,
            coupling: CouplingKind::Monotone,
            immigration: 0.5,
            particle_mode: ParticleMode::Run,
            n: 16,
            ns: vec![16, 32, 64],
            c1: 1.0,
            spde_replicas: 100,
            identity: Identity::SelfDuality,
            s: 0.0,
            x: 0.0,
            competition: 1.0,
            wave_count: 10,
        }
    }
}

fn usage(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{field}: {msg}"))
}

fn build_ic(kind: IcKind, scale: f64, shift: f64, eps: f64, x0: f64, cap: f64) -> InitialCondition {
    let base = match kind {
        IcKind::Zero => return InitialCondition::Bump.scaled(0.0),
        IcKind::Bump => InitialCondition::Bump,
        IcKind::Heavyside => InitialCondition::Heavyside { eps, x0 },
        IcKind::SplitHeavyside => InitialCondition::SplitHeavyside,
        IcKind::ZetaRamp => InitialCondition::ZetaRamp { cap },
        IcKind::ZetaRampRight => InitialCondition::ZetaRampRight { cap },
    };
    let scaled = if scale == 1.0 { base } else { base.scaled(scale) };
    if shift == 0.0 {
        scaled
    } else {
        scaled.shifted(shift)
    }
}

impl ExperimentConfig {
    pub fn kind(&self) -> Result<Kind, CliError> {
        self.kind.ok_or_else(|| usage("kind", "experiment kind is not set"))
    }

    pub fn initial_condition(&self) -> InitialCondition {
        build_ic(self.ic, self.ic_scale, self.ic_shift, self.ic_eps, self.ic_x0, self.n_cap)
    }

    pub fn second_condition(&self) -> InitialCondition {
        build_ic(self.ic2, self.ic2_scale, self.ic2_shift, self.ic_eps, self.ic_x0, self.n_cap)
    }

    pub fn grid(&self) -> GridSpec {
        let g = GridSpec::new(self.dx, self.dt).with_scheme(match self.scheme {
            Scheme::Feller => NoiseScheme::Feller,
            Scheme::EulerMaruyama => NoiseScheme::EulerMaruyama,
        });
        match self.window {
            WindowKind::Moving => g,
            WindowKind::Fixed => g.with_window(WindowPolicy::Fixed { lo: self.window_lo, hi: self.window_hi }),
            WindowKind::TrailingRight => g.trailing_right(),
            WindowKind::TrailingLeft => g.trailing_left(),
        }
    }

    pub fn params(&self) -> SpdeParams {
        SpdeParams::kpp(self.theta)
            .with_alpha(self.alpha)
            .with_beta(self.beta)
            .with_gamma(self.gamma)
            .with_noise_amp(self.noise_amp)
    }

    pub fn particle_config(&self, n: u32) -> ParticleConfig {
        ParticleConfig { c1: self.c1, ..ParticleConfig::new(n) }
    }

    /// θ-list with the single-θ fallback.
    pub fn theta_list(&self) -> Vec<f64> {
        if self.thetas.is_empty() {
            vec![self.theta]
        } else {
            self.thetas.clone()
        }
    }

    /// Checks every module precondition the run will hit, naming the field.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(usage("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        let kind = self.kind()?;
        self.grid().validate().map_err(|e| usage("dx/dt/window", e))?;
        self.params().validate().map_err(|e| usage("theta/alpha/beta/gamma/noise_amp", e))?;
        let finite = |name: &str, v: f64| if v.is_finite() { Ok(()) } else { Err(usage(name, "must be finite")) };
        for (name, v) in [
            ("theta", self.theta),
            ("t_end", self.t_end),
            ("ic_scale", self.ic_scale),
            ("ic_shift", self.ic_shift),
            ("ic2_scale", self.ic2_scale),
            ("ic2_shift", self.ic2_shift),
            ("n_cap", self.n_cap),
            ("s", self.s),
            ("x", self.x),
        ] {
            finite(name, v)?;
        }
        if self.ic_scale < 0.0 || self.ic2_scale < 0.0 {
            return Err(usage("ic_scale/ic2_scale", "initial data must be nonnegative"));
        }
        if self.thetas.iter().any(|t| !t.is_finite()) {
            return Err(usage("thetas", "values must be finite"));
        }
        if let Some(t) = self.snapshot_times.iter().find(|&&t| !(0.0..=self.t_end).contains(&t)) {
            return Err(usage("snapshot_times", format!("{t} outside [0, t_end]")));
        }
        let increasing = |name: &str, xs: &[f64]| {
            if xs.windows(2).all(|w| w[0] < w[1]) {
                Ok(())
            } else {
                Err(usage(name, format!("must be strictly increasing, got {xs:?}")))
            }
        };
        let min_replicas = |n: usize| {
            if self.replicas >= n {
                Ok(())
            } else {
                Err(usage("replicas", format!("need at least {n}, got {}", self.replicas)))
            }
        };
        let positive = |name: &str, v: f64| if v > 0.0 { Ok(()) } else { Err(usage(name, format!("must be positive, got {v}"))) };
        match kind {
            Kind::Simulate => {
                positive("t_end", self.t_end)?;
                min_replicas(1)?;
            }
            Kind::Couple => {
                positive("t_end", self.t_end)?;
                min_replicas(1)?;
                if self.coupling == CouplingKind::Theta {
                    let ts = self.theta_list();
                    if ts.len() < 2 {
                        return Err(usage("thetas", "theta coupling needs at least two values"));
                    }
                    increasing("thetas", &ts)?;
                }
                if self.coupling == CouplingKind::Immigration && self.immigration < 0.0 {
                    return Err(usage("immigration", "must be nonnegative"));
                }
            }
            Kind::Particle => {
                positive("t_end", self.t_end)?;
                positive("c1", self.c1)?;
                min_replicas(1)?;
                match self.particle_mode {
                    ParticleMode::Run => {
                        let ts = self.theta_list();
                        if ts.len() > kpplab::particle::MAX_FAMILY {
                            return Err(usage("thetas", "at most 64 values"));
                        }
                        increasing("thetas", &ts)?;
                        self.particle_config(self.n).validate().map_err(|e| usage("n", e))?;
                    }
                    ParticleMode::Compare => {
                        min_replicas(2)?;
                        if self.spde_replicas < 2 {
                            return Err(usage("spde_replicas", "need at least 2"));
                        }
                        if self.ns.is_empty() {
                            return Err(usage("ns", "need at least one scale"));
                        }
                        for &n in &self.ns {
                            self.particle_config(n).validate().map_err(|e| usage("ns", e))?;
                        }
                    }
                }
            }
            Kind::Speed => {
                if self.t_end < 1.0 {
                    return Err(usage("t_end", "speed estimates need t_end >= 1"));
                }
                min_replicas(2)?;
                positive("n_cap", self.n_cap)?;
                increasing("thetas", &self.theta_list())?;
            }
            Kind::Wave => {
                if self.t_end < 1.0 {
                    return Err(usage("t_end", "wave sampling needs t_end >= 1"));
                }
                positive("n_cap", self.n_cap)?;
                if self.wave_count == 0 {
                    return Err(usage("wave_count", "need at least one sample"));
                }
            }
            Kind::Duality => {
                positive("t_end", self.t_end)?;
                min_replicas(2)?;
                if self.identity == Identity::SelfDuality && !(0.0..=self.t_end).contains(&self.s) {
                    return Err(usage("s", format!("need 0 <= s <= t_end, got {}", self.s)));
                }
            }
            Kind::Sweep => {
                positive("t_end", self.t_end)?;
                min_replicas(2)?;
                increasing("thetas", &self.thetas)?;
            }
        }
        Ok(())
    }
}

/// Parses a raw override value: anything TOML accepts as a value keeps its
/// type, everything else is taken as a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

/// Collects `KPPLAB_<KEY>` overrides; keys are lower-cased.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|key| (key.to_ascii_lowercase(), v)))
        .collect();
    out.sort();
    out
}

/// Layers the config file, env overrides and CLI overrides into one config.
pub fn load(
    path: Option<&Path>,
    env: &[(String, String)],
    cli: &[(String, String)],
) -> Result<ExperimentConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in env.iter().chain(cli) {
        table.insert(k.clone(), parse_value(v));
    }
    ExperimentConfig::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

/// Parses `key=value` pairs given with `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    Ok((k.trim().to_owned(), v.trim().to_owned()))
}
