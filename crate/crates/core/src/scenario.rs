//! Scenario configuration, named experiments and result tables.
//!
//! Config files are flat `key = value` text under a `[scenario]` header:
//!
//! ```text
//! [scenario]
//! model = driven_collective      # cavity_full | two_atom_reduced | driven_collective
//! omega_over_gamma = 5
//! initial_state = theta_superposition
//! theta = 0
//! t_final = 20                   # units of 1/Γ
//! dt_out = 0.1
//! outputs = psi_plus_norm, singlet
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::lindblad::{
    atomic_state, build_cavity_liouvillian, build_driven_collective, build_two_atom_reduced,
    cavity_vacuum_state, evolve_with, photon_number, steady_state_from_initial, CavityParams,
    CollectiveSpace, EvolveOptions, Integrator, Liouvillian, Trajectory,
};
use crate::spin::{bell_states, build_coupled_basis, two_atom_dark_state, CoupledBasis, DickeBasis, DriveParams};
use crate::state::{
    atom_labels, fidelity_with_pure, trace_distance, von_neumann_entropy, DensityMatrix, Ket, Tolerances,
};
use crate::werner::{
    analytic_steady_populations, beta, classify_fidelity, fidelity_from_theta, four_particle_initial_state,
    four_particle_prediction, generalized_werner_state, steady_entropy_paper, theta_for_fidelity,
    two_atom_initial_state, werner_state, Drive, WernerSpec,
};
use crate::Error;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Malformed or inconsistent configuration, naming the offending field.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("config field `{field}`: {constraint}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
pub struct ConfigError {
    pub field: String,
    pub constraint: String,
    pub line: Option<usize>,
}

impl ConfigError {
    fn new(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            constraint: constraint.into(),
            line: None,
        }
    }

    fn at(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Engine {
        context: String,
        #[source]
        source: Error,
    },
}

impl ScenarioError {
    /// Process exit code: 2 for configuration problems, 3 for engine failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 2,
            ScenarioError::Engine { .. } => 3,
        }
    }
}

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, ScenarioError>;
}

impl<T> Context<T> for crate::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, ScenarioError> {
        self.map_err(|source| ScenarioError::Engine {
            context: what(),
            source,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CavityFull,
    TwoAtomReduced,
    DrivenCollective,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CavityFull => "cavity_full",
            ModelKind::TwoAtomReduced => "two_atom_reduced",
            ModelKind::DrivenCollective => "driven_collective",
        }
    }
}

impl FromStr for ModelKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "cavity_full" => Ok(ModelKind::CavityFull),
            "two_atom_reduced" => Ok(ModelKind::TwoAtomReduced),
            "driven_collective" => Ok(ModelKind::DrivenCollective),
            other => Err(ConfigError::new(
                "model",
                format!("unknown model `{other}`; expected cavity_full, two_atom_reduced or driven_collective"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialPreset {
    /// `|e,g⟩`
    Eg,
    /// `|g,e⟩`
    Ge,
    /// `sin θ|e,g⟩ + cos θ|g,e⟩`
    ThetaSuperposition,
    /// `sin θ|e,e,g,g⟩ + cos θ|g,g,e,e⟩`
    FourParticleTheta,
    /// Product-basis amplitudes, normalized on load.
    CustomAmplitudes(Vec<Complex64>),
}

impl InitialPreset {
    pub fn name(&self) -> &'static str {
        match self {
            InitialPreset::Eg => "eg",
            InitialPreset::Ge => "ge",
            InitialPreset::ThetaSuperposition => "theta_superposition",
            InitialPreset::FourParticleTheta => "four_particle_theta",
            InitialPreset::CustomAmplitudes(_) => "custom_amplitudes",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    /// `⟨Ψ⁺|ρ|Ψ⁺⟩/(1−F)` with F the initial singlet fidelity.
    PsiPlusNorm,
    PsiPlus,
    Singlet,
    PhiPlus,
    PhiMinus,
    FidelityPsiE,
    Pops,
    PhotonNumber,
    SectorWeights,
    Entropy,
}

impl Observable {
    pub const ALL: [Observable; 10] = [
        Observable::PsiPlusNorm,
        Observable::PsiPlus,
        Observable::Singlet,
        Observable::PhiPlus,
        Observable::PhiMinus,
        Observable::FidelityPsiE,
        Observable::Pops,
        Observable::PhotonNumber,
        Observable::SectorWeights,
        Observable::Entropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Observable::PsiPlusNorm => "psi_plus_norm",
            Observable::PsiPlus => "psi_plus",
            Observable::Singlet => "singlet",
            Observable::PhiPlus => "phi_plus",
            Observable::PhiMinus => "phi_minus",
            Observable::FidelityPsiE => "fidelity_psiE",
            Observable::Pops => "pops",
            Observable::PhotonNumber => "photon_number",
            Observable::SectorWeights => "sector_weights",
            Observable::Entropy => "entropy",
        }
    }

    fn needs_two_atoms(&self) -> bool {
        matches!(
            self,
            Observable::PsiPlusNorm
                | Observable::PsiPlus
                | Observable::Singlet
                | Observable::PhiPlus
                | Observable::PhiMinus
        )
    }
}

impl FromStr for Observable {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Observable::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Observable::ALL.iter().map(|o| o.name()).collect();
                ConfigError::new("outputs", format!("unknown observable `{s}`; expected one of {}", known.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegratorChoice {
    /// Exact propagator for small generators, adaptive otherwise.
    Auto,
    Adaptive,
    Exact,
}

/// Model parameters; unset values are `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    pub omega_over_gamma: Option<f64>,
    pub phi: Option<f64>,
    pub xi: Option<f64>,
    pub g: Option<f64>,
    pub kappa: Option<f64>,
    pub n_max: Option<usize>,
    pub theta: Option<f64>,
    pub n_particles: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub model: ModelKind,
    pub parameters: Parameters,
    pub initial_state: InitialPreset,
    pub t_final: f64,
    pub dt_out: f64,
    pub outputs: Vec<Observable>,
    pub integrator: IntegratorChoice,
}

const DEFAULT_N_MAX: usize = 2;
const MAX_COLLECTIVE_PARTICLES: usize = 4;

const KEYS: [&str; 15] = [
    "model",
    "omega_over_gamma",
    "phi",
    "xi",
    "g",
    "kappa",
    "n_max",
    "theta",
    "n_particles",
    "initial_state",
    "amplitudes",
    "t_final",
    "dt_out",
    "outputs",
    "integrator",
];

fn parse_real(field: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value
        .parse()
        .map_err(|_| ConfigError::new(field, format!("`{value}` is not a number")))?;
    if !v.is_finite() {
        return Err(ConfigError::new(field, "must be finite"));
    }
    Ok(v)
}

fn parse_count(field: &str, value: &str) -> Result<usize, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::new(field, format!("`{value}` is not a non-negative integer")))
}

/// `re` or `re:im`, comma separated.
fn parse_amplitudes(value: &str) -> Result<Vec<Complex64>, ConfigError> {
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            let (re, im) = match item.split_once(':') {
                Some((a, b)) => (a.trim(), b.trim()),
                None => (item, "0"),
            };
            Ok(Complex64::new(parse_real("amplitudes", re)?, parse_real("amplitudes", im)?))
        })
        .collect()
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
        let mut seen_header = false;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if line != "[scenario]" {
                    return Err(ConfigError::new("[section]", format!("unknown section {line}")).at(line_no));
                }
                if seen_header {
                    return Err(ConfigError::new("[scenario]", "section declared twice").at(line_no));
                }
                seen_header = true;
                continue;
            }
            if !seen_header {
                return Err(ConfigError::new("[scenario]", "file must start with a [scenario] header").at(line_no));
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, "expected `key = value`").at(line_no))?;
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::new(key, "unknown key").at(line_no));
            }
            if value.is_empty() {
                return Err(ConfigError::new(key, "empty value").at(line_no));
            }
            if entries.insert(key, (value, line_no)).is_some() {
                return Err(ConfigError::new(key, "given more than once").at(line_no));
            }
        }
        if !seen_header {
            return Err(ConfigError::new("[scenario]", "missing [scenario] header"));
        }
        Self::from_entries(&entries)
    }

    fn from_entries(entries: &BTreeMap<&str, (&str, usize)>) -> Result<Self, ConfigError> {
        let at = |key: &str, e: ConfigError| match entries.get(key) {
            Some((_, line)) => e.at(*line),
            None => e,
        };
        let real = |key: &str| -> Result<Option<f64>, ConfigError> {
            entries
                .get(key)
                .map(|(v, _)| parse_real(key, v).map_err(|e| at(key, e)))
                .transpose()
        };
        let count = |key: &str| -> Result<Option<usize>, ConfigError> {
            entries
                .get(key)
                .map(|(v, _)| parse_count(key, v).map_err(|e| at(key, e)))
                .transpose()
        };

        let model: ModelKind = entries
            .get("model")
            .ok_or_else(|| ConfigError::new("model", "required"))?
            .0
            .parse()
            .map_err(|e| at("model", e))?;
        let parameters = Parameters {
            omega_over_gamma: real("omega_over_gamma")?,
            phi: real("phi")?,
            xi: real("xi")?,
            g: real("g")?,
            kappa: real("kappa")?,
            n_max: count("n_max")?,
            theta: real("theta")?,
            n_particles: count("n_particles")?,
        };
        let initial_state = match entries.get("initial_state").map(|(v, _)| *v) {
            None => return Err(ConfigError::new("initial_state", "required")),
            Some("eg") => InitialPreset::Eg,
            Some("ge") => InitialPreset::Ge,
            Some("theta_superposition") => InitialPreset::ThetaSuperposition,
            Some("four_particle_theta") => InitialPreset::FourParticleTheta,
            Some("custom_amplitudes") => {
                let (v, line) = entries
                    .get("amplitudes")
                    .ok_or_else(|| ConfigError::new("amplitudes", "required for initial_state = custom_amplitudes"))?;
                InitialPreset::CustomAmplitudes(parse_amplitudes(v).map_err(|e| e.at(*line))?)
            }
            Some(other) => {
                return Err(at(
                    "initial_state",
                    ConfigError::new(
                        "initial_state",
                        format!(
                            "unknown preset `{other}`; expected eg, ge, theta_superposition, four_particle_theta or custom_amplitudes"
                        ),
                    ),
                ))
            }
        };
        if entries.contains_key("amplitudes") && !matches!(initial_state, InitialPreset::CustomAmplitudes(_)) {
            return Err(at(
                "amplitudes",
                ConfigError::new("amplitudes", "only used with initial_state = custom_amplitudes"),
            ));
        }
        let t_final = real("t_final")?.ok_or_else(|| ConfigError::new("t_final", "required"))?;
        let dt_out = real("dt_out")?.unwrap_or(t_final / 200.0);
        let outputs = match entries.get("outputs") {
            None => vec![Observable::Pops],
            Some((v, line)) => {
                let mut out = Vec::new();
                for name in v.split(',').map(str::trim) {
                    let o: Observable = name.parse().map_err(|e: ConfigError| e.at(*line))?;
                    if out.contains(&o) {
                        return Err(ConfigError::new("outputs", format!("`{name}` listed twice")).at(*line));
                    }
                    out.push(o);
                }
                out
            }
        };
        let integrator = match entries.get("integrator").map(|(v, _)| *v) {
            None | Some("auto") => IntegratorChoice::Auto,
            Some("adaptive") => IntegratorChoice::Adaptive,
            Some("exact") => IntegratorChoice::Exact,
            Some(other) => {
                return Err(at(
                    "integrator",
                    ConfigError::new("integrator", format!("unknown integrator `{other}`; expected auto, adaptive or exact")),
                ))
            }
        };
        let config = Self {
            model,
            parameters,
            initial_state,
            t_final,
            dt_out,
            outputs,
            integrator,
        };
        config.validate().map_err(|e| {
            let field = e.field.clone();
            at(&field, e)
        })?;
        Ok(config)
    }

    /// Checks ranges and model/preset/observable compatibility.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.parameters;
        if !(self.t_final > 0.0) {
            return Err(ConfigError::new("t_final", format!("must be > 0, got {}", self.t_final)));
        }
        if !(self.dt_out > 0.0) {
            return Err(ConfigError::new("dt_out", format!("must be > 0, got {}", self.dt_out)));
        }
        if self.t_final / self.dt_out > 1e6 {
            return Err(ConfigError::new("dt_out", "more than 10^6 output samples requested"));
        }

        let allowed: &[&str] = match self.model {
            ModelKind::CavityFull => &["g", "kappa", "xi", "n_max", "theta"],
            ModelKind::TwoAtomReduced => &["xi", "theta"],
            ModelKind::DrivenCollective => &["omega_over_gamma", "phi", "n_particles", "theta"],
        };
        let given = [
            ("omega_over_gamma", p.omega_over_gamma.is_some()),
            ("phi", p.phi.is_some()),
            ("xi", p.xi.is_some()),
            ("g", p.g.is_some()),
            ("kappa", p.kappa.is_some()),
            ("n_max", p.n_max.is_some()),
            ("theta", p.theta.is_some()),
            ("n_particles", p.n_particles.is_some()),
        ];
        for (name, present) in given {
            if present && !allowed.contains(&name) {
                return Err(ConfigError::new(name, format!("not a parameter of model {}", self.model.name())));
            }
        }
        let require = |name: &str, v: Option<f64>| -> Result<f64, ConfigError> {
            v.ok_or_else(|| ConfigError::new(name, format!("required for model {}", self.model.name())))
        };
        match self.model {
            ModelKind::CavityFull => {
                if !(require("g", p.g)? > 0.0) {
                    return Err(ConfigError::new("g", "must be > 0"));
                }
                if !(require("kappa", p.kappa)? > 0.0) {
                    return Err(ConfigError::new("kappa", "must be > 0"));
                }
                require("xi", p.xi)?;
                if let Some(n) = p.n_max {
                    if !(1..=10).contains(&n) {
                        return Err(ConfigError::new("n_max", format!("must lie in 1..=10, got {n}")));
                    }
                }
            }
            ModelKind::TwoAtomReduced => {
                require("xi", p.xi)?;
            }
            ModelKind::DrivenCollective => {
                if !(require("omega_over_gamma", p.omega_over_gamma)? >= 0.0) {
                    return Err(ConfigError::new("omega_over_gamma", "must be ≥ 0"));
                }
                let n = self.n_atoms();
                if n < 2 || !n.is_multiple_of(2) || n > MAX_COLLECTIVE_PARTICLES {
                    return Err(ConfigError::new(
                        "n_particles",
                        format!("must be 2 or 4, got {n}"),
                    ));
                }
            }
        }

        let n = self.n_atoms();
        match &self.initial_state {
            InitialPreset::Eg | InitialPreset::Ge | InitialPreset::ThetaSuperposition if n != 2 => {
                return Err(ConfigError::new(
                    "initial_state",
                    format!("{} needs two atoms, model has {n}", self.initial_state.name()),
                ));
            }
            InitialPreset::FourParticleTheta if n != 4 => {
                return Err(ConfigError::new(
                    "initial_state",
                    format!("four_particle_theta needs n_particles = 4, model has {n}"),
                ));
            }
            InitialPreset::CustomAmplitudes(a) => {
                if a.len() != 1 << n {
                    return Err(ConfigError::new(
                        "amplitudes",
                        format!("expected {} product-basis amplitudes, got {}", 1 << n, a.len()),
                    ));
                }
                if a.iter().map(|z| z.norm_sqr()).sum::<f64>() < 1e-24 {
                    return Err(ConfigError::new("amplitudes", "all amplitudes are zero"));
                }
            }
            _ => {}
        }
        let needs_theta = matches!(
            self.initial_state,
            InitialPreset::ThetaSuperposition | InitialPreset::FourParticleTheta
        );
        if needs_theta && p.theta.is_none() {
            return Err(ConfigError::new("theta", format!("required for initial_state = {}", self.initial_state.name())));
        }
        if !needs_theta && p.theta.is_some() {
            return Err(ConfigError::new("theta", format!("not used by initial_state = {}", self.initial_state.name())));
        }

        for o in &self.outputs {
            let ok = match o {
                _ if o.needs_two_atoms() => n == 2,
                Observable::FidelityPsiE => self.model != ModelKind::DrivenCollective,
                Observable::PhotonNumber => self.model == ModelKind::CavityFull,
                Observable::SectorWeights => self.model == ModelKind::DrivenCollective,
                _ => true,
            };
            if !ok {
                return Err(ConfigError::new(
                    "outputs",
                    format!("`{}` is not available for model {} with {n} atoms", o.name(), self.model.name()),
                ));
            }
        }
        Ok(())
    }

    pub fn n_atoms(&self) -> usize {
        match self.model {
            ModelKind::DrivenCollective => self.parameters.n_particles.unwrap_or(2),
            _ => 2,
        }
    }

    /// Canonical `key = value` rendering, parseable by [`ScenarioConfig::parse`].
    pub fn echo(&self) -> Vec<(String, String)> {
        let p = &self.parameters;
        let mut out = vec![("model".to_string(), self.model.name().to_string())];
        let reals = [
            ("omega_over_gamma", p.omega_over_gamma),
            ("phi", p.phi),
            ("xi", p.xi),
            ("g", p.g),
            ("kappa", p.kappa),
            ("theta", p.theta),
        ];
        for (k, v) in reals {
            if let Some(v) = v {
                out.push((k.into(), format_float(v)));
            }
        }
        for (k, v) in [("n_max", p.n_max), ("n_particles", p.n_particles)] {
            if let Some(v) = v {
                out.push((k.into(), v.to_string()));
            }
        }
        out.push(("initial_state".into(), self.initial_state.name().into()));
        if let InitialPreset::CustomAmplitudes(a) = &self.initial_state {
            let items: Vec<String> = a
                .iter()
                .map(|z| format!("{}:{}", format_float(z.re), format_float(z.im)))
                .collect();
            out.push(("amplitudes".into(), items.join(", ")));
        }
        out.push(("t_final".into(), format_float(self.t_final)));
        out.push(("dt_out".into(), format_float(self.dt_out)));
        let names: Vec<&str> = self.outputs.iter().map(|o| o.name()).collect();
        out.push(("outputs".into(), names.join(", ")));
        let integrator = match self.integrator {
            IntegratorChoice::Auto => "auto",
            IntegratorChoice::Adaptive => "adaptive",
            IntegratorChoice::Exact => "exact",
        };
        out.push(("integrator".into(), integrator.into()));
        out
    }
}

/// 17 significant digits, identical across runs and platforms.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rectangular numeric table with ordered, unique column names.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    metadata: BTreeMap<String, String>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>) -> crate::Result<Self> {
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(Error::Shape(format!("duplicate column `{c}`")));
            }
        }
        Ok(Self {
            columns,
            rows: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> crate::Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Shape(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.column(name)?.last().copied()
    }

    /// `#`-prefixed metadata lines, then the header, then rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|&v| format_float(v))).expect("in-memory write");
        }
        let body = w.into_inner().expect("in-memory flush");
        out.push_str(&String::from_utf8(body).expect("ASCII output"));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite values serialize")
    }

    /// Worst diagnostics over all rows, if the table carries them.
    pub fn tolerance_report(&self) -> String {
        let tol = Tolerances::ENGINE;
        let mut lines = vec![format!(
            "engine tolerances: hermiticity {:e}, trace {:e}, min eigenvalue {:e}",
            tol.hermiticity, tol.trace, tol.min_eigenvalue
        )];
        if let Some(tr) = self.column("trace_error") {
            let worst = tr.iter().copied().fold(0.0, f64::max);
            lines.push(format!("max trace_error: {worst:e} ({})", verdict(worst <= tol.trace)));
        }
        if let Some(me) = self.column("min_eig") {
            let worst = me.iter().copied().fold(f64::INFINITY, f64::min);
            lines.push(format!("min min_eig: {worst:e} ({})", verdict(worst >= tol.min_eigenvalue)));
        }
        lines.join("\n")
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "VIOLATED"
    }
}

fn base_metadata(table: &mut ResultTable, scenario: &str) {
    let tol = Tolerances::ENGINE;
    let opts = EvolveOptions::default();
    table.set_meta("scenario", scenario);
    table.set_meta("engine_version", ENGINE_VERSION);
    table.set_meta("time_unit", "1/Gamma");
    table.set_meta(
        "tolerances",
        format!(
            "hermiticity={:e} trace={:e} min_eigenvalue={:e} rtol={:e} atol={:e}",
            tol.hermiticity, tol.trace, tol.min_eigenvalue, opts.rtol, opts.atol
        ),
    );
}

/// Model instance ready to integrate, with a map back to two-atom product
/// coordinates when one exists.
struct Prepared {
    liouvillian: Liouvillian,
    rho0: DensityMatrix,
    coupled: Option<CoupledBasis>,
    n_max: Option<usize>,
}

impl Prepared {
    /// Atomic state in the product basis.
    fn atoms(&self, rho: &DensityMatrix) -> crate::Result<DensityMatrix> {
        match (&self.coupled, self.n_max) {
            (_, Some(n_max)) => atomic_state(rho, n_max),
            (Some(basis), None) => rho.transformed(&basis.unitary().adjoint(), atom_labels(basis.n_particles())),
            (None, None) => Ok(rho.clone()),
        }
    }
}

fn product_initial(config: &ScenarioConfig) -> crate::Result<Ket> {
    let n = config.n_atoms();
    let labels = atom_labels(n);
    let theta = config.parameters.theta.unwrap_or(0.0);
    match &config.initial_state {
        InitialPreset::Eg => Ket::basis(labels, 1),
        InitialPreset::Ge => Ket::basis(labels, 2),
        InitialPreset::ThetaSuperposition => Ok(two_atom_initial_state(theta)),
        InitialPreset::FourParticleTheta => Ok(four_particle_initial_state(theta)),
        InitialPreset::CustomAmplitudes(a) => {
            Ket::unnormalized(crate::CVector::from_column_slice(a), labels)?.normalized()
        }
    }
}

fn prepare(config: &ScenarioConfig) -> crate::Result<Prepared> {
    let p = &config.parameters;
    let ket = product_initial(config)?;
    match config.model {
        ModelKind::CavityFull => {
            let (g, kappa) = (p.g.unwrap_or(1.0), p.kappa.unwrap_or(1.0));
            let n_max = p.n_max.unwrap_or(DEFAULT_N_MAX);
            let params = rescaled_cavity(g, kappa, p.xi.unwrap_or(0.0), n_max);
            Ok(Prepared {
                liouvillian: build_cavity_liouvillian(&params)?,
                rho0: cavity_vacuum_state(&ket, n_max)?,
                coupled: None,
                n_max: Some(n_max),
            })
        }
        ModelKind::TwoAtomReduced => Ok(Prepared {
            liouvillian: build_two_atom_reduced(p.xi.unwrap_or(0.0), 1.0)?,
            rho0: ket.projector(),
            coupled: None,
            n_max: None,
        }),
        ModelKind::DrivenCollective => {
            let basis = build_coupled_basis(config.n_atoms())?;
            let drive = DriveParams::new(p.omega_over_gamma.unwrap_or(0.0), p.phi.unwrap_or(0.0), 1.0)?;
            let l = build_driven_collective(&CollectiveSpace::Coupled(basis.clone()), &drive)?;
            let rho0 = DensityMatrix::pure(&basis.to_coupled(&ket)?);
            Ok(Prepared {
                liouvillian: l,
                rho0,
                coupled: Some(basis),
                n_max: None,
            })
        }
    }
}

/// Cavity parameters in units where `Γ = 𝒢²/κ = 1`.
pub fn rescaled_cavity(g: f64, kappa: f64, xi: f64, n_max: usize) -> CavityParams {
    let gamma = g * g / kappa;
    CavityParams {
        g: g / gamma,
        kappa: kappa / gamma,
        xi,
        n_max,
    }
}

fn evolve_options(choice: IntegratorChoice, dim: usize) -> EvolveOptions {
    let integrator = match choice {
        IntegratorChoice::Adaptive => Integrator::Adaptive,
        IntegratorChoice::Exact => Integrator::ExactPropagator,
        IntegratorChoice::Auto if dim <= 32 => Integrator::ExactPropagator,
        IntegratorChoice::Auto => Integrator::Adaptive,
    };
    EvolveOptions {
        integrator,
        ..EvolveOptions::default()
    }
}

fn integrator_name(opts: &EvolveOptions) -> &'static str {
    match opts.integrator {
        Integrator::Adaptive => "adaptive_dp54",
        Integrator::ExactPropagator => "exact_propagator",
    }
}

/// Runs a configured scenario: one row per output time, observables in the
/// order requested, then the `trace_error` and `min_eig` diagnostics.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ResultTable, ScenarioError> {
    config.validate()?;
    let prepared = prepare(config).context(|| format!("building {} model", config.model.name()))?;
    let opts = evolve_options(config.integrator, prepared.liouvillian.dim());
    let traj = evolve_with(&prepared.liouvillian, &prepared.rho0, config.t_final, config.dt_out, &opts)
        .context(|| format!("evolving {} model", config.model.name()))?;

    let bell = bell_states();
    let initial_atoms = prepared.atoms(&prepared.rho0).context(|| "reducing initial state".into())?;
    let f0 = if config.n_atoms() == 2 {
        fidelity_with_pure(&initial_atoms, &bell.psi_minus).context(|| "initial singlet fidelity".into())?
    } else {
        0.0
    };
    if config.outputs.contains(&Observable::PsiPlusNorm) && (1.0 - f0).abs() < 1e-12 {
        return Err(ScenarioError::Engine {
            context: "psi_plus_norm".into(),
            source: Error::DegenerateNormalization("initial singlet fidelity is 1, so 1 − F vanishes".into()),
        });
    }

    let mut columns = vec!["t".to_string()];
    for o in &config.outputs {
        match o {
            Observable::PsiPlusNorm => columns.push("psi_plus_normalized".into()),
            Observable::Pops => {
                let labels = match config.model {
                    ModelKind::DrivenCollective => prepared.liouvillian.labels().to_vec(),
                    _ => atom_labels(2),
                };
                columns.extend(labels.iter().map(|l| format!("pop[{l}]")));
            }
            Observable::SectorWeights => {
                for s in prepared.liouvillian.sectors().unwrap_or_default() {
                    columns.push(format!("weight_{}", s.name));
                }
            }
            other => columns.push(other.name().into()),
        }
    }
    columns.push("trace_error".into());
    columns.push("min_eig".into());
    let mut table = ResultTable::new(columns).context(|| "result columns".into())?;

    for ((t, rho), diag) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        let atoms = prepared.atoms(rho).context(|| format!("reducing state at t = {t}"))?;
        let mut row = vec![*t];
        for o in &config.outputs {
            let weight = |k: &Ket| fidelity_with_pure(&atoms, k).context(|| format!("{} at t = {t}", o.name()));
            match o {
                Observable::PsiPlusNorm => row.push(weight(&bell.psi_plus)? / (1.0 - f0)),
                Observable::PsiPlus => row.push(weight(&bell.psi_plus)?),
                Observable::Singlet => row.push(weight(&bell.psi_minus)?),
                Observable::PhiPlus => row.push(weight(&bell.phi_plus)?),
                Observable::PhiMinus => row.push(weight(&bell.phi_minus)?),
                Observable::FidelityPsiE => {
                    row.push(weight(&two_atom_dark_state(config.parameters.xi.unwrap_or(0.0)))?)
                }
                Observable::Pops => match config.model {
                    ModelKind::DrivenCollective => row.extend(rho.populations()),
                    _ => row.extend(atoms.populations()),
                },
                Observable::PhotonNumber => row.push(photon_number(rho, prepared.n_max.unwrap_or(0))),
                Observable::SectorWeights => {
                    for s in prepared.liouvillian.sectors().unwrap_or_default() {
                        row.push(s.weight(rho.entries()));
                    }
                }
                Observable::Entropy => {
                    row.push(von_neumann_entropy(&atoms).context(|| format!("entropy at t = {t}"))?)
                }
            }
        }
        row.push(diag.trace_error);
        row.push(diag.min_eigenvalue);
        table.push_row(row).context(|| "result row".into())?;
    }

    base_metadata(&mut table, "run");
    for (k, v) in config.echo() {
        table.set_meta(format!("config.{k}"), v);
    }
    table.set_meta("integrator", integrator_name(&opts));
    if config.n_atoms() == 2 {
        table.set_meta("initial_singlet_fidelity", format_float(f0));
    }
    record_trajectory_health(&mut table, &traj);
    Ok(table)
}

fn record_trajectory_health(table: &mut ResultTable, traj: &Trajectory) {
    let renorm = traj.diagnostics.iter().filter(|d| d.renormalized).count();
    let herm = traj.diagnostics.iter().map(|d| d.hermiticity_error).fold(0.0, f64::max);
    table.set_meta("renormalized_samples", renorm.to_string());
    table.set_meta("max_hermiticity_error", format_float(herm));
}

/// Default number of samples for [`figure_1a`].
pub const FIG1A_SAMPLES: usize = 200;

/// `⟨Ψ⁺|ρ|Ψ⁺⟩/(1−F)` and the other Bell weights of the driven pair started
/// from `sin θ|e,g⟩ + cos θ|g,e⟩`.
pub fn figure_1a(theta: f64, omega_over_gamma: f64, t_final: f64) -> Result<ResultTable, ScenarioError> {
    let config = ScenarioConfig {
        model: ModelKind::DrivenCollective,
        parameters: Parameters {
            omega_over_gamma: Some(omega_over_gamma),
            theta: Some(theta),
            ..Parameters::default()
        },
        initial_state: InitialPreset::ThetaSuperposition,
        t_final,
        dt_out: t_final / FIG1A_SAMPLES as f64,
        outputs: vec![
            Observable::PsiPlusNorm,
            Observable::PhiPlus,
            Observable::PhiMinus,
            Observable::Singlet,
        ],
        integrator: IntegratorChoice::Auto,
    };
    let mut table = run_scenario(&config)?;
    table.set_meta("scenario", "fig1a");
    table.set_meta("fidelity", format_float(fidelity_from_theta(theta)));
    Ok(table)
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

pub fn default_fig1b_grid() -> Vec<f64> {
    log_grid(0.05, 100.0, 60)
}

/// Threshold above which closed-form and engine populations are flagged.
pub const FIG1B_AGREEMENT: f64 = 1e-6;

/// `β(Ω/Γ)` from the closed form, checked against the engine steady state of
/// the driven triplet. Grid points run in parallel; row order follows the grid.
pub fn figure_1b(grid: &[f64]) -> Result<ResultTable, ScenarioError> {
    if grid.is_empty() {
        return Err(ConfigError::new("grid", "must not be empty").into());
    }
    if let Some(bad) = grid.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(ConfigError::new("grid", format!("entries must be finite and ≥ 0, got {bad}")).into());
    }
    let rows: Vec<Result<Vec<f64>, ScenarioError>> = grid.par_iter().map(|&x| figure_1b_row(x)).collect();
    let columns = [
        "omega_over_gamma",
        "beta",
        "beta_minus_ln_one_third",
        "beta_engine",
        "max_population_difference",
        "disagreement_flag",
    ];
    let mut table = ResultTable::new(columns.iter().map(|c| c.to_string()).collect()).context(|| "columns".into())?;
    for row in rows {
        table.push_row(row?).context(|| "result row".into())?;
    }
    base_metadata(&mut table, "fig1b");
    table.set_meta("agreement_threshold", format_float(FIG1B_AGREEMENT));
    table.set_meta("points", grid.len().to_string());
    Ok(table)
}

fn figure_1b_row(x: f64) -> Result<Vec<f64>, ScenarioError> {
    let ctx = || format!("fig1b at omega_over_gamma = {x}");
    let closed = analytic_steady_populations(x).context(ctx)?.as_array();
    let b = beta(x).context(ctx)?;
    let basis = DickeBasis::new(2);
    let drive = DriveParams::with_ratio(x).context(ctx)?;
    let l = build_driven_collective(&CollectiveSpace::Dicke(basis), &drive).context(ctx)?;
    let top = Ket::basis(basis.labels(), 0).context(ctx)?.projector();
    let ss = steady_state_from_initial(&l, &top).context(ctx)?;
    let engine = ss.populations();
    let diff = closed.iter().zip(&engine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let b_engine: f64 = engine.iter().map(|&p| crate::state::x_ln_x(p.max(0.0))).sum();
    let flag = if diff > FIG1B_AGREEMENT { 1.0 } else { 0.0 };
    Ok(vec![x, b, b - (1.0f64 / 3.0).ln(), b_engine, diff, flag])
}

/// Output of [`four_particle_scenario`].
#[derive(Clone, Debug, Serialize)]
pub struct FourParticleReport {
    /// Sector weights over time.
    pub trajectory: ResultTable,
    /// Final coupled-basis populations against the closed-form prediction.
    pub populations: ResultTable,
    pub max_diagonal_error: f64,
    /// Largest `|ρᵢⱼ|` between different `(S, copy)` blocks at `t_final`.
    pub max_cross_copy_coherence: f64,
    /// Largest deviation of the `|0,0⟩₁` weight from its initial value.
    pub singlet_drift: f64,
}

pub fn four_particle_scenario(theta: f64, omega_over_gamma: f64, t_final: f64) -> Result<FourParticleReport, ScenarioError> {
    if !(t_final > 0.0) {
        return Err(ConfigError::new("t_final", "must be > 0").into());
    }
    let config = ScenarioConfig {
        model: ModelKind::DrivenCollective,
        parameters: Parameters {
            omega_over_gamma: Some(omega_over_gamma),
            theta: Some(theta),
            n_particles: Some(4),
            ..Parameters::default()
        },
        initial_state: InitialPreset::FourParticleTheta,
        t_final,
        dt_out: t_final / 100.0,
        outputs: vec![Observable::SectorWeights],
        integrator: IntegratorChoice::Exact,
    };
    config.validate()?;
    let prepared = prepare(&config).context(|| "building four-particle model".into())?;
    let opts = evolve_options(IntegratorChoice::Exact, 16);
    let traj = evolve_with(&prepared.liouvillian, &prepared.rho0, t_final, config.dt_out, &opts)
        .context(|| "evolving four-particle model".into())?;
    let basis = prepared.coupled.as_ref().expect("driven model carries its basis");
    let sectors = prepared.liouvillian.sectors().unwrap_or_default().to_vec();

    let mut columns = vec!["t".to_string()];
    columns.extend(sectors.iter().map(|s| format!("weight_{}", s.name)));
    columns.extend(["trace_error".to_string(), "min_eig".to_string()]);
    let mut trajectory = ResultTable::new(columns).context(|| "columns".into())?;
    let singlet = basis.index_of(0, 0, 1).expect("four spins have a singlet");
    let f0 = prepared.rho0.population(singlet);
    let mut singlet_drift = 0.0_f64;
    for ((t, rho), d) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        let mut row = vec![*t];
        row.extend(sectors.iter().map(|s| s.weight(rho.entries())));
        row.extend([d.trace_error, d.min_eigenvalue]);
        singlet_drift = singlet_drift.max((rho.population(singlet) - f0).abs());
        trajectory.push_row(row).context(|| "row".into())?;
    }

    let prediction = four_particle_prediction(theta);
    let predicted = generalized_werner_state(&prediction, basis).context(|| "closed-form state".into())?;
    let last = traj.last();
    let mut populations = ResultTable::new(
        ["index", "two_s", "two_m", "copy", "measured", "predicted", "abs_error"]
            .iter()
            .map(|c| c.to_string())
            .collect(),
    )
    .context(|| "columns".into())?;
    let mut max_diagonal_error = 0.0_f64;
    for (i, label) in basis.labels().iter().enumerate() {
        let m = last.population(i);
        let p = predicted.population(i);
        max_diagonal_error = max_diagonal_error.max((m - p).abs());
        populations
            .push_row(vec![i as f64, label.two_s as f64, label.two_m as f64, label.copy as f64, m, p, (m - p).abs()])
            .context(|| "row".into())?;
    }
    let mut owner = vec![0usize; basis.dim()];
    for (k, s) in sectors.iter().enumerate() {
        for &i in &s.indices {
            owner[i] = k;
        }
    }
    let mut max_cross_copy_coherence = 0.0_f64;
    for i in 0..basis.dim() {
        for j in 0..basis.dim() {
            if owner[i] != owner[j] {
                max_cross_copy_coherence = max_cross_copy_coherence.max(last.entries()[(i, j)].norm());
            }
        }
    }

    for table in [&mut trajectory, &mut populations] {
        base_metadata(table, "four_particle");
        table.set_meta("theta", format_float(theta));
        table.set_meta("omega_over_gamma", format_float(omega_over_gamma));
        table.set_meta("t_final", format_float(t_final));
        table.set_meta("integrator", integrator_name(&opts));
        table.set_meta("predicted_fidelity", format_float(prediction.fidelity()));
        table.set_meta("predicted_alpha_S1", format_float(prediction.alpha(2)));
        table.set_meta("predicted_alpha_S2", format_float(prediction.alpha(4)));
        table.set_meta("max_diagonal_error", format_float(max_diagonal_error));
        table.set_meta("max_cross_copy_coherence", format_float(max_cross_copy_coherence));
        table.set_meta("singlet_drift", format_float(singlet_drift));
    }
    Ok(FourParticleReport {
        trajectory,
        populations,
        max_diagonal_error,
        max_cross_copy_coherence,
        singlet_drift,
    })
}

/// Full atom–cavity model against the reduced model with `Γ = 𝒢²/κ`, from
/// `|e,g,0⟩`. Times are in `1/Γ`. The table metadata records how much the
/// atomic state moves when the Fock space is enlarged by one photon.
pub fn cavity_compare(
    g: f64,
    kappa: f64,
    xi: f64,
    n_max: usize,
    t_final: f64,
    dt_out: f64,
) -> Result<ResultTable, ScenarioError> {
    let config = ScenarioConfig {
        model: ModelKind::CavityFull,
        parameters: Parameters {
            g: Some(g),
            kappa: Some(kappa),
            xi: Some(xi),
            n_max: Some(n_max),
            ..Parameters::default()
        },
        initial_state: InitialPreset::Eg,
        t_final,
        dt_out,
        outputs: vec![],
        integrator: IntegratorChoice::Auto,
    };
    config.validate()?;
    let atoms = Ket::basis(atom_labels(2), 1).context(|| "initial ket".into())?;
    let run_full = |n: usize| -> Result<(Trajectory, EvolveOptions), ScenarioError> {
        let l = build_cavity_liouvillian(&rescaled_cavity(g, kappa, xi, n)).context(|| "building cavity model".into())?;
        let rho0 = cavity_vacuum_state(&atoms, n).context(|| "cavity initial state".into())?;
        let opts = evolve_options(IntegratorChoice::Auto, l.dim());
        let traj = evolve_with(&l, &rho0, t_final, dt_out, &opts).context(|| format!("evolving cavity model (n_max = {n})"))?;
        Ok((traj, opts))
    };
    let (full, opts) = run_full(n_max)?;
    let (check, _) = run_full(n_max + 1)?;
    let reduced_l = build_two_atom_reduced(xi, 1.0).context(|| "building reduced model".into())?;
    let reduced = evolve_with(&reduced_l, &atoms.projector(), t_final, dt_out, &evolve_options(IntegratorChoice::Auto, 4))
        .context(|| "evolving reduced model".into())?;

    let dark = two_atom_dark_state(xi);
    let columns = [
        "t",
        "trace_distance",
        "photon_number",
        "fidelity_psiE_full",
        "fidelity_psiE_reduced",
        "trace_error",
        "min_eig",
    ];
    let mut table = ResultTable::new(columns.iter().map(|c| c.to_string()).collect()).context(|| "columns".into())?;
    let mut truncation = 0.0_f64;
    for k in 0..full.len() {
        let t = full.times[k];
        let ctx = || format!("cavity comparison at t = {t}");
        let a_full = atomic_state(&full.states[k], n_max).context(ctx)?;
        let a_check = atomic_state(&check.states[k], n_max + 1).context(ctx)?;
        truncation = truncation.max(trace_distance(&a_full, &a_check).context(ctx)?);
        let a_red = &reduced.states[k];
        table
            .push_row(vec![
                t,
                trace_distance(&a_full, a_red).context(ctx)?,
                photon_number(&full.states[k], n_max),
                fidelity_with_pure(&a_full, &dark).context(ctx)?,
                fidelity_with_pure(a_red, &dark).context(ctx)?,
                full.diagnostics[k].trace_error,
                full.diagnostics[k].min_eigenvalue,
            ])
            .context(|| "row".into())?;
    }
    base_metadata(&mut table, "cavity_compare");
    table.set_meta("g", format_float(g));
    table.set_meta("kappa", format_float(kappa));
    table.set_meta("g_over_kappa", format_float(g / kappa));
    table.set_meta("gamma", format_float(g * g / kappa));
    table.set_meta("xi", format_float(xi));
    table.set_meta("n_max", n_max.to_string());
    table.set_meta("truncation_check", format!("max atomic trace distance vs n_max+1: {}", format_float(truncation)));
    table.set_meta("integrator", integrator_name(&opts));
    if g >= kappa {
        table.set_meta("regime", "not bad-cavity (g >= kappa); reduced model not expected to hold");
    }
    Ok(table)
}

/// Werner state for fidelity F: matrix rows with classification and entropies
/// in the metadata.
pub fn werner_report(fidelity: f64) -> Result<ResultTable, ScenarioError> {
    let spec = WernerSpec::new(fidelity).map_err(|_| ConfigError::new("fidelity", "must lie in [0, 1]"))?;
    let rho = werner_state(&spec);
    let labels = atom_labels(2);
    let mut columns = vec!["row".to_string()];
    columns.extend(labels.iter().map(|l| format!("re[{l}]")));
    let mut table = ResultTable::new(columns).context(|| "columns".into())?;
    for i in 0..4 {
        let mut row = vec![i as f64];
        row.extend((0..4).map(|j| rho.entries()[(i, j)].re));
        table.push_row(row).context(|| "row".into())?;
    }
    base_metadata(&mut table, "werner");
    table.set_meta("basis", labels.join(" "));
    table.set_meta("fidelity", format_float(fidelity));
    table.set_meta("classification", classify_fidelity(fidelity).to_string());
    table.set_meta("theta", format_float(theta_for_fidelity(fidelity).context(|| "theta".into())?));
    table.set_meta(
        "entropy_sum_lambda_ln_lambda",
        format_float(steady_entropy_paper(fidelity, Drive::Infinite).context(|| "entropy".into())?),
    );
    table.set_meta("von_neumann_entropy", format_float(von_neumann_entropy(&rho).context(|| "entropy".into())?));
    Ok(table)
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}
