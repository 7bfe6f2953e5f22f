//! TOML configuration shared by all subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use fascicle_core::cell_problem::TableSpec;
use fascicle_core::conductivity::{ConductivityLaw, LawKind};
use fascicle_core::geometry::{GeometryModel, Rect};
use fascicle_core::macro_solver::{
    Ceilings, InitialProfile, IntracellularBc, LambdaChoice, MacroConfig, Scheme, SigmaHom, Stimulus,
};
use fascicle_core::membrane::{lambda_bound, ClassWeights, FhnParams};
use fascicle_core::micro_reference::{MicroSweepSpec, PlanarField};
use fascicle_core::EffectiveLawTable;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{}: {field}: {message}", location(path, *line))]
    Validation { path: PathBuf, line: Option<usize>, field: String, message: String },
}

fn location(path: &Path, line: Option<usize>) -> String {
    match line {
        Some(l) => format!("{}:{}", path.display(), l),
        None => path.display().to_string(),
    }
}

impl ConfigError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub radii: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub jitter: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { radii: vec![0.2, 0.3], probabilities: vec![0.5, 1.0 / 6.0], jitter: 0.0 }
    }
}

/// Conductivity law in the `kind = ...` grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSection {
    Constant { sigma: f64 },
    Sigmoid { sigma0: f64, sigma1: f64, k_ep: f64, e_th: f64 },
    Table { knots: Vec<[f64; 2]> },
}

impl Default for LawSection {
    fn default() -> Self {
        LawSection::Sigmoid { sigma0: 1.0, sigma1: 3.0, k_ep: 2.0, e_th: 1.0 }
    }
}

impl LawSection {
    pub fn kind(&self) -> LawKind {
        match self.clone() {
            LawSection::Constant { sigma } => LawKind::Constant { sigma },
            LawSection::Sigmoid { sigma0, sigma1, k_ep, e_th } => LawKind::Sigmoid { sigma0, sigma1, k_ep, e_th },
            LawSection::Table { knots } => LawKind::Table { knots },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub window: f64,
    pub samples: usize,
    /// Random class-weight vectors in the radius identity check.
    pub weight_vectors: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self { window: 50.0, samples: 8, weight_vectors: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSection {
    pub xi1: Vec<f64>,
    pub xit: Vec<f64>,
    pub torus_side: usize,
    pub replicates: usize,
    pub grid_h: f64,
    pub tol: f64,
}

impl Default for TableSection {
    fn default() -> Self {
        Self {
            xi1: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            xit: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            torus_side: 4,
            replicates: 2,
            grid_h: 1.0 / 16.0,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSection {
    pub length: f64,
    /// Transverse extent of a 2D run.
    pub width: Option<f64>,
    pub intracellular_bc: IntracellularBc,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self { length: 30.0, width: None, intracellular_bc: IntracellularBc::Sealed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { nx: 601, ny: 1 }
    }
}

/// `"auto"` or a number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Value(f64),
    Word(String),
}

impl Default for LambdaSetting {
    fn default() -> Self {
        LambdaSetting::Word("auto".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    pub snapshot_every: usize,
    pub scheme: Scheme,
    pub lambda: LambdaSetting,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self { dt: 0.02, t_end: 40.0, snapshot_every: 50, scheme: Scheme::Imex, lambda: LambdaSetting::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FhnSection {
    pub c_m: f64,
    pub theta: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for FhnSection {
    fn default() -> Self {
        let p = FhnParams::default();
        Self { c_m: p.c_m, theta: p.theta, a: p.a, b: p.b }
    }
}

impl FhnSection {
    pub fn params(&self) -> FhnParams {
        FhnParams { c_m: self.c_m, theta: self.theta, a: self.a, b: self.b }
    }
}

/// Explicit class weights; empty lists mean "derive from the model".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassesSection {
    pub radius: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectiveSection {
    Linear { longitudinal: f64, transverse: f64 },
    /// Isotropic law in the conductivity grammar.
    Law { law: LawSection },
    /// JSON table written by `tabulate-sigma-hom`, relative to the config file.
    Table { path: PathBuf },
}

impl Default for EffectiveSection {
    fn default() -> Self {
        EffectiveSection::Linear { longitudinal: 1.0, transverse: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    #[default]
    Rest,
    Constant { v: f64, g: f64 },
    Bump { amplitude: f64, center: f64, width: f64 },
    Front { position: f64, width: f64 },
}


impl InitialSection {
    fn profile(&self) -> InitialProfile {
        match *self {
            InitialSection::Rest => InitialProfile::Rest,
            InitialSection::Constant { v, g } => InitialProfile::Constant { v, g },
            InitialSection::Bump { amplitude, center, width } => InitialProfile::Bump { amplitude, center, width },
            InitialSection::Front { position, width } => InitialProfile::Front { position, width },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_newton: usize,
    pub clamp_to_table: bool,
    pub ground_extracellular: bool,
    pub ceilings: Option<Ceilings>,
    /// Upper end of the field range on which laws are checked.
    pub h5_eta_max: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { tol: 1e-10, max_newton: 50, clamp_to_table: false, ground_extracellular: false, ceilings: None, h5_eta_max: 20.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroSection {
    pub epsilons: Vec<f64>,
    pub realizations: usize,
    pub cells_per_period: usize,
    pub source: PlanarField,
    pub flux: PlanarField,
    pub tol: f64,
    pub reference_h: f64,
    pub reference_shifts: usize,
}

impl Default for MicroSection {
    fn default() -> Self {
        let s = MicroSweepSpec::default();
        Self {
            epsilons: s.epsilons,
            realizations: s.realizations,
            cells_per_period: s.cells_per_period,
            source: s.source,
            flux: s.flux,
            tol: s.tol,
            reference_h: s.reference_h,
            reference_shifts: s.reference_shifts,
        }
    }
}

/// Complete configuration; every section is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub threads: Option<usize>,
    pub model: ModelSection,
    /// Microscopic extracellular law.
    pub conductivity: LawSection,
    pub intracellular: LawSection,
    pub sampling: SamplingSection,
    pub table: TableSection,
    pub domain: DomainSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub fhn: FhnSection,
    pub classes: ClassesSection,
    pub effective: EffectiveSection,
    pub stimulus: Option<Stimulus>,
    pub initial: InitialSection,
    pub solver: SolverSection,
    pub micro: MicroSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            threads: None,
            model: ModelSection::default(),
            conductivity: LawSection::default(),
            intracellular: LawSection::Constant { sigma: 1.0 },
            sampling: SamplingSection::default(),
            table: TableSection::default(),
            domain: DomainSection::default(),
            grid: GridSection::default(),
            time: TimeSection::default(),
            fhn: FhnSection::default(),
            classes: ClassesSection::default(),
            effective: EffectiveSection::default(),
            stimulus: None,
            initial: InitialSection::default(),
            solver: SolverSection::default(),
            micro: MicroSection::default(),
        }
    }
}

/// A validated configuration with its source.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub config: Config,
    /// Raw file contents.
    pub text: String,
}

/// Line (1-based) of `key` inside `[section]`, or of the section header.
pub fn line_of(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[') {
            current = name.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current != section {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            let rest = rest.trim_start();
            if rest.starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    header
}

impl LoadedConfig {
    pub(crate) fn invalid(&self, field: &str, message: impl Into<String>) -> ConfigError {
        let (section, key) = field.rsplit_once('.').unwrap_or(("", field));
        let line = line_of(&self.text, section, key).or_else(|| line_of(&self.text, "", section));
        ConfigError::Validation { path: self.path.clone(), line, field: field.to_string(), message: message.into() }
    }

    pub fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn model(&self) -> Result<GeometryModel, ConfigError> {
        let m = &self.config.model;
        if m.radii.len() != m.probabilities.len() {
            return Err(self.invalid("model.probabilities", "needs one probability per radius"));
        }
        if m.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(self.invalid("model.probabilities", "probabilities must lie in [0, 1]"));
        }
        let total: f64 = m.probabilities.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(self.invalid("model.probabilities", format!("probabilities sum to {total} > 1")));
        }
        if m.radii.iter().any(|r| !(*r > 0.0 && *r < 0.5)) {
            return Err(self.invalid("model.radii", "radii must lie in (0, 1/2)"));
        }
        if !(m.jitter >= 0.0) {
            return Err(self.invalid("model.jitter", "jitter must be non-negative"));
        }
        GeometryModel::from_pairs(&m.radii, &m.probabilities, m.jitter).map_err(|e| self.invalid("model.jitter", e.to_string()))
    }

    fn law(&self, field: &str, section: &LawSection) -> Result<ConductivityLaw, ConfigError> {
        let law = ConductivityLaw::from_kind(section.kind()).map_err(|e| self.invalid(field, e.to_string()))?;
        let report = law.validate_h5(self.config.solver.h5_eta_max, 2000);
        if let Some(eta) = report.violation_at {
            return Err(self.invalid(field, format!("conductivity hypothesis fails near field strength {eta:.6}")));
        }
        if !report.pass {
            return Err(self.invalid(field, "conductivity lower bound is not positive"));
        }
        Ok(law)
    }

    pub fn extracellular_law(&self) -> Result<ConductivityLaw, ConfigError> {
        self.law("conductivity.kind", &self.config.conductivity)
    }

    pub fn intracellular_law(&self) -> Result<ConductivityLaw, ConfigError> {
        self.law("intracellular.kind", &self.config.intracellular)
    }

    pub fn fhn(&self) -> Result<FhnParams, ConfigError> {
        let p = self.config.fhn.params();
        p.validate().map_err(|e| self.invalid("fhn.theta", e.to_string()))?;
        Ok(p)
    }

    pub fn lambda(&self) -> Result<LambdaChoice, ConfigError> {
        let choice = match &self.config.time.lambda {
            LambdaSetting::Word(w) if w == "auto" => LambdaChoice::Auto,
            LambdaSetting::Word(w) => return Err(self.invalid("time.lambda", format!("expected \"auto\" or a number, got \"{w}\""))),
            LambdaSetting::Value(v) => LambdaChoice::Value(*v),
        };
        if let LambdaChoice::Value(l) = choice {
            let p = self.fhn()?;
            let bound = lambda_bound(&p);
            if self.config.time.scheme == Scheme::ImplicitLambda && l < bound {
                return Err(self.invalid(
                    "time.lambda",
                    format!("lambda = {l} is below the monotonicity bound {bound:.6} for theta = {}, b = {}", p.theta, p.b),
                ));
            }
        }
        Ok(choice)
    }

    pub fn classes(&self) -> Result<Vec<ClassWeights>, ConfigError> {
        let c = &self.config.classes;
        let weights = if c.radius.is_empty() && c.lambda.is_empty() && c.mu.is_empty() {
            ClassWeights::from_model(&self.model()?)
        } else {
            if c.radius.len() != c.lambda.len() || c.radius.len() != c.mu.len() {
                return Err(self.invalid("classes.radius", "radius, lambda and mu need equal lengths"));
            }
            c.radius.iter().zip(&c.lambda).zip(&c.mu).map(|((&radius, &lambda), &mu)| ClassWeights { radius, lambda, mu }).collect()
        };
        ClassWeights::check(&weights).map_err(|e| self.invalid("classes.mu", e.to_string()))?;
        Ok(weights)
    }

    pub fn table_spec(&self) -> Result<TableSpec, ConfigError> {
        let t = &self.config.table;
        let spec = TableSpec {
            xi1: t.xi1.clone(),
            xit: t.xit.clone(),
            torus_side: t.torus_side,
            replicates: t.replicates,
            grid_h: t.grid_h,
            tol: t.tol,
            seed: self.config.seed,
        };
        spec.validate().map_err(|e| self.invalid("table.grid_h", e.to_string()))?;
        Ok(spec)
    }

    pub fn micro_spec(&self) -> Result<MicroSweepSpec, ConfigError> {
        let m = &self.config.micro;
        let spec = MicroSweepSpec {
            epsilons: m.epsilons.clone(),
            realizations: m.realizations,
            cells_per_period: m.cells_per_period,
            section: Rect::new(0.0, 0.0, 1.0, 1.0),
            source: m.source,
            flux: m.flux,
            seed: self.config.seed,
            tol: m.tol,
            reference_h: m.reference_h,
            reference_shifts: m.reference_shifts,
        };
        spec.validate().map_err(|e| self.invalid("micro.epsilons", e.to_string()))?;
        if m.epsilons.len() < 3 || m.realizations < 2 {
            return Err(self.invalid("micro.epsilons", "need at least three epsilon values and two realizations"));
        }
        Ok(spec)
    }

    /// The configuration with file references made absolute, so that it can
    /// be replayed from any directory.
    pub fn resolved(&self) -> Config {
        let mut config = self.config.clone();
        if let (EffectiveSection::Table { path }, Some(full)) = (&mut config.effective, self.table_path()) {
            *path = std::path::absolute(&full).unwrap_or(full);
        }
        config
    }

    pub fn table_path(&self) -> Option<PathBuf> {
        match &self.config.effective {
            EffectiveSection::Table { path } => Some(self.base_dir().join(path)),
            _ => None,
        }
    }

    fn sigma_hom(&self) -> Result<SigmaHom, ConfigError> {
        Ok(match &self.config.effective {
            EffectiveSection::Linear { longitudinal, transverse } => {
                if !(*longitudinal > 0.0 && *transverse > 0.0) {
                    return Err(self.invalid("effective.longitudinal", "effective conductivities must be positive"));
                }
                SigmaHom::Linear { longitudinal: *longitudinal, transverse: *transverse }
            }
            EffectiveSection::Law { law } => SigmaHom::Law(self.law("effective.law", law)?),
            EffectiveSection::Table { .. } => {
                let path = self.table_path().unwrap_or_default();
                let text = fs::read_to_string(&path).map_err(|e| self.invalid("effective.path", format!("{}: {e}", path.display())))?;
                let table: EffectiveLawTable =
                    serde_json::from_str(&text).map_err(|e| self.invalid("effective.path", format!("{}: {e}", path.display())))?;
                SigmaHom::Table(Box::new(table))
            }
        })
    }

    pub fn macro_config(&self) -> Result<MacroConfig, ConfigError> {
        self.build_macro(self.sigma_hom()?)
    }

    fn build_macro(&self, sigma_hom: SigmaHom) -> Result<MacroConfig, ConfigError> {
        let c = &self.config;
        if !(c.domain.length > 0.0) {
            return Err(self.invalid("domain.length", "length must be positive"));
        }
        if c.grid.nx < 3 {
            return Err(self.invalid("grid.nx", "at least 3 nodes are needed"));
        }
        if !(c.time.dt > 0.0) {
            return Err(self.invalid("time.dt", "dt must be positive"));
        }
        if !(c.time.t_end >= 0.0) {
            return Err(self.invalid("time.t_end", "t_end must be non-negative"));
        }
        let classes = self.classes()?;
        let mut cfg = match c.domain.width {
            Some(w) => MacroConfig::two_d(c.domain.length, w, c.grid.nx, c.grid.ny, classes),
            None => MacroConfig::one_d(c.domain.length, c.grid.nx, classes),
        };
        cfg.dt = c.time.dt;
        cfg.t_end = c.time.t_end;
        cfg.snapshot_every = c.time.snapshot_every;
        cfg.scheme = c.time.scheme;
        cfg.lambda = self.lambda()?;
        cfg.fhn = self.fhn()?;
        cfg.sigma_i = self.intracellular_law()?;
        cfg.sigma_hom = sigma_hom;
        cfg.intracellular_bc = c.domain.intracellular_bc;
        cfg.stimulus = c.stimulus;
        cfg.initial = c.initial.profile();
        cfg.tol = c.solver.tol;
        cfg.max_newton = c.solver.max_newton;
        cfg.ceilings = c.solver.ceilings;
        cfg.clamp_to_table = c.solver.clamp_to_table;
        cfg.ground_extracellular = c.solver.ground_extracellular;
        cfg.validate().map_err(|e| self.invalid("time.dt", e.to_string()))?;
        Ok(cfg)
    }

    /// Runs every validator that does not need external files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        self.model()?;
        self.extracellular_law()?;
        self.intracellular_law()?;
        self.fhn()?;
        self.lambda()?;
        self.classes()?;
        self.table_spec()?;
        self.micro_spec()?;
        if !(c.sampling.window > 0.0) || c.sampling.samples < 2 {
            return Err(self.invalid("sampling.window", "window must be positive and at least 2 samples are needed"));
        }
        if c.threads == Some(0) {
            return Err(self.invalid("threads", "thread count must be positive"));
        }
        let sigma_hom = match c.effective {
            EffectiveSection::Table { .. } => SigmaHom::Linear { longitudinal: 1.0, transverse: 1.0 },
            _ => self.sigma_hom()?,
        };
        self.build_macro(sigma_hom)?;
        Ok(())
    }
}

/// Parses a TOML config, or the resolved config stored in a run manifest (`.json`).
pub fn parse_config(path: &Path, text: &str) -> Result<Config, ConfigError> {
    let parse_err = |message: String| ConfigError::Parse { path: path.to_path_buf(), message };
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let resolved = value.get("resolved_config").cloned().unwrap_or(value);
        serde_json::from_value(resolved).map_err(|e| parse_err(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| parse_err(e.to_string().trim_end().to_string()))
    }
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let config = parse_config(path, &text)?;
    let loaded = LoadedConfig { path: path.to_path_buf(), config, text };
    loaded.validate()?;
    Ok(loaded)
}

/// Wraps an in-memory configuration (no line information).
pub fn from_config(config: Config) -> Result<LoadedConfig, ConfigError> {
    let loaded = LoadedConfig { path: PathBuf::from("<memory>"), config, text: String::new() };
    loaded.validate()?;
    Ok(loaded)
}
