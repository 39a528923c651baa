//! Run configuration: JSON in, validated core objects out.

use std::fmt;
use std::path::Path;

use crossdiff_core::energy::{equilibrium, Exponent, ModelParams, PotentialSpec};
use crossdiff_core::jko::{SolverConfig, StepRule};
use crossdiff_core::measure::{DensityField, DensityPair, Grid};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A configuration problem, tagged with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// `m` as written in a config: a number above 1 or `"infinity"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MValue(pub Exponent);

impl Serialize for MValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Exponent::Finite(m) => s.serialize_f64(m),
            Exponent::Incompressible => s.serialize_str("infinity"),
        }
    }
}

impl<'de> Deserialize<'de> for MValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(m) => Ok(MValue(Exponent::Finite(m))),
            Raw::Str(s) if s == "infinity" => Ok(MValue(Exponent::Incompressible)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "m must be a number > 1 or \"infinity\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub left: f64,
    pub right: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Zero,
    Linear {
        a: f64,
        #[serde(default)]
        b: f64,
    },
    Quadratic {
        a: f64,
        #[serde(default)]
        b: f64,
        #[serde(default)]
        c: f64,
    },
    PiecewiseLinear { points: Vec<(f64, f64)> },
}

impl PotentialConfig {
    pub fn to_spec(&self) -> PotentialSpec {
        match self {
            PotentialConfig::Zero => PotentialSpec::zero(),
            PotentialConfig::Linear { a, b } => PotentialSpec::Linear { a: *a, b: *b },
            PotentialConfig::Quadratic { a, b, c } => PotentialSpec::Quadratic { a: *a, b: *b, c: *c },
            PotentialConfig::PiecewiseLinear { points } => PotentialSpec::PiecewiseLinear { points: points.clone() },
        }
    }
}

fn unit_kappa() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub m: MValue,
    #[serde(default = "unit_kappa")]
    pub kappa: [f64; 2],
    pub potentials: [PotentialConfig; 2],
    /// Required for equilibrium-seeded data, otherwise checked against the
    /// initial densities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<[f64; 2]>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub interval: (f64, f64),
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeciesInit {
    /// Absent species.
    Zero,
    UniformBlock { interval: (f64, f64), mass: f64 },
    /// Sum of uniform blocks.
    Blocks { blocks: Vec<Block> },
    /// One density value per cell.
    Custom { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    PerSpecies { species: [SpeciesInit; 2] },
    /// Equilibrium of the model's potentials and masses, computed at `m`
    /// (the model's own exponent when omitted).
    Equilibrium {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<MValue>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRuleName {
    Newton,
    Mirror,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub inner_tol: f64,
    pub max_inner: usize,
    pub step_rule: StepRuleName,
    pub support_floor: f64,
    pub mu_start: f64,
    pub mu_end: f64,
    pub mu_shrink: f64,
    pub warm_start: bool,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSpec {
            inner_tol: d.inner_tol,
            max_inner: d.max_inner,
            step_rule: StepRuleName::Newton,
            support_floor: d.support_floor,
            mu_start: d.mu_start,
            mu_end: d.mu_end,
            mu_shrink: d.mu_shrink,
            warm_start: d.warm_start,
        }
    }
}

impl SolverSpec {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            inner_tol: self.inner_tol,
            max_inner: self.max_inner,
            step_rule: match self.step_rule {
                StepRuleName::Newton => StepRule::Newton,
                StepRuleName::Mirror => StepRule::Mirror,
            },
            support_floor: self.support_floor,
            mu_start: self.mu_start,
            mu_end: self.mu_end,
            mu_shrink: self.mu_shrink,
            warm_start: self.warm_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauRefinementSpec {
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MSweepSpec {
    pub m_list: Vec<MValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudiesSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_refinement: Option<TauRefinementSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_sweep: Option<MSweepSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

fn all_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

fn yes() -> bool {
    true
}

/// Which SVG plots to write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotToggles {
    #[serde(default = "yes")]
    pub densities: bool,
    #[serde(default = "yes")]
    pub energy: bool,
    #[serde(default = "yes")]
    pub supports: bool,
    #[serde(default = "yes")]
    pub pressure: bool,
}

impl Default for PlotToggles {
    fn default() -> Self {
        PlotToggles {
            densities: true,
            energy: true,
            supports: true,
            pressure: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
    #[serde(default)]
    pub plots: PlotToggles,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: None,
            formats: all_formats(),
            plots: PlotToggles::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub studies: StudiesSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Everything a command needs, built from a validated spec.
#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Grid,
    pub params: ModelParams,
    pub initial: DensityPair,
    pub solver: SolverConfig,
}

pub fn parse_config(path: &Path) -> Result<RunSpec, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunSpec, ConfigError> {
    let spec: RunSpec = serde_json::from_str(text).map_err(|e| {
        let kind = if e.is_syntax() || e.is_eof() { "syntax error" } else { "schema error" };
        ConfigError::new("", format!("{kind}: {e}"))
    })?;
    spec.validate()?;
    Ok(spec)
}

fn core_err(key: &str) -> impl Fn(crossdiff_core::Error) -> ConfigError + '_ {
    move |e| ConfigError::new(key, e.to_string())
}

fn check_interval(key: &str, (a, b): (f64, f64), grid: &Grid) -> Result<(), ConfigError> {
    if !(a < b) || a < grid.left() || b > grid.right() {
        return Err(ConfigError::new(
            key,
            format!("interval [{a}, {b}] must be nonempty and inside [{}, {}]", grid.left(), grid.right()),
        ));
    }
    Ok(())
}

fn check_mass(key: &str, mass: f64) -> Result<(), ConfigError> {
    if !(mass >= 0.0) || !mass.is_finite() {
        return Err(ConfigError::new(key, format!("mass must be nonnegative and finite, got {mass}")));
    }
    Ok(())
}

fn species_field(key: &str, init: &SpeciesInit, grid: &Grid) -> Result<DensityField, ConfigError> {
    match init {
        SpeciesInit::Zero => Ok(DensityField::zeros(*grid)),
        SpeciesInit::UniformBlock { interval, mass } => {
            check_interval(&format!("{key}.interval"), *interval, grid)?;
            check_mass(&format!("{key}.mass"), *mass)?;
            DensityField::uniform_block(*grid, interval.0, interval.1, *mass).map_err(core_err(key))
        }
        SpeciesInit::Blocks { blocks } => {
            let mut acc = DensityField::zeros(*grid);
            for (b, block) in blocks.iter().enumerate() {
                let k = format!("{key}.blocks[{b}]");
                check_interval(&format!("{k}.interval"), block.interval, grid)?;
                check_mass(&format!("{k}.mass"), block.mass)?;
                let f = DensityField::uniform_block(*grid, block.interval.0, block.interval.1, block.mass)
                    .map_err(core_err(&k))?;
                acc = acc.add(&f).map_err(core_err(&k))?;
            }
            Ok(acc)
        }
        SpeciesInit::Custom { values } => {
            if values.len() != grid.n_cells() {
                return Err(ConfigError::new(
                    format!("{key}.values"),
                    format!("expected {} values, got {}", grid.n_cells(), values.len()),
                ));
            }
            DensityField::new(*grid, values.clone()).map_err(core_err(&format!("{key}.values")))
        }
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build().map(|_| ())
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.grid.left, self.grid.right, self.grid.n_cells).map_err(core_err("grid"))
    }

    fn params_with_masses(&self, masses: [f64; 2]) -> Result<ModelParams, ConfigError> {
        let pots = [self.model.potentials[0].to_spec(), self.model.potentials[1].to_spec()];
        for (i, p) in pots.iter().enumerate() {
            p.validate().map_err(core_err(&format!("model.potentials[{i}]")))?;
        }
        ModelParams::new(
            self.model.m.0,
            self.model.kappa,
            pots,
            masses,
            self.model.horizon,
            self.model.tau,
        )
        .map_err(|e| ConfigError::new(model_key(&e), e.to_string()))
    }

    pub fn build(&self) -> Result<Setup, ConfigError> {
        let grid = self.grid()?;
        let solver = self.solver.to_config();
        solver.validate().map_err(core_err("solver"))?;
        if let Some(t) = &self.studies.tau_refinement {
            if t.levels < 2 {
                return Err(ConfigError::new("studies.tau_refinement.levels", "need at least 2 levels"));
            }
        }
        if let Some(s) = &self.studies.m_sweep {
            if s.m_list.is_empty() {
                return Err(ConfigError::new("studies.m_sweep.m_list", "must list at least one exponent"));
            }
            for (k, m) in s.m_list.iter().enumerate() {
                if let Exponent::Finite(v) = m.0 {
                    if !(v > 1.0) || !v.is_finite() {
                        return Err(ConfigError::new(format!("studies.m_sweep.m_list[{k}]"), format!("m must exceed 1, got {v}")));
                    }
                }
            }
        }
        let initial = match &self.initial {
            InitialSpec::PerSpecies { species } => {
                let a = species_field("initial.species[0]", &species[0], &grid)?;
                let b = species_field("initial.species[1]", &species[1], &grid)?;
                DensityPair::new(a, b).map_err(core_err("initial"))?
            }
            InitialSpec::Equilibrium { m } => {
                let masses = self
                    .model
                    .masses
                    .ok_or_else(|| ConfigError::new("model.masses", "required for equilibrium-seeded initial data"))?;
                let mut p = self.params_with_masses(masses)?;
                let e = m.map(|m| m.0).unwrap_or(self.model.m.0);
                if e.is_incompressible() {
                    return Err(ConfigError::new("initial.m", "the equilibrium seed needs finite m"));
                }
                p = p.with_exponent(e).map_err(core_err("initial.m"))?;
                equilibrium(&p, &grid).map_err(core_err("initial"))?.pair
            }
        };
        let masses = initial.masses();
        if let Some(given) = self.model.masses {
            for i in 0..2 {
                if (given[i] - masses[i]).abs() > 1e-9 * given[i].abs().max(1.0) {
                    return Err(ConfigError::new(
                        format!("model.masses[{i}]"),
                        format!("{} does not match the initial mass {}", given[i], masses[i]),
                    ));
                }
            }
        }
        let params = self.params_with_masses(masses)?;
        if params.exponent.is_incompressible() && grid.length() <= masses[0] + masses[1] {
            return Err(ConfigError::new(
                "model.m",
                format!(
                    "m = infinity needs the structural condition L¹(Ω) > M₁ + M₂, got L¹(Ω) = {} and M₁ + M₂ = {}",
                    grid.length(),
                    masses[0] + masses[1]
                ),
            ));
        }
        params.check_domain(&grid).map_err(core_err("model"))?;
        crossdiff_core::jko::check_initial(&initial, &params).map_err(core_err("initial"))?;
        Ok(Setup {
            grid,
            params,
            initial,
            solver,
        })
    }
}

/// Best guess at the model key a parameter error refers to.
fn model_key(e: &crossdiff_core::Error) -> &'static str {
    let msg = e.to_string();
    for key in ["kappa", "tau", "mass", "horizon", "m must"] {
        if msg.contains(key) {
            return match key {
                "kappa" => "model.kappa",
                "tau" => "model.tau",
                "mass" => "model.masses",
                "horizon" => "model.T",
                _ => "model.m",
            };
        }
    }
    "model"
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "grid": {"left": 0, "right": 1, "n_cells": 32},
        "model": {"m": 2, "potentials": [{"family": "linear", "a": 1}, {"family": "linear", "a": 2}], "T": 0.02, "tau": 0.01},
        "initial": {"family": "per_species", "species": [
            {"family": "uniform_block", "interval": [0.5, 0.9], "mass": 0.32},
            {"family": "uniform_block", "interval": [0.1, 0.4], "mass": 0.24}
        ]}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = parse_config_str(MINIMAL).unwrap();
        assert_eq!(spec.solver, SolverSpec::default());
        assert_eq!(spec.outputs, OutputSpec::default());
        assert_eq!(spec.model.kappa, [1.0, 1.0]);
        let s = spec.build().unwrap();
        assert!((s.params.masses[0] - 0.32).abs() < 1e-12);
        assert_eq!(s.params.n_steps(), 2);
    }

    #[test]
    fn unknown_key_lists_accepted_keys() {
        let text = MINIMAL.replace("\"T\": 0.02", "\"T\": 0.02, \"horizon\": 1");
        let e = parse_config_str(&text).unwrap_err();
        assert!(e.message.contains("unknown field `horizon`"), "{e}");
        assert!(e.message.contains("`potentials`") && e.message.contains("`tau`"), "{e}");
    }

    #[test]
    fn incompressible_mass_condition() {
        let text = MINIMAL
            .replace("\"m\": 2", "\"m\": \"infinity\"")
            .replace("0.32", "0.4")
            .replace("0.24", "0.6")
            .replace("[0.5, 0.9]", "[0.5, 1.0]")
            .replace("[0.1, 0.4]", "[0.0, 0.5]");
        let e = parse_config_str(&text).unwrap_err();
        assert_eq!(e.key, "model.m");
        assert!(e.message.contains("L¹(Ω) > M₁ + M₂"), "{e}");
    }

    #[test]
    fn bad_values_name_their_key() {
        let e = parse_config_str(&MINIMAL.replace("[0.5, 0.9]", "[0.5, 1.2]")).unwrap_err();
        assert_eq!(e.key, "initial.species[0].interval");
        let e = parse_config_str(&MINIMAL.replace("\"m\": 2", "\"m\": \"big\"")).unwrap_err();
        assert!(e.message.contains("infinity"));
        let e = parse_config_str(&MINIMAL.replace("\"tau\": 0.01", "\"tau\": 0.015")).unwrap_err();
        assert_eq!(e.key, "model.tau", "{e}");
        let e = parse_config_str("{\"grid\": ").unwrap_err();
        assert!(e.message.starts_with("syntax error"));
    }

    #[test]
    fn equilibrium_seed_needs_masses() {
        let text = MINIMAL.replace(
            r#"{"family": "per_species", "species": [
            {"family": "uniform_block", "interval": [0.5, 0.9], "mass": 0.32},
            {"family": "uniform_block", "interval": [0.1, 0.4], "mass": 0.24}
        ]}"#,
            r#"{"family": "equilibrium"}"#,
        );
        assert_eq!(parse_config_str(&text).unwrap_err().key, "model.masses");
        let text = text.replace("\"T\"", "\"masses\": [0.3, 0.2], \"T\"");
        let s = parse_config_str(&text).unwrap().build().unwrap();
        assert!((s.initial.masses()[1] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn round_trip() {
        let spec = parse_config_str(MINIMAL).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(parse_config_str(&text).unwrap(), spec);
    }
}
