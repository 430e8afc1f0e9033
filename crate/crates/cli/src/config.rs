//! Per-subcommand experiment configuration. Every field has a default, so a
//! TOML file only needs the keys it changes.

use std::f64::consts::PI;
use std::path::Path;

use optrace::dos::MAX_ORDER;
use optrace::estimators::Method;
use optrace::operators::{BoundaryCondition, BuiltinKernel, Potential};
use optrace::photonics::Shape;
use optrace::validation::SuiteConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub type ConfigResult<T> = std::result::Result<T, String>;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> ConfigResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

fn positive(name: &str, v: f64) -> ConfigResult<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be positive and finite, got {v}"))
    }
}

fn non_empty<T>(name: &str, v: &[T]) -> ConfigResult<()> {
    if v.is_empty() {
        Err(format!("{name} must not be empty"))
    } else {
        Ok(())
    }
}

fn check_budgets(name: &str, ms: &[usize], method: Method) -> ConfigResult<()> {
    for &m in ms {
        match method {
            Method::Hutchinson if m == 0 => return Err(format!("{name}: m must be at least 1")),
            Method::Hutchpp if m < 3 || m % 3 != 0 => {
                return Err(format!("{name}: hutchpp needs m divisible by 3 and at least 3, got {m}"))
            }
            Method::Exact => return Err(format!("{name}: the exact method is not a sampling budget")),
            _ => {}
        }
    }
    Ok(())
}

/// Convergence of Hutchinson and ContHutch++ on explicit kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub kernels: Vec<BuiltinKernel>,
    pub ells: Vec<f64>,
    pub ms: Vec<usize>,
    pub methods: Vec<Method>,
    /// Number of independent seeds per point, `seed..seed + seeds`.
    pub seeds: u64,
    pub nodes: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            kernels: BuiltinKernel::ALL.to_vec(),
            ells: vec![0.2, 0.1, 0.05, 0.025],
            ms: vec![30, 60, 120, 240],
            methods: vec![Method::Hutchinson, Method::Hutchpp],
            seeds: 10,
            nodes: 401,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> ConfigResult<()> {
        non_empty("kernels", &self.kernels)?;
        non_empty("ells", &self.ells)?;
        non_empty("ms", &self.ms)?;
        non_empty("methods", &self.methods)?;
        for &l in &self.ells {
            positive("ell", l)?;
        }
        for &method in &self.methods {
            check_budgets("ms", &self.ms, method)?;
        }
        if self.seeds == 0 {
            return Err("seeds must be at least 1".into());
        }
        if self.nodes < 3 {
            return Err(format!("nodes must be at least 3, got {}", self.nodes));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Free,
    KronigPenney { depth: f64, width: f64, period: f64 },
}

impl PotentialConfig {
    pub fn build(&self) -> ConfigResult<Potential> {
        match *self {
            PotentialConfig::Free => Ok(Potential::free()),
            PotentialConfig::KronigPenney { depth, width, period } => {
                Potential::kronig_penney(depth, width, period).map_err(|e| e.to_string())
            }
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, PotentialConfig::Free)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub from: f64,
    pub to: f64,
    pub points: usize,
    pub sigma: f64,
    pub order: usize,
}

/// Smoothing-rate and sample-rate sweeps for the density of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DosCliConfig {
    /// Half-width of the computational interval `[−L, L]`.
    pub l: f64,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub potential: PotentialConfig,
    pub lambda: f64,
    pub orders: Vec<usize>,
    pub sigmas: Vec<f64>,
    /// Probe budget for the smoothing-rate sweep.
    pub m: usize,
    /// Fixed σ for the sample-rate sweep.
    pub sample_sigma: f64,
    pub sample_ms: Vec<usize>,
    pub ell: f64,
    pub method: Method,
    pub seeds: u64,
    pub seed: u64,
    pub curve: Option<CurveConfig>,
}

impl Default for DosCliConfig {
    fn default() -> Self {
        Self {
            l: 50.0,
            n: 2000,
            bc: BoundaryCondition::Dirichlet,
            potential: PotentialConfig::Free,
            lambda: 1.0,
            orders: vec![2, 4, 6, 8],
            sigmas: vec![0.8, 0.4, 0.2, 0.1],
            m: 600,
            sample_sigma: 0.2,
            sample_ms: vec![30, 60, 120, 240, 480],
            ell: 0.05,
            method: Method::Hutchinson,
            seeds: 3,
            seed: 0,
            curve: None,
        }
    }
}

impl DosCliConfig {
    pub fn validate(&self) -> ConfigResult<()> {
        positive("l", self.l)?;
        if self.n < 3 {
            return Err(format!("n must be at least 3, got {}", self.n));
        }
        if !self.lambda.is_finite() {
            return Err("lambda must be finite".into());
        }
        non_empty("orders", &self.orders)?;
        non_empty("sigmas", &self.sigmas)?;
        non_empty("sample_ms", &self.sample_ms)?;
        for &k in &self.orders {
            if k == 0 || k > MAX_ORDER {
                return Err(format!("order must lie in 1..={MAX_ORDER}, got {k}"));
            }
        }
        for &s in &self.sigmas {
            positive("sigma", s)?;
        }
        positive("sample_sigma", self.sample_sigma)?;
        positive("ell", self.ell)?;
        check_budgets("m", &[self.m], self.method)?;
        check_budgets("sample_ms", &self.sample_ms, self.method)?;
        if self.seeds == 0 {
            return Err("seeds must be at least 1".into());
        }
        self.potential.build()?;
        if let Some(c) = &self.curve {
            if !(c.from.is_finite() && c.to.is_finite() && c.from < c.to && c.points >= 2) {
                return Err("curve needs finite from < to and at least 2 points".into());
            }
            positive("curve.sigma", c.sigma)?;
            if c.order == 0 || c.order > MAX_ORDER {
                return Err(format!("curve.order must lie in 1..={MAX_ORDER}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticConfig {
    pub shape: Shape,
    /// Nodes per side for the dense spectrum and convergence runs.
    pub n: usize,
    pub omega_over_pi: Vec<f64>,
    pub count: usize,
    pub ms: Vec<usize>,
    pub seeds: u64,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            shape: Shape::Disk,
            n: 50,
            omega_over_pi: vec![0.5, 1.0, 2.0],
            count: 200,
            ms: vec![3, 15, 30, 75, 150, 300],
            seeds: 3,
        }
    }
}

/// Mean field intensity, spectrum and field snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotonicsCliConfig {
    pub shapes: Vec<Shape>,
    pub scale: f64,
    pub omega_over_pi: Vec<f64>,
    pub n: usize,
    pub ell: f64,
    pub m: usize,
    pub method: Method,
    pub seeds: u64,
    pub seed: u64,
    pub pml_thickness: f64,
    pub pml_strength: f64,
    /// Sample sources (and their fields) written per shape.
    pub snapshots: usize,
    pub diagnostic: DiagnosticConfig,
}

impl Default for PhotonicsCliConfig {
    fn default() -> Self {
        Self {
            shapes: Shape::ALL.to_vec(),
            scale: 0.5,
            omega_over_pi: vec![1.0],
            n: 100,
            ell: 0.08,
            m: 300,
            method: Method::Hutchpp,
            seeds: 1,
            seed: 0,
            pml_thickness: 1.0,
            pml_strength: 1.0,
            snapshots: 1,
            diagnostic: DiagnosticConfig::default(),
        }
    }
}

impl PhotonicsCliConfig {
    pub fn validate(&self) -> ConfigResult<()> {
        non_empty("shapes", &self.shapes)?;
        positive("scale", self.scale)?;
        non_empty("omega_over_pi", &self.omega_over_pi)?;
        for &w in self.omega_over_pi.iter().chain(&self.diagnostic.omega_over_pi) {
            positive("omega_over_pi", w)?;
        }
        if self.n < 3 || self.diagnostic.n < 3 {
            return Err("grids need at least 3 nodes per side".into());
        }
        positive("ell", self.ell)?;
        check_budgets("m", &[self.m], self.method)?;
        check_budgets("diagnostic.ms", &self.diagnostic.ms, self.method)?;
        positive("pml_thickness", self.pml_thickness)?;
        if !(self.pml_strength >= 0.0 && self.pml_strength.is_finite()) {
            return Err("pml_strength must be non-negative".into());
        }
        if self.seeds == 0 || self.diagnostic.seeds == 0 {
            return Err("seeds must be at least 1".into());
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.omega_over_pi.iter().map(|w| w * PI).collect()
    }
}

pub fn validate_suite(cfg: &SuiteConfig) -> ConfigResult<()> {
    if cfg.nodes < 3 {
        return Err(format!("nodes must be at least 3, got {}", cfg.nodes));
    }
    if cfg.k_max == 0 || cfg.composition_pairs == 0 || cfg.lipschitz_pairs == 0 || cfg.tail_trials < 2 {
        return Err("k_max, pair counts must be positive and tail_trials at least 2".into());
    }
    positive("ell", cfg.ell)?;
    positive("eps", cfg.eps)
}
