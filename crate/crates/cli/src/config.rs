//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vhj_core::analysis::ConvergenceOptions;
use vhj_core::barriers::{ChiParams, XiParams, DEFAULT_CAP};
use vhj_core::grid::{BoundaryPolicy, Flux};
use vhj_core::model::{
    EnvelopeSpec, GrowthEnvelope, InitialData, InitialSpec, PowerTerm, ProblemSpec,
    RadialPolynomial, SourceSpec, SourceTerm,
};
use vhj_core::scheme::{DtPolicy, Mode, SchemeConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the output root unless absolute.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub problem: ProblemSection,
    pub grid: GridSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub ergodic: ErgodicSection,
    #[serde(default)]
    pub barriers: Option<BarrierSection>,
    #[serde(default)]
    pub converge: Option<ConvergeSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub m: f64,
    #[serde(default = "one")]
    pub dim: usize,
    pub radius: f64,
    pub source: SourceSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub envelope: Option<EnvelopeSpec>,
}

fn one() -> usize {
    1
}

impl ProblemSection {
    pub fn build(&self) -> CliResult<ProblemSpec> {
        let source = SourceTerm::from_spec(&self.source, self.m, self.dim)?;
        let initial = InitialData::new(self.initial.clone())?;
        let mut p = ProblemSpec::new(self.m, self.dim, self.radius, source, initial)?;
        if let Some(env) = &self.envelope {
            p = p.with_envelope(GrowthEnvelope::from_spec(env)?);
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub h: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub dt: DtPolicy,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    /// Uniform snapshot spacing; ignored when `snapshot_times` is given.
    #[serde(default)]
    pub snapshot_interval: Option<f64>,
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
    #[serde(default)]
    pub flux: Flux,
    #[serde(default)]
    pub x_ref: [f64; 2],
}

fn default_max_time() -> f64 {
    1.0
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            dt: DtPolicy::default(),
            max_time: default_max_time(),
            snapshot_interval: None,
            snapshot_times: None,
            boundary: BoundaryPolicy::default(),
            flux: Flux::default(),
            x_ref: [0.0, 0.0],
        }
    }
}

impl SchemeSection {
    /// Scheme configuration running to `max_time` with snapshots every
    /// `interval` (or the configured ones).
    pub fn build_until(&self, max_time: f64, interval: Option<f64>) -> CliResult<SchemeConfig> {
        let interval = interval
            .or(self.snapshot_interval)
            .unwrap_or(max_time / 10.0);
        let mut cfg = SchemeConfig::new(max_time, interval)
            .with_mode(self.mode)
            .with_dt(self.dt)
            .with_boundary(self.boundary)
            .with_flux(self.flux);
        if let Some(times) = &self.snapshot_times {
            cfg = cfg.with_snapshots(times.clone());
        }
        cfg.x_ref = self.x_ref;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn build(&self) -> CliResult<SchemeConfig> {
        self.build_until(self.max_time, None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteName {
    Newton,
    Longtime,
    Radial,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicSection {
    pub routes: Vec<RouteName>,
    /// Newton residual tolerance.
    pub tol: f64,
    /// Successive-slope tolerance of the long-time route.
    pub longtime_tol: f64,
    pub longtime_max_time: f64,
    pub longtime_interval: f64,
    pub radial_tol: f64,
    /// Route agreement tolerance on `λ` and on `φ` over the compact set.
    pub agree_tol: f64,
    /// Tolerances against a manufactured pair, when the source has one.
    pub exact_lambda_tol: f64,
    pub exact_phi_tol: f64,
    /// Half-width of the comparison box; defaults to half the radius.
    pub compact: Option<f64>,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        Self {
            routes: vec![RouteName::Newton, RouteName::Longtime],
            tol: 1e-9,
            longtime_tol: 1e-6,
            longtime_max_time: 40.0,
            longtime_interval: 0.5,
            radial_tol: 1e-10,
            agree_tol: 1e-2,
            exact_lambda_tol: 1e-2,
            exact_phi_tol: 5e-2,
            compact: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairChoice {
    /// The closed-form pair of a manufactured source.
    Exact,
    Newton,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierSection {
    pub chi: ChiParams,
    pub xi: XiParams,
    /// `β` of the `χ` inequality and of the assemblies.
    pub beta: f64,
    /// `β` of the `ξ` inequality; defaults to `beta`.
    pub xi_beta: Option<f64>,
    pub alpha_hat: f64,
    pub t0: f64,
    pub c_hat: f64,
    pub cap: f64,
    pub s_max: f64,
    pub samples: usize,
    pub residual: bool,
    pub residual_times: Vec<f64>,
    /// Forward time step of the residual; defaults to `h^2`.
    pub residual_dt: Option<f64>,
    pub pair: Option<PairChoice>,
    /// Half-width of the compact set that must lie in `Q_0`.
    pub compact: f64,
    /// Tolerance of the barrier sandwich in `converge`.
    pub sandwich_tol: f64,
}

impl Default for BarrierSection {
    fn default() -> Self {
        Self {
            chi: ChiParams {
                c: 1.0,
                beta1: 0.9,
                beta2: 1.1,
            },
            xi: XiParams {
                c: 1.0,
                eta1: 0.9,
                eta2: 1.0,
            },
            beta: 0.6,
            xi_beta: None,
            alpha_hat: 1.0,
            t0: 4.0,
            c_hat: 0.0,
            cap: DEFAULT_CAP,
            s_max: 60.0,
            samples: 10_000,
            residual: true,
            residual_times: (0..=20).map(|i| 0.25 * i as f64).collect(),
            residual_dt: None,
            pair: None,
            compact: 1.0,
            sandwich_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    /// Half-width of the compact set `K`.
    pub compact: f64,
    /// Initial data to run; empty means the problem's own.
    pub initials: Vec<InitialSpec>,
    pub options: ConvergenceOptions,
    pub sandwich: bool,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self {
            compact: 2.0,
            initials: Vec::new(),
            options: ConvergenceOptions::default(),
            sandwich: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    H1,
    Transform,
    Ordering,
    Nested,
    Holder,
    Superlinearity,
    Gradient,
    Barriers,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::H1,
        Suite::Transform,
        Suite::Ordering,
        Suite::Nested,
        Suite::Holder,
        Suite::Superlinearity,
        Suite::Gradient,
        Suite::Barriers,
    ];
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderedPair {
    pub low: InitialSpec,
    pub high: InitialSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub suites: Vec<Suite>,
    pub h1_samples: usize,
    pub transform_m: Vec<f64>,
    pub transform_samples: usize,
    /// `C` as a fraction of `m - 1 - 2/m`.
    pub transform_c_fraction: f64,
    pub ordering: Vec<OrderedPair>,
    pub nested_radii: Vec<f64>,
    /// Allowed excess of the larger-ball solution over the smaller one.
    pub nested_tol: f64,
    /// Allowed sup-gap between the two largest radii on the inner quarter.
    pub nested_gap_tol: f64,
    pub holder_radii: Vec<f64>,
    pub holder_factor: f64,
    pub superlinearity_radii: Vec<f64>,
    pub gradient_radii: Vec<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        let quadratic = InitialSpec::Polynomial {
            terms: RadialPolynomial::new(vec![PowerTerm::new(1.0, 2.0)]),
            constant: 0.0,
        };
        Self {
            suites: Suite::ALL.to_vec(),
            h1_samples: 1000,
            transform_m: vec![2.5, 3.0, 4.0],
            transform_samples: 100_000,
            transform_c_fraction: 0.9,
            ordering: vec![OrderedPair {
                low: InitialSpec::Zero,
                high: quadratic,
            }],
            nested_radii: vec![4.0, 6.0, 8.0],
            nested_tol: 1e-8,
            nested_gap_tol: 1e-3,
            holder_radii: vec![2.0, 4.0, 6.0],
            holder_factor: 3.0,
            superlinearity_radii: vec![2.0, 4.0, 6.0],
            gradient_radii: vec![2.0, 3.0, 4.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParameter {
    /// Dotted path into the configuration, e.g. `grid.h`.
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub command: String,
    pub parameters: Vec<SweepParameter>,
}

/// Parsed configuration plus its raw TOML tree (for echo and sweeps).
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub raw: toml::Value,
    pub source: String,
}

pub fn parse(text: &str, origin: &str) -> CliResult<Loaded> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    let raw: toml::Value =
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    Ok(Loaded {
        config,
        raw,
        source: origin.to_owned(),
    })
}

pub fn load(path: &Path) -> CliResult<Loaded> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

/// Replaces the value at the dotted `key` of `root`.
pub fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> CliResult<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("sweep key {key}: {part} is not inside a table"))
        })?;
        if i + 1 == parts.len() {
            table.insert((*part).to_owned(), value);
            return Ok(());
        }
        node = table
            .entry((*part).to_owned())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(CliError::Config("empty sweep key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        [problem]
        m = 3.0
        radius = 6.0
        source = { family = "radial-power", params = { a = 8.0, exponent = 3.0 } }

        [grid]
        h = 0.05
    "#;

    #[test]
    fn defaults_fill_optional_sections() {
        let l = parse(BASE, "base").unwrap();
        assert_eq!(l.config.problem.dim, 1);
        assert_eq!(
            l.config.ergodic.routes,
            vec![RouteName::Newton, RouteName::Longtime]
        );
        assert!(l.config.barriers.is_none());
        let p = l.config.problem.build().unwrap();
        assert_eq!(p.source.eval([1.0, 0.0]).unwrap(), 8.0);
    }

    #[test]
    fn missing_key_is_named() {
        let text = BASE.replace("m = 3.0", "");
        let err = parse(&text, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("missing field `m`"), "{err}");
        assert!(err.contains("cfg.toml"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{BASE}\n[scheme]\nmax_tim = 3.0\n");
        let err = parse(&text, "cfg.toml").unwrap_err().to_string();
        assert!(err.contains("max_tim"), "{err}");
    }

    #[test]
    fn dotted_override() {
        let mut l = parse(BASE, "base").unwrap();
        set_path(&mut l.raw, "grid.h", toml::Value::Float(0.1)).unwrap();
        set_path(&mut l.raw, "scheme.max_time", toml::Value::Float(2.0)).unwrap();
        let c: RunConfig = l.raw.try_into().unwrap();
        assert_eq!(c.grid.h, 0.1);
        assert_eq!(c.scheme.max_time, 2.0);
    }
}
