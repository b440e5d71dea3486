//! Subcommand pipelines. Each writes its outputs into a [`Bundle`] and
//! records pass/fail verdicts; operational failures surface as errors.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde_json::json;
use vhj_core::analysis::{
    convergence_metric, gradient_bound_check, holder_rescale_check, ordering_check, sandwich_check,
    superlinearity_check, transform_suite, Compact,
};
use vhj_core::barriers::{
    assemble, integrate_chi, integrate_xi, residual_check, verify_chi_inequality,
    verify_xi_inequality, AssemblyKind, AssemblyParams, BarrierAssembly, BarrierCurve, ChiBarrier,
    XiBarrier,
};
use vhj_core::ergodic::{radial_oracle, solve_longtime, solve_newton, ErgodicPair};
use vhj_core::grid::{Grid, GridField};
use vhj_core::model::{InitialData, InitialSpec, ProblemSpec};
use vhj_core::scheme::{nested_limit, solve_from, SchemeConfig};
use vhj_core::Error;

use crate::bundle::{Bundle, MANIFEST};
use crate::config::{set_path, BarrierSection, Loaded, PairChoice, RouteName, RunConfig, Suite};
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Evolve,
    Ergodic,
    Barriers,
    Converge,
    Verify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Ergodic => "ergodic",
            Command::Barriers => "barriers",
            Command::Converge => "converge",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }

    /// Section that must be present in the configuration.
    fn required_section(self) -> Option<&'static str> {
        match self {
            Command::Barriers => Some("barriers"),
            Command::Converge => Some("converge"),
            Command::Verify => Some("verify"),
            Command::Sweep => Some("sweep"),
            _ => None,
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        <Command as clap::ValueEnum>::from_str(s, false)
            .map_err(|_| CliError::Config(format!("unknown command `{s}`")))
    }
}

/// Runs `command` into `out`. Returns whether every verdict passed.
pub fn run(command: Command, loaded: &Loaded, seed: u64, out: &Path) -> CliResult<bool> {
    if let Some(section) = command.required_section() {
        if loaded.raw.get(section).is_none() {
            return Err(CliError::Config(format!(
                "{}: missing section [{section}] required by `{}`",
                loaded.source,
                command.name()
            )));
        }
    }
    let cfg = &loaded.config;
    let mut b = Bundle::create(out, command.name())?;
    match command {
        Command::Evolve => evolve(cfg, &mut b)?,
        Command::Ergodic => ergodic(cfg, &mut b)?,
        Command::Barriers => barriers(cfg, &mut b)?,
        Command::Converge => converge(cfg, &mut b)?,
        Command::Verify => verify(cfg, seed, &mut b)?,
        Command::Sweep => sweep(loaded, seed, &mut b)?,
    }
    b.finish(&loaded.raw, seed)
}

struct Setup {
    problem: ProblemSpec,
    grid: Grid,
    scheme: SchemeConfig,
}

fn setup(cfg: &RunConfig) -> CliResult<Setup> {
    let problem = cfg.problem.build()?;
    let grid = problem.grid(cfg.grid.h)?;
    let scheme = cfg.scheme.build()?;
    Ok(Setup {
        problem,
        grid,
        scheme,
    })
}

fn newton_pair(s: &Setup, cfg: &RunConfig) -> CliResult<ErgodicPair> {
    Ok(solve_newton(
        &s.problem,
        &s.grid,
        &s.scheme,
        None,
        cfg.ergodic.tol,
    )?)
}

fn opt(v: f64) -> Option<f64> {
    Some(v)
}

fn evolve(cfg: &RunConfig, b: &mut Bundle) -> CliResult<()> {
    let s = setup(cfg)?;
    let u0 = match s.problem.initial_field(&s.grid, None) {
        Ok(u0) => u0,
        Err(_) if matches!(s.problem.initial.spec(), InitialSpec::ShiftedErgodic { .. }) => {
            let pair = newton_pair(&s, cfg)?;
            s.problem.initial_field(&s.grid, Some(&pair.phi))?
        }
        Err(e) => return Err(e.into()),
    };
    b.mark("setup");
    let traj = solve_from(&s.problem, u0, &s.scheme)?;
    b.mark("evolve");
    let mut rows = Vec::new();
    for (i, snap) in traj.snapshots.iter().enumerate() {
        b.field(&format!("fields/u_{i:04}.txt"), &snap.field, "u")?;
        rows.push(vec![
            opt(i as f64),
            opt(snap.time),
            opt(snap.field.at(traj.x_ref)),
            opt(snap.field.min()),
            opt(snap.field.max()),
        ]);
    }
    b.series(
        "series/snapshots.txt",
        &["index", "t", "u_ref", "u_min", "u_max"],
        &rows,
    )?;
    let slopes: Vec<_> = traj
        .slope_series
        .iter()
        .map(|&(t, v)| vec![opt(t), opt(v)])
        .collect();
    b.series("series/slope.txt", &["t", "slope"], &slopes)?;
    let last = traj.final_field();
    b.scalar("final_time", traj.final_time());
    b.scalar("steps", traj.steps as f64);
    b.scalar("u_ref_final", last.at(traj.x_ref));
    if let Some(&(_, v)) = traj.slope_series.last() {
        b.scalar("slope_final", v);
    }
    b.verdict("finite", last.values().iter().all(|v| v.is_finite()));
    Ok(())
}

fn sup_gap(a: &GridField, b: &GridField, nodes: &[usize]) -> f64 {
    nodes
        .iter()
        .map(|&k| (a.at(k) - b.at(k)).abs())
        .fold(0.0, f64::max)
}

fn ergodic(cfg: &RunConfig, b: &mut Bundle) -> CliResult<()> {
    let s = setup(cfg)?;
    let e = &cfg.ergodic;
    if e.routes.is_empty() {
        return Err(CliError::Config("ergodic.routes is empty".into()));
    }
    let half = e.compact.unwrap_or(0.5 * s.problem.radius);
    let nodes = Compact::centered(half).nodes(&s.grid)?;
    let mut pairs: Vec<(&str, ErgodicPair)> = Vec::new();
    for &route in &e.routes {
        let (name, result) = match route {
            RouteName::Newton => ("newton", newton_pair(&s, cfg)),
            RouteName::Longtime => {
                let lt = cfg
                    .scheme
                    .build_until(e.longtime_max_time, Some(e.longtime_interval))?;
                (
                    "longtime",
                    solve_longtime(&s.problem, &s.grid, &lt, e.longtime_tol).map_err(Into::into),
                )
            }
            RouteName::Radial => {
                let r_max = s.problem.radius * (s.problem.dim as f64).sqrt();
                let pair = radial_oracle(&s.problem, r_max, e.radial_tol)
                    .and_then(|p| p.to_pair(&s.grid, s.scheme.x_ref));
                ("radial", pair.map_err(Into::into))
            }
        };
        b.mark(name);
        match result {
            Ok(pair) => {
                b.verdict(&format!("{name}_converged"), true);
                pairs.push((name, pair));
            }
            Err(CliError::Core(Error::NonConvergence { reason, history })) => {
                b.verdict(&format!("{name}_converged"), false);
                b.detail(
                    &format!("{name}_failure"),
                    json!({ "reason": reason, "history": history }),
                )?;
            }
            Err(err) => return Err(err),
        }
    }
    for (name, pair) in &pairs {
        b.field(&format!("fields/phi_{name}.txt"), &pair.phi, "phi")?;
        b.scalar(&format!("lambda_{name}"), pair.lambda);
        b.scalar(&format!("residual_{name}"), pair.residual);
        b.detail(&format!("pair_{name}"), pair.summary())?;
    }
    if let Some((_, first)) = pairs.first() {
        b.scalar("lambda", first.lambda);
    }
    for (i, (na, pa)) in pairs.iter().enumerate() {
        for (nb, pb) in &pairs[i + 1..] {
            let dl = (pa.lambda - pb.lambda).abs();
            let dphi = sup_gap(&pa.phi, &pb.phi, &nodes);
            b.scalar(&format!("lambda_gap_{na}_{nb}"), dl);
            b.scalar(&format!("phi_gap_{na}_{nb}"), dphi);
            b.verdict(
                &format!("agree_{na}_{nb}"),
                dl <= e.agree_tol && dphi <= e.agree_tol,
            );
        }
    }
    if s.problem.source.manufactured_pair().is_some() {
        let exact = ErgodicPair::manufactured(&s.problem, &s.grid, s.scheme.x_ref)?;
        b.scalar("lambda_exact", exact.lambda);
        for (name, pair) in &pairs {
            let dl = (pair.lambda - exact.lambda).abs();
            let dphi = sup_gap(&pair.phi, &exact.phi, &nodes);
            b.scalar(&format!("lambda_error_{name}"), dl);
            b.scalar(&format!("phi_error_{name}"), dphi);
            b.verdict(&format!("{name}_lambda_exact"), dl <= e.exact_lambda_tol);
            b.verdict(&format!("{name}_phi_exact"), dphi <= e.exact_phi_tol);
        }
    }
    Ok(())
}

struct Curves {
    chi: ChiBarrier,
    xi: XiBarrier,
}

fn curves(bs: &BarrierSection) -> CliResult<Curves> {
    Ok(Curves {
        chi: integrate_chi(bs.chi, bs.cap)?,
        xi: integrate_xi(bs.xi, bs.s_max)?,
    })
}

/// Both barrier inequality suites, recorded as verdicts.
fn inequality_suites(bs: &BarrierSection, m: f64, c: &Curves, b: &mut Bundle) -> CliResult<()> {
    let chi = verify_chi_inequality(&c.chi, m, bs.beta, bs.samples);
    let xi = verify_xi_inequality(&c.xi, m, bs.xi_beta.unwrap_or(bs.beta), bs.samples);
    b.verdict("chi_inequality", chi.passed());
    b.verdict("xi_inequality", xi.passed());
    b.scalar("chi_max_violation", chi.max_violation);
    b.scalar("xi_max_violation", xi.max_violation);
    b.detail("chi_inequality", &chi)?;
    b.detail("xi_inequality", &xi)?;
    Ok(())
}

fn assembly(
    kind: AssemblyKind,
    pair: &ErgodicPair,
    c: &Curves,
    bs: &BarrierSection,
    problem: &ProblemSpec,
    compact: &[usize],
) -> CliResult<BarrierAssembly> {
    let curve = if kind.is_super() {
        BarrierCurve::Chi(c.chi.clone())
    } else {
        BarrierCurve::Xi(c.xi.clone())
    };
    let params = AssemblyParams {
        shift: if kind.is_shifted() {
            problem.radius
        } else {
            bs.t0
        },
        beta: bs.beta,
        alpha_hat: bs.alpha_hat,
        c_hat: bs.c_hat,
    };
    Ok(assemble(kind, pair, curve, params, problem, compact)?)
}

fn barriers(cfg: &RunConfig, b: &mut Bundle) -> CliResult<()> {
    let bs = cfg.barriers.clone().unwrap_or_default();
    let s = setup(cfg)?;
    let c = curves(&bs)?;
    b.mark("integrate");
    let mut buf = Vec::new();
    c.chi
        .table()
        .write_columns(&mut buf, ["s", "chi", "dchi"])
        .map_err(|e| CliError::io("chi.txt", e))?;
    b.write("series/chi.txt", &buf)?;
    let mut buf = Vec::new();
    c.xi.table()
        .write_columns(&mut buf, ["s", "xi", "dxi"])
        .map_err(|e| CliError::io("xi.txt", e))?;
    b.write("series/xi.txt", &buf)?;
    b.scalar("b", c.chi.b);
    b.scalar("M", c.xi.limit);
    b.scalar("xi_tail", c.xi.tail);
    if let Some(sat) = c.xi.saturation {
        b.scalar("xi_saturation", sat);
    }
    inequality_suites(&bs, s.problem.m, &c, b)?;
    b.mark("inequalities");
    if !bs.residual {
        return Ok(());
    }
    let manufactured = s.problem.source.manufactured_pair().is_some();
    let choice = bs.pair.unwrap_or(if manufactured {
        PairChoice::Exact
    } else {
        PairChoice::Newton
    });
    let pair = match choice {
        PairChoice::Exact => ErgodicPair::manufactured(&s.problem, &s.grid, s.scheme.x_ref)?,
        PairChoice::Newton => newton_pair(&s, cfg)?,
    };
    let compact = Compact::centered(bs.compact).nodes(&s.grid)?;
    let dt = bs.residual_dt.unwrap_or(s.grid.spacing().powi(2));
    let kinds = [
        AssemblyKind::Super,
        AssemblyKind::Sub,
        AssemblyKind::SuperShifted,
        AssemblyKind::SubShifted,
    ];
    for kind in kinds {
        let a = assembly(kind, &pair, &c, &bs, &s.problem, &compact)?;
        let r = residual_check(&a, &s.problem, &bs.residual_times, dt)?;
        let name = serde_json::to_value(kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
            .replace('-', "_");
        b.verdict(&format!("residual_{name}"), r.report.passed());
        b.scalar(&format!("sigma_{name}"), a.sigma);
        b.scalar(&format!("epsilon_{name}"), r.epsilon);
        b.scalar(
            &format!("residual_max_violation_{name}"),
            r.report.max_violation,
        );
        b.detail(&format!("assembly_{name}"), a.summary())?;
        b.detail(&format!("residual_{name}"), &r)?;
    }
    b.mark("residual");
    Ok(())
}

fn converge(cfg: &RunConfig, b: &mut Bundle) -> CliResult<()> {
    let cs = cfg.converge.clone().unwrap_or_default();
    let s = setup(cfg)?;
    let pair = newton_pair(&s, cfg)?;
    b.mark("ergodic");
    b.field("fields/phi.txt", &pair.phi, "phi")?;
    b.scalar("lambda", pair.lambda);
    b.detail("pair", pair.summary())?;
    let sandwich = if cs.sandwich {
        let bs = cfg.barriers.clone().unwrap_or_default();
        let c = curves(&bs)?;
        let upper = assembly(AssemblyKind::Super, &pair, &c, &bs, &s.problem, &[])?;
        let lower = assembly(AssemblyKind::Sub, &pair, &c, &bs, &s.problem, &[])?;
        Some((upper, lower, bs.sandwich_tol))
    } else {
        None
    };
    let initials = if cs.initials.is_empty() {
        vec![cfg.problem.initial.clone()]
    } else {
        cs.initials.clone()
    };
    let compact = Compact::centered(cs.compact);
    let trajectories: Vec<_> = initials
        .par_iter()
        .map(|spec| -> CliResult<_> {
            let problem = s.problem.with_initial(InitialData::new(spec.clone())?);
            let u0 = problem.initial_field(&s.grid, Some(&pair.phi))?;
            Ok(solve_from(&problem, u0, &s.scheme)?)
        })
        .collect::<CliResult<_>>()?;
    b.mark("evolve");
    let mut worst_spread = f64::NEG_INFINITY;
    for (i, traj) in trajectories.iter().enumerate() {
        let r = convergence_metric(traj, &pair, &compact, &cs.options)?;
        let rows: Vec<_> = (0..r.times.len())
            .map(|j| {
                vec![
                    opt(r.times[j]),
                    opt(r.c_hat_series[j]),
                    opt(r.spread_series[j]),
                    r.lambda_slope_series[j],
                    opt(r.c_hat_lower[j]),
                    opt(r.c_hat_upper[j]),
                ]
            })
            .collect();
        b.series(
            &format!("series/convergence_{i}.txt"),
            &[
                "t",
                "c_hat",
                "spread",
                "lambda_slope",
                "c_hat_lower",
                "c_hat_upper",
            ],
            &rows,
        )?;
        b.field(&format!("fields/u_{i}.txt"), traj.final_field(), "u")?;
        worst_spread = worst_spread.max(r.spread_final);
        b.scalar(&format!("spread_final_{i}"), r.spread_final);
        b.scalar(&format!("c_hat_final_{i}"), r.c_hat_final);
        b.scalar(&format!("slope_final_{i}"), r.slope_final);
        b.scalar(&format!("slope_bound_{i}"), r.slope_bound);
        b.verdict(&format!("run{i}_bounded"), r.verdicts.bounded);
        b.verdict(&format!("run{i}_converged"), r.verdicts.converged);
        b.verdict(&format!("run{i}_slope"), r.verdicts.slope);
        let mut record = json!({
            "initial": initials[i],
            "spread_final": r.spread_final,
            "c_hat_final": r.c_hat_final,
            "c_hat_lower_final": r.c_hat_lower.last(),
            "c_hat_upper_final": r.c_hat_upper.last(),
            "slope_final": r.slope_final,
            "slope_bound": r.slope_bound,
            "tail_increase": r.tail_increase,
            "steps": traj.steps,
            "verdicts": r.verdicts,
        });
        if let Some((upper, lower, tol)) = &sandwich {
            let sw = sandwich_check(traj, upper, lower, *tol)?;
            b.verdict(&format!("run{i}_sandwich"), sw.passed());
            b.scalar(
                &format!("sandwich_max_violation_{i}"),
                sw.upper.max_violation.max(sw.lower.max_violation),
            );
            record["sandwich"] = serde_json::to_value(&sw).unwrap_or_default();
        }
        b.detail(&format!("run{i}"), record)?;
    }
    b.scalar("spread_final", worst_spread);
    if let Some((upper, lower, _)) = &sandwich {
        b.scalar("sigma_super", upper.sigma);
        b.scalar("sigma_sub", lower.sigma);
    }
    b.mark("analysis");
    Ok(())
}

fn verify(cfg: &RunConfig, seed: u64, b: &mut Bundle) -> CliResult<()> {
    let vs = cfg.verify.clone().unwrap_or_default();
    let s = setup(cfg)?;
    let mut pair: Option<ErgodicPair> = None;
    for suite in &vs.suites {
        match suite {
            Suite::H1 => match s.problem.envelope {
                Some(_) => {
                    let r = s.problem.validate_h1(vs.h1_samples)?;
                    b.verdict("h1", r.passed);
                    b.scalar("h1_max_violation", r.max_violation);
                    b.detail("h1", &r)?;
                }
                None => b.detail("h1", "skipped: problem has no growth envelope")?,
            },
            Suite::Transform => {
                let reports = vs
                    .transform_m
                    .iter()
                    .map(|&m| {
                        let c = vs.transform_c_fraction * (m - 1.0 - 2.0 / m);
                        transform_suite(m, c, vs.transform_samples, seed)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                for r in &reports {
                    b.verdict(&format!("transform_m{}", r.m), r.passed());
                    b.scalar(&format!("transform_variant_gap_m{}", r.m), r.variant_gap);
                }
                b.detail("transform", &reports)?;
            }
            Suite::Ordering => {
                for (i, p) in vs.ordering.iter().enumerate() {
                    let low = InitialData::new(p.low.clone())?;
                    let high = InitialData::new(p.high.clone())?;
                    let r = ordering_check(&s.problem, &low, &high, &s.grid, &s.scheme)?;
                    b.verdict(&format!("ordering_{i}"), r.passed());
                    b.scalar(&format!("ordering_max_violation_{i}"), r.max_violation);
                    b.detail(&format!("ordering_{i}"), &r)?;
                }
            }
            Suite::Nested => {
                let r = nested_limit(&s.problem, &vs.nested_radii, cfg.grid.h, &s.scheme)?;
                b.verdict("nested_monotone", r.max_violation() <= vs.nested_tol);
                b.verdict("nested_inner_gap", r.inner_gap <= vs.nested_gap_tol);
                b.scalar("nested_max_violation", r.max_violation());
                b.scalar("nested_inner_gap", r.inner_gap);
                b.detail(
                    "nested",
                    json!({ "radii": r.radii, "violations": r.violations, "inner_gap": r.inner_gap }),
                )?;
            }
            Suite::Holder | Suite::Superlinearity | Suite::Gradient => {
                if pair.is_none() {
                    pair = Some(newton_pair(&s, cfg)?);
                }
                let pair = pair.as_ref().expect("computed above");
                let (name, r) = match suite {
                    Suite::Holder => (
                        "holder",
                        holder_rescale_check(pair, &s.problem, &vs.holder_radii, vs.holder_factor)?,
                    ),
                    Suite::Superlinearity => (
                        "superlinearity",
                        superlinearity_check(pair, s.problem.m, &vs.superlinearity_radii)?,
                    ),
                    _ => (
                        "gradient",
                        gradient_bound_check(pair, &s.problem, &vs.gradient_radii)?,
                    ),
                };
                b.verdict(name, r.passed);
                b.detail(name, &r)?;
            }
            Suite::Barriers => {
                let bs = cfg.barriers.clone().unwrap_or_default();
                let c = curves(&bs)?;
                inequality_suites(&bs, s.problem.m, &c, b)?;
            }
        }
        b.mark(&format!("{suite:?}").to_lowercase());
    }
    Ok(())
}

fn sweep(loaded: &Loaded, seed: u64, b: &mut Bundle) -> CliResult<()> {
    let sw = loaded.config.sweep.clone().expect("checked by run");
    let command: Command = sw.command.parse()?;
    if command == Command::Sweep {
        return Err(CliError::Config("a sweep cannot run another sweep".into()));
    }
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for p in &sw.parameters {
        if p.values.is_empty() {
            return Err(CliError::Config(format!(
                "sweep parameter {} has no values",
                p.key
            )));
        }
        combos = combos
            .into_iter()
            .flat_map(|c| {
                p.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((p.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let mut configs = Vec::with_capacity(combos.len());
    for combo in &combos {
        let mut raw = loaded.raw.clone();
        if let Some(t) = raw.as_table_mut() {
            t.remove("sweep");
            t.remove("output");
        }
        for (k, v) in combo {
            set_path(&mut raw, k, v.clone())?;
        }
        let config: RunConfig = raw.clone().try_into().map_err(|e: toml::de::Error| {
            CliError::Config(format!("{}: sweep point {combo:?}: {e}", loaded.source))
        })?;
        configs.push(Loaded {
            config,
            raw,
            source: loaded.source.clone(),
        });
    }
    let dir = b.dir().to_path_buf();
    let outcomes: Vec<CliResult<bool>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, l)| run(command, l, seed, &dir.join(format!("{i:03}"))))
        .collect();
    let mut points = Vec::new();
    for (i, (outcome, combo)) in outcomes.into_iter().zip(&combos).enumerate() {
        let passed = outcome?;
        b.adopt(&format!("{i:03}/{MANIFEST}"))?;
        b.verdict(&format!("point_{i:03}"), passed);
        let overrides: serde_json::Map<String, serde_json::Value> = combo
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::to_value(v).unwrap_or_default()))
            .collect();
        points.push(json!({ "index": i, "dir": format!("{i:03}"), "overrides": overrides, "passed": passed }));
    }
    b.scalar("points", points.len() as f64);
    b.detail("points", points)?;
    b.mark("sweep");
    Ok(())
}
