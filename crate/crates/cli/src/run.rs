//! Experiment orchestration.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use rsde::control::{
    check_dpp, value_dp, value_elliptic, ControlProblem, Dynamics, GridSpec, Quadrature, TieBreak, ValueGrid,
};
use rsde::geometry::{ConditionReport, GeometryError};
use rsde::hjb::{check_viscosity_certificate, CertificateOptions, CertificateReport, HamiltonianSpec, Side};
use rsde::maxprinciple::{check_submartingale, sample_support_set, SubmartingaleOptions, SupportOptions};
use rsde::penalized::{simulate_penalized, PenalizedScheme};
use rsde::reflected::{simulate_reflected_with, ReflectedScheme, ReflectedTrajectory};
use rsde::stats::{linear_fit, mean_and_se};
use rsde::{BrownianPath, Coefficients, DomainModel, Matrix, Point, StreamId, TimeGrid, VerifiedDomain};

use crate::config::{invalid, DEFAULT_VERIFY_SAMPLES, CoefficientsSection, CostSection, DomainSection, ExperimentKind, QuerySection, Resolved};
use crate::output::{coords, float, opt_float, verdict, write_json, Table};
use crate::{CliError, VERSION};


#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Everything written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
    pub statistics: Value,
    pub tolerances: Value,
    pub artifacts: Vec<String>,
    pub stages: Vec<Stage>,
    pub config: Value,
}

struct Recorder {
    stages: Vec<Stage>,
}

impl Recorder {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(Stage { name: name.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }
}

/// Result of one experiment before it is written out.
struct Outcome {
    verdicts: Vec<Verdict>,
    statistics: Value,
    tolerances: Value,
    tables: Vec<(String, Table)>,
}

enum AnyDomain {
    One(DomainModel<1>),
    Two(DomainModel<2>),
}

fn pair(key: &str, value: &Option<Vec<f64>>, default: [f64; 2]) -> Result<[f64; 2], CliError> {
    match value {
        None => Ok(default),
        Some(v) if v.len() == 2 => Ok([v[0], v[1]]),
        Some(v) => Err(invalid(&format!("domain.{key}"), format!("expected 2 entries, got {}", v.len()))),
    }
}

fn build_domain(sec: &DomainSection) -> Result<AnyDomain, CliError> {
    let geo = |e: GeometryError| invalid("domain", e.to_string());
    let finish = |b: rsde::DomainBuilder<2>| {
        let mut b = b;
        if let Some(r) = sec.r0 {
            b = b.r0(r);
        }
        if let Some(d) = sec.delta {
            b = b.delta(d);
        }
        if let Some(x) = sec.beta {
            b = b.beta(x);
        }
        b.build().map(AnyDomain::Two).map_err(geo)
    };
    match sec.kind.as_str() {
        "interval" => {
            let lo = sec.lo.as_ref().and_then(|v| v.first().copied()).unwrap_or(-1.0);
            let hi = sec.hi.as_ref().and_then(|v| v.first().copied()).unwrap_or(1.0);
            let mut b = DomainModel::interval(lo, hi);
            if let Some(r) = sec.r0 {
                b = b.r0(r);
            }
            if let Some(d) = sec.delta {
                b = b.delta(d);
            }
            if let Some(x) = sec.beta {
                b = b.beta(x);
            }
            b.build().map(AnyDomain::One).map_err(geo)
        }
        "disk" => finish(DomainModel::disk(pair("center", &sec.center, [0.0, 0.0])?, sec.radius.unwrap_or(1.0))),
        "box" => finish(DomainModel::rect(
            pair("lo", &sec.lo, [0.0, 0.0])?,
            pair("hi", &sec.hi, [1.0, 1.0])?,
        )),
        "crescent" => finish(DomainModel::crescent(
            pair("outer_center", &sec.outer_center, [0.0, 0.0])?,
            sec.outer_radius.unwrap_or(1.0),
            pair("inner_center", &sec.inner_center, [1.0, 0.0])?,
            sec.inner_radius.unwrap_or(0.8),
        )),
        "lshape" => finish(DomainModel::lshape(
            pair("lo", &sec.lo, [0.0, 0.0])?,
            pair("hi", &sec.hi, [1.0, 1.0])?,
            pair("notch", &sec.notch, [0.5, 0.5])?,
        )),
        other => Err(invalid(
            "domain.kind",
            format!("unknown domain `{other}` (expected interval, disk, box, crescent or lshape)"),
        )),
    }
}

fn domain_statistics<const D: usize>(d: &DomainModel<D>) -> Value {
    json!({
        "kind": format!("{:?}", d.kind()),
        "dimension": D,
        "r0": d.r0,
        "delta": d.delta,
        "beta": d.beta,
        "gamma": d.gamma,
        "lipschitz_pi": d.lipschitz_pi,
    })
}

fn point<const D: usize>(key: &str, v: &[f64]) -> Result<Point<D>, CliError> {
    if v.len() != D {
        return Err(invalid(key, format!("expected {D} entries, got {}", v.len())));
    }
    Ok(Point::<D>::from_column_slice(v))
}

fn coefficients<const D: usize>(sec: &CoefficientsSection, domain: &DomainModel<D>) -> Result<Coefficients<D>, CliError> {
    let sigma = match sec.sigma.as_deref() {
        None => Matrix::<D>::identity(),
        Some([s]) => Matrix::<D>::identity() * *s,
        Some(v) if v.len() == D * D => Matrix::<D>::from_row_slice(v),
        Some(v) => {
            return Err(invalid("coefficients.sigma", format!("expected 1 or {} entries, got {}", D * D, v.len())))
        }
    };
    let drifts: Vec<Point<D>> = match (&sec.drifts, &sec.drift) {
        (Some(_), Some(_)) => return Err(invalid("coefficients.drifts", "give either `drift` or `drifts`, not both")),
        (Some(v), None) => {
            if v.is_empty() || v.len() % D != 0 {
                return Err(invalid("coefficients.drifts", format!("length must be a positive multiple of {D}")));
            }
            v.chunks(D).map(Point::<D>::from_column_slice).collect()
        }
        (None, Some(v)) => vec![point("coefficients.drift", v)?],
        (None, None) => vec![Point::<D>::zeros()],
    };
    match sec.model.as_deref().unwrap_or("constant") {
        "constant" => Ok(Coefficients::controlled_drift(sigma, drifts)),
        "linear" => {
            let kappa = sec.kappa.unwrap_or(1.0);
            let (lo, hi) = domain.shape().bounds();
            let reach = lo.norm().max(hi.norm()) + 4.0 * domain.r0;
            let bound = drifts.iter().map(|b| b.norm()).fold(0.0, f64::max) + kappa.abs() * reach;
            let n = drifts.len();
            Ok(Coefficients::new(n, move |_, _, _| sigma, move |_, x, u| drifts[u] - x * kappa, sigma.norm(), bound))
        }
        other => Err(invalid("coefficients.model", format!("unknown model `{other}` (expected constant or linear)"))),
    }
}

type CostFn<const D: usize> = Box<dyn Fn(f64, &Point<D>, usize) -> f64 + Send + Sync>;

fn problem<const D: usize>(
    coeffs: Coefficients<D>,
    cost: &CostSection,
    horizon: f64,
) -> Result<ControlProblem<D>, CliError> {
    let weight = cost.control_weight.unwrap_or(0.1);
    let c = coeffs.clone();
    let running: CostFn<D> =
        match cost.running.as_deref().unwrap_or("quadratic-cost") {
            "zero" => Box::new(|_, _, _| 0.0),
            "unit" => Box::new(|_, _, _| 1.0),
            "x1-squared" => Box::new(|_, x, _| x[0] * x[0]),
            "quadratic-cost" => Box::new(move |t, x, u| x.norm_squared() + weight * c.drift(t, x, u).norm_squared()),
            other => {
                return Err(invalid(
                    "cost.running",
                    format!("unknown running cost `{other}` (expected zero, unit, x1-squared or quadratic-cost)"),
                ))
            }
        };
    if let Some(lambda) = cost.discount {
        if lambda <= 0.0 {
            return Err(invalid("cost.discount", "must be positive"));
        }
        return Ok(ControlProblem::discounted(coeffs, move |x, u| running(0.0, x, u), lambda));
    }
    let terminal: Box<dyn Fn(&Point<D>) -> f64 + Send + Sync> = match cost.terminal.as_deref().unwrap_or("zero") {
        "zero" => Box::new(|_| 0.0),
        "last-coordinate" => Box::new(|x| x[D - 1]),
        "quadratic" => Box::new(|x| x.norm_squared()),
        other => {
            return Err(invalid(
                "cost.terminal",
                format!("unknown terminal cost `{other}` (expected zero, last-coordinate or quadratic)"),
            ))
        }
    };
    Ok(ControlProblem::new(coeffs, running, terminal, horizon))
}

fn grid_spec(r: &Resolved) -> Result<GridSpec, CliError> {
    let g = r.config.grid()?;
    let mut spec = GridSpec::new(g.dx.unwrap_or(0.1));
    if spec.dx <= 0.0 {
        return Err(invalid("grid.dx", "must be positive"));
    }
    if let Some(dt) = g.dt {
        spec = spec.with_dt(dt);
    }
    spec = spec.with_quadrature(match g.quadrature.as_deref().unwrap_or("tensor") {
        "tensor" => Quadrature::Tensor,
        "star" => Quadrature::Star,
        other => return Err(invalid("grid.quadrature", format!("unknown quadrature `{other}`"))),
    });
    spec = spec.with_tie_break(match g.tie_break.as_deref().unwrap_or("lowest") {
        "lowest" => TieBreak::Lowest,
        "highest" => TieBreak::Highest,
        other => return Err(invalid("grid.tie_break", format!("unknown tie break `{other}`"))),
    });
    Ok(spec)
}

fn time_grid(r: &Resolved) -> Result<TimeGrid, CliError> {
    let g = r.config.grid()?;
    let horizon = g.horizon.unwrap_or(1.0);
    let n = g.n_steps.unwrap_or(1000);
    if horizon <= 0.0 || n == 0 {
        return Err(invalid("grid", "T and n_steps must be positive"));
    }
    Ok(TimeGrid::new(0.0, horizon, n))
}

fn dynamics(q: &QuerySection) -> Result<Dynamics, CliError> {
    match q.dynamics.as_deref().unwrap_or("reflected") {
        "reflected" => Ok(Dynamics::Reflected),
        "penalized" => Ok(Dynamics::Penalized(q.penalty.ok_or_else(|| invalid("query.penalty", "missing"))?)),
        other => Err(invalid("query.dynamics", format!("unknown dynamics `{other}`"))),
    }
}

fn start_point<const D: usize>(q: &QuerySection, domain: &DomainModel<D>) -> Result<Point<D>, CliError> {
    match &q.x0 {
        Some(v) => point("query.x0", v),
        None => Ok(domain.closest_point(&Point::<D>::zeros())),
    }
}

fn verify<const D: usize>(model: DomainModel<D>, sec: &DomainSection) -> Result<VerifiedDomain<D>, CliError> {
    model.verify(sec.verify_samples.unwrap_or(DEFAULT_VERIFY_SAMPLES)).map_err(|e| match e {
        GeometryError::Rejected(reason) => CliError::DomainRejected(reason),
        other => CliError::runtime("verifying domain", other),
    })
}

fn check_report(report: &ConditionReport) -> (Vec<Verdict>, Table) {
    let mut table = Table::new(["condition", "passed", "margin", "samples", "witness"]);
    let mut verdicts = Vec::new();
    for (name, c) in [
        ("exterior-sphere", &report.exterior_sphere),
        ("interior-cone", &report.interior_cone),
        ("boundary-gradient", &report.boundary_gradient),
    ] {
        let witness = c
            .witness
            .as_ref()
            .map(|w| serde_json::to_string(w).unwrap_or_default().replace(',', ";"))
            .unwrap_or_default();
        table.push([name.to_string(), c.passed.to_string(), float(c.margin), c.samples.to_string(), witness]);
        verdicts.push(Verdict::new(name, c.passed, format!("worst margin {:.6e}", c.margin)));
    }
    (verdicts, table)
}

/// Paired check that each column does not exceed the previous one by more
/// than two standard errors of the per-path difference.
fn paired_decrease(columns: &[Vec<f64>]) -> (bool, Vec<f64>) {
    let mut ok = true;
    let mut diffs = Vec::new();
    for w in columns.windows(2) {
        let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
        let (m, se) = mean_and_se(&d);
        ok &= m <= 2.0 * se;
        diffs.push(m);
    }
    (ok, diffs)
}

fn penalized_scheme(r: &Resolved) -> Result<PenalizedScheme, CliError> {
    match r.config.penalization()?.scheme.as_deref().unwrap_or("split") {
        "split" => Ok(PenalizedScheme::default()),
        "explicit" => Ok(PenalizedScheme::explicit()),
        other => Err(invalid("penalization.scheme", format!("unknown scheme `{other}` (expected split or explicit)"))),
    }
}

fn penalize_rate<const D: usize>(r: &Resolved, domain: &VerifiedDomain<D>, rec: &mut Recorder) -> Result<Outcome, CliError> {
    let coeffs = coefficients(&r.config.coefficients.clone().unwrap_or_default(), domain)?;
    let grid = time_grid(r)?;
    let q = r.config.query();
    let x0 = start_point(&q, domain)?;
    let pen = r.config.penalization()?;
    let levels = pen.levels.clone();
    let p = pen.p.unwrap_or(2.0);
    let scheme = penalized_scheme(r)?;
    let m = r.config.monte_carlo()?.paths.expect("validated");
    let rows: Result<Vec<Vec<f64>>, CliError> = rec.time("simulate", || {
        (0..m as u64)
            .into_par_iter()
            .map(|i| {
                let path = BrownianPath::<D>::sample(grid, StreamId::new(r.seed, i));
                levels
                    .iter()
                    .map(|&n| {
                        simulate_penalized(domain, &coeffs, &x0, n, &path, &0usize, scheme)
                            .map(|t| t.sup_distance)
                            .map_err(|e| CliError::runtime(&format!("penalized path {i} at n = {n}"), e))
                    })
                    .collect()
            })
            .collect()
    });
    let rows = rows?;
    let columns: Vec<Vec<f64>> = (0..levels.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut table = Table::new(["n", "mean_sup_dist", "std_err", "p_norm"]);
    let mut means = Vec::new();
    for (n, col) in levels.iter().zip(&columns) {
        let (mean, se) = mean_and_se(col);
        let p_norm = (col.iter().map(|v| v.powf(p)).sum::<f64>() / col.len() as f64).powf(1.0 / p);
        table.push([float(*n), float(mean), float(se), float(p_norm)]);
        means.push(mean);
    }
    let mut verdicts = Vec::new();
    let (mono, diffs) = paired_decrease(&columns);
    if levels.len() >= 2 {
        verdicts.push(Verdict::new("monotone", mono, format!("paired mean differences {diffs:?}")));
    }
    let mut slope = None;
    if levels.len() >= 3 && means.iter().all(|m| *m > 0.0) {
        let xs: Vec<f64> = levels.iter().map(|n| (n / n.ln()).ln()).collect();
        let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
        let s = linear_fit(&xs, &ys).0;
        slope = Some(s);
        verdicts.push(Verdict::new("rate", (-0.65..=-0.35).contains(&s), format!("log-log slope {s:.4}")));
    }
    Ok(Outcome {
        verdicts,
        statistics: json!({ "means": means, "slope": slope, "x0": x0.as_slice(), "p": p, "paths": m }),
        tolerances: json!({ "slope_range": [-0.65, -0.35], "monotone_se": 2.0 }),
        tables: vec![("penalize-rate.csv".into(), table)],
    })
}

fn trajectory_table<const D: usize>(t: &ReflectedTrajectory<D>) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(coords("x", D));
    header.extend(coords("dxi", D));
    header.push("xi_tv".into());
    let mut table = Table::new(header);
    for k in 0..t.states.len() {
        let mut row = vec![float(t.grid.time(k))];
        row.extend(t.states[k].iter().map(|v| float(*v)));
        row.extend(t.dxi[k].iter().map(|v| float(*v)));
        row.push(float(t.xi_tv[k]));
        table.push(row);
    }
    table
}

fn converge<const D: usize>(r: &Resolved, domain: &VerifiedDomain<D>, rec: &mut Recorder) -> Result<Outcome, CliError> {
    let coeffs = coefficients(&r.config.coefficients.clone().unwrap_or_default(), domain)?;
    let grid = time_grid(r)?;
    let q = r.config.query();
    let x0 = start_point(&q, domain)?;
    let levels = r.config.penalization()?.levels.clone();
    let scheme = penalized_scheme(r)?;
    let m = r.config.monte_carlo()?.paths.expect("validated");
    let dumps = q.trajectories.unwrap_or(0).min(m);
    let reference_levels = scheme.refinement(*levels.last().expect("nonempty"), grid.dt());
    type Row<const D: usize> = (Vec<f64>, Option<ReflectedTrajectory<D>>);
    let rows: Result<Vec<Row<D>>, CliError> = rec.time("simulate", || {
        (0..m as u64)
            .into_par_iter()
            .map(|i| {
                let path = BrownianPath::<D>::sample(grid, StreamId::new(r.seed, i));
                let refl = ReflectedScheme { min_levels: reference_levels, max_retries: 3 };
                let reference = simulate_reflected_with(domain, &coeffs, &x0, &path, &0usize, refl)
                    .map_err(|e| CliError::runtime(&format!("reflected path {i}"), e))?;
                let gaps: Result<Vec<f64>, CliError> = levels
                    .iter()
                    .map(|&n| {
                        let t = simulate_penalized(domain, &coeffs, &x0, n, &path, &0usize, scheme)
                            .map_err(|e| CliError::runtime(&format!("penalized path {i} at n = {n}"), e))?;
                        Ok(t.states.iter().zip(&reference.states).map(|(a, b)| (a - b).norm_squared()).fold(0.0, f64::max))
                    })
                    .collect();
                Ok((gaps?, ((i as usize) < dumps).then_some(reference)))
            })
            .collect()
    });
    let rows = rows?;
    let columns: Vec<Vec<f64>> = (0..levels.len()).map(|j| rows.iter().map(|r| r.0[j]).collect()).collect();
    let mut table = Table::new(["n", "mean_sup_gap", "std_err"]);
    let mut means = Vec::new();
    for (n, col) in levels.iter().zip(&columns) {
        let (mean, se) = mean_and_se(col);
        table.push([float(*n), float(mean), float(se)]);
        means.push(mean);
    }
    let mut tables = vec![("converge.csv".to_string(), table)];
    for (i, (_, t)) in rows.iter().enumerate() {
        if let Some(t) = t {
            tables.push((format!("trajectories/path_{i:05}.csv"), trajectory_table(t)));
        }
    }
    let (mono, diffs) = paired_decrease(&columns);
    Ok(Outcome {
        verdicts: vec![Verdict::new("monotone", mono, format!("paired mean differences {diffs:?}"))],
        statistics: json!({ "means": means, "reference_refinement": reference_levels, "x0": x0.as_slice(), "paths": m }),
        tolerances: json!({ "monotone_se": 2.0 }),
        tables,
    })
}

fn value_table<const D: usize>(v: &ValueGrid<D>, slices: &[usize]) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(coords("x", D));
    header.extend(["value".to_string(), "argmin".to_string()]);
    let mut table = Table::new(header);
    let slots = v.domain_slots();
    for &k in slices {
        for &s in &slots {
            let x = v.lattice.point(v.active[s]);
            let mut row = vec![float(v.times[k])];
            row.extend(x.iter().map(|c| float(*c)));
            row.push(float(v.values[k][s]));
            row.push(v.argmin.get(k).map(|a| a[s].to_string()).unwrap_or_default());
            table.push(row);
        }
    }
    table
}

/// Slice indices `0, stride, 2 stride, ..., K` with at most about 50 slices.
fn output_slices(n: usize) -> Vec<usize> {
    let stride = (n / 50).max(1);
    let mut out: Vec<usize> = (0..n).step_by(stride).collect();
    if out.last() != Some(&(n - 1)) {
        out.push(n - 1);
    }
    out
}

fn solve_value<const D: usize>(
    r: &Resolved,
    domain: &VerifiedDomain<D>,
    rec: &mut Recorder,
) -> Result<(ControlProblem<D>, ValueGrid<D>, Value), CliError> {
    let coeffs = coefficients(&r.config.coefficients.clone().unwrap_or_default(), domain)?;
    let horizon = r.config.grid()?.horizon.unwrap_or(1.0);
    let prob = problem(coeffs, &r.config.cost.clone().unwrap_or_default(), horizon)?;
    let spec = grid_spec(r)?;
    let q = r.config.query();
    if prob.discount.is_some() {
        let eps = q.eps.unwrap_or(1e-3);
        let e = rec
            .time("value iteration", || value_elliptic(&prob, domain, &spec, eps))
            .map_err(|e| CliError::runtime("elliptic value iteration", e))?;
        let stats = json!({
            "dx": spec.dx, "dt": e.dt, "sweeps": e.sweeps, "truncation_horizon": e.truncation_horizon,
            "truncation_bound": e.truncation_bound, "final_change": e.final_change, "nodes": e.grid.active.len(),
        });
        Ok((prob, e.grid, stats))
    } else {
        let dyn_ = dynamics(&q)?;
        let v = rec
            .time("dynamic programming", || value_dp(&prob, domain, &spec, dyn_))
            .map_err(|e| CliError::runtime("dynamic programming", e))?;
        let stats = json!({
            "dx": v.dx(), "dt": v.dt(), "slices": v.n_slices(), "nodes": v.active.len(),
            "quadrature": spec.quadrature, "tie_break": spec.tie_break, "dynamics": format!("{dyn_:?}"),
        });
        Ok((prob, v, stats))
    }
}

fn value<const D: usize>(r: &Resolved, domain: &VerifiedDomain<D>, rec: &mut Recorder) -> Result<Outcome, CliError> {
    let (_, v, stats) = solve_value(r, domain, rec)?;
    let slices = output_slices(v.n_slices());
    let table = value_table(&v, &slices);
    let finite = v.values.iter().flatten().all(|x| x.is_finite());
    Ok(Outcome {
        verdicts: vec![Verdict::new("finite", finite, "all node values are finite")],
        statistics: json!({ "grid": stats, "exported_slices": slices.len() }),
        tolerances: json!({}),
        tables: vec![("value.csv".into(), table)],
    })
}

fn certificate_table<const D: usize>(report: &CertificateReport) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend(coords("x", D));
    header.extend(["residual", "n_minus", "n_plus", "verdict"].map(String::from));
    let mut table = Table::new(header);
    for p in &report.records {
        let mut row = vec![float(p.t)];
        row.extend(p.x.iter().map(|c| float(*c)));
        row.extend([float(p.residual), opt_float(p.n_minus), opt_float(p.n_plus), verdict(p.passed).to_string()]);
        table.push(row);
    }
    table
}

fn hjb_check<const D: usize>(r: &Resolved, domain: &VerifiedDomain<D>, rec: &mut Recorder) -> Result<Outcome, CliError> {
    let (prob, v, stats) = solve_value(r, domain, rec)?;
    let spec = match prob.discount {
        Some(_) => HamiltonianSpec::elliptic(&prob),
        None => HamiltonianSpec::parabolic(&prob),
    };
    let mut opts = CertificateOptions::scheme_tolerance(&v);
    if let Some(tol) = r.config.grid()?.tolerance {
        opts.tol = tol;
    }
    opts.record_stride = (v.n_slices() / 10).max(1);
    let mut verdicts = Vec::new();
    let mut tables = Vec::new();
    let mut worst = serde_json::Map::new();
    for (side, name) in [(Side::Sub, "sub"), (Side::Super, "super")] {
        let report = rec.time(&format!("{name}solution certificate"), || check_viscosity_certificate(&spec, &v, side, &opts));
        verdicts.push(Verdict::new(
            &format!("{name}solution"),
            report.passed,
            format!("{} of {} points fail", report.failures, report.points_checked),
        ));
        worst.insert(
            name.into(),
            json!({
                "interior": report.worst_interior, "boundary": report.worst_boundary,
                "terminal": report.worst_terminal, "notes": report.notes, "points": report.points_checked,
            }),
        );
        tables.push((format!("hjb-check-{name}.csv"), certificate_table::<D>(&report)));
    }
    Ok(Outcome {
        verdicts,
        statistics: json!({ "grid": stats, "worst": worst }),
        tolerances: json!({ "residual": opts.tol }),
        tables,
    })
}

fn dpp<const D: usize>(r: &Resolved, domain: &VerifiedDomain<D>, rec: &mut Recorder) -> Result<Outcome, CliError> {
    let (prob, v, stats) = solve_value(r, domain, rec)?;
    if prob.discount.is_some() {
        return Err(invalid("cost.discount", "the dpp experiment needs a finite-horizon problem"));
    }
    let q = r.config.query();
    let x = start_point(&q, domain)?;
    let t = q.t.unwrap_or(0.0);
    let tau = q.tau.unwrap_or(0.5 * (t + prob.horizon));
    let m = r.config.monte_carlo()?.paths.expect("validated");
    let report = rec
        .time("monte carlo", || check_dpp(&prob, domain, t, &x, tau, &v, m, dynamics(&q).unwrap_or(Dynamics::Reflected), r.seed))
        .map_err(|e| CliError::runtime("dynamic programming principle", e))?;
    let mut table = Table::new(["policy_id", "lhs", "rhs", "std_err", "verdict"]);
    for rec in &report.records {
        table.push([rec.policy_id.clone(), float(rec.lhs), float(rec.rhs), float(rec.std_err), verdict(rec.passed).into()]);
    }
    let mut verdicts = vec![Verdict::new("inequalities", report.passed, "every policy within tolerance")];
    if prob.n_controls() > 1 {
        verdicts.push(Verdict::new(
            "strict witness",
            report.strict_witness,
            "some constant policy is strictly suboptimal",
        ));
    }
    Ok(Outcome {
        verdicts,
        statistics: json!({ "grid": stats, "report": report }),
        tolerances: json!({ "dpp": report.tolerance, "standard_errors": 3.0 }),
        tables: vec![("dpp.csv".into(), table)],
    })
}

fn support<const D: usize>(r: &Resolved, domain: &VerifiedDomain<D>, rec: &mut Recorder) -> Result<Outcome, CliError> {
    let coeffs = coefficients(&r.config.coefficients.clone().unwrap_or_default(), domain)?;
    let q = r.config.query();
    let x0 = start_point(&q, domain)?;
    let t1 = q.t1.unwrap_or(1.0);
    let n = q.n_controls.unwrap_or(200);
    let bound = q.hdot_bound.unwrap_or(4.0);
    let opts = SupportOptions { seed: r.seed, ..SupportOptions::default() };
    let s = rec
        .time("skorokhod problems", || sample_support_set(domain, &coeffs, &x0, t1, n, bound, &opts))
        .map_err(|e| CliError::runtime("support sampling", e))?;
    let mut header = coords("x", D);
    header.extend(["t1".to_string(), "control_id".to_string()]);
    let mut table = Table::new(header);
    for (i, e) in s.endpoints.iter().enumerate() {
        let mut row: Vec<String> = e.iter().map(|c| float(*c)).collect();
        row.extend([float(t1), i.to_string()]);
        table.push(row);
    }
    let mut verdicts = Vec::new();
    if let Some(max) = q.max_coverage {
        verdicts.push(Verdict::new("coverage", s.coverage <= max, format!("coverage {:.6e}", s.coverage)));
    }
    Ok(Outcome {
        verdicts,
        statistics: json!({ "sample": s, "endpoints": s.endpoints.len() }),
        tolerances: json!({ "max_coverage": q.max_coverage }),
        tables: vec![("support.csv".into(), table)],
    })
}

fn submartingale<const D: usize>(r: &Resolved, domain: &VerifiedDomain<D>, rec: &mut Recorder) -> Result<Outcome, CliError> {
    let coeffs = coefficients(&r.config.coefficients.clone().unwrap_or_default(), domain)?;
    let q = r.config.query();
    let x0 = start_point(&q, domain)?;
    let horizon = r.config.grid()?.horizon.unwrap_or(0.1);
    let times = q.times.clone().unwrap_or_else(|| vec![0.0, horizon / 4.0, horizon / 2.0, horizon]);
    if times.len() < 2 {
        return Err(invalid("query.times", "need at least two times"));
    }
    let u: fn(f64, &Point<D>) -> f64 = match q.function.as_deref().unwrap_or("norm-squared") {
        "norm-squared" => |_, x| x.norm_squared(),
        "neg-norm-squared" => |_, x| -x.norm_squared(),
        "constant" => |_, _| 1.0,
        "first-coordinate" => |_, x| x[0],
        other => return Err(invalid("query.function", format!("unknown test function `{other}`"))),
    };
    let expect = match q.expect.as_deref().unwrap_or("pass") {
        "pass" => true,
        "fail" => false,
        other => return Err(invalid("query.expect", format!("expected pass or fail, got `{other}`"))),
    };
    let mut opts = SubmartingaleOptions { seed: r.seed, ..SubmartingaleOptions::default() };
    opts.paths = r.config.monte_carlo()?.paths.expect("validated");
    if let Some(b) = q.branches {
        opts.branches = b;
    }
    if let Some(n) = r.config.grid()?.n_steps {
        opts.dt = horizon / n as f64;
    }
    let report = rec
        .time("simulate", || check_submartingale(domain, &coeffs, u, &x0, &times, &opts))
        .map_err(|e| CliError::runtime("submartingale test", e))?;
    let mut table = Table::new(["s", "t", "mean_diff", "std_err", "verdict"]);
    for p in &report.pairs {
        table.push([
            float(p.s),
            float(p.t),
            float(p.mean_diff),
            float(p.std_err),
            verdict(p.unconditional_passed && p.conditional_passed).into(),
        ]);
    }
    let observed = if expect { report.passed } else { report.unconditional_passed };
    Ok(Outcome {
        verdicts: vec![Verdict::new(
            "expected outcome",
            observed == expect,
            format!(
                "expected {}, unconditional {}, conditional {}",
                verdict(expect),
                verdict(report.unconditional_passed),
                verdict(report.conditional_passed)
            ),
        )],
        statistics: json!({ "report": report }),
        tolerances: json!({ "standard_errors": 3.0, "max_violation_fraction": opts.max_violation_fraction }),
        tables: vec![("submartingale.csv".into(), table)],
    })
}

fn dispatch<const D: usize>(r: &Resolved, model: DomainModel<D>, rec: &mut Recorder) -> Result<(Outcome, Value), CliError> {
    let sec = r.config.domain()?;
    let geometry = domain_statistics(&model);
    if r.kind == ExperimentKind::VerifyDomain {
        let report = rec.time("verify", || model.verify_conditions(sec.verify_samples.unwrap_or(DEFAULT_VERIFY_SAMPLES)));
        let (verdicts, table) = check_report(&report);
        let outcome = Outcome {
            verdicts,
            statistics: json!({ "report": report }),
            tolerances: json!({ "margin": rsde::geometry::MARGIN_TOL }),
            tables: vec![("verify-domain.csv".into(), table)],
        };
        return Ok((outcome, geometry));
    }
    let domain = rec.time("verify", || verify(model, sec))?;
    let outcome = match r.kind {
        ExperimentKind::PenalizeRate => penalize_rate(r, &domain, rec)?,
        ExperimentKind::Converge => converge(r, &domain, rec)?,
        ExperimentKind::Value => value(r, &domain, rec)?,
        ExperimentKind::HjbCheck => hjb_check(r, &domain, rec)?,
        ExperimentKind::Dpp => dpp(r, &domain, rec)?,
        ExperimentKind::Support => support(r, &domain, rec)?,
        ExperimentKind::Submartingale => submartingale(r, &domain, rec)?,
        ExperimentKind::VerifyDomain => unreachable!("handled above"),
    };
    Ok((outcome, geometry))
}

fn execute(r: &Resolved) -> Result<(Outcome, Value, Vec<Stage>), CliError> {
    let mut rec = Recorder { stages: Vec::new() };
    let model = rec.time("build domain", || build_domain(r.config.domain()?))?;
    let (outcome, geometry) = match model {
        AnyDomain::One(m) => dispatch(r, m, &mut rec)?,
        AnyDomain::Two(m) => dispatch(r, m, &mut rec)?,
    };
    Ok((outcome, geometry, rec.stages))
}

/// Runs the experiment, writes its CSV files and `summary.json` into the
/// output directory, and returns the summary.
pub fn run_experiment(r: &Resolved) -> Result<Summary, CliError> {
    let (outcome, geometry, stages) = execute(r)?;
    let mut artifacts = Vec::new();
    for (name, table) in &outcome.tables {
        table.write(&r.out_dir.join(name))?;
        artifacts.push(name.clone());
    }
    let mut statistics = outcome.statistics;
    if let Value::Object(map) = &mut statistics {
        map.insert("domain".into(), geometry);
    }
    let summary = Summary {
        version: VERSION.to_string(),
        experiment: r.kind.name().to_string(),
        seed: r.seed,
        passed: outcome.verdicts.iter().all(|v| v.passed),
        verdicts: outcome.verdicts,
        statistics,
        tolerances: outcome.tolerances,
        artifacts,
        stages,
        config: serde_json::to_value(&r.config).map_err(|e| CliError::runtime("serializing config", e))?,
    };
    write_json(&r.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Builds the configured domain and runs the condition verifier only.
pub fn verify_domain(r: &Resolved) -> Result<Summary, CliError> {
    let verify_only = Resolved { kind: ExperimentKind::VerifyDomain, ..r.clone() };
    let (outcome, geometry, stages) = execute(&verify_only)?;
    Ok(Summary {
        version: VERSION.to_string(),
        experiment: ExperimentKind::VerifyDomain.name().to_string(),
        seed: r.seed,
        passed: outcome.verdicts.iter().all(|v| v.passed),
        verdicts: outcome.verdicts,
        statistics: json!({ "domain": geometry, "report": outcome.statistics["report"] }),
        tolerances: outcome.tolerances,
        artifacts: Vec::new(),
        stages,
        config: serde_json::to_value(&r.config).map_err(|e| CliError::runtime("serializing config", e))?,
    })
}

/// Writes `summary.json` for a summary produced elsewhere.
pub fn write_summary(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    write_json(&dir.join("summary.json"), summary)
}
