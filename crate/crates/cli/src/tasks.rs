//! Validation and execution of the twelve tasks.

use std::f64::consts::PI;

use jumpwave_core::carleman::{
    carleman_certify, check_gamma_cover, check_subellipticity, classify, compute_m, geomspace, geometric_alpha_ratio,
    random_bumps, CarlemanWeight, LocalChart, MicrolocalPoint, SidePair, SymbolGrid, WitnessKind,
};
use jumpwave_core::control::{
    cost_curve, hum_control, observation_threshold, observe, quant_uc_check, stability_check, trapping_demo,
    wave_packet_1d, ControlProblem, ControlSystem, PacketSpec,
};
use jumpwave_core::elliptic::{assemble, eigendecompose, DiscreteOperator, Grid};
use jumpwave_core::medium::{GraphSpec, Medium, Point, Side};
use jumpwave_core::wavesolver::{energy_drift, record_observation, simulate, Observation, RecordSpec, SimConfig, WaveState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, InitConfig, RegionConfig, SymbolGridConfig, TaskConfig};
use crate::output::{num, opt, Plot, Table};
use crate::{RunError, TaskOutput};

/// Everything built during validation.
pub struct Prepared {
    pub medium: Medium,
    /// Assembled operator for tasks that evolve waves.
    pub op: Option<DiscreteOperator>,
}

fn invalid(msg: impl Into<String>) -> RunError {
    RunError::Invalid(msg.into())
}

fn positive(name: &str, x: f64) -> Result<(), RunError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {x}")))
    }
}

fn needs_operator(task: &TaskConfig) -> bool {
    !matches!(
        task,
        TaskConfig::Distance(_) | TaskConfig::CarlemanRegions(_) | TaskConfig::CarlemanWeights(_) | TaskConfig::CarlemanCertify(_)
    )
}

fn to_point(v: &[f64], dim: usize, what: &str) -> Result<Point, RunError> {
    if v.len() != dim {
        return Err(invalid(format!("{what} needs {dim} coordinates, got {}", v.len())));
    }
    Ok([v[0], if dim == 2 { v[1] } else { 0.0 }])
}

/// The region must contain at least one interior node.
fn check_region(r: &RegionConfig, op: &DiscreteOperator, what: &str) -> Result<(), RunError> {
    let region = r.to_region();
    if (0..op.dim()).any(|k| region.contains(&op.grid.interior_point(k))) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains no grid node")))
    }
}

fn check_init(init: &InitConfig, op: &DiscreteOperator) -> Result<(), RunError> {
    let dim = op.grid.dim;
    match init {
        InitConfig::Mode { index, amplitude } => {
            if *index == 0 || *index > op.dim() {
                return Err(invalid(format!("mode index must lie in 1..={}", op.dim())));
            }
            if !amplitude.is_finite() {
                return Err(invalid("amplitude must be finite"));
            }
        }
        InitConfig::Bump { center, radius, amplitude } => {
            to_point(center, dim, "bump center")?;
            positive("bump radius", *radius)?;
            if !amplitude.is_finite() {
                return Err(invalid("amplitude must be finite"));
            }
        }
        InitConfig::Packet { width, wavenumber, direction, .. } => {
            if dim != 1 {
                return Err(invalid("packet initial data is 1D only"));
            }
            positive("packet width", *width)?;
            if !wavenumber.is_finite() || *direction == 0.0 {
                return Err(invalid("packet needs a finite wavenumber and a nonzero direction"));
            }
        }
        InitConfig::Random { modes } => {
            if *modes == 0 || *modes > op.dim() {
                return Err(invalid(format!("random modes must lie in 1..={}", op.dim())));
            }
        }
    }
    Ok(())
}

fn check_positive_list(name: &str, v: &[f64]) -> Result<(), RunError> {
    if v.is_empty() {
        return Err(invalid(format!("{name} must not be empty")));
    }
    for x in v {
        positive(name, *x)?;
    }
    Ok(())
}

/// Validate the whole config and build the medium and operator.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, RunError> {
    let medium = config.medium.build()?;
    let dim = medium.dim();
    let g = &config.grid;
    if !(g.cfl_fraction > 0.0 && g.cfl_fraction <= 1.0) {
        return Err(invalid("cfl_fraction must lie in (0, 1]"));
    }
    let op = if needs_operator(&config.task) {
        let cells = g.cells.clone().unwrap_or(if dim == 1 { vec![200] } else { vec![128, 128] });
        if cells.len() != dim || cells.iter().any(|&c| c < 2) {
            return Err(invalid(format!("grid.cells needs {dim} entries of at least 2")));
        }
        Some(assemble(&medium, &Grid::new(&medium, &cells)?)?)
    } else {
        None
    };
    validate_task(&config.task, &medium, op.as_ref())?;
    Ok(Prepared { medium, op })
}

fn validate_task(task: &TaskConfig, medium: &Medium, op: Option<&DiscreteOperator>) -> Result<(), RunError> {
    let dim = medium.dim();
    match task {
        TaskConfig::Simulate(t) => {
            let op = op.expect("operator");
            if !(t.horizon >= 0.0 && t.horizon.is_finite()) {
                return Err(invalid("horizon must be nonnegative"));
            }
            if let Some(dt) = t.dt {
                positive("dt", dt)?;
            }
            if t.states_every == Some(0) {
                return Err(invalid("states_every must be positive"));
            }
            if let Some(r) = &t.observe {
                check_region(r, op, "observation region")?;
            }
            check_init(&t.init, op)?;
        }
        TaskConfig::Distance(t) => {
            positive("resolution", t.resolution)?;
            if t.stencil_radius == Some(0) {
                return Err(invalid("stencil_radius must be positive"));
            }
            if t.pairs.is_empty() && t.largest_from.is_empty() {
                return Err(invalid("distance task needs `pairs` or `largest_from`"));
            }
            for p in &t.pairs {
                for q in [&p.from, &p.to] {
                    let pt = to_point(q, dim, "distance endpoint")?;
                    if !medium.domain.contains(&pt) {
                        return Err(invalid(format!("point {q:?} lies outside the domain")));
                    }
                }
            }
            let probe = Grid::new(medium, &vec![64; dim])?;
            for r in &t.largest_from {
                let region = r.to_region();
                let [nx, ny] = probe.node_shape();
                if !(0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).any(|(i, j)| region.contains(&probe.node(i, j))) {
                    return Err(invalid("a `largest_from` region does not meet the domain"));
                }
            }
        }
        TaskConfig::Spectrum(t) => {
            let op = op.expect("operator");
            if t.count == 0 || t.count > op.dim() {
                return Err(invalid(format!("count must lie in 1..={}", op.dim())));
            }
        }
        TaskConfig::Observe(t) => {
            let op = op.expect("operator");
            positive("horizon", t.horizon)?;
            check_region(&t.region, op, "observation region")?;
            check_init(&t.init, op)?;
            if let Some(r) = t.resolution {
                positive("resolution", r)?;
            }
        }
        TaskConfig::UcCheck(t) => {
            let op = op.expect("operator");
            positive("horizon", t.horizon)?;
            positive("kappa", t.kappa)?;
            check_region(&t.region, op, "observation region")?;
            if t.modes == 0 || t.modes > op.dim() {
                return Err(invalid(format!("modes must lie in 1..={}", op.dim())));
            }
            check_positive_list("mus", &t.mus)?;
            if let Some(r) = t.resolution {
                positive("resolution", r)?;
            }
        }
        TaskConfig::Stability(t) => {
            let op = op.expect("operator");
            positive("horizon", t.horizon)?;
            check_region(&t.region, op, "observation region")?;
            if t.modes == 0 || t.modes > op.dim() {
                return Err(invalid(format!("modes must lie in 1..={}", op.dim())));
            }
        }
        TaskConfig::Hum(t) => {
            let op = op.expect("operator");
            positive("horizon", t.horizon)?;
            if !(t.target > 0.0 && t.target <= 1.0) {
                return Err(invalid("target must lie in (0, 1]"));
            }
            check_region(&t.region, op, "control region")?;
            check_init(&t.init, op)?;
            if let Some(p) = t.penalty {
                positive("penalty", p)?;
            }
            if let Some(p) = t.cg_tol {
                positive("cg_tol", p)?;
            }
            if t.max_iter == Some(0) {
                return Err(invalid("max_iter must be positive"));
            }
        }
        TaskConfig::CostCurve(t) => {
            let op = op.expect("operator");
            positive("horizon", t.horizon)?;
            check_region(&t.region, op, "control region")?;
            check_init(&t.init, op)?;
            check_positive_list("targets", &t.targets)?;
            if t.targets.windows(2).any(|w| w[1] >= w[0]) || t.targets.iter().any(|&e| e > 1.0) {
                return Err(invalid("targets must be strictly decreasing in (0, 1]"));
            }
        }
        TaskConfig::CarlemanRegions(t) => {
            positive("eps", t.eps)?;
            positive("tau", t.tau)?;
            if t.angles == 0 {
                return Err(invalid("angles must be positive"));
            }
            let p = to_point(&t.point, dim, "point")?;
            if !medium.domain.contains(&p) {
                return Err(invalid("point lies outside the domain"));
            }
        }
        TaskConfig::CarlemanWeights(t) => {
            if dim != 2 {
                return Err(invalid("carleman-weights needs a 2D medium (the ratio is taken over the tangential circle)"));
            }
            CarlemanWeight::new(t.alpha_minus, t.alpha_plus, t.beta)?;
            positive("eps", t.eps)?;
            positive("eta", t.eta)?;
            if !(t.mu > 1.0 && t.mu0 > 1.0) {
                return Err(invalid("mu and mu0 must exceed 1"));
            }
            if let Some(g) = &t.symbols {
                symbol_grid(Some(g))?;
            }
        }
        TaskConfig::CarlemanCertify(t) => {
            CarlemanWeight::new(t.alpha_minus, t.alpha_plus, t.beta)?;
            positive("delta", t.delta)?;
            positive("d", t.d)?;
            positive("r0", t.r0)?;
            positive("half_width", t.half_width)?;
            check_positive_list("taus", &t.taus)?;
            if t.members == 0 || t.nodes_per_unit == 0 {
                return Err(invalid("members and nodes_per_unit must be positive"));
            }
            if t.r0 >= t.half_width {
                return Err(invalid("r0 must be smaller than the chart half width"));
            }
        }
        TaskConfig::Trapping(t) => {
            if dim != 2 {
                return Err(invalid("trapping needs a 2D medium"));
            }
            positive("wavenumber", t.wavenumber)?;
            positive("sigma_along", t.sigma_along)?;
            positive("sigma_across", t.sigma_across)?;
            if !(t.angle_deg.abs() < 90.0) {
                return Err(invalid("angle_deg must lie in (-90, 90)"));
            }
            if let Some(h) = t.horizon {
                positive("horizon", h)?;
            }
            let c = to_point(&t.center, 2, "packet center")?;
            if medium.side_of(&c) != Some(Side::Minus) {
                return Err(invalid("packet center must lie in the lower medium"));
            }
        }
    }
    Ok(())
}

fn symbol_grid(cfg: Option<&SymbolGridConfig>) -> Result<SymbolGrid, RunError> {
    let Some(g) = cfg else { return Ok(SymbolGrid::standard()) };
    for (name, [a, b]) in [("tau_range", g.tau_range), ("radius_range", g.radius_range)] {
        if !(a > 0.0 && b >= a) {
            return Err(invalid(format!("{name} must satisfy 0 < lo <= hi")));
        }
    }
    if g.tau_count == 0 || g.radius_count == 0 || g.angles == 0 || g.interface_samples == 0 {
        return Err(invalid("symbol grid counts must be positive"));
    }
    Ok(SymbolGrid {
        taus: geomspace(g.tau_range[0], g.tau_range[1], g.tau_count),
        radii: geomspace(g.radius_range[0], g.radius_range[1], g.radius_count),
        angles: g.angles,
        normal_samples: g.normal_samples,
        interface_samples: g.interface_samples,
    })
}

fn bump_value(p: &Point, c: &Point, r: f64, dim: usize) -> f64 {
    let mut s = (p[0] - c[0]).powi(2);
    if dim == 2 {
        s += (p[1] - c[1]).powi(2);
    }
    let s = s / (r * r);
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s)).exp()
    }
}

/// Build initial data; `seed` drives the random kind.
pub fn build_init(init: &InitConfig, op: &DiscreteOperator, medium: &Medium, seed: u64) -> Result<WaveState, RunError> {
    let n = op.dim();
    let dim = op.grid.dim;
    Ok(match init {
        InitConfig::Mode { index, amplitude } => {
            let spec = eigendecompose(op, *index)?;
            WaveState::new(spec.vectors[index - 1].iter().map(|x| amplitude * x).collect(), vec![0.0; n])
        }
        InitConfig::Bump { center, radius, amplitude } => {
            let c = to_point(center, dim, "bump center")?;
            WaveState::new(op.grid.sample(|p| amplitude * bump_value(p, &c, *radius, dim)), vec![0.0; n])
        }
        InitConfig::Packet { center, width, wavenumber, direction } => wave_packet_1d(op, medium, *center, *width, *wavenumber, *direction)?,
        InitConfig::Random { modes } => {
            let spec = eigendecompose(op, *modes)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
            for (lam, e) in spec.values.iter().zip(&spec.vectors) {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0) * lam.sqrt();
                for i in 0..n {
                    u[i] += a * e[i];
                    v[i] += b * e[i];
                }
            }
            WaveState::new(u, v)
        }
    })
}

fn mode_ensemble(op: &DiscreteOperator, modes: usize) -> Result<Vec<WaveState>, RunError> {
    let spec = eigendecompose(op, modes)?;
    Ok(spec.vectors.into_iter().map(|e| WaveState::new(e, vec![0.0; op.dim()])).collect())
}

fn problem(region: &RegionConfig, horizon: f64, cfl: f64) -> ControlProblem {
    let mut p = ControlProblem::new(Observation::Region(region.to_region()), horizon);
    p.cfl_fraction = cfl;
    p
}

fn graph_spec(resolution: Option<f64>, op: &DiscreteOperator) -> GraphSpec {
    GraphSpec::new(resolution.unwrap_or(op.grid.spacing[0]))
}

fn members_table(members: &[jumpwave_core::control::MemberNorms]) -> Table {
    let mut t = Table::new("members", &["member", "observation", "norm_low", "norm_high", "typical_frequency"]);
    for (i, m) in members.iter().enumerate() {
        t.push(vec![i.to_string(), num(m.observation), num(m.low), num(m.high), num(m.typical_frequency())]);
    }
    t
}

/// Run the validated task.
pub fn compute(prep: &Prepared, config: &ExperimentConfig) -> Result<TaskOutput, RunError> {
    let medium = &prep.medium;
    let cfl = config.grid.cfl_fraction;
    let seed = config.seed;
    let mut out = TaskOutput::default();
    match &config.task {
        TaskConfig::Simulate(t) => {
            let op = prep.op.as_ref().expect("operator");
            let init = build_init(&t.init, op, medium, seed)?;
            let mut sim = SimConfig::new(t.horizon);
            sim.dt = t.dt;
            sim.cfl_fraction = cfl;
            let observations: Vec<Observation> = t.observe.iter().map(|r| Observation::Region(r.to_region())).collect();
            let sim = sim.recording(RecordSpec { states_every: t.states_every, observations: observations.clone(), interface: t.interface });
            let traj = simulate(op, &init, &sim, None)?;
            let time = |n: usize| init.time + n as f64 * traj.dt;
            let mut energy = Table::new("energy", &["step", "time", "energy"]);
            for (n, e) in traj.energy.iter().enumerate() {
                energy.push(vec![n.to_string(), num(time(n)), num(*e)]);
            }
            out.plots.push(Plot::new("energy", "time", "energy", traj.energy.iter().enumerate().map(|(n, e)| (time(n), *e)).collect()));
            out.tables.push(energy);
            let mut summary = Table::new("summary", &["steps", "dt", "energy_drift", "observation"]);
            let obs = match observations.first() {
                Some(o) => Some(record_observation(&traj, o)?),
                None => None,
            };
            summary.push(vec![traj.steps.to_string(), num(traj.dt), num(energy_drift(&traj)), opt(obs)]);
            out.tables.push(summary);
            if let Some((_, series)) = traj.observations.first() {
                let mut t = Table::new("observation", &["step", "time", "integral"]);
                for (n, v) in series.iter().enumerate() {
                    t.push(vec![n.to_string(), num(time(n)), num(*v)]);
                }
                out.tables.push(t);
            }
            if !traj.interface.is_empty() {
                let mut t = Table::new("interface", &["step", "displacement", "harmonic_flux", "reconstructed_flux"]);
                for (n, j) in traj.interface.iter().enumerate() {
                    t.push(vec![n.to_string(), num(j.displacement), num(j.harmonic_flux), num(j.reconstructed_flux)]);
                }
                out.tables.push(t);
            }
            if !traj.states.is_empty() && t.states_every.is_some() {
                let mut s = Table::new("states", &["time", "node", "x", "y", "u", "v"]);
                for st in &traj.states {
                    for k in 0..op.dim() {
                        let p = op.grid.interior_point(k);
                        s.push(vec![num(st.time), k.to_string(), num(p[0]), num(p[1]), num(st.u[k]), num(st.v[k])]);
                    }
                }
                out.tables.push(s);
            }
        }
        TaskConfig::Distance(t) => {
            let dim = medium.dim();
            let mut spec = GraphSpec::new(t.resolution);
            if let Some(r) = t.stencil_radius {
                spec = spec.with_stencil_radius(r);
            }
            let mut d = Table::new("distance", &["from_x", "from_y", "to_x", "to_y", "distance"]);
            for p in &t.pairs {
                let a = to_point(&p.from, dim, "distance endpoint")?;
                let b = to_point(&p.to, dim, "distance endpoint")?;
                let v = medium.distance(&a, &b, &spec)?;
                d.push(vec![num(a[0]), num(a[1]), num(b[0]), num(b[1]), num(v)]);
            }
            if !d.rows.is_empty() {
                out.tables.push(d);
            }
            if !t.largest_from.is_empty() {
                let mut l = Table::new("largest", &["region", "largest_distance"]);
                for (i, r) in t.largest_from.iter().enumerate() {
                    l.push(vec![i.to_string(), num(medium.largest_distance(&r.to_region(), &spec)?)]);
                }
                out.tables.push(l);
            }
        }
        TaskConfig::Spectrum(t) => {
            let op = prep.op.as_ref().expect("operator");
            let spec = eigendecompose(op, t.count)?;
            let mut s = Table::new("spectrum", &["index", "lambda", "frequency"]);
            for (k, l) in spec.values.iter().enumerate() {
                s.push(vec![(k + 1).to_string(), num(*l), num(l.sqrt())]);
            }
            out.plots.push(Plot::new("spectrum", "index", "lambda", spec.values.iter().enumerate().map(|(k, l)| ((k + 1) as f64, *l)).collect()));
            out.tables.push(s);
        }
        TaskConfig::Observe(t) => {
            let op = prep.op.as_ref().expect("operator");
            let init = build_init(&t.init, op, medium, seed)?;
            let p = problem(&t.region, t.horizon, cfl);
            let o = observe(op, &init, &p)?;
            let (low, high) = op.data_norms(&init.u, &init.v)?;
            let threshold = observation_threshold(medium, &p, &graph_spec(t.resolution, op))?;
            let mut s = Table::new(
                "observe",
                &["horizon", "observation", "norm_low", "norm_high", "typical_frequency", "ratio", "threshold"],
            );
            let lam = if low > 0.0 { high / low } else { f64::NAN };
            let ratio = if high > 0.0 { o / high } else { f64::NAN };
            s.push(vec![num(t.horizon), num(o), num(low), num(high), num(lam), num(ratio), num(threshold)]);
            out.tables.push(s);
        }
        TaskConfig::UcCheck(t) => {
            let op = prep.op.as_ref().expect("operator");
            let ensemble = mode_ensemble(op, t.modes)?;
            let p = problem(&t.region, t.horizon, cfl);
            let r = quant_uc_check(op, medium, &ensemble, &p, &t.mus, t.kappa, &graph_spec(t.resolution, op))?;
            let mut rows = Table::new("uc", &["mu", "c", "binding_member"]);
            for row in &r.rows {
                rows.push(vec![num(row.mu), num(row.c), row.binding_member.to_string()]);
            }
            out.plots.push(Plot::new("uc", "mu", "C", r.rows.iter().map(|row| (row.mu, row.c)).collect()).log_y());
            out.tables.push(rows);
            out.tables.push(members_table(&r.members));
            let mut s = Table::new("uc_summary", &["kappa", "horizon", "threshold", "below_threshold", "all_feasible"]);
            s.push(vec![num(r.kappa), num(r.horizon), num(r.threshold), r.below_threshold.to_string(), r.all_feasible().to_string()]);
            out.tables.push(s);
        }
        TaskConfig::Stability(t) => {
            let op = prep.op.as_ref().expect("operator");
            let ensemble = mode_ensemble(op, t.modes)?;
            let r = stability_check(op, &ensemble, &problem(&t.region, t.horizon, cfl))?;
            let mut s = Table::new("stability", &["form", "constant", "binding_member"]);
            s.push(vec!["exponential".into(), num(r.c_exponential), r.binding_exponential.to_string()]);
            s.push(vec!["logarithmic".into(), num(r.c_logarithmic), r.binding_logarithmic.to_string()]);
            out.tables.push(s);
            let mut z = Table::new("zero_observation", &["member"]);
            for m in &r.zero_observation {
                z.push(vec![m.to_string()]);
            }
            out.tables.push(z);
            out.tables.push(members_table(&r.members));
        }
        TaskConfig::Hum(t) => {
            let op = prep.op.as_ref().expect("operator");
            let init = build_init(&t.init, op, medium, seed)?;
            let mut p = problem(&t.region, t.horizon, cfl).with_target(t.target);
            p.hum.penalty = t.penalty;
            if let Some(tol) = t.cg_tol {
                p.hum.cg_tol = tol;
            }
            if let Some(m) = t.max_iter {
                p.hum.max_iter = m;
            }
            let dt = ControlSystem::new(op, &p)?.dt;
            let r = hum_control(op, &init, &p)?;
            let mut s = Table::new("hum", &["target", "cost", "ratio", "penalty", "iterations"]);
            s.push(vec![num(t.target), num(r.cost), num(r.ratio), num(r.penalty), r.iterations.to_string()]);
            out.tables.push(s);
            let mut j = Table::new("j_history", &["iteration", "objective"]);
            for (k, v) in r.j_history.iter().enumerate() {
                j.push(vec![k.to_string(), num(*v)]);
            }
            out.plots.push(Plot::new("j_history", "iteration", "J", r.j_history.iter().enumerate().map(|(k, v)| (k as f64, *v)).collect()));
            out.tables.push(j);
            let vol = op.grid.cell_volume();
            let mut c = Table::new("control", &["step", "time", "norm"]);
            for (n, frame) in r.control.iter().enumerate() {
                let norm = (vol * frame.iter().map(|x| x * x).sum::<f64>()).sqrt();
                c.push(vec![n.to_string(), num(init.time + n as f64 * dt), num(norm)]);
            }
            out.tables.push(c);
        }
        TaskConfig::CostCurve(t) => {
            let op = prep.op.as_ref().expect("operator");
            let init = build_init(&t.init, op, medium, seed)?;
            let curve = cost_curve(op, &init, &problem(&t.region, t.horizon, cfl), &t.targets)?;
            let mut c = Table::new("cost_curve", &["target", "cost", "ratio", "achieved", "penalty"]);
            for r in &curve.rows {
                c.push(vec![num(r.target), num(r.cost), num(r.ratio), r.achieved.to_string(), num(r.penalty)]);
            }
            out.plots.push(
                Plot::new("cost_curve", "1/eps", "cost", curve.rows.iter().filter(|r| r.cost > 0.0).map(|r| (1.0 / r.target, r.cost)).collect())
                    .log_y(),
            );
            out.tables.push(c);
            let mut f = Table::new("fit", &["slope", "intercept", "residual", "monotone"]);
            f.push(vec![num(curve.slope), num(curve.intercept), num(curve.residual), curve.monotone.to_string()]);
            out.tables.push(f);
        }
        TaskConfig::CarlemanRegions(t) => {
            let x = to_point(&t.point, medium.dim(), "point")?;
            let freqs: Vec<(f64, f64, f64)> = if medium.dim() == 1 {
                vec![(90.0, 0.0, 1.0), (270.0, 0.0, -1.0)]
            } else {
                (0..t.angles)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / t.angles as f64;
                        (a.to_degrees(), a.cos(), a.sin())
                    })
                    .collect()
            };
            let mut r = Table::new(
                "regions",
                &["angle_deg", "xi_prime", "xi_t", "elliptic_minus", "elliptic_plus", "glancing_minus", "glancing_plus", "m_minus", "m_plus"],
            );
            for (deg, xp, xt) in freqs {
                let p = MicrolocalPoint::new(x, xp, xt, t.tau);
                let tags = classify(&p, medium, t.eps)?;
                let (mm, mp) = compute_m(&p, medium, t.eps)?;
                r.push(vec![
                    num(deg),
                    num(xp),
                    num(xt),
                    tags.elliptic_minus.to_string(),
                    tags.elliptic_plus.to_string(),
                    tags.glancing_minus.to_string(),
                    tags.glancing_plus.to_string(),
                    opt(mm),
                    opt(mp),
                ]);
            }
            out.tables.push(r);
            if medium.dim() == 2 {
                out.tables.push(alpha_table(&geometric_alpha_ratio(medium, t.eps, t.angles, 3)?, None));
            }
        }
        TaskConfig::CarlemanWeights(t) => {
            let w = CarlemanWeight::new(t.alpha_minus, t.alpha_plus, t.beta)?;
            let grid = symbol_grid(t.symbols.as_ref())?;
            let ratio = geometric_alpha_ratio(medium, t.eps, grid.angles, grid.interface_samples)?;
            out.tables.push(alpha_table(&ratio, Some(t.alpha_plus / t.alpha_minus)));
            let g = check_gamma_cover(&w, medium, t.eps, t.mu, t.mu0, t.eta, &grid)?;
            let mut gt = Table::new(
                "gamma_cover",
                &["passed", "c", "tau0", "points_checked", "witness_tau", "witness_xi_prime", "witness_xi_t", "witness_x_prime", "witness_x_n", "witness_reason"],
            );
            let wit = g.witness;
            let reason = wit.map(|w| match w.reason {
                WitnessKind::Uncovered => "uncovered",
                WitnessKind::PlusNotPositive => "plus-not-positive",
                WitnessKind::MinusNotNegative => "minus-not-negative",
            });
            gt.push(vec![
                g.passed.to_string(),
                num(g.c),
                opt(g.tau0),
                g.points_checked.to_string(),
                opt(wit.map(|w| w.tau)),
                opt(wit.map(|w| w.xi_prime)),
                opt(wit.map(|w| w.xi_t)),
                opt(wit.map(|w| w.x_prime)),
                opt(wit.map(|w| w.x_n)),
                reason.unwrap_or("").to_string(),
            ]);
            out.tables.push(gt);
            let s = check_subellipticity(&w, medium, t.eps, t.mu, t.eta, &grid)?;
            let mut st = Table::new("subellipticity", &["min_margin", "min_margin_at_zeros", "points_checked"]);
            st.push(vec![num(s.min_margin), num(s.min_margin_at_zeros), s.points_checked.to_string()]);
            out.tables.push(st);
        }
        TaskConfig::CarlemanCertify(t) => {
            let w = CarlemanWeight::new(t.alpha_minus, t.alpha_plus, t.beta)?;
            let chart = LocalChart { center: (t.center[0], t.center[1]), half_width: t.half_width, nodes_per_unit: t.nodes_per_unit };
            let bumps = random_bumps(t.members, &chart, t.r0, medium.dim(), seed);
            type SideFn = Box<dyn Fn(f64, f64, f64) -> f64 + Sync>;
            let fns: Vec<(SideFn, SideFn)> = bumps
                .iter()
                .map(|b| {
                    let (b1, b2) = (*b, *b);
                    let minus: SideFn = Box::new(move |t, xp, xn| b1.eval(Side::Minus, t, xp, xn));
                    let plus: SideFn = Box::new(move |t, xp, xn| b2.eval(Side::Plus, t, xp, xn));
                    (minus, plus)
                })
                .collect();
            let family: Vec<SidePair<'_>> = fns.iter().map(|(m, p)| SidePair { minus: m.as_ref(), plus: p.as_ref() }).collect();
            let r = carleman_certify(&family, &w, t.delta, t.d, t.r0, &t.taus, medium, &chart)?;
            let mut c = Table::new("certify", &["tau", "c", "binding_member"]);
            for row in &r.rows {
                c.push(vec![num(row.tau), num(row.c), row.binding_member.to_string()]);
            }
            out.plots.push(Plot::new("certify", "tau", "C", r.rows.iter().map(|row| (row.tau, row.c)).collect()));
            out.tables.push(c);
            let mut s = Table::new("certify_summary", &["sup_c", "degenerate", "nonincreasing_top_half", "growth_flag"]);
            s.push(vec![num(r.sup_c), r.degenerate.to_string(), r.nonincreasing_top_half.to_string(), r.growth_flag.to_string()]);
            out.tables.push(s);
            let mut m = Table::new(
                "bumps",
                &["member", "side", "amplitude", "center_t", "center_x_prime", "center_x_n", "radius"],
            );
            for (i, b) in bumps.iter().enumerate() {
                for (side, (a, c, r)) in [("minus", b.minus), ("plus", b.plus)] {
                    m.push(vec![i.to_string(), side.into(), num(a), num(c.0), num(c.1), num(c.2), num(r)]);
                }
            }
            out.tables.push(m);
        }
        TaskConfig::Trapping(t) => {
            let op = prep.op.as_ref().expect("operator");
            let packet = PacketSpec {
                center: t.center,
                angle: t.angle_deg.to_radians(),
                wavenumber: t.wavenumber,
                sigma_along: t.sigma_along,
                sigma_across: t.sigma_across,
            };
            let r = trapping_demo(op, medium, &packet, t.horizon, cfl)?;
            let mut s = Table::new(
                "trapping",
                &["reflected", "transmitted", "residual", "closure", "oracle_transmitted", "critical_angle_deg", "measure_time", "steps"],
            );
            s.push(vec![
                num(r.reflected),
                num(r.transmitted),
                num(r.residual),
                num(r.closure()),
                num(r.oracle_transmitted),
                opt(r.critical_angle.map(f64::to_degrees)),
                num(r.measure_time),
                r.steps.to_string(),
            ]);
            out.tables.push(s);
        }
    }
    Ok(out)
}

fn alpha_table(r: &jumpwave_core::carleman::AlphaRatio, weight_ratio: Option<f64>) -> Table {
    let mut t = Table::new("alpha_ratio", &["sup", "grid_sup", "argmax_x_prime", "argmax_xi_prime", "argmax_xi_t", "weight_ratio"]);
    t.push(vec![num(r.sup), num(r.grid_sup), num(r.argmax.0), num(r.argmax.1), num(r.argmax.2), opt(weight_ratio)]);
    t
}
