//! Leapfrog time stepping of `u_tt + A u = f` with the transmission operator,
//! plus the energies, interface traces and observations recorded on the way.
//!
//! The scheme is
//!
//! ```text
//! u^{n+1} = 2 u^n - u^{n-1} + dt² (f^n - A u^n),
//! u^1     = u^0 + dt u_1 + dt²/2 (f^0 - A u^0),
//! ```
//!
//! with centred velocities `v^n = (u^{n+1} - u^{n-1}) / (2 dt)` (and `v^0 = u_1`).
//! It conserves `E_{n+1/2} = ½‖(u^{n+1}-u^n)/dt‖² + ½⟨A u^n, u^{n+1}⟩` exactly
//! when `f = 0`.

use crate::elliptic::{dot, DiscreteOperator, InterfaceJumps};
use crate::error::{Error, Result};
use crate::medium::{Point, Region};

/// Displacement and velocity on the interior nodes at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub time: f64,
}

impl WaveState {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Self {
        WaveState { u, v, time: 0.0 }
    }

    pub fn zeros(n: usize) -> Self {
        WaveState { u: vec![0.0; n], v: vec![0.0; n], time: 0.0 }
    }
}

/// Right-hand side `f^n` of the scheme.
pub trait Source: Sync {
    /// Add `f^n` (at time `t = n dt`) into `out`.
    fn add(&self, step: usize, t: f64, out: &mut [f64]);
}

/// Source given by its values at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSource {
    pub frames: Vec<Vec<f64>>,
}

impl Source for SampledSource {
    fn add(&self, step: usize, _t: f64, out: &mut [f64]) {
        if let Some(f) = self.frames.get(step) {
            out.iter_mut().zip(f).for_each(|(o, x)| *o += x);
        }
    }
}

/// Source `f(t, x)` evaluated at the interior nodes.
pub struct FnSource<F: Fn(f64, &Point) -> f64 + Sync> {
    pub points: Vec<Point>,
    pub f: F,
}

impl<F: Fn(f64, &Point) -> f64 + Sync> Source for FnSource<F> {
    fn add(&self, _step: usize, t: f64, out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.points) {
            *o += (self.f)(t, p);
        }
    }
}

/// Side of a rectangle (or end of an interval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPart {
    Left,
    Right,
    Bottom,
    Top,
}

/// Portion of the outer boundary, optionally restricted to a tangential
/// coordinate range on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet(pub Vec<(BoundaryPart, Option<(f64, f64)>)>);

/// What an observation integrates.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// `‖u‖²` over `ω`.
    Region(Region),
    /// `‖∂_ν u‖²` over part of the boundary.
    Boundary(BoundarySet),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordSpec {
    /// Keep full states every `k` steps (plus the final one).
    pub states_every: Option<usize>,
    pub observations: Vec<Observation>,
    pub interface: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Requested step; `None` picks the largest admissible step dividing `horizon`.
    pub dt: Option<f64>,
    pub horizon: f64,
    pub cfl_fraction: f64,
    pub record: RecordSpec,
}

impl SimConfig {
    pub fn new(horizon: f64) -> Self {
        SimConfig { dt: None, horizon, cfl_fraction: 0.9, record: RecordSpec::default() }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn recording(mut self, record: RecordSpec) -> Self {
        self.record = record;
        self
    }

    /// Step count and step size for this operator.
    pub fn resolve(&self, op: &DiscreteOperator) -> Result<(usize, f64)> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Configuration(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        if !(self.cfl_fraction > 0.0 && self.cfl_fraction <= 1.0) {
            return Err(Error::Configuration("cfl_fraction must lie in (0, 1]".into()));
        }
        let dt_max = self.cfl_fraction * op.cfl_limit();
        match self.dt {
            Some(dt) => {
                if !(dt > 0.0) || dt > dt_max {
                    return Err(Error::Configuration(format!(
                        "dt = {dt:.6e} violates the CFL bound {dt_max:.6e} (cfl_fraction {})",
                        self.cfl_fraction
                    )));
                }
                let steps = (self.horizon / dt).round() as usize;
                if (steps as f64 * dt - self.horizon).abs() > 1e-9 * self.horizon.max(dt) {
                    return Err(Error::Configuration(format!("horizon {} is not a multiple of dt {dt}", self.horizon)));
                }
                Ok((steps, dt))
            }
            None => {
                if self.horizon == 0.0 {
                    return Ok((0, dt_max));
                }
                let steps = (self.horizon / dt_max).ceil().max(1.0) as usize;
                Ok((steps, self.horizon / steps as f64))
            }
        }
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub steps: usize,
    /// Stored snapshots (strictly increasing times).
    pub states: Vec<WaveState>,
    /// `E_{n+1/2}` for `n = 0..=steps`.
    pub energy: Vec<f64>,
    /// One series per recorded observation: the squared spatial integral at
    /// every step `n = 0..=steps`.
    pub observations: Vec<(Observation, Vec<f64>)>,
    /// Per-step interface diagnostics, if requested.
    pub interface: Vec<InterfaceJumps>,
    pub final_state: WaveState,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }
}

/// One leapfrog step; checks the CFL bound before stepping.
pub fn step(prev: &[f64], curr: &[f64], op: &DiscreteOperator, dt: f64, source: Option<&[f64]>) -> Result<Vec<f64>> {
    if !(dt > 0.0) || dt > op.cfl_limit() {
        return Err(Error::Configuration(format!("dt = {dt:.6e} violates the CFL bound {:.6e}", op.cfl_limit())));
    }
    let au = op.apply(curr);
    let dt2 = dt * dt;
    Ok((0..curr.len())
        .map(|i| 2.0 * curr[i] - prev[i] + dt2 * (source.map_or(0.0, |f| f[i]) - au[i]))
        .collect())
}

fn trapezoid_sum(series: &[f64], dt: f64) -> f64 {
    match series.len() {
        0 => 0.0,
        1 => 0.0,
        n => dt * (0.5 * series[0] + series[1..n - 1].iter().sum::<f64>() + 0.5 * series[n - 1]),
    }
}

/// Precomputed quadrature for an observation.
enum Probe {
    Nodes { idx: Vec<usize>, w: f64 },
    /// `(first neighbour, second neighbour, weight, 1/(2h))` per boundary node.
    Normal(Vec<(Option<usize>, Option<usize>, f64, f64)>),
}

impl Probe {
    fn build(op: &DiscreteOperator, obs: &Observation) -> Result<Probe> {
        let g = &op.grid;
        match obs {
            Observation::Region(r) => {
                let idx: Vec<usize> = (0..g.n_interior()).filter(|&k| r.contains(&g.interior_point(k))).collect();
                if idx.is_empty() {
                    return Err(Error::arg(format!("observation region {r:?} contains no interior node")));
                }
                Ok(Probe::Nodes { idx, w: g.cell_volume() })
            }
            Observation::Boundary(set) => {
                let mut out = Vec::new();
                let cx = g.cells[0];
                for (part, range) in &set.0 {
                    let keep = |s: f64| range.map_or(true, |(a, b)| s >= a - 1e-12 && s <= b + 1e-12);
                    if g.dim == 1 {
                        let h = g.spacing[0];
                        match part {
                            BoundaryPart::Left => out.push((g.interior_index(1, 0), g.interior_index(2, 0), 1.0, 0.5 / h)),
                            BoundaryPart::Right => {
                                out.push((g.interior_index(cx - 1, 0), g.interior_index(cx - 2, 0), 1.0, 0.5 / h))
                            }
                            _ => return Err(Error::arg("1D boundary parts are Left and Right")),
                        }
                        continue;
                    }
                    let cy = g.cells[1];
                    let (hx, hy) = (g.spacing[0], g.spacing[1]);
                    match part {
                        BoundaryPart::Left | BoundaryPart::Right => {
                            let (i1, i2) = if *part == BoundaryPart::Left { (1, 2) } else { (cx - 1, cx - 2) };
                            for j in 1..cy {
                                if keep(g.node(0, j)[1]) {
                                    out.push((g.interior_index(i1, j), g.interior_index(i2, j), hy, 0.5 / hx));
                                }
                            }
                        }
                        BoundaryPart::Bottom | BoundaryPart::Top => {
                            let (j1, j2) = if *part == BoundaryPart::Bottom { (1, 2) } else { (cy - 1, cy - 2) };
                            for i in 1..cx {
                                if keep(g.node(i, 0)[0]) {
                                    out.push((g.interior_index(i, j1), g.interior_index(i, j2), hx, 0.5 / hy));
                                }
                            }
                        }
                    }
                }
                if out.is_empty() {
                    return Err(Error::arg("boundary observation set is empty"));
                }
                Ok(Probe::Normal(out))
            }
        }
    }

    fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Probe::Nodes { idx, w } => w * idx.iter().map(|&k| u[k] * u[k]).sum::<f64>(),
            Probe::Normal(rows) => rows
                .iter()
                .map(|&(a, b, w, inv2h)| {
                    // one-sided second-order quotient with u = 0 on the boundary
                    let ua = a.map_or(0.0, |k| u[k]);
                    let ub = b.map_or(0.0, |k| u[k]);
                    let d = (-4.0 * ua + ub) * inv2h;
                    w * d * d
                })
                .sum(),
        }
    }
}

/// Run the scheme from `init` over `config.horizon`.
pub fn simulate(
    op: &DiscreteOperator,
    init: &WaveState,
    config: &SimConfig,
    source: Option<&dyn Source>,
) -> Result<Trajectory> {
    let n = op.dim();
    if init.u.len() != n || init.v.len() != n {
        return Err(Error::arg(format!("initial data must have {n} interior values")));
    }
    let (steps, dt) = config.resolve(op)?;
    let probes: Vec<Probe> = config.record.observations.iter().map(|o| Probe::build(op, o)).collect::<Result<_>>()?;
    let every = config.record.states_every;
    if every == Some(0) {
        return Err(Error::Configuration("states_every must be positive".into()));
    }
    let t0 = init.time;
    let dt2 = dt * dt;
    let mut obs_series: Vec<Vec<f64>> = vec![Vec::with_capacity(steps + 1); probes.len()];
    let mut energy = Vec::with_capacity(steps + 1);
    let mut interface = Vec::new();
    let mut states = Vec::new();

    let mut f = vec![0.0; n];
    let mut au = vec![0.0; n];
    let load = |k: usize, f: &mut Vec<f64>| {
        f.iter_mut().for_each(|x| *x = 0.0);
        if let Some(s) = source {
            s.add(k, t0 + k as f64 * dt, f);
        }
    };

    let mut prev = init.u.clone();
    op.apply_into(&prev, &mut au);
    load(0, &mut f);
    let mut curr: Vec<f64> = (0..n).map(|i| prev[i] + dt * init.v[i] + 0.5 * dt2 * (f[i] - au[i])).collect();
    let record = |u: &[f64], obs: &mut Vec<Vec<f64>>, iface: &mut Vec<InterfaceJumps>| {
        for (p, s) in probes.iter().zip(obs.iter_mut()) {
            s.push(p.eval(u));
        }
        if config.record.interface {
            iface.push(op.interface_jumps(u));
        }
    };
    record(&prev, &mut obs_series, &mut interface);
    energy.push(leapfrog_energy(op, &prev, &curr, &au, dt));
    if every.is_some() {
        states.push(WaveState { u: prev.clone(), v: init.v.clone(), time: t0 });
    }
    let mut final_state = WaveState { u: prev.clone(), v: init.v.clone(), time: t0 };

    let mut next = vec![0.0; n];
    for k in 1..=steps {
        op.apply_into(&curr, &mut au);
        load(k, &mut f);
        for i in 0..n {
            next[i] = 2.0 * curr[i] - prev[i] + dt2 * (f[i] - au[i]);
        }
        record(&curr, &mut obs_series, &mut interface);
        energy.push(leapfrog_energy(op, &curr, &next, &au, dt));
        let t = t0 + k as f64 * dt;
        let keep = every.map_or(false, |e| k % e == 0 || k == steps);
        if keep || k == steps {
            let v: Vec<f64> = (0..n).map(|i| (next[i] - prev[i]) / (2.0 * dt)).collect();
            let st = WaveState { u: curr.clone(), v, time: t };
            if keep {
                states.push(st.clone());
            }
            if k == steps {
                final_state = st;
            }
        }
        std::mem::swap(&mut prev, &mut curr);
        std::mem::swap(&mut curr, &mut next);
    }
    let observations = config.record.observations.iter().cloned().zip(obs_series).collect();
    Ok(Trajectory { dt, steps, states, energy, observations, interface, final_state })
}

fn leapfrog_energy(op: &DiscreteOperator, u: &[f64], u_next: &[f64], au: &[f64], dt: f64) -> f64 {
    let w = op.grid.cell_volume();
    let kin: f64 = u.iter().zip(u_next).map(|(a, b)| ((b - a) / dt).powi(2)).sum();
    0.5 * w * kin + 0.5 * w * dot(au, u_next)
}

/// The conserved leapfrog energy series.
pub fn energy(trajectory: &Trajectory) -> &[f64] {
    &trajectory.energy
}

/// Largest relative deviation of the energy from its first value.
pub fn energy_drift(trajectory: &Trajectory) -> f64 {
    let e0 = trajectory.energy.first().copied().unwrap_or(0.0);
    if e0 == 0.0 {
        return trajectory.energy.iter().fold(0.0f64, |a, e| a.max(e.abs()));
    }
    trajectory.energy.iter().fold(0.0f64, |a, e| a.max(((e - e0) / e0).abs()))
}

/// `sqrt(∫_0^T ∫ |obs|²)` with the trapezoid rule in time.
pub fn record_observation(trajectory: &Trajectory, obs: &Observation) -> Result<f64> {
    if let Some((_, s)) = trajectory.observations.iter().find(|(o, _)| o == obs) {
        return Ok(trapezoid_sum(s, trajectory.dt).sqrt());
    }
    Err(Error::arg("observation was not recorded; add it to SimConfig.record.observations"))
}

/// Maximum interface jumps over the recorded steps.
pub fn check_transmission(trajectory: &Trajectory) -> Result<InterfaceJumps> {
    if trajectory.interface.is_empty() {
        return Err(Error::arg("interface traces were not recorded; set record.interface"));
    }
    Ok(trajectory.interface.iter().fold(InterfaceJumps::default(), |a, j| a.max(*j)))
}

/// Data `(u(T), -u_t(T))` for running the scheme backwards in time.
pub fn reversed(state: &WaveState) -> WaveState {
    WaveState { u: state.u.clone(), v: state.v.iter().map(|x| -x).collect(), time: 0.0 }
}

/// Discrete angular frequency of mode `λ` under step `dt`.
pub fn leapfrog_frequency(lambda: f64, dt: f64) -> f64 {
    2.0 / dt * (0.5 * dt * lambda.sqrt()).asin()
}
