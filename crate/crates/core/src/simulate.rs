//! Method-of-lines simulation of the closed loop: first-order upwind in
//! space, explicit Euler (reference) or RK4 in time.

use std::fmt::Write as _;

use thiserror::Error;

use crate::forwarding::{synthesize_with, Controller, ForwardingError, SynthesisOptions};
use crate::plant::{CascadeState, Grid, PdeState, PlantError, PlantSpec, TransportOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("non-finite state at t = {t} (step {step}); last finite state kept for diagnosis")]
    NonFinite {
        t: f64,
        step: usize,
        last_finite: Box<CascadeState>,
    },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Forwarding(#[from] ForwardingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Self::Euler => "euler",
            Self::Rk4 => "rk4",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim() {
            "euler" => Some(Self::Euler),
            "rk4" => Some(Self::Rk4),
            _ => None,
        }
    }
}

/// Initial PDE profile, applied identically to every channel unless given
/// as raw samples.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialProfile {
    Constant(f64),
    /// `sin(2π k x)`.
    Sine(u32),
    /// Cell-major samples for a specific grid.
    Samples(Vec<f64>),
}

impl InitialProfile {
    pub fn sample(&self, grid: &Grid, channels: usize) -> Result<PdeState, SimError> {
        match self {
            Self::Constant(v) => Ok(PdeState::from_fn(grid, channels, |_, _| *v)),
            Self::Sine(k) => Ok(PdeState::from_fn(grid, channels, |x, _| {
                (2.0 * std::f64::consts::PI * f64::from(*k) * x).sin()
            })),
            Self::Samples(data) => Ok(PdeState::new(grid.cells(), channels, data.clone())?),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: PlantSpec,
    pub grid: Grid,
    pub controller: Controller,
    pub z0: Vec<f64>,
    pub w0: InitialProfile,
    pub t_final: f64,
    pub cfl_safety: f64,
    pub record_stride: usize,
    pub integrator: Integrator,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final = {} must be finite and ≥ 0", self.t_final));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad(format!("cfl_safety = {} must lie in (0, 1]", self.cfl_safety));
        }
        if self.record_stride == 0 {
            return bad("record_stride must be ≥ 1".into());
        }
        if self.z0.len() != self.plant.n() || self.z0.iter().any(|v| !v.is_finite()) {
            return bad(format!("z0 must hold {} finite values", self.plant.n()));
        }
        if self.controller.cells() != self.grid.cells()
            || self.controller.channels() != self.plant.channels()
            || self.controller.n() != self.plant.n()
            || self.controller.m() != self.plant.m()
        {
            return bad("controller does not match plant and grid".into());
        }
        self.w0.sample(&self.grid, self.plant.channels())?;
        Ok(())
    }

    pub fn initial_state(&self) -> Result<CascadeState, SimError> {
        Ok(CascadeState {
            z: self.z0.clone(),
            w: self.w0.sample(&self.grid, self.plant.channels())?,
            t: 0.0,
        })
    }

    /// Rebuilds the scenario on a grid of `cells` cells, re-synthesizing
    /// the controller with the same options.
    pub fn regrid(&self, cells: usize) -> Result<Self, SimError> {
        if matches!(self.w0, InitialProfile::Samples(_)) {
            return Err(SimError::Invalid("sampled initial profiles cannot be regridded".into()));
        }
        let grid = Grid::new(cells)?;
        let ctl = &self.controller;
        let options = SynthesisOptions {
            method: ctl.gain().method,
            weight: Some(ctl.weight().mode),
            shaping: ctl.shaping().cloned(),
        };
        let mut controller = synthesize_with(&self.plant, &grid, ctl.sigma().clone(), &options)?;
        if ctl.is_reversed() {
            controller = controller.with_reversed_feedback();
        }
        Ok(Self {
            grid,
            controller,
            ..self.clone()
        })
    }
}

/// `safety · h / max |λ|`.
pub fn cfl_dt(grid: &Grid, plant: &PlantSpec, safety: f64) -> f64 {
    safety * grid.h() / plant.max_speed()
}

/// One recorded sample of the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub z: Vec<f64>,
    /// Raw feedback before shaping.
    pub u: Vec<f64>,
    /// Input applied to the plant, σ(ψ(u)).
    pub sigma_u: Vec<f64>,
    pub norm_z: f64,
    pub norm_w: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub records: Vec<TraceRecord>,
    /// Full states at the record times; empty when loaded from CSV.
    pub states: Vec<CascadeState>,
    /// Nominal time step.
    pub dt: f64,
}

impl SimulationTrace {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("traces hold at least one record")
    }

    /// `|z| + ‖w‖_H` of record `k`.
    pub fn x_norm(&self, k: usize) -> f64 {
        self.records[k].norm_z + self.records[k].norm_w
    }

    /// CSV with columns `t, z_*, u_*, sigma_u_*, norm_z, norm_w_H, V`.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.records.first() else {
            return String::new();
        };
        let (n, m) = (first.z.len(), first.u.len());
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",z_{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",u_{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",sigma_u_{i}");
        }
        out.push_str(",norm_z,norm_w_H,V\n");
        for r in &self.records {
            let _ = write!(out, "{:.16e}", r.t);
            for v in r.z.iter().chain(&r.u).chain(&r.sigma_u) {
                let _ = write!(out, ",{v:.16e}");
            }
            let _ = writeln!(out, ",{:.16e},{:.16e},{:.16e}", r.norm_z, r.norm_w, r.v);
        }
        out
    }

    /// Parses [`SimulationTrace::to_csv`] output; `n` and `m` are read
    /// from the header.
    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| SimError::Invalid("empty trace CSV".into()))?
            .split(',')
            .collect();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (n, m) = (count("z_"), count("u_"));
        let width = 1 + n + 2 * m + 3;
        if header.len() != width || header[0] != "t" || header[width - 1] != "V" {
            return Err(SimError::Invalid(format!("unexpected trace header `{}`", header.join(","))));
        }
        let mut records = Vec::new();
        for (idx, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| SimError::Invalid(format!("trace line {}: bad number", idx + 2)))?;
            if vals.len() != width {
                return Err(SimError::Invalid(format!("trace line {}: {} columns", idx + 2, vals.len())));
            }
            records.push(TraceRecord {
                t: vals[0],
                z: vals[1..1 + n].to_vec(),
                u: vals[1 + n..1 + n + m].to_vec(),
                sigma_u: vals[1 + n + m..1 + n + 2 * m].to_vec(),
                norm_z: vals[width - 3],
                norm_w: vals[width - 2],
                v: vals[width - 1],
            });
        }
        if records.is_empty() {
            return Err(SimError::Invalid("trace CSV has no rows".into()));
        }
        let dt = records.windows(2).map(|w| w[1].t - w[0].t).fold(f64::INFINITY, f64::min);
        Ok(Self {
            records,
            states: Vec::new(),
            dt: if dt.is_finite() { dt } else { 0.0 },
        })
    }

    /// Gnuplot-style blocks of `x w_1 … w_N` for the recorded states closest
    /// to each requested time.
    pub fn profile_dump(&self, times: &[f64]) -> String {
        let mut out = String::new();
        if self.states.is_empty() {
            return out;
        }
        for &t in times {
            let k = (0..self.states.len())
                .min_by(|&a, &b| (self.states[a].t - t).abs().total_cmp(&(self.states[b].t - t).abs()))
                .expect("nonempty");
            let s = &self.states[k];
            let grid = Grid::new(s.w.cells()).expect("states live on valid grids");
            let _ = writeln!(out, "# t = {:.16e}", s.t);
            for j in 0..s.w.cells() {
                let _ = write!(out, "{:.16e}", grid.node(j));
                for i in 0..s.w.channels() {
                    let _ = write!(out, " {:.16e}", s.w.get(j, i));
                }
                out.push('\n');
            }
            out.push_str("\n\n");
        }
        out
    }
}

/// Closed-loop right-hand side with cached operators.
struct ClosedLoop<'a> {
    scenario: &'a Scenario,
    transport: TransportOperator,
}

impl<'a> ClosedLoop<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            transport: TransportOperator::new(&scenario.plant, &scenario.grid),
        }
    }

    /// Returns `(ż, ẇ)`.
    fn rhs(&self, z: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        let ctl = &self.scenario.controller;
        let u = ctl.feedback_slices(z, w);
        let sig = ctl.applied_input(&u)?;
        let plant = &self.scenario.plant;
        let mut dz = plant.a().matvec(z).expect("plant shapes");
        for (d, b) in dz.iter_mut().zip(plant.b().matvec(&sig).expect("plant shapes")) {
            *d += b;
        }
        let mut dw = vec![0.0; w.len()];
        self.transport.apply(w, z, &mut dw);
        Ok((dz, dw))
    }

    fn advance(&self, state: &CascadeState, dt: f64) -> Result<CascadeState, SimError> {
        let z = &state.z;
        let w = state.w.as_slice();
        let axpy = |x: &[f64], s: f64, d: &[f64]| -> Vec<f64> { x.iter().zip(d).map(|(a, b)| a + s * b).collect() };
        let (z_new, w_new) = match self.scenario.integrator {
            Integrator::Euler => {
                let (dz, dw) = self.rhs(z, w)?;
                (axpy(z, dt, &dz), axpy(w, dt, &dw))
            }
            Integrator::Rk4 => {
                let (k1z, k1w) = self.rhs(z, w)?;
                let (k2z, k2w) = self.rhs(&axpy(z, dt / 2.0, &k1z), &axpy(w, dt / 2.0, &k1w))?;
                let (k3z, k3w) = self.rhs(&axpy(z, dt / 2.0, &k2z), &axpy(w, dt / 2.0, &k2w))?;
                let (k4z, k4w) = self.rhs(&axpy(z, dt, &k3z), &axpy(w, dt, &k3w))?;
                let comb = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
                    (0..x.len())
                        .map(|i| x[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
                        .collect()
                };
                (comb(z, &k1z, &k2z, &k3z, &k4z), comb(w, &k1w, &k2w, &k3w, &k4w))
            }
        };
        let t = state.t + dt;
        let next = CascadeState {
            z: z_new,
            w: PdeState::new(state.w.cells(), state.w.channels(), w_new).map_err(|_| SimError::NonFinite {
                t,
                step: 0,
                last_finite: Box::new(state.clone()),
            })?,
            t,
        };
        if !next.is_finite() {
            return Err(SimError::NonFinite {
                t,
                step: 0,
                last_finite: Box::new(state.clone()),
            });
        }
        Ok(next)
    }

    fn record(&self, state: &CascadeState) -> Result<TraceRecord, SimError> {
        let ctl = &self.scenario.controller;
        let u = ctl.feedback_raw(state)?;
        let sigma_u = ctl.applied_input(&u)?;
        Ok(TraceRecord {
            t: state.t,
            z: state.z.clone(),
            norm_z: state.z.iter().map(|v| v * v).sum::<f64>().sqrt(),
            norm_w: ctl.weight().norm(&state.w)?,
            v: ctl.lyapunov_v(state)?,
            u,
            sigma_u,
        })
    }
}

/// Advances `state` by `dt` along the closed loop.
pub fn step(state: &CascadeState, scenario: &Scenario, dt: f64) -> Result<CascadeState, SimError> {
    let limit = cfl_dt(&scenario.grid, &scenario.plant, 1.0);
    if !(dt >= 0.0 && dt <= limit * (1.0 + 1e-12)) {
        return Err(SimError::Invalid(format!("dt = {dt} violates the CFL limit {limit}")));
    }
    ClosedLoop::new(scenario).advance(state, dt)
}

/// Runs from the initial state to `t_final`, recording every
/// `record_stride` steps and always at the end.
pub fn run(scenario: &Scenario) -> Result<SimulationTrace, SimError> {
    scenario.validate()?;
    let sys = ClosedLoop::new(scenario);
    let dt = cfl_dt(&scenario.grid, &scenario.plant, scenario.cfl_safety);
    let steps = (scenario.t_final / dt - 1e-9).ceil().max(0.0) as usize;
    let mut state = scenario.initial_state()?;
    let mut records = vec![sys.record(&state)?];
    let mut states = vec![state.clone()];
    for k in 1..=steps {
        let target = if k == steps { scenario.t_final } else { k as f64 * dt };
        state = sys.advance(&state, target - state.t).map_err(|e| match e {
            SimError::NonFinite { t, last_finite, .. } => SimError::NonFinite {
                t,
                step: k,
                last_finite,
            },
            other => other,
        })?;
        state.t = target;
        if k % scenario.record_stride == 0 || k == steps {
            records.push(sys.record(&state)?);
            states.push(state.clone());
        }
    }
    Ok(SimulationTrace { records, states, dt })
}
