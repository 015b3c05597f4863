//! Numerical audits of the stability and observability claims: Lyapunov
//! decay along traces, contraction between trajectories, the non-resonance
//! rank test, a finite eigenmode observability probe, grid convergence and
//! norm equivalence.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::forwarding::{Controller, ForwardingError};
use crate::numlin::{eig, numerical_rank_complex, Complex, DenseMatrix, LinalgError, Lu, DEFAULT_RANK_TOL};
use crate::plant::{CascadeState, Grid, PdeState, PlantError, PlantSpec, TransportOperator};
use crate::simulate::{run, Scenario, SimError, SimulationTrace};
use crate::sylvester::{closed_form_scalar, solve_bvp, SylvesterError};

/// Per-step slack on V, relative to max(1, V₀).
pub const MONOTONE_TOL: f64 = 1e-9;
/// Largest acceptable κ in the slope audit.
pub const KAPPA_MAX: f64 = 50.0;
/// Pairings at or below this magnitude flag a possibly unobservable mode.
pub const UNOBSERVABLE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Forwarding(#[from] ForwardingError),
    #[error(transparent)]
    Sylvester(#[from] SylvesterError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub name: String,
    pub pass: bool,
    /// Largest normalized violation; 0 when nothing was violated.
    pub worst_violation: f64,
    pub context: String,
    /// Named auxiliary measurements (κ, counts, ...).
    pub figures: Vec<(String, f64)>,
}

impl AuditReport {
    pub fn figure(&self, name: &str) -> Option<f64> {
        self.figures.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} worst_violation={:.6e}",
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.worst_violation
        )?;
        for (n, v) in &self.figures {
            write!(f, " {n}={v:.6e}")?;
        }
        write!(f, " | {}", self.context)
    }
}

/// Checks along a trace that (a) V never grows by more than
/// `1e-9·max(1, V₀)` between records and (b) the difference quotient of V
/// stays below `−|z|² − 2uᵀσ + κ(h + Δt)(1 + V₀)` with κ ≤ 50.
pub fn decay_audit(trace: &SimulationTrace, ctl: &Controller) -> Result<AuditReport, VerifyError> {
    if trace.records.len() < 2 {
        return Err(VerifyError::Input("decay audit needs at least two records".into()));
    }
    let first = &trace.records[0];
    if first.z.len() != ctl.n() || first.u.len() != ctl.m() {
        return Err(VerifyError::Input(format!(
            "trace has n = {}, m = {}; controller has n = {}, m = {}",
            first.z.len(),
            first.u.len(),
            ctl.n(),
            ctl.m()
        )));
    }
    let v0 = first.v;
    let slack = MONOTONE_TOL * v0.max(1.0);
    let h = ctl.h();
    let mut worst_rise = 0.0_f64;
    let mut worst_rise_t = first.t;
    let mut kappa = 0.0_f64;
    let mut kappa_t = first.t;
    for w in trace.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dt = b.t - a.t;
        if !(dt > 0.0) {
            return Err(VerifyError::Input(format!("record times not increasing at t = {}", a.t)));
        }
        let rise = b.v - a.v;
        if rise > worst_rise {
            worst_rise = rise;
            worst_rise_t = a.t;
        }
        let zz: f64 = a.z.iter().map(|v| v * v).sum();
        let us: f64 = a.u.iter().zip(&a.sigma_u).map(|(u, s)| u * s).sum();
        let excess = rise / dt + zz + 2.0 * us;
        let k = excess.max(0.0) / ((h + dt) * (1.0 + v0));
        if k > kappa {
            kappa = k;
            kappa_t = a.t;
        }
    }
    let monotone = worst_rise <= slack;
    let pass = monotone && kappa <= KAPPA_MAX;
    Ok(AuditReport {
        name: "decay".into(),
        pass,
        worst_violation: worst_rise.max(0.0) / v0.max(1.0),
        context: format!(
            "largest V increase {worst_rise:.3e} at t = {worst_rise_t:.4} (allowed {slack:.1e}); \
             κ = {kappa:.3e} at t = {kappa_t:.4} (allowed {KAPPA_MAX})"
        ),
        figures: vec![("kappa".into(), kappa), ("records".into(), trace.records.len() as f64)],
    })
}

/// Checks that the V-norm of ζ_A − ζ_B never grows along matched records.
pub fn contraction_audit(
    a: &SimulationTrace,
    b: &SimulationTrace,
    ctl: &Controller,
) -> Result<AuditReport, VerifyError> {
    if a.states.is_empty() || a.states.len() != b.states.len() {
        return Err(VerifyError::Input(format!(
            "contraction audit needs matched full states ({} vs {})",
            a.states.len(),
            b.states.len()
        )));
    }
    let mut dists = Vec::with_capacity(a.states.len());
    for (sa, sb) in a.states.iter().zip(&b.states) {
        if (sa.t - sb.t).abs() > 1e-12 * sa.t.abs().max(1.0) {
            return Err(VerifyError::Input(format!("time grids differ: {} vs {}", sa.t, sb.t)));
        }
        dists.push(ctl.v_norm(&sa.difference(sb)?)?);
    }
    let scale = dists[0].max(1.0);
    let mut worst = 0.0_f64;
    let mut worst_t = a.states[0].t;
    for (k, w) in dists.windows(2).enumerate() {
        let rise = w[1] - w[0];
        if rise > worst {
            worst = rise;
            worst_t = a.states[k].t;
        }
    }
    Ok(AuditReport {
        name: "contraction".into(),
        pass: worst <= MONOTONE_TOL * scale,
        worst_violation: worst / scale,
        context: format!(
            "initial distance {:.6e}, final {:.6e}, largest rise {worst:.3e} at t = {worst_t:.4}",
            dists[0],
            dists[dists.len() - 1]
        ),
        figures: vec![("initial_distance".into(), dists[0])],
    })
}

/// The zero trajectory on the time grid of `trace`, for single-trajectory
/// contraction checks.
pub fn zero_trajectory_like(trace: &SimulationTrace) -> SimulationTrace {
    SimulationTrace {
        records: Vec::new(),
        states: trace.states.iter().map(|s| s.scale(0.0)).collect(),
        dt: trace.dt,
    }
}

/// Full row rank of `[[A − μI, B], [C, 0]]`, tested on the real embedding.
pub fn nonresonance_rank(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix, mu: Complex) -> Result<bool, VerifyError> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n || c.cols() != n {
        return Err(VerifyError::Input(format!(
            "A {:?}, B {:?}, C {:?} are not conformal",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let (m, p) = (b.cols(), c.rows());
    if m < p {
        // n + m columns cannot reach row rank n + p
        return Ok(false);
    }
    let mut re = DenseMatrix::zeros(n + p, n + m);
    let mut im = DenseMatrix::zeros(n + p, n + m);
    re.set_block(0, 0, &a.sub(&DenseMatrix::identity(n).scale(mu.re))?);
    re.set_block(0, n, b);
    re.set_block(n, 0, c);
    im.set_block(0, 0, &DenseMatrix::identity(n).scale(-mu.im));
    Ok(numerical_rank_complex(&re, &im, DEFAULT_RANK_TOL)? == n + p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityProbe {
    pub mode_index: i64,
    pub eigenvalue: Complex,
    /// `|Bᵀ M* φ|` for the unit-norm eigenfunction φ.
    pub pairing_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub probes: Vec<ObservabilityProbe>,
    /// False when modes come from the discretized operator.
    pub exact_modes: bool,
    pub note: String,
}

impl ProbeReport {
    pub fn flagged(&self) -> Vec<i64> {
        self.probes
            .iter()
            .filter(|p| p.pairing_magnitude <= UNOBSERVABLE_TOL)
            .map(|p| p.mode_index)
            .collect()
    }
}

/// Pairs `Bᵀ M*` with eigenmodes of the transport generator, modes
/// −K..=K. Single-channel loops have explicit modes
/// `φ_k(x) = e^{(2πik − ln κ) x}`; other plants fall back to eigenvectors of
/// S_h. A finite probe can only falsify observability, never prove it.
pub fn observability_probe(plant: &PlantSpec, ctl: &Controller, modes: usize) -> Result<ProbeReport, VerifyError> {
    let grid = Grid::new(ctl.cells())?;
    let kappa = plant.boundary()[(0, 0)];
    if plant.channels() == 1 && kappa != 0.0 {
        let lambda = plant.speeds()[0];
        // ln κ for real κ, principal branch
        let log_k = Complex::new(kappa.abs().ln(), if kappa < 0.0 { std::f64::consts::PI } else { 0.0 });
        let mut probes = Vec::new();
        for k in -(modes as i64)..=(modes as i64) {
            // φ(x) = exp(s x), s = −ln κ + 2πik; eigenvalue μ = −λ s
            let s = Complex::new(-log_k.re, -log_k.im + 2.0 * std::f64::consts::PI * k as f64);
            let (re, im): (Vec<f64>, Vec<f64>) = grid
                .nodes()
                .iter()
                .map(|x| {
                    let mag = (s.re * x).exp();
                    (mag * (s.im * x).cos(), mag * (s.im * x).sin())
                })
                .unzip();
            probes.push(ObservabilityProbe {
                mode_index: k,
                eigenvalue: Complex::new(-lambda * s.re, -lambda * s.im),
                pairing_magnitude: pairing(ctl, &grid, &re, &im)?,
            });
        }
        return Ok(ProbeReport {
            probes,
            exact_modes: true,
            note: format!("explicit modes of the single-channel loop, |k| ≤ {modes}; finite probe, not a proof"),
        });
    }

    let op = TransportOperator::new(plant, &grid);
    let s = op.to_dense();
    let mut spectrum = eig(&s)?.eigenvalues;
    spectrum.sort_by(|a, b| a.im.abs().total_cmp(&b.im.abs()).then(b.re.total_cmp(&a.re)).then(a.im.total_cmp(&b.im)));
    let mut probes = Vec::new();
    for (idx, mu) in spectrum.into_iter().take(2 * modes + 1).enumerate() {
        // conjugate modes have conjugate pairings, so equal magnitudes
        let tol = 1e-9 * (1.0 + mu.abs());
        let twin = probes
            .iter()
            .find(|p: &&ObservabilityProbe| mu.im != 0.0 && p.eigenvalue.sub(mu.conj()).abs() <= tol)
            .map(|p| p.pairing_magnitude);
        let pairing_magnitude = match twin {
            Some(v) => v,
            None => {
                let (re, im) = inverse_iteration(&s, mu)?;
                pairing(ctl, &grid, &re, &im)?
            }
        };
        probes.push(ObservabilityProbe { mode_index: idx as i64, eigenvalue: mu, pairing_magnitude });
    }
    Ok(ProbeReport {
        probes,
        exact_modes: false,
        note: format!(
            "caveat: modes are eigenvectors of the {}-cell upwind matrix, ordered by |Im μ|; \
             finite probe, not a proof",
            grid.cells()
        ),
    })
}

/// `|Bᵀ M* φ|` with φ = re + i·im normalized in H.
fn pairing(ctl: &Controller, grid: &Grid, re: &[f64], im: &[f64]) -> Result<f64, VerifyError> {
    let nch = ctl.channels();
    let re = PdeState::new(grid.cells(), nch, re.to_vec())?;
    let im = PdeState::new(grid.cells(), nch, im.to_vec())?;
    let wt = ctl.weight();
    let norm = (wt.inner(&re, &re)? + wt.inner(&im, &im)?).sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let pr = ctl.b().tr_matvec(&ctl.adjoint_apply(&re)?)?;
    let pi = ctl.b().tr_matvec(&ctl.adjoint_apply(&im)?)?;
    Ok(pr.iter().zip(&pi).map(|(a, b)| a * a + b * b).sum::<f64>().sqrt() / norm)
}

/// Eigenvector of `s` for eigenvalue `mu`, by two steps of shifted inverse
/// iteration on the real embedding.
fn inverse_iteration(s: &DenseMatrix, mu: Complex) -> Result<(Vec<f64>, Vec<f64>), VerifyError> {
    let d = s.rows();
    let shift = Complex::new(mu.re + 1e-9 * (1.0 + mu.abs()), mu.im);
    let mut emb = DenseMatrix::zeros(2 * d, 2 * d);
    let shifted = s.sub(&DenseMatrix::identity(d).scale(shift.re))?;
    emb.set_block(0, 0, &shifted);
    emb.set_block(d, d, &shifted);
    emb.set_block(0, d, &DenseMatrix::identity(d).scale(shift.im));
    emb.set_block(d, 0, &DenseMatrix::identity(d).scale(-shift.im));
    let lu = Lu::factor(&emb)?;
    let mut v: Vec<f64> = (0..2 * d).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    for _ in 0..3 {
        v = lu.solve(&v)?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok((v[..d].to_vec(), v[d..].to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderEstimate {
    /// Errors vanish to rounding on every grid.
    Exact,
    Observed(f64),
}

impl fmt::Display for OrderEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exact => f.write_str("exact"),
            Self::Observed(p) => write!(f, "{p:.4}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub grids: Vec<usize>,
    /// Max node error of M_h against the closed form (scalar loop) or the
    /// BVP solution on the same grid.
    pub gain_errors: Vec<f64>,
    pub gain_order: OrderEstimate,
    /// `|z| + ‖w‖_H` at t_final on each grid.
    pub final_norms: Vec<f64>,
    pub final_norm_order: OrderEstimate,
    pub reference: &'static str,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cells,h,gain_error,gain_order,final_norm,final_norm_order\n");
        for (i, g) in self.grids.iter().enumerate() {
            let gain_order = if i == 0 {
                String::new()
            } else {
                pair_order(self.gain_errors[i - 1], self.gain_errors[i], self.grids[i] as f64 / self.grids[i - 1] as f64)
                    .map_or("exact".into(), |p| format!("{p:.16e}"))
            };
            let norm_order = if i < 2 {
                String::new()
            } else {
                let r = self.grids[i] as f64 / self.grids[i - 1] as f64;
                pair_order(
                    (self.final_norms[i - 2] - self.final_norms[i - 1]).abs(),
                    (self.final_norms[i - 1] - self.final_norms[i]).abs(),
                    r,
                )
                .map_or("exact".into(), |p| format!("{p:.16e}"))
            };
            let _ = writeln!(
                out,
                "{g},{:.16e},{:.16e},{gain_order},{:.16e},{norm_order}",
                1.0 / *g as f64,
                self.gain_errors[i],
                self.final_norms[i]
            );
        }
        out
    }
}

const EXACT_TOL: f64 = 1e-13;

fn pair_order(coarse: f64, fine: f64, ratio: f64) -> Option<f64> {
    if coarse <= EXACT_TOL && fine <= EXACT_TOL {
        None
    } else {
        Some((coarse / fine).ln() / ratio.ln())
    }
}

fn mean_order(errors: &[f64], ratio: f64) -> OrderEstimate {
    let orders: Vec<f64> = errors.windows(2).filter_map(|w| pair_order(w[0], w[1], ratio)).collect();
    if orders.is_empty() {
        OrderEstimate::Exact
    } else {
        OrderEstimate::Observed(orders.iter().sum::<f64>() / orders.len() as f64)
    }
}

/// Observed orders of M_h and of the final-state norm over nested grids
/// with a constant integer refinement ratio.
pub fn convergence_study(scenario: &Scenario, grids: &[usize]) -> Result<ConvergenceReport, VerifyError> {
    if grids.len() < 3 {
        return Err(VerifyError::Input(format!("need at least 3 grids, got {}", grids.len())));
    }
    let ratio = grids[1] / grids[0].max(1);
    let nested = ratio >= 2 && grids.windows(2).all(|w| w[1] == w[0] * ratio);
    if !nested {
        return Err(VerifyError::Input(format!(
            "grids {grids:?} are not nested with a constant integer refinement ratio"
        )));
    }
    let scalar = scenario.plant.scalar_params().filter(|sp| sp.a > 0.0 && sp.lambda > 0.0);
    let mut gain_errors = Vec::new();
    let mut final_norms = Vec::new();
    for &g in grids {
        let sc = scenario.regrid(g)?;
        let gain = sc.controller.gain();
        let err = match scalar {
            Some(sp) => {
                let mut worst = 0.0_f64;
                for (j, x) in sc.grid.nodes().into_iter().enumerate() {
                    let exact = closed_form_scalar(sp.a, sp.lambda, sp.c, x)?;
                    worst = worst.max((gain.values()[(j, 0)] - exact).abs());
                }
                worst
            }
            None => gain.max_deviation(&solve_bvp(&sc.plant, &sc.grid)?)?,
        };
        gain_errors.push(err);
        let trace = run(&sc)?;
        final_norms.push(trace.x_norm(trace.records.len() - 1));
    }
    let r = ratio as f64;
    let diffs: Vec<f64> = final_norms.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    Ok(ConvergenceReport {
        grids: grids.to_vec(),
        gain_order: mean_order(&gain_errors, r),
        final_norm_order: mean_order(&diffs, r),
        gain_errors,
        final_norms,
        reference: if scalar.is_some() { "closed form" } else { "bvp" },
    })
}

/// Seeded random states with uniform z entries and cellwise-uniform PDE
/// samples, each scaled by a random amplitude in [1e-3, 10].
pub fn seeded_states(plant: &PlantSpec, grid: &Grid, count: usize, seed: u64) -> Vec<CascadeState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let za: f64 = 10f64.powf(rng.gen_range(-3.0..1.0));
            let wa: f64 = 10f64.powf(rng.gen_range(-3.0..1.0));
            let z = (0..plant.n()).map(|_| za * rng.gen_range(-1.0..1.0)).collect();
            let data = (0..grid.cells() * plant.channels())
                .map(|_| wa * rng.gen_range(-1.0..1.0))
                .collect();
            CascadeState {
                z,
                w: PdeState::new(grid.cells(), plant.channels(), data).expect("finite samples"),
                t: 0.0,
            }
        })
        .collect()
}

/// `c_lo (|z|² + ‖w‖²) ≤ V ≤ c_hi (|z|² + ‖w‖²)` on seeded random states,
/// half of them placed near the graph w = M z where the lower bound is
/// tightest.
pub fn norm_equivalence_audit(
    plant: &PlantSpec,
    ctl: &Controller,
    samples: usize,
    seed: u64,
) -> Result<AuditReport, VerifyError> {
    let grid = Grid::new(ctl.cells())?;
    let mut worst = 0.0_f64;
    let mut lo_ratio = f64::INFINITY;
    let mut hi_ratio = 0.0_f64;
    for (i, mut s) in seeded_states(plant, &grid, samples, seed).into_iter().enumerate() {
        if i % 2 == 1 {
            let mz = ctl.apply_gain(&s.z)?;
            s.w = mz.add_scaled(1e-3, &s.w)?;
        }
        let x = ctl.x_norm_sq(&s)?;
        if x == 0.0 {
            continue;
        }
        let v = ctl.lyapunov_v(&s)?;
        let ratio = v / x;
        lo_ratio = lo_ratio.min(ratio);
        hi_ratio = hi_ratio.max(ratio);
        worst = worst.max(ctl.c_lo() - ratio).max(ratio - ctl.c_hi());
    }
    Ok(AuditReport {
        name: "norm_equivalence".into(),
        pass: worst <= 1e-12,
        worst_violation: worst.max(0.0),
        context: format!(
            "{samples} states, V/|ζ|² in [{lo_ratio:.6e}, {hi_ratio:.6e}] vs bounds [{:.6e}, {:.6e}]",
            ctl.c_lo(),
            ctl.c_hi()
        ),
        figures: vec![("c_lo".into(), ctl.c_lo()), ("c_hi".into(), ctl.c_hi())],
    })
}
