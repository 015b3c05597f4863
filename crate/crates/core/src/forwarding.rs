//! The forwarding controller `u = −Bᵀ[P z − M*(w − M z)]` and its
//! Lyapunov functional `V = zᵀP z + ‖w − M z‖²_H`.
//!
//! M* is the exact adjoint of `z ↦ M_h z` for the discrete inner product in
//! use, so `⟨M z, w⟩_H = zᵀ M* w` holds to rounding.

use std::fmt::Write as _;

use thiserror::Error;

use crate::nonlinearity::{compose_shaping, Nonlinearity, NonlinearityError};
use crate::numlin::{solve_lyapunov, symmetric_eigen, DenseMatrix, LinalgError};
use crate::plant::{CascadeState, Grid, InnerProductWeight, PdeState, PlantError, PlantSpec, WeightMode};
use crate::sylvester::{solve, SylvesterError, SylvesterMethod, SylvesterSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardingError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("controller file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Sylvester(#[from] SylvesterError),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub method: SylvesterMethod,
    /// Defaults to [`WeightMode::default_for`].
    pub weight: Option<WeightMode>,
    /// ψ applied to the feedback before σ.
    pub shaping: Option<Nonlinearity>,
}

impl SynthesisOptions {
    pub fn new(method: SylvesterMethod) -> Self {
        Self {
            method,
            weight: None,
            shaping: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Controller {
    p: DenseMatrix,
    b: DenseMatrix,
    gain: SylvesterSolution,
    weight: InnerProductWeight,
    sigma: Nonlinearity,
    shaping: Option<Nonlinearity>,
    applied: Nonlinearity,
    gram: DenseMatrix,
    mnorm2: f64,
    p_min: f64,
    p_max: f64,
    c_lo: f64,
    c_hi: f64,
    sign: f64,
}

pub fn synthesize(
    plant: &PlantSpec,
    grid: &Grid,
    sigma: Nonlinearity,
    method: SylvesterMethod,
) -> Result<Controller, ForwardingError> {
    synthesize_with(plant, grid, sigma, &SynthesisOptions::new(method))
}

pub fn synthesize_with(
    plant: &PlantSpec,
    grid: &Grid,
    sigma: Nonlinearity,
    options: &SynthesisOptions,
) -> Result<Controller, ForwardingError> {
    let p = solve_lyapunov(plant.a())?;
    let gain = solve(plant, grid, options.method)?;
    let mode = options.weight.unwrap_or_else(|| WeightMode::default_for(plant));
    let weight = InnerProductWeight::for_plant(mode, plant);
    Controller::from_parts(p, plant.b().clone(), gain, weight, sigma, options.shaping.clone())
}

impl Controller {
    /// Assembles a controller and computes the Gram matrix and the
    /// norm-equivalence constants.
    pub fn from_parts(
        p: DenseMatrix,
        b: DenseMatrix,
        gain: SylvesterSolution,
        weight: InnerProductWeight,
        sigma: Nonlinearity,
        shaping: Option<Nonlinearity>,
    ) -> Result<Self, ForwardingError> {
        let n = gain.n();
        if p.shape() != (n, n) || b.rows() != n {
            return Err(ForwardingError::Shape(format!(
                "P {:?}, B {:?} for n = {n}",
                p.shape(),
                b.shape()
            )));
        }
        if weight.weights.len() != gain.channels() {
            return Err(ForwardingError::Shape(format!(
                "{} weights for {} channels",
                weight.weights.len(),
                gain.channels()
            )));
        }
        let m = b.cols();
        if sigma.dim() != m {
            return Err(ForwardingError::Shape(format!("σ has dimension {}, input has {m}", sigma.dim())));
        }
        let applied = match &shaping {
            Some(psi) => compose_shaping(psi, &sigma)?,
            None => sigma.clone(),
        };
        let (pvals, _) = symmetric_eigen(&p)?;
        let (p_min, p_max) = (pvals[0], pvals[n - 1]);

        let values = gain.values();
        let nch = gain.channels();
        let h = 1.0 / gain.cells() as f64;
        let mut gram = DenseMatrix::zeros(n, n);
        for r in 0..values.rows() {
            let wt = weight.weights[r % nch];
            for j in 0..n {
                for l in 0..n {
                    gram[(j, l)] += h * wt * values[(r, j)] * values[(r, l)];
                }
            }
        }
        let mnorm2 = symmetric_eigen(&gram)?.0[n - 1].max(0.0);
        let c_hi = f64::max(2.0, p_max + 2.0 * mnorm2);
        let c_lo = f64::min(p_min / 2.0, p_min / (p_min + 2.0 * mnorm2));
        Ok(Self {
            p,
            b,
            gain,
            weight,
            sigma,
            shaping,
            applied,
            gram,
            mnorm2,
            p_min,
            p_max,
            c_lo,
            c_hi,
            sign: 1.0,
        })
    }

    /// Same controller with the feedback sign reversed. The closed loop
    /// loses its decay guarantee; audits use this as a negative control.
    pub fn with_reversed_feedback(mut self) -> Self {
        self.sign = -self.sign;
        self
    }

    pub fn is_reversed(&self) -> bool {
        self.sign < 0.0
    }

    pub fn p(&self) -> &DenseMatrix {
        &self.p
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn gain(&self) -> &SylvesterSolution {
        &self.gain
    }

    pub fn weight(&self) -> &InnerProductWeight {
        &self.weight
    }

    pub fn sigma(&self) -> &Nonlinearity {
        &self.sigma
    }

    pub fn shaping(&self) -> Option<&Nonlinearity> {
        self.shaping.as_ref()
    }

    /// The gram matrix M*M.
    pub fn gram(&self) -> &DenseMatrix {
        &self.gram
    }

    /// ‖M‖² as an operator from ℝⁿ into H.
    pub fn mnorm2(&self) -> f64 {
        self.mnorm2
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn c_lo(&self) -> f64 {
        self.c_lo
    }

    pub fn c_hi(&self) -> f64 {
        self.c_hi
    }

    pub fn n(&self) -> usize {
        self.p.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn cells(&self) -> usize {
        self.gain.cells()
    }

    pub fn channels(&self) -> usize {
        self.gain.channels()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    fn check_state(&self, state: &CascadeState) -> Result<(), ForwardingError> {
        self.check_w(&state.w)?;
        if state.z.len() != self.n() {
            return Err(ForwardingError::Shape(format!("z has length {}, expected {}", state.z.len(), self.n())));
        }
        Ok(())
    }

    fn check_w(&self, w: &PdeState) -> Result<(), ForwardingError> {
        if w.cells() != self.cells() || w.channels() != self.channels() {
            return Err(ForwardingError::Shape(format!(
                "state on {}x{}, controller on {}x{}",
                w.cells(),
                w.channels(),
                self.cells(),
                self.channels()
            )));
        }
        Ok(())
    }

    /// `M z` as a PDE profile.
    pub fn apply_gain(&self, z: &[f64]) -> Result<PdeState, ForwardingError> {
        Ok(self.gain.apply(z)?)
    }

    /// `M* w`, component j = Σ h (M e_j)ᵀ diag(weights) w.
    pub fn adjoint_apply(&self, w: &PdeState) -> Result<Vec<f64>, ForwardingError> {
        self.check_w(w)?;
        Ok(self.adjoint_raw(w.as_slice()))
    }

    fn adjoint_raw(&self, w: &[f64]) -> Vec<f64> {
        let values = self.gain.values();
        let nch = self.channels();
        let h = self.h();
        let mut out = vec![0.0; self.n()];
        for (r, wr) in w.iter().enumerate() {
            let scaled = h * self.weight.weights[r % nch] * wr;
            for (j, o) in out.iter_mut().enumerate() {
                *o += values[(r, j)] * scaled;
            }
        }
        out
    }

    /// Raw feedback `−Bᵀ[P z − M*(w − M z)]`, before any shaping.
    pub fn feedback_raw(&self, state: &CascadeState) -> Result<Vec<f64>, ForwardingError> {
        self.check_state(state)?;
        Ok(self.feedback_slices(&state.z, state.w.as_slice()))
    }

    pub(crate) fn feedback_slices(&self, z: &[f64], w: &[f64]) -> Vec<f64> {
        let mz = self.gain.values().matvec(z).expect("checked shape");
        let eta: Vec<f64> = w.iter().zip(&mz).map(|(a, b)| a - b).collect();
        let adj = self.adjoint_raw(&eta);
        let pz = self.p.matvec(z).expect("checked shape");
        let q: Vec<f64> = pz.iter().zip(&adj).map(|(a, b)| a - b).collect();
        self.b
            .tr_matvec(&q)
            .expect("checked shape")
            .into_iter()
            .map(|v| -self.sign * v)
            .collect()
    }

    /// Actuator command: the raw feedback passed through ψ when shaping
    /// is configured.
    pub fn feedback_u(&self, state: &CascadeState) -> Result<Vec<f64>, ForwardingError> {
        let u = self.feedback_raw(state)?;
        match &self.shaping {
            Some(psi) => Ok(psi.eval(&u)?),
            None => Ok(u),
        }
    }

    /// Input reaching the plant, `σ(ψ(u))`, for raw feedback `u`.
    pub fn applied_input(&self, u_raw: &[f64]) -> Result<Vec<f64>, ForwardingError> {
        Ok(self.applied.eval(u_raw)?)
    }

    /// The effective cone-bounded map `σ∘ψ` (or σ alone).
    pub fn applied_nonlinearity(&self) -> &Nonlinearity {
        &self.applied
    }

    pub fn lyapunov_v(&self, state: &CascadeState) -> Result<f64, ForwardingError> {
        self.check_state(state)?;
        Ok(self.v_slices(&state.z, state.w.as_slice()))
    }

    pub(crate) fn v_slices(&self, z: &[f64], w: &[f64]) -> f64 {
        let mz = self.gain.values().matvec(z).expect("checked shape");
        let eta: Vec<f64> = w.iter().zip(&mz).map(|(a, b)| a - b).collect();
        let pz = self.p.matvec(z).expect("checked shape");
        let zpz: f64 = z.iter().zip(&pz).map(|(a, b)| a * b).sum();
        zpz + self.weight.inner_raw(&eta, &eta)
    }

    /// `√V`.
    pub fn v_norm(&self, state: &CascadeState) -> Result<f64, ForwardingError> {
        Ok(self.lyapunov_v(state)?.max(0.0).sqrt())
    }

    /// `|z|² + ‖w‖²_H`.
    pub fn x_norm_sq(&self, state: &CascadeState) -> Result<f64, ForwardingError> {
        self.check_state(state)?;
        let zz: f64 = state.z.iter().map(|v| v * v).sum();
        Ok(zz + self.weight.inner(&state.w, &state.w)?)
    }

    /// `|z| + ‖w‖_H`.
    pub fn x_norm(&self, state: &CascadeState) -> Result<f64, ForwardingError> {
        self.check_state(state)?;
        let zn = state.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(zn + self.weight.norm(&state.w)?)
    }

    /// Plain-text export: header fields, then P, B and the node values
    /// of M. Floats carry 17 significant digits.
    pub fn to_text(&self) -> String {
        fn row(out: &mut String, vals: &[f64]) {
            let line: Vec<String> = vals.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        let mut out = String::from("forwarding-controller 1\n");
        let _ = writeln!(out, "n {}", self.n());
        let _ = writeln!(out, "m {}", self.m());
        let _ = writeln!(out, "channels {}", self.channels());
        let _ = writeln!(out, "cells {}", self.cells());
        let _ = writeln!(out, "method {}", self.gain.method.name());
        let _ = writeln!(
            out,
            "residual {}",
            self.gain.residual.map_or("none".to_string(), |r| format!("{r:.16e}"))
        );
        let _ = writeln!(out, "sigma {}", self.sigma.descriptor());
        let _ = writeln!(
            out,
            "shaping {}",
            self.shaping.as_ref().map_or("none".to_string(), Nonlinearity::descriptor)
        );
        let _ = writeln!(out, "sign {}", self.sign);
        let _ = write!(out, "weight {} ", self.weight.mode.name());
        row(&mut out, &self.weight.weights);
        let _ = writeln!(out, "mnorm2 {:.16e}", self.mnorm2);
        let _ = writeln!(out, "c_lo {:.16e}", self.c_lo);
        let _ = writeln!(out, "c_hi {:.16e}", self.c_hi);
        out.push_str("P\n");
        for i in 0..self.n() {
            row(&mut out, self.p.row(i));
        }
        out.push_str("B\n");
        for i in 0..self.n() {
            row(&mut out, self.b.row(i));
        }
        out.push_str("M\n");
        let values = self.gain.values();
        for r in 0..values.rows() {
            row(&mut out, values.row(r));
        }
        out
    }

    /// Inverse of [`Controller::to_text`]. Stored constants are checked
    /// against the values recomputed from P and M.
    pub fn from_text(text: &str) -> Result<Self, ForwardingError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let err = |line: usize, message: String| ForwardingError::Parse { line, message };
        let mut next = |expect: &str| -> Result<(usize, String), ForwardingError> {
            let (no, l) = lines.next().ok_or_else(|| err(0, format!("unexpected end, wanted `{expect}`")))?;
            let rest = l
                .strip_prefix(expect)
                .ok_or_else(|| err(no, format!("expected `{expect}`, found `{l}`")))?;
            Ok((no, rest.trim().to_string()))
        };
        let count = |(no, v): (usize, String)| -> Result<usize, ForwardingError> {
            v.parse().map_err(|_| err(no, format!("bad count `{v}`")))
        };
        let real = |(no, v): &(usize, String)| -> Result<f64, ForwardingError> {
            v.parse().map_err(|_| err(*no, format!("bad number `{v}`")))
        };
        let reals = |no: usize, v: &str, len: usize| -> Result<Vec<f64>, ForwardingError> {
            let vals: Vec<f64> = v
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| err(no, format!("bad numbers `{v}`")))?;
            if vals.len() != len {
                return Err(err(no, format!("expected {len} values, found {}", vals.len())));
            }
            Ok(vals)
        };

        let (no, version) = next("forwarding-controller")?;
        if version != "1" {
            return Err(err(no, format!("unsupported version `{version}`")));
        }
        let n = count(next("n")?)?;
        let m = count(next("m")?)?;
        let nch = count(next("channels")?)?;
        let cells = count(next("cells")?)?;
        let (no, method) = next("method")?;
        let method = SylvesterMethod::parse(&method).ok_or_else(|| err(no, format!("unknown method `{method}`")))?;
        let residual_line = next("residual")?;
        let residual = match residual_line.1.as_str() {
            "none" => None,
            _ => Some(real(&residual_line)?),
        };
        let (no, sig) = next("sigma")?;
        let sigma = Nonlinearity::parse_descriptor(&sig, m).map_err(|e| err(no, e.to_string()))?;
        let (no, shp) = next("shaping")?;
        let shaping = match shp.as_str() {
            "none" => None,
            d => Some(Nonlinearity::parse_descriptor(d, m).map_err(|e| err(no, e.to_string()))?),
        };
        let sign = real(&next("sign")?)?;
        let (no, wline) = next("weight")?;
        let (mode_name, wvals) = wline.split_once(' ').unwrap_or((wline.as_str(), ""));
        let mode = WeightMode::parse(mode_name).ok_or_else(|| err(no, format!("unknown weight `{mode_name}`")))?;
        let weight = InnerProductWeight {
            mode,
            weights: reals(no, wvals, nch)?,
        };
        let stored = [real(&next("mnorm2")?)?, real(&next("c_lo")?)?, real(&next("c_hi")?)?];
        let mut matrix = |name: &str, rows: usize, cols: usize| -> Result<DenseMatrix, ForwardingError> {
            next(name)?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (no, l) = next("")?;
                data.extend(reals(no, &l, cols)?);
            }
            Ok(DenseMatrix::new(rows, cols, data)?)
        };
        let p = matrix("P", n, n)?;
        let b = matrix("B", n, m)?;
        let values = matrix("M", cells * nch, n)?;
        let gain = SylvesterSolution::from_values(values, cells, nch, method, residual)?;
        let mut ctl = Self::from_parts(p, b, gain, weight, sigma, shaping)?;
        if sign < 0.0 {
            ctl = ctl.with_reversed_feedback();
        }
        let fresh = [ctl.mnorm2, ctl.c_lo, ctl.c_hi];
        for (name, (s, f)) in ["mnorm2", "c_lo", "c_hi"].iter().zip(stored.iter().zip(fresh)) {
            if (s - f).abs() > 1e-12 * f.abs().max(1.0) {
                return Err(err(0, format!("stored {name} = {s} disagrees with recomputed {f}")));
            }
        }
        Ok(ctl)
    }
}
