//! The forwarding gain M solving `S M − M A = −Γ C`.
//!
//! Three routes share one result type:
//! - `closed`: the scalar formula `M(x) = c / (1 − e^{a/λ}) e^{a x / λ}`;
//! - `bvp`: the two-point problem `−Λ M′ − M A = 0` with the boundary
//!   relation of the plant, propagated with a matrix exponential;
//! - `discrete`: the same equation for the upwind matrix S_h, solved by
//!   Kronecker linearization.

use std::fmt::Write as _;

use thiserror::Error;

use crate::numlin::{mat_exp, singular_values, solve_sylvester_kron, DenseMatrix, LinalgError, Lu};
use crate::plant::{Grid, PdeState, PlantError, PlantSpec, ScalarParams, TransportOperator};

/// Step of the central difference used for the BVP residual.
const BVP_RESIDUAL_STEP: f64 = 1e-5;
/// Boundary systems whose smallest singular value falls below this
/// fraction of their term magnitude are treated as resonant.
const RESONANCE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SylvesterError {
    #[error("{route}: boundary system is singular; spectra of A and S are not disjoint (Assumption 1 (iii))")]
    Resonant { route: &'static str },
    #[error("closed form is scalar-only: plant must be the single-channel loop w(0) = w(1) + c z")]
    ScalarOnly,
    #[error("closed form needs a > 0 and λ > 0, got a = {a}, λ = {lambda}")]
    ClosedFormDomain { a: f64, lambda: f64 },
    #[error("exp(a/λ) overflows for a/λ = {0}")]
    Overflow(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SylvesterMethod {
    Closed,
    Bvp,
    Discrete,
}

impl SylvesterMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Closed => "closed",
            Self::Bvp => "bvp",
            Self::Discrete => "discrete",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim() {
            "closed" => Some(Self::Closed),
            "bvp" => Some(Self::Bvp),
            "discrete" => Some(Self::Discrete),
            _ => None,
        }
    }
}

/// M sampled at the cell midpoints: row `j * N + i`, column `l` holds
/// `M(x_j)[i, l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SylvesterSolution {
    values: DenseMatrix,
    cells: usize,
    channels: usize,
    pub method: SylvesterMethod,
    pub closed_form: Option<ScalarParams>,
    /// ODE residual (bvp) or matrix residual (discrete).
    pub residual: Option<f64>,
}

impl SylvesterSolution {
    pub fn from_values(
        values: DenseMatrix,
        cells: usize,
        channels: usize,
        method: SylvesterMethod,
        residual: Option<f64>,
    ) -> Result<Self, SylvesterError> {
        if values.rows() != cells * channels || values.cols() == 0 {
            return Err(SylvesterError::Shape(format!(
                "{:?} values for {cells} cells x {channels} channels",
                values.shape()
            )));
        }
        Ok(Self {
            values,
            cells,
            channels,
            method,
            closed_form: None,
            residual,
        })
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// ODE dimension n.
    pub fn n(&self) -> usize {
        self.values.cols()
    }

    /// `M z` as a PDE profile.
    pub fn apply(&self, z: &[f64]) -> Result<PdeState, SylvesterError> {
        let data = self.values.matvec(z)?;
        Ok(PdeState::new(self.cells, self.channels, data)?)
    }

    /// Largest entrywise difference to another solution on the same grid.
    pub fn max_deviation(&self, other: &Self) -> Result<f64, SylvesterError> {
        Ok(self.values.sub(&other.values)?.max_abs())
    }

    /// Copy with every value shifted by `delta` (sensitivity probes).
    pub fn perturbed(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.values.as_mut_slice().iter_mut().for_each(|v| *v += delta);
        out
    }

    /// CSV with header `x,M_i_l,...` and one row per node, entries of
    /// M(x) in row-major order.
    pub fn to_csv(&self) -> String {
        let grid = Grid::new(self.cells).expect("solution grids are validated");
        let n = self.n();
        let mut out = String::from("x");
        for i in 0..self.channels {
            for l in 0..n {
                let _ = write!(out, ",M_{}_{}", i + 1, l + 1);
            }
        }
        out.push('\n');
        for j in 0..self.cells {
            let _ = write!(out, "{:.16e}", grid.node(j));
            for i in 0..self.channels {
                for l in 0..n {
                    let _ = write!(out, ",{:.16e}", self.values[(j * self.channels + i, l)]);
                }
            }
            out.push('\n');
        }
        out
    }
}

/// `c / (1 − e^{a/λ}) · e^{a x / λ}`.
pub fn closed_form_scalar(a: f64, lambda: f64, c: f64, x: f64) -> Result<f64, SylvesterError> {
    if !(a > 0.0 && lambda > 0.0) {
        return Err(SylvesterError::ClosedFormDomain { a, lambda });
    }
    let r = a / lambda;
    let e = r.exp();
    if !e.is_finite() {
        return Err(SylvesterError::Overflow(r));
    }
    Ok(c / (1.0 - e) * (r * x).exp())
}

pub fn solve(plant: &PlantSpec, grid: &Grid, method: SylvesterMethod) -> Result<SylvesterSolution, SylvesterError> {
    match method {
        SylvesterMethod::Closed => solve_closed(plant, grid),
        SylvesterMethod::Bvp => solve_bvp(plant, grid),
        SylvesterMethod::Discrete => solve_discrete(plant, grid),
    }
}

pub fn solve_closed(plant: &PlantSpec, grid: &Grid) -> Result<SylvesterSolution, SylvesterError> {
    let sp = plant.scalar_params().ok_or(SylvesterError::ScalarOnly)?;
    let data = grid
        .nodes()
        .into_iter()
        .map(|x| closed_form_scalar(sp.a, sp.lambda, sp.c, x))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sol = SylvesterSolution::from_values(
        DenseMatrix::new(grid.cells(), 1, data)?,
        grid.cells(),
        1,
        SylvesterMethod::Closed,
        None,
    )?;
    sol.closed_form = Some(sp);
    Ok(sol)
}

/// Propagator data for `m′ = −L m`, `L = Aᵀ ⊗ Λ⁻¹`, `m = vec(M)`.
struct BvpSystem {
    generator: DenseMatrix,
    m0: Vec<f64>,
}

impl BvpSystem {
    fn new(plant: &PlantSpec) -> Result<Self, SylvesterError> {
        let nch = plant.channels();
        let n = plant.n();
        let k = plant.positive();
        let inv_speed = DenseMatrix::diag(&plant.speeds().iter().map(|s| 1.0 / s).collect::<Vec<_>>());
        let generator = plant.a().transpose().kron(&inv_speed);
        let phi = mat_exp(&generator, -1.0)?;
        let dim = nch * n;
        let kb = plant.boundary();
        let e = plant.injection();

        // Coefficient row (on m(0)) of the trace of channel r, column l, at
        // x = 0 or x = 1.
        let trace = |r: usize, l: usize, at_one: bool| -> Vec<f64> {
            let idx = l * nch + r;
            if at_one {
                phi.row(idx).to_vec()
            } else {
                let mut row = vec![0.0; dim];
                row[idx] = 1.0;
                row
            }
        };
        let mut sys = DenseMatrix::zeros(dim, dim);
        // Entrywise sum of |terms|, so cancellation to zero is detectable.
        let mut magnitude = DenseMatrix::zeros(dim, dim);
        let mut rhs = vec![0.0; dim];
        for l in 0..n {
            for i in 0..nch {
                let row_idx = l * nch + i;
                // positive channels enter at 0 and leave at 1
                let mut row = trace(i, l, i >= k);
                let mut mag: Vec<f64> = row.iter().map(|v| v.abs()).collect();
                for r in 0..nch {
                    let g = kb[(i, r)];
                    if g != 0.0 {
                        for ((v, m), t) in row.iter_mut().zip(mag.iter_mut()).zip(trace(r, l, r < k)) {
                            *v -= g * t;
                            *m += (g * t).abs();
                        }
                    }
                }
                for (c, (v, m)) in row.into_iter().zip(mag).enumerate() {
                    sys[(row_idx, c)] = v;
                    magnitude[(row_idx, c)] = m;
                }
                rhs[row_idx] = e[(i, l)];
            }
        }
        let sv = singular_values(&sys)?;
        if sv.last().copied().unwrap_or(0.0) <= RESONANCE_TOL * magnitude.frobenius_norm() {
            return Err(SylvesterError::Resonant { route: "bvp" });
        }
        let m0 = Lu::factor(&sys)
            .map_err(|_| SylvesterError::Resonant { route: "bvp" })?
            .solve(&rhs)?;
        Ok(Self { generator, m0 })
    }

    fn vec_at(&self, x: f64) -> Result<Vec<f64>, SylvesterError> {
        Ok(mat_exp(&self.generator, -x)?.matvec(&self.m0)?)
    }
}

pub fn solve_bvp(plant: &PlantSpec, grid: &Grid) -> Result<SylvesterSolution, SylvesterError> {
    let nch = plant.channels();
    let n = plant.n();
    let sys = BvpSystem::new(plant)?;
    let mut values = DenseMatrix::zeros(grid.cells() * nch, n);
    let mut residual = 0.0_f64;
    let mut scale = 1.0_f64;
    let speeds = plant.speeds();
    let a = plant.a();
    for j in 0..grid.cells() {
        let x = grid.node(j);
        let m = sys.vec_at(x)?;
        for l in 0..n {
            for i in 0..nch {
                values[(j * nch + i, l)] = m[l * nch + i];
                scale = scale.max(m[l * nch + i].abs());
            }
        }
        let fwd = sys.vec_at(x + BVP_RESIDUAL_STEP)?;
        let bwd = sys.vec_at(x - BVP_RESIDUAL_STEP)?;
        // Λ M′ + M A, entry (i, l)
        for l in 0..n {
            for i in 0..nch {
                let idx = l * nch + i;
                let deriv = (fwd[idx] - bwd[idx]) / (2.0 * BVP_RESIDUAL_STEP);
                let ma: f64 = (0..n).map(|r| m[r * nch + i] * a[(r, l)]).sum();
                residual = residual.max((speeds[i] * deriv + ma).abs());
            }
        }
    }
    if !values.is_finite() {
        return Err(LinalgError::Overflow { op: "solve_bvp" }.into());
    }
    SylvesterSolution::from_values(values, grid.cells(), nch, SylvesterMethod::Bvp, Some(residual / scale))
}

pub fn solve_discrete(plant: &PlantSpec, grid: &Grid) -> Result<SylvesterSolution, SylvesterError> {
    let op = TransportOperator::new(plant, grid);
    let s = op.to_dense();
    let gamma = op.injection_dense();
    let rhs = gamma.scale(-1.0);
    let values = solve_sylvester_kron(&s, plant.a(), &rhs).map_err(|e| match e {
        LinalgError::Singular { .. } => SylvesterError::Resonant { route: "discrete" },
        other => other.into(),
    })?;
    let residual = s
        .matmul(&values)?
        .sub(&values.matmul(plant.a())?)?
        .add(&gamma)?
        .frobenius_norm();
    SylvesterSolution::from_values(values, grid.cells(), plant.channels(), SylvesterMethod::Discrete, Some(residual))
}

/// Worst relative mismatch, over the canonical basis of ℝⁿ, in
/// `M z = (μ − S_h)⁻¹ M (μ − A) z + (μ − S_h)⁻¹ Γ_h C z`.
pub fn fixed_point_check(sol: &SylvesterSolution, plant: &PlantSpec, mu: f64) -> Result<f64, SylvesterError> {
    if !(mu > 0.0) {
        return Err(SylvesterError::Shape(format!("μ = {mu} must be positive")));
    }
    if sol.channels != plant.channels() || sol.n() != plant.n() {
        return Err(SylvesterError::Shape("solution does not match plant".into()));
    }
    let grid = Grid::new(sol.cells)?;
    let op = TransportOperator::new(plant, &grid);
    let dim = op.dim();
    let resolvent = DenseMatrix::identity(dim).scale(mu).sub(&op.to_dense())?;
    let lu = Lu::factor(&resolvent)?;
    let shifted = DenseMatrix::identity(plant.n()).scale(mu).sub(plant.a())?;
    let forcing = sol.values.matmul(&shifted)?.add(&op.injection_dense())?;
    let mut worst = 0.0_f64;
    for l in 0..plant.n() {
        let col: Vec<f64> = (0..dim).map(|r| forcing[(r, l)]).collect();
        let rhs = lu.solve(&col)?;
        let lhs: Vec<f64> = (0..dim).map(|r| sol.values[(r, l)]).collect();
        let diff = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = lhs.iter().chain(&rhs).map(|v| v.abs()).fold(0.0, f64::max);
        if size > 0.0 {
            worst = worst.max(diff / size);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{build_plant, fold_scalar, unfold_scalar, RawPlant};

    fn scalar() -> PlantSpec {
        PlantSpec::scalar(1.0, 1.0, 1.0).unwrap()
    }

    fn closed_max_err(sol: &SylvesterSolution, a: f64, lambda: f64, c: f64) -> f64 {
        let grid = Grid::new(sol.cells()).unwrap();
        (0..sol.cells())
            .map(|j| (sol.values()[(j, 0)] - closed_form_scalar(a, lambda, c, grid.node(j)).unwrap()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn closed_form_examples() {
        let m0 = closed_form_scalar(1.0, 1.0, 1.0, 0.0).unwrap();
        assert!((m0 - 1.0 / (1.0 - std::f64::consts::E)).abs() < 1e-15);
        assert!((m0 + 0.58198).abs() < 1e-5);
        let m1 = closed_form_scalar(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((m0 - m1 - 1.0).abs() < 1e-12);
        assert_eq!(closed_form_scalar(1.0, 1.0, 0.0, 0.3).unwrap(), 0.0);
        assert!(matches!(closed_form_scalar(800.0, 1.0, 1.0, 0.0), Err(SylvesterError::Overflow(_))));
        assert!(closed_form_scalar(-1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn bvp_matches_closed_form() {
        for (a, lambda, c) in [(1.0, 1.0, 1.0), (2.0, 0.5, -3.0), (0.5, 2.0, 0.7)] {
            let plant = PlantSpec::scalar(a, lambda, c).unwrap();
            let sol = solve_bvp(&plant, &Grid::new(200).unwrap()).unwrap();
            assert!(closed_max_err(&sol, a, lambda, c) <= 1e-10);
            assert!(sol.residual.unwrap() <= 1e-8, "residual {:?}", sol.residual);
        }
    }

    #[test]
    fn zero_output_gives_zero_gain() {
        let plant = PlantSpec::scalar(1.0, 1.0, 0.0).unwrap();
        let g = Grid::new(32).unwrap();
        let bvp = solve_bvp(&plant, &g).unwrap();
        let disc = solve_discrete(&plant, &g).unwrap();
        assert_eq!(bvp.values().max_abs(), 0.0);
        assert_eq!(disc.values().max_abs(), 0.0);
        assert_eq!(disc.residual, Some(0.0));
        assert_eq!(fixed_point_check(&disc, &plant, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn discrete_converges_at_first_order() {
        let plant = scalar();
        let errs: Vec<f64> = [100, 200, 400]
            .iter()
            .map(|g| closed_max_err(&solve_discrete(&plant, &Grid::new(*g).unwrap()).unwrap(), 1.0, 1.0, 1.0))
            .collect();
        assert!(errs[1] <= 2e-2);
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 1.0).abs() <= 0.3, "order {order}");
        }
    }

    #[test]
    fn discrete_residual_is_tiny() {
        let plant = scalar();
        let g = Grid::new(200).unwrap();
        let sol = solve_discrete(&plant, &g).unwrap();
        let gamma = TransportOperator::new(&plant, &g).injection_dense().frobenius_norm();
        assert!(sol.residual.unwrap() <= 1e-10 * gamma);
    }

    #[test]
    fn discrete_is_linear_in_output() {
        let plant = scalar();
        let g = Grid::new(64).unwrap();
        let one = solve_discrete(&plant, &g).unwrap();
        let two = solve_discrete(&plant.with_output_scaled(2.0), &g).unwrap();
        assert!(two.values().sub(&one.values().scale(2.0)).unwrap().max_abs() <= 1e-14);
    }

    #[test]
    fn fixed_point_identity() {
        let plant = scalar();
        let sol = solve_discrete(&plant, &Grid::new(100).unwrap()).unwrap();
        assert!(fixed_point_check(&sol, &plant, 1.0).unwrap() <= 1e-8);
        assert!(fixed_point_check(&sol, &plant, 3.5).unwrap() <= 1e-8);
        assert!(fixed_point_check(&sol.perturbed(1e-3), &plant, 1.0).unwrap() >= 1e-4);
    }

    #[test]
    fn routes_agree_on_two_channel_plant() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![-2.0, -3.0]]).unwrap();
        let mut raw = RawPlant::new(
            a,
            DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            vec![1.0, -0.5],
        );
        raw.d0 = Some(DenseMatrix::from_rows(&[vec![0.8]]).unwrap());
        raw.d1 = Some(DenseMatrix::from_rows(&[vec![0.6]]).unwrap());
        raw.e1 = Some(DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let plant = build_plant(raw).unwrap();
        let devs: Vec<f64> = [50, 100]
            .iter()
            .map(|g| {
                let g = Grid::new(*g).unwrap();
                let bvp = solve_bvp(&plant, &g).unwrap();
                assert!(bvp.residual.unwrap() <= 1e-8);
                solve_discrete(&plant, &g).unwrap().max_deviation(&bvp).unwrap()
            })
            .collect();
        assert!(devs[1] < 0.6 * devs[0], "{devs:?}");
        assert!(devs[1] < 0.05);
    }

    #[test]
    fn folded_two_channel_solution_matches_scalar() {
        // speeds 2λ and −2λ, injection at the x = 0 inflow
        let (a, lambda, c) = (1.0, 1.0, 1.0);
        let mut raw = RawPlant::new(
            DenseMatrix::diag(&[-a]),
            DenseMatrix::identity(1),
            DenseMatrix::diag(&[c]),
            vec![2.0 * lambda, -2.0 * lambda],
        );
        raw.d0 = Some(DenseMatrix::identity(1));
        raw.d1 = Some(DenseMatrix::identity(1));
        raw.e0 = Some(DenseMatrix::diag(&[c]));
        let plant = build_plant(raw).unwrap();
        let half = Grid::new(100).unwrap();
        let sol = solve_bvp(&plant, &half).unwrap();
        let plus: Vec<f64> = (0..100).map(|j| sol.values()[(2 * j, 0)]).collect();
        let minus: Vec<f64> = (0..100).map(|j| sol.values()[(2 * j + 1, 0)]).collect();
        let folded = fold_scalar(&plus, &minus).unwrap();
        let full = Grid::new(200).unwrap();
        for j in 0..200 {
            let expect = closed_form_scalar(a, lambda, c, full.node(j)).unwrap();
            assert!((folded.get(j, 0) - expect).abs() <= 1e-8);
        }
        let (p2, m2) = unfold_scalar(&folded).unwrap();
        assert_eq!((p2, m2), (plus, minus));
    }

    #[test]
    fn closed_route_is_scalar_only() {
        let mut raw = RawPlant::new(
            DenseMatrix::diag(&[-1.0]),
            DenseMatrix::identity(1),
            DenseMatrix::identity(1),
            vec![1.0, -1.0],
        );
        raw.d0 = Some(DenseMatrix::identity(1));
        raw.d1 = Some(DenseMatrix::identity(1));
        let plant = build_plant(raw).unwrap();
        assert_eq!(
            solve(&plant, &Grid::new(16).unwrap(), SylvesterMethod::Closed).unwrap_err(),
            SylvesterError::ScalarOnly
        );
    }

    #[test]
    fn resonance_is_reported() {
        // K = 0.5 puts an eigenvalue of S at -ln 2; put A there too.
        let mut raw = RawPlant::new(
            DenseMatrix::diag(&[-(2.0_f64.ln())]),
            DenseMatrix::identity(1),
            DenseMatrix::identity(1),
            vec![1.0],
        );
        raw.r0 = Some(DenseMatrix::diag(&[0.5]));
        raw.e0 = Some(DenseMatrix::identity(1));
        let plant = build_plant(raw).unwrap();
        let err = solve_bvp(&plant, &Grid::new(16).unwrap()).unwrap_err();
        assert_eq!(err, SylvesterError::Resonant { route: "bvp" });
        assert!(err.to_string().contains("(iii)"));
    }

    #[test]
    fn csv_layout() {
        let sol = solve_closed(&scalar(), &Grid::new(8).unwrap()).unwrap();
        let csv = sol.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,M_1_1");
        assert_eq!(lines.len(), 9);
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0625);
        assert_eq!(first[1], sol.values()[(0, 0)]);
    }
}
