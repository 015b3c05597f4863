//! The ODE/transport cascade, its grid and energy inner product.
//!
//! ```text
//! ż = A z + B σ(u)
//! w_t + Λ w_x = 0                 on (0, 1), N channels
//! in(w) = K out(w) + E z          K = [[R0, D0], [D1, R1]], E = [E0; E1]
//! ```
//!
//! The first `k` channels have positive speed and enter at x = 0, the rest
//! enter at x = 1. `in = [w⁺(0); w⁻(1)]`, `out = [w⁺(1); w⁻(0)]`. The
//! recirculation blocks R0, R1 default to zero; the scalar loop
//! `w(0) = w(1) + c z` is R0 = [1], E0 = [c].

use thiserror::Error;

use crate::numlin::{
    eig, numerical_rank_complex, singular_values, symmetric_eigen, Complex, DenseMatrix, LinalgError,
};

pub const MIN_CELLS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("{name} must be {}x{}, got {}x{}", expected.0, expected.1, got.0, got.1)]
    Dimension {
        name: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("speed of channel {channel} is zero")]
    ZeroSpeed { channel: usize },
    #[error("speed of channel {channel} is not finite")]
    NonFiniteSpeed { channel: usize },
    #[error("channel {channel} has speed {speed} but positive speeds must come first")]
    SpeedOrder { channel: usize, speed: f64 },
    #[error("at least one positive-speed channel is required")]
    NoPositiveChannel,
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("grid needs at least {MIN_CELLS} cells, got {0}")]
    Grid(usize),
    #[error("state shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite sample in PDE state at cell {cell}, channel {channel}")]
    NonFiniteState { cell: usize, channel: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Unvalidated plant data. Boundary blocks left as `None` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPlant {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
    pub speeds: Vec<f64>,
    pub d0: Option<DenseMatrix>,
    pub d1: Option<DenseMatrix>,
    pub r0: Option<DenseMatrix>,
    pub r1: Option<DenseMatrix>,
    pub e0: Option<DenseMatrix>,
    pub e1: Option<DenseMatrix>,
}

impl RawPlant {
    pub fn new(a: DenseMatrix, b: DenseMatrix, c: DenseMatrix, speeds: Vec<f64>) -> Self {
        Self {
            a,
            b,
            c,
            speeds,
            d0: None,
            d1: None,
            r0: None,
            r1: None,
            e0: None,
            e1: None,
        }
    }
}

/// Parameters of the scalar loop `ż = -a z + σ(u)`, `w(0) = w(1) + c z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarParams {
    pub a: f64,
    pub lambda: f64,
    pub c: f64,
}

/// Validated cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantSpec {
    a: DenseMatrix,
    b: DenseMatrix,
    c: DenseMatrix,
    speeds: Vec<f64>,
    positive: usize,
    boundary: DenseMatrix,
    injection: DenseMatrix,
}

fn check_shape(name: &'static str, m: &DenseMatrix, rows: usize, cols: usize) -> Result<(), PlantError> {
    if m.shape() != (rows, cols) {
        return Err(PlantError::Dimension {
            name,
            expected: (rows, cols),
            got: m.shape(),
        });
    }
    Ok(())
}

fn block_or_zero(
    name: &'static str,
    m: Option<DenseMatrix>,
    rows: usize,
    cols: usize,
) -> Result<DenseMatrix, PlantError> {
    match m {
        Some(m) => {
            // A 0-row or 0-column block may be given in any degenerate shape.
            if rows * cols == 0 && m.is_empty() {
                return Ok(DenseMatrix::zeros(rows, cols));
            }
            check_shape(name, &m, rows, cols)?;
            Ok(m)
        }
        None => Ok(DenseMatrix::zeros(rows, cols)),
    }
}

pub fn build_plant(raw: RawPlant) -> Result<PlantSpec, PlantError> {
    let n = raw.a.rows();
    if n == 0 {
        return Err(PlantError::Empty("A"));
    }
    check_shape("A", &raw.a, n, n)?;
    let m = raw.b.cols();
    if m == 0 {
        return Err(PlantError::Empty("B"));
    }
    check_shape("B", &raw.b, n, m)?;
    let p = raw.c.rows();
    if p == 0 {
        return Err(PlantError::Empty("C"));
    }
    check_shape("C", &raw.c, p, n)?;
    if raw.speeds.is_empty() {
        return Err(PlantError::Empty("speeds"));
    }
    for (channel, s) in raw.speeds.iter().enumerate() {
        if !s.is_finite() {
            return Err(PlantError::NonFiniteSpeed { channel });
        }
        if *s == 0.0 {
            return Err(PlantError::ZeroSpeed { channel });
        }
    }
    let k = raw.speeds.iter().take_while(|s| **s > 0.0).count();
    if k == 0 {
        return Err(PlantError::NoPositiveChannel);
    }
    if let Some((channel, speed)) = raw.speeds.iter().enumerate().skip(k).find(|(_, s)| **s > 0.0) {
        return Err(PlantError::SpeedOrder {
            channel,
            speed: *speed,
        });
    }
    let big_n = raw.speeds.len();
    let neg = big_n - k;
    let r0 = block_or_zero("R0", raw.r0, k, k)?;
    let d0 = block_or_zero("D0", raw.d0, k, neg)?;
    let d1 = block_or_zero("D1", raw.d1, neg, k)?;
    let r1 = block_or_zero("R1", raw.r1, neg, neg)?;
    let e0 = block_or_zero("E0", raw.e0, k, n)?;
    let e1 = block_or_zero("E1", raw.e1, neg, n)?;

    let mut boundary = DenseMatrix::zeros(big_n, big_n);
    boundary.set_block(0, 0, &r0);
    boundary.set_block(0, k, &d0);
    boundary.set_block(k, 0, &d1);
    boundary.set_block(k, k, &r1);
    let mut injection = DenseMatrix::zeros(big_n, n);
    injection.set_block(0, 0, &e0);
    injection.set_block(k, 0, &e1);
    Ok(PlantSpec {
        a: raw.a,
        b: raw.b,
        c: raw.c,
        speeds: raw.speeds,
        positive: k,
        boundary,
        injection,
    })
}

fn sub_block(m: &DenseMatrix, r0: usize, c0: usize, rows: usize, cols: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = m[(r0 + i, c0 + j)];
        }
    }
    out
}

impl PlantSpec {
    /// The scalar loop with A = [-a], B = [1], C = [c], one channel of
    /// speed λ and `w(0) = w(1) + c z`.
    pub fn scalar(a: f64, lambda: f64, c: f64) -> Result<Self, PlantError> {
        let mut raw = RawPlant::new(
            DenseMatrix::new(1, 1, vec![-a])?,
            DenseMatrix::identity(1),
            DenseMatrix::new(1, 1, vec![c])?,
            vec![lambda],
        );
        raw.r0 = Some(DenseMatrix::identity(1));
        raw.e0 = Some(DenseMatrix::new(1, 1, vec![c])?);
        build_plant(raw)
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn p(&self) -> usize {
        self.c.rows()
    }

    /// Number of transport channels N.
    pub fn channels(&self) -> usize {
        self.speeds.len()
    }

    /// Number of positive-speed channels k.
    pub fn positive(&self) -> usize {
        self.positive
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn c(&self) -> &DenseMatrix {
        &self.c
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn max_speed(&self) -> f64 {
        self.speeds.iter().map(|s| s.abs()).fold(0.0, f64::max)
    }

    /// Full boundary matrix K (N×N).
    pub fn boundary(&self) -> &DenseMatrix {
        &self.boundary
    }

    /// Full injection matrix E (N×n).
    pub fn injection(&self) -> &DenseMatrix {
        &self.injection
    }

    pub fn to_raw(&self) -> RawPlant {
        let (k, big_n, n) = (self.positive, self.channels(), self.n());
        let neg = big_n - k;
        RawPlant {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            speeds: self.speeds.clone(),
            r0: Some(sub_block(&self.boundary, 0, 0, k, k)),
            d0: Some(sub_block(&self.boundary, 0, k, k, neg)),
            d1: Some(sub_block(&self.boundary, k, 0, neg, k)),
            r1: Some(sub_block(&self.boundary, k, k, neg, neg)),
            e0: Some(sub_block(&self.injection, 0, 0, k, n)),
            e1: Some(sub_block(&self.injection, k, 0, neg, n)),
        }
    }

    /// Returns (a, λ, c) when the plant is exactly the scalar loop.
    pub fn scalar_params(&self) -> Option<ScalarParams> {
        let unit = |m: &DenseMatrix| m.shape() == (1, 1) && m[(0, 0)] == 1.0;
        if self.channels() == 1 && self.n() == 1 && self.m() == 1 && self.p() == 1 && unit(&self.b) && unit(&self.boundary)
        {
            let c = self.c[(0, 0)];
            if self.injection[(0, 0)] == c {
                return Some(ScalarParams {
                    a: -self.a[(0, 0)],
                    lambda: self.speeds[0],
                    c,
                });
            }
        }
        None
    }

    /// True when K is orthogonal, which makes the transport generator
    /// skew-adjoint in the speed-weighted product.
    pub fn has_orthogonal_boundary(&self) -> bool {
        let ktk = self.boundary.transpose().matmul(&self.boundary).expect("square");
        ktk.sub(&DenseMatrix::identity(self.channels())).expect("square").max_abs() <= 1e-12
    }

    /// Copy with injection E and output C scaled by `s` (used by linearity checks).
    pub fn with_output_scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.c = self.c.scale(s);
        out.injection = self.injection.scale(s);
        out
    }

    /// Copy with the ODE decoupled from the PDE and from the input.
    pub fn uncontrolled(&self) -> Self {
        let mut out = self.with_output_scaled(0.0);
        out.b = self.b.scale(0.0);
        out
    }
}

/// Uniform cell-centred grid on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    cells: usize,
}

impl Grid {
    pub fn new(cells: usize) -> Result<Self, PlantError> {
        if cells < MIN_CELLS {
            return Err(PlantError::Grid(cells));
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Midpoint of cell `j`.
    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.cells as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.node(j)).collect()
    }
}

/// PDE samples, cell-major: entry `j * N + i` is channel `i` in cell `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeState {
    cells: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PdeState {
    pub fn new(cells: usize, channels: usize, data: Vec<f64>) -> Result<Self, PlantError> {
        if data.len() != cells * channels || channels == 0 {
            return Err(PlantError::Shape(format!(
                "{} samples for {cells} cells x {channels} channels",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PlantError::NonFiniteState {
                cell: pos / channels,
                channel: pos % channels,
            });
        }
        Ok(Self { cells, channels, data })
    }

    pub fn zeros(grid: &Grid, channels: usize) -> Self {
        Self {
            cells: grid.cells(),
            channels,
            data: vec![0.0; grid.cells() * channels],
        }
    }

    /// Samples `f(x, channel)` at the cell midpoints.
    pub fn from_fn(grid: &Grid, channels: usize, f: impl Fn(f64, usize) -> f64) -> Self {
        let data = (0..grid.cells())
            .flat_map(|j| {
                let x = grid.node(j);
                (0..channels).map(move |i| (x, i))
            })
            .map(|(x, i)| f(x, i))
            .collect();
        Self {
            cells: grid.cells(),
            channels,
            data,
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, cell: usize, channel: usize) -> f64 {
        self.data[cell * self.channels + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.cells == other.cells && self.channels == other.channels
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Result<Self, PlantError> {
        if !self.same_shape(other) {
            return Err(PlantError::Shape(format!(
                "{}x{} vs {}x{}",
                self.cells, self.channels, other.cells, other.channels
            )));
        }
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + s * b).collect(),
            ..self.clone()
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

/// Full cascade state ζ = (z, w) at time t.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub z: Vec<f64>,
    pub w: PdeState,
    pub t: f64,
}

impl CascadeState {
    pub fn zero(plant: &PlantSpec, grid: &Grid) -> Self {
        Self {
            z: vec![0.0; plant.n()],
            w: PdeState::zeros(grid, plant.channels()),
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.z.iter().all(|v| v.is_finite()) && self.w.is_finite()
    }

    /// `self - other` at the time of `self`.
    pub fn difference(&self, other: &Self) -> Result<Self, PlantError> {
        if self.z.len() != other.z.len() {
            return Err(PlantError::Shape(format!("z of length {} vs {}", self.z.len(), other.z.len())));
        }
        Ok(Self {
            z: self.z.iter().zip(&other.z).map(|(a, b)| a - b).collect(),
            w: self.w.add_scaled(-1.0, &other.w)?,
            t: self.t,
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            z: self.z.iter().map(|v| v * s).collect(),
            w: self.w.scale(s),
            t: self.t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Plain,
    SpeedWeighted,
}

impl WeightMode {
    /// Plain L² for a single channel, speed-weighted otherwise.
    pub fn default_for(plant: &PlantSpec) -> Self {
        if plant.channels() == 1 {
            Self::Plain
        } else {
            Self::SpeedWeighted
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::SpeedWeighted => "speed_weighted",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim() {
            "plain" => Some(Self::Plain),
            "speed_weighted" => Some(Self::SpeedWeighted),
            _ => None,
        }
    }
}

/// Channel weights of the energy product `∫ w₁ᵀ diag(weights) w₂ dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerProductWeight {
    pub mode: WeightMode,
    pub weights: Vec<f64>,
}

impl InnerProductWeight {
    pub fn new(mode: WeightMode, speeds: &[f64]) -> Self {
        let weights = match mode {
            WeightMode::Plain => vec![1.0; speeds.len()],
            WeightMode::SpeedWeighted => speeds.iter().map(|s| 1.0 / s.abs()).collect(),
        };
        Self { mode, weights }
    }

    pub fn for_plant(mode: WeightMode, plant: &PlantSpec) -> Self {
        Self::new(mode, plant.speeds())
    }

    /// Midpoint-rule inner product of two PDE states.
    pub fn inner(&self, w1: &PdeState, w2: &PdeState) -> Result<f64, PlantError> {
        if !w1.same_shape(w2) || w1.channels() != self.weights.len() {
            return Err(PlantError::Shape(format!(
                "{}x{} vs {}x{} with {} weights",
                w1.cells(),
                w1.channels(),
                w2.cells(),
                w2.channels(),
                self.weights.len()
            )));
        }
        Ok(self.inner_raw(w1.as_slice(), w2.as_slice()))
    }

    /// Inner product on raw cell-major slices of equal length.
    pub(crate) fn inner_raw(&self, w1: &[f64], w2: &[f64]) -> f64 {
        let nch = self.weights.len();
        let h = nch as f64 / w1.len() as f64;
        let s: f64 = w1
            .iter()
            .zip(w2)
            .enumerate()
            .map(|(idx, (a, b))| self.weights[idx % nch] * a * b)
            .sum();
        h * s
    }

    pub fn norm(&self, w: &PdeState) -> Result<f64, PlantError> {
        Ok(self.inner(w, w)?.sqrt())
    }
}

/// Midpoint-rule weighted inner product on `grid`.
pub fn h_inner(w1: &PdeState, w2: &PdeState, grid: &Grid, wt: &InnerProductWeight) -> Result<f64, PlantError> {
    if w1.cells() != grid.cells() {
        return Err(PlantError::Shape(format!("{} cells on a {}-cell grid", w1.cells(), grid.cells())));
    }
    wt.inner(w1, w2)
}

/// First-order upwind discretization `S_h w + Γ_h z` of the transport
/// equation with its boundary relation.
#[derive(Debug, Clone)]
pub struct TransportOperator {
    cells: usize,
    h: f64,
    speeds: Vec<f64>,
    positive: usize,
    boundary: DenseMatrix,
    injection: DenseMatrix,
}

impl TransportOperator {
    pub fn new(plant: &PlantSpec, grid: &Grid) -> Self {
        Self {
            cells: grid.cells(),
            h: grid.h(),
            speeds: plant.speeds().to_vec(),
            positive: plant.positive(),
            boundary: plant.boundary().clone(),
            injection: plant.injection().clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.cells * self.speeds.len()
    }

    /// Outflow traces `[w⁺(1); w⁻(0)]` taken from the last upwind cells.
    pub fn outflow(&self, w: &[f64]) -> Vec<f64> {
        let nch = self.speeds.len();
        (0..nch)
            .map(|i| {
                if i < self.positive {
                    w[(self.cells - 1) * nch + i]
                } else {
                    w[i]
                }
            })
            .collect()
    }

    /// Inflow values `K out + E z`.
    pub fn inflow(&self, w: &[f64], z: &[f64]) -> Vec<f64> {
        let out = self.outflow(w);
        let mut inflow = self.boundary.matvec(&out).expect("boundary shape");
        if !z.is_empty() {
            for (v, e) in inflow.iter_mut().zip(self.injection.matvec(z).expect("injection shape")) {
                *v += e;
            }
        }
        inflow
    }

    /// Writes `S_h w + Γ_h z` into `out`.
    pub fn apply(&self, w: &[f64], z: &[f64], out: &mut [f64]) {
        let nch = self.speeds.len();
        let g = self.cells;
        let inflow = self.inflow(w, z);
        for (i, &lam) in self.speeds.iter().enumerate() {
            let rate = lam.abs() / self.h;
            if i < self.positive {
                for j in 0..g {
                    let upstream = if j == 0 { inflow[i] } else { w[(j - 1) * nch + i] };
                    out[j * nch + i] = rate * (upstream - w[j * nch + i]);
                }
            } else {
                for j in 0..g {
                    let upstream = if j + 1 == g { inflow[i] } else { w[(j + 1) * nch + i] };
                    out[j * nch + i] = rate * (upstream - w[j * nch + i]);
                }
            }
        }
    }

    fn inflow_cell(&self, channel: usize) -> usize {
        if channel < self.positive {
            0
        } else {
            self.cells - 1
        }
    }

    fn outflow_cell(&self, channel: usize) -> usize {
        if channel < self.positive {
            self.cells - 1
        } else {
            0
        }
    }

    /// Dense S_h.
    pub fn to_dense(&self) -> DenseMatrix {
        let nch = self.speeds.len();
        let g = self.cells;
        let mut s = DenseMatrix::zeros(g * nch, g * nch);
        for (i, &lam) in self.speeds.iter().enumerate() {
            let rate = lam.abs() / self.h;
            for j in 0..g {
                let row = j * nch + i;
                s[(row, row)] -= rate;
                let upstream = if i < self.positive { j.checked_sub(1) } else { Some(j + 1).filter(|u| *u < g) };
                match upstream {
                    Some(u) => s[(row, u * nch + i)] += rate,
                    None => {
                        for l in 0..nch {
                            s[(row, self.outflow_cell(l) * nch + l)] += rate * self.boundary[(i, l)];
                        }
                    }
                }
            }
        }
        s
    }

    /// Dense Γ_h C: the injection row E scaled by |λ|/h in each inflow cell.
    pub fn injection_dense(&self) -> DenseMatrix {
        let nch = self.speeds.len();
        let n = self.injection.cols();
        let mut out = DenseMatrix::zeros(self.cells * nch, n);
        for (i, lam) in self.speeds.iter().enumerate() {
            let row = self.inflow_cell(i) * nch + i;
            for l in 0..n {
                out[(row, l)] = lam.abs() / self.h * self.injection[(i, l)];
            }
        }
        out
    }
}

/// One item of Assumption 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    /// Item-specific margin; see [`AssumptionReport`].
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisjointnessMethod {
    /// K orthogonal: the generator is skew-adjoint and its spectrum is
    /// imaginary, so a Hurwitz A cannot meet it.
    SkewAdjoint,
    /// Singularity test of the exact characteristic matrix at each
    /// eigenvalue of A.
    Characteristic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// (i): value is λ_max(KᵀK) − 1.
    pub dissipative: Verdict,
    /// (ii): value is the largest real part of eig(A).
    pub hurwitz: Verdict,
    /// (iii): value is the smallest relative singular value of the
    /// characteristic matrix over eig(A) (infinite for the skew-adjoint
    /// shortcut).
    pub disjoint: Verdict,
    pub disjoint_method: DisjointnessMethod,
    /// Distance between eig(A) and eig(S_h), when S_h is small enough to
    /// diagonalize densely. Diagnostic only.
    pub discrete_gap: Option<f64>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.dissipative.pass && self.hurwitz.pass && self.disjoint.pass
    }
}

const DISCRETE_GAP_MAX_DIM: usize = 256;
const DISSIPATIVITY_TOL: f64 = 1e-12;

/// Characteristic matrix `Din(μ) − K Dout(μ)` of the transport generator,
/// returned as (real part, imaginary part). S has μ as an eigenvalue iff it
/// is singular.
pub fn characteristic_matrix(plant: &PlantSpec, mu: Complex) -> (DenseMatrix, DenseMatrix) {
    let nch = plant.channels();
    let k = plant.positive();
    let mut d_in = vec![Complex::real(1.0); nch];
    let mut d_out = vec![Complex::real(1.0); nch];
    for (i, lam) in plant.speeds().iter().enumerate() {
        // e^{-μ/λ}
        let mag = (-mu.re / lam).exp();
        let phase = -mu.im / lam;
        let e = Complex::new(mag * phase.cos(), mag * phase.sin());
        if i < k {
            d_out[i] = e;
        } else {
            d_in[i] = e;
        }
    }
    let kb = plant.boundary();
    let mut re = DenseMatrix::zeros(nch, nch);
    let mut im = DenseMatrix::zeros(nch, nch);
    for r in 0..nch {
        for c in 0..nch {
            re[(r, c)] = -kb[(r, c)] * d_out[c].re;
            im[(r, c)] = -kb[(r, c)] * d_out[c].im;
        }
        re[(r, r)] += d_in[r].re;
        im[(r, r)] += d_in[r].im;
    }
    (re, im)
}

pub fn check_assumption1(plant: &PlantSpec, grid: &Grid) -> AssumptionReport {
    let kb = plant.boundary();
    let ktk = kb.transpose().matmul(kb).expect("square");
    let dissipative = match symmetric_eigen(&ktk) {
        Ok((vals, _)) => {
            let excess = vals.last().copied().unwrap_or(0.0) - 1.0;
            Verdict {
                pass: excess <= DISSIPATIVITY_TOL,
                value: excess,
                detail: format!("largest eigenvalue of K^T K is {:.6}", excess + 1.0),
            }
        }
        Err(e) => Verdict {
            pass: false,
            value: f64::INFINITY,
            detail: e.to_string(),
        },
    };

    let spec_a = eig(plant.a());
    let hurwitz = match &spec_a {
        Ok(s) => {
            let r = s.max_real_part();
            Verdict {
                pass: r < 0.0,
                value: r,
                detail: format!("largest real part of eig(A) is {r:.6e}"),
            }
        }
        Err(e) => Verdict {
            pass: false,
            value: f64::INFINITY,
            detail: e.to_string(),
        },
    };

    let (disjoint, disjoint_method) = match &spec_a {
        Err(e) => (
            Verdict {
                pass: false,
                value: 0.0,
                detail: e.to_string(),
            },
            DisjointnessMethod::Characteristic,
        ),
        Ok(_) if hurwitz.pass && plant.has_orthogonal_boundary() => (
            Verdict {
                pass: true,
                value: f64::INFINITY,
                detail: "K orthogonal: spectrum of S is imaginary and A is Hurwitz".into(),
            },
            DisjointnessMethod::SkewAdjoint,
        ),
        Ok(s) => (characteristic_verdict(plant, &s.eigenvalues), DisjointnessMethod::Characteristic),
    };

    let discrete_gap = (grid.cells() * plant.channels() <= DISCRETE_GAP_MAX_DIM)
        .then(|| {
            let sh = eig(&TransportOperator::new(plant, grid).to_dense()).ok()?;
            Some(spec_a.as_ref().ok()?.min_distance(&sh))
        })
        .flatten();

    AssumptionReport {
        dissipative,
        hurwitz,
        disjoint,
        disjoint_method,
        discrete_gap,
    }
}

fn characteristic_verdict(plant: &PlantSpec, eigenvalues: &[Complex]) -> Verdict {
    let nch = plant.channels();
    let mut worst = f64::INFINITY;
    let mut worst_mu = Complex::default();
    for mu in eigenvalues {
        let (re, im) = characteristic_matrix(plant, *mu);
        if !re.is_finite() || !im.is_finite() {
            return Verdict {
                pass: false,
                value: 0.0,
                detail: format!("characteristic matrix overflows at μ = {mu}"),
            };
        }
        let emb = crate::numlin::complex_embedding(&re, &im).expect("same shape");
        let sv = match singular_values(&emb) {
            Ok(sv) => sv,
            Err(e) => {
                return Verdict {
                    pass: false,
                    value: 0.0,
                    detail: e.to_string(),
                }
            }
        };
        let rel = sv.last().copied().unwrap_or(0.0) / sv[0].max(1.0);
        if rel < worst {
            worst = rel;
            worst_mu = *mu;
        }
    }
    let full = eigenvalues.iter().all(|mu| {
        let (re, im) = characteristic_matrix(plant, *mu);
        numerical_rank_complex(&re, &im, crate::numlin::DEFAULT_RANK_TOL).is_ok_and(|r| r == nch)
    });
    Verdict {
        pass: full,
        value: worst,
        detail: format!("smallest relative singular value {worst:.3e} at μ = {worst_mu}"),
    }
}

/// Folds a two-channel state (speeds 2λ, −2λ) onto a single channel:
/// cell `j < G` takes `w⁺` cell `j`, cell `j ≥ G` takes `w⁻` cell `2G − 1 − j`.
pub fn fold_scalar(w_plus: &[f64], w_minus: &[f64]) -> Result<PdeState, PlantError> {
    if w_plus.len() != w_minus.len() {
        return Err(PlantError::Shape(format!(
            "w+ has {} samples, w- has {}",
            w_plus.len(),
            w_minus.len()
        )));
    }
    if w_plus.is_empty() {
        return Err(PlantError::Empty("folded samples"));
    }
    let data: Vec<f64> = w_plus.iter().chain(w_minus.iter().rev()).copied().collect();
    PdeState::new(data.len(), 1, data)
}

/// Inverse of [`fold_scalar`].
pub fn unfold_scalar(folded: &PdeState) -> Result<(Vec<f64>, Vec<f64>), PlantError> {
    if folded.channels() != 1 {
        return Err(PlantError::Shape(format!("{} channels, expected 1", folded.channels())));
    }
    let g = folded.cells();
    if !g.is_multiple_of(2) {
        return Err(PlantError::Shape(format!("odd cell count {g} cannot be unfolded")));
    }
    let data = folded.as_slice();
    let plus = data[..g / 2].to_vec();
    let minus = data[g / 2..].iter().rev().copied().collect();
    Ok((plus, minus))
}
