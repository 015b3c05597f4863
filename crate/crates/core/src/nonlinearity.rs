//! Cone-bounded input nonlinearities: σ(0) = 0, monotone increments and
//! |σ(s)| ≤ L|s|.
//!
//! The catalog covers linear gains, componentwise saturation, the
//! square-root shaped saturation `sat_ū ∘ φ` (monotone and cone-bounded but
//! not locally Lipschitz at |s| = 1), and compositions σ∘ψ used to shape the
//! feedback before it reaches the actuator.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinearityError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("cannot parse nonlinearity descriptor `{0}`")]
    Descriptor(String),
}

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum NonlinearityKind {
    Linear { gain: f64 },
    Saturation { levels: Vec<f64> },
    /// `sat_ū(φ(s))` per component, with `ū > 1`.
    SatPhi { levels: Vec<f64> },
    /// `outer(inner(s))`.
    Composed {
        outer: Box<Nonlinearity>,
        inner: Box<Nonlinearity>,
    },
    /// Componentwise user map; not expressible in scenario files.
    Custom { name: String, map: ScalarMap },
}

impl fmt::Debug for NonlinearityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { gain } => f.debug_struct("Linear").field("gain", gain).finish(),
            Self::Saturation { levels } => f.debug_struct("Saturation").field("levels", levels).finish(),
            Self::SatPhi { levels } => f.debug_struct("SatPhi").field("levels", levels).finish(),
            Self::Composed { outer, inner } => f
                .debug_struct("Composed")
                .field("outer", outer)
                .field("inner", inner)
                .finish(),
            Self::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    dim: usize,
    bound: f64,
}

/// Square-root shaping: identity on [-1, 1], `±(√(|s|-1) + 1)` outside.
pub fn phi(s: f64) -> f64 {
    if s > 1.0 {
        (s - 1.0).sqrt() + 1.0
    } else if s < -1.0 {
        -(-s - 1.0).sqrt() - 1.0
    } else {
        s
    }
}

pub fn sat(level: f64, s: f64) -> f64 {
    s.clamp(-level, level)
}

/// Cone constant of `sat_ū ∘ φ`.
///
/// With `s = t² + 1` the ratio φ(s)/s = (t + 1)/(t² + 1) increases up to
/// t* = √2 − 1; saturation caps t at ū − 1.
fn sat_phi_bound(level: f64) -> f64 {
    let t = (std::f64::consts::SQRT_2 - 1.0).min(level - 1.0);
    (t + 1.0) / (t * t + 1.0)
}

fn check_levels(levels: &[f64], floor: f64, what: &str) -> Result<(), NonlinearityError> {
    if levels.is_empty() {
        return Err(NonlinearityError::Parameter(format!("{what}: no levels given")));
    }
    match levels.iter().find(|l| !(l.is_finite() && **l > floor)) {
        Some(bad) => Err(NonlinearityError::Parameter(format!(
            "{what}: level {bad} must be finite and > {floor}"
        ))),
        None => Ok(()),
    }
}

impl Nonlinearity {
    pub fn linear(dim: usize, gain: f64) -> Result<Self, NonlinearityError> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(NonlinearityError::Parameter(format!("linear gain {gain} must be > 0")));
        }
        if dim == 0 {
            return Err(NonlinearityError::Parameter("dimension must be ≥ 1".into()));
        }
        Ok(Self {
            kind: NonlinearityKind::Linear { gain },
            dim,
            bound: gain,
        })
    }

    pub fn saturation(levels: Vec<f64>) -> Result<Self, NonlinearityError> {
        check_levels(&levels, 0.0, "saturation")?;
        Ok(Self {
            dim: levels.len(),
            kind: NonlinearityKind::Saturation { levels },
            bound: 1.0,
        })
    }

    pub fn sat_phi(levels: Vec<f64>) -> Result<Self, NonlinearityError> {
        check_levels(&levels, 1.0, "sat_phi")?;
        let bound = levels.iter().map(|l| sat_phi_bound(*l)).fold(0.0, f64::max);
        Ok(Self {
            dim: levels.len(),
            kind: NonlinearityKind::SatPhi { levels },
            bound,
        })
    }

    /// Componentwise map `f` with a caller-declared cone constant. Use
    /// [`Nonlinearity::validate_cone_bounded`] before trusting it.
    pub fn from_fn(
        name: impl Into<String>,
        dim: usize,
        bound: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: NonlinearityKind::Custom {
                name: name.into(),
                map: Arc::new(f),
            },
            dim,
            bound,
        }
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared cone constant L.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn eval(&self, s: &[f64]) -> Result<Vec<f64>, NonlinearityError> {
        if s.len() != self.dim {
            return Err(NonlinearityError::Dimension {
                expected: self.dim,
                got: s.len(),
            });
        }
        Ok(self.eval_unchecked(s))
    }

    fn eval_unchecked(&self, s: &[f64]) -> Vec<f64> {
        match &self.kind {
            NonlinearityKind::Linear { gain } => s.iter().map(|v| gain * v).collect(),
            NonlinearityKind::Saturation { levels } => {
                s.iter().zip(levels).map(|(v, l)| sat(*l, *v)).collect()
            }
            NonlinearityKind::SatPhi { levels } => {
                s.iter().zip(levels).map(|(v, l)| sat(*l, phi(*v))).collect()
            }
            NonlinearityKind::Composed { outer, inner } => outer.eval_unchecked(&inner.eval_unchecked(s)),
            NonlinearityKind::Custom { map, .. } => s.iter().map(|v| map(*v)).collect(),
        }
    }

    /// Sampling check of the three cone-bounded properties on
    /// `[-span, span]^m` using a fixed low-discrepancy point set.
    pub fn validate_cone_bounded(&self, samples: usize, span: f64) -> ValidationReport {
        let m = self.dim;
        let zero_at_origin = self.eval_unchecked(&vec![0.0; m]).iter().all(|v| *v == 0.0);
        let mut worst_monotonicity = f64::INFINITY;
        let mut worst_ratio = 0.0_f64;
        let samples = samples.max(1);
        let point = |idx: usize, offset: usize| -> Vec<f64> {
            (0..m)
                .map(|d| span * (2.0 * halton(idx + 1, PRIMES[(offset + d) % PRIMES.len()]) - 1.0))
                .collect()
        };
        // Scales probe both the linear zone near the origin and the far field.
        let scales = [1.0, 1e-3, 0.25];
        for i in 0..samples {
            let scale = scales[i % scales.len()];
            let s1: Vec<f64> = point(i, 0).iter().map(|v| v * scale).collect();
            let s2: Vec<f64> = point(i, m).iter().map(|v| v * scale).collect();
            let f1 = self.eval_unchecked(&s1);
            let f2 = self.eval_unchecked(&s2);
            let mono: f64 = f1
                .iter()
                .zip(&f2)
                .zip(s1.iter().zip(&s2))
                .map(|((a, b), (x, y))| (a - b) * (x - y))
                .sum();
            worst_monotonicity = worst_monotonicity.min(mono);
            for (s, f) in [(&s1, &f1), (&s2, &f2)] {
                let ns = norm(s);
                if ns > 0.0 {
                    worst_ratio = worst_ratio.max(norm(f) / ns);
                }
            }
        }
        ValidationReport {
            samples,
            span,
            declared_bound: self.bound,
            worst_monotonicity,
            worst_ratio,
            zero_at_origin,
        }
    }

    /// Text form used in scenario and controller files.
    pub fn descriptor(&self) -> String {
        fn list(v: &[f64]) -> String {
            v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
        }
        match &self.kind {
            NonlinearityKind::Linear { gain } => format!("linear {gain}"),
            NonlinearityKind::Saturation { levels } => format!("saturation {}", list(levels)),
            NonlinearityKind::SatPhi { levels } => format!("sat_phi {}", list(levels)),
            NonlinearityKind::Composed { outer, inner } => {
                format!("compose({}; {})", outer.descriptor(), inner.descriptor())
            }
            NonlinearityKind::Custom { name, .. } => format!("custom {name}"),
        }
    }

    /// Parses [`Nonlinearity::descriptor`] output. A single level is
    /// broadcast to all `dim` components.
    pub fn parse_descriptor(text: &str, dim: usize) -> Result<Self, NonlinearityError> {
        let text = text.trim();
        let bad = || NonlinearityError::Descriptor(text.to_string());
        if let Some(body) = text.strip_prefix("compose(").and_then(|t| t.strip_suffix(')')) {
            let mut depth = 0i32;
            let split = body
                .char_indices()
                .find(|(_, c)| {
                    match c {
                        '(' => depth += 1,
                        ')' => depth -= 1,
                        _ => {}
                    }
                    *c == ';' && depth == 0
                })
                .map(|(i, _)| i)
                .ok_or_else(bad)?;
            let outer = Self::parse_descriptor(&body[..split], dim)?;
            let inner = Self::parse_descriptor(&body[split + 1..], dim)?;
            return compose_shaping(&inner, &outer);
        }
        let (kind, params) = text.split_once(char::is_whitespace).ok_or_else(bad)?;
        let values: Vec<f64> = params
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let levels = match values.len() {
            1 => vec![values[0]; dim],
            n if n == dim => values.clone(),
            n => {
                return Err(NonlinearityError::Dimension { expected: dim, got: n });
            }
        };
        match kind {
            "linear" if values.len() == 1 => Self::linear(dim, values[0]),
            "saturation" => Self::saturation(levels),
            "sat_phi" => Self::sat_phi(levels),
            _ => Err(bad()),
        }
    }
}

/// Builds σ∘ψ: `psi` acts first, then `sigma`. The cone constant is the
/// product of the two.
pub fn compose_shaping(psi: &Nonlinearity, sigma: &Nonlinearity) -> Result<Nonlinearity, NonlinearityError> {
    if psi.dim != sigma.dim {
        return Err(NonlinearityError::Dimension {
            expected: sigma.dim,
            got: psi.dim,
        });
    }
    Ok(Nonlinearity {
        dim: sigma.dim,
        bound: sigma.bound * psi.bound,
        kind: NonlinearityKind::Composed {
            outer: Box::new(sigma.clone()),
            inner: Box::new(psi.clone()),
        },
    })
}

/// Outcome of [`Nonlinearity::validate_cone_bounded`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub span: f64,
    pub declared_bound: f64,
    /// Smallest `(σ(s1) − σ(s2))ᵀ(s1 − s2)` seen.
    pub worst_monotonicity: f64,
    /// Largest `|σ(s)| / |s|` seen.
    pub worst_ratio: f64,
    pub zero_at_origin: bool,
}

impl ValidationReport {
    pub fn monotone(&self) -> bool {
        self.worst_monotonicity >= -1e-12
    }

    pub fn bounded(&self) -> bool {
        self.worst_ratio <= self.declared_bound + 1e-9
    }

    pub fn passed(&self) -> bool {
        self.zero_at_origin && self.monotone() && self.bounded()
    }
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn halton(mut index: usize, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while index > 0 {
        f /= b;
        r += f * (index as u64 % base) as f64;
        index /= base as usize;
    }
    r
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn catalog() -> Vec<Nonlinearity> {
        vec![
            Nonlinearity::linear(1, 2.0).unwrap(),
            Nonlinearity::linear(2, 0.5).unwrap(),
            Nonlinearity::saturation(vec![1.0]).unwrap(),
            Nonlinearity::saturation(vec![0.1, 3.0]).unwrap(),
            Nonlinearity::sat_phi(vec![2.0]).unwrap(),
            Nonlinearity::sat_phi(vec![1.2]).unwrap(),
        ]
    }

    #[test]
    fn saturation_clamps() {
        let s = Nonlinearity::saturation(vec![1.0]).unwrap();
        assert_eq!(s.eval(&[2.0]).unwrap(), vec![1.0]);
        assert_eq!(s.eval(&[-7.0]).unwrap(), vec![-1.0]);
        assert_eq!(s.eval(&[0.3]).unwrap(), vec![0.3]);
    }

    #[test]
    fn zero_maps_to_zero() {
        for sig in catalog() {
            assert!(sig.eval(&vec![0.0; sig.dim()]).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn sat_phi_evaluates_shaping_then_clamp() {
        let s = Nonlinearity::sat_phi(vec![2.0]).unwrap();
        assert_eq!(phi(5.0), 3.0);
        assert_eq!(s.eval(&[5.0]).unwrap(), vec![2.0]);
        assert_eq!(s.eval(&[1.25]).unwrap(), vec![1.5]);
    }

    #[test]
    fn sat_phi_rejects_low_level() {
        assert!(Nonlinearity::sat_phi(vec![1.0]).is_err());
        assert!(Nonlinearity::sat_phi(vec![0.5]).is_err());
    }

    #[test]
    fn sat_phi_bound_matches_peak_ratio() {
        // brute-force the ratio on a fine grid
        for level in [1.1, 1.3, 2.0, 5.0] {
            let peak = (1..200_000)
                .map(|i| 1.0 + i as f64 * 1e-5)
                .map(|s| sat(level, phi(s)) / s)
                .fold(0.0, f64::max);
            assert!((peak - sat_phi_bound(level)).abs() < 1e-8, "level {level}");
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = Nonlinearity::saturation(vec![1.0, 1.0]).unwrap();
        assert!(matches!(s.eval(&[1.0]), Err(NonlinearityError::Dimension { .. })));
    }

    #[test]
    fn catalog_validates() {
        for sig in catalog() {
            let r = sig.validate_cone_bounded(10_000, 10.0);
            assert!(r.passed(), "{:?}", r);
        }
        let lin = Nonlinearity::linear(1, 2.0).unwrap().validate_cone_bounded(1000, 5.0);
        assert!((lin.worst_ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sign_flip_fails_monotonicity() {
        let neg = Nonlinearity::from_fn("negate", 1, 1.0, |s| -s);
        let r = neg.validate_cone_bounded(100, 1.0);
        assert!(!r.monotone());
        assert!(!r.passed());
    }

    #[test]
    fn understated_bound_is_caught() {
        let lin = Nonlinearity::from_fn("double", 1, 1.5, |s| 2.0 * s);
        assert!(!lin.validate_cone_bounded(100, 1.0).bounded());
    }

    #[test]
    fn composition_examples() {
        let id = Nonlinearity::linear(1, 1.0).unwrap();
        let sat1 = Nonlinearity::saturation(vec![1.0]).unwrap();
        let sat2 = Nonlinearity::saturation(vec![2.0]).unwrap();
        let small = Nonlinearity::saturation(vec![0.1]).unwrap();

        // identity outer map leaves sat₁ unchanged
        let c = compose_shaping(&sat1, &id).unwrap();
        for s in [-3.0, -0.4, 0.0, 0.7, 9.0] {
            assert_eq!(c.eval(&[s]).unwrap(), sat1.eval(&[s]).unwrap());
        }
        // sat_{0.1} after the identity stays inside [-0.1, 0.1]
        let c = compose_shaping(&id, &small).unwrap();
        for s in [-3.0, -0.05, 0.0, 0.7, 9.0] {
            assert!(c.eval(&[s]).unwrap()[0].abs() <= 0.1);
        }
        // sat₁ ∘ sat₂ at 5
        let c = compose_shaping(&sat2, &sat1).unwrap();
        assert_eq!(c.eval(&[5.0]).unwrap(), vec![1.0]);
        assert!(compose_shaping(&sat1, &Nonlinearity::saturation(vec![1.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn descriptors_round_trip() {
        let mut all = catalog();
        all.push(
            compose_shaping(
                &Nonlinearity::saturation(vec![0.1]).unwrap(),
                &Nonlinearity::sat_phi(vec![2.0]).unwrap(),
            )
            .unwrap(),
        );
        for sig in all {
            let back = Nonlinearity::parse_descriptor(&sig.descriptor(), sig.dim()).unwrap();
            assert_eq!(back.descriptor(), sig.descriptor());
            assert_eq!(back.bound(), sig.bound());
        }
        assert!(Nonlinearity::parse_descriptor("deadzone 1", 1).is_err());
    }

    proptest! {
        #[test]
        fn catalog_is_monotone_and_cone_bounded(
            s1 in proptest::collection::vec(-50.0..50.0_f64, 2),
            s2 in proptest::collection::vec(-50.0..50.0_f64, 2),
        ) {
            for sig in catalog() {
                let m = sig.dim();
                let a = sig.eval(&s1[..m]).unwrap();
                let b = sig.eval(&s2[..m]).unwrap();
                let mono: f64 = (0..m).map(|i| (a[i] - b[i]) * (s1[i] - s2[i])).sum();
                prop_assert!(mono >= -1e-12);
                prop_assert!(norm(&a) <= sig.bound() * norm(&s1[..m]) + 1e-12);
            }
        }

        #[test]
        fn compositions_stay_cone_bounded(l1 in 0.05..3.0_f64, l2 in 1.01..4.0_f64, g in 0.1..3.0_f64) {
            let inner = Nonlinearity::saturation(vec![l1]).unwrap();
            let outer = Nonlinearity::sat_phi(vec![l2]).unwrap();
            let lin = Nonlinearity::linear(1, g).unwrap();
            for (psi, sig) in [(&inner, &outer), (&lin, &outer), (&outer, &inner), (&lin, &inner)] {
                let c = compose_shaping(psi, sig).unwrap();
                prop_assert!((c.bound() - psi.bound() * sig.bound()).abs() < 1e-15);
                prop_assert!(c.validate_cone_bounded(500, 20.0).passed());
            }
        }
    }
}
