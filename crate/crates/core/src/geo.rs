//! Ranging arithmetic and position estimation.
//!
//! Distances come from single-sided two-way ranging (SS-TWR):
//! `d = c * (t_round - t_reply) / 2`. Positions are recovered from a set of
//! anchor ranges with a damped Gauss-Newton solver on the residuals
//! `r_i = |p - a_i| - d_i`, and the fit quality is summarised as an error
//! radius `sqrt(trace(s^2 * (J^T J)^-1))` with `s^2 = SSR / (n - dim)`.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Propagation speed used for all time-of-flight conversions, in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Upper bound on Gauss-Newton iterations.
pub const MAX_ITERATIONS: usize = 50;

/// A step shorter than this (meters) ends the iteration.
pub const STEP_TOLERANCE: f64 = 1e-9;

/// Normal equations with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Anchor count the ground array is expected to have; fewer still solves but
/// raises [`EstimateWarning::FewAnchors`].
pub const RECOMMENDED_ANCHORS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid timing: round trip {t_round} ns is shorter than reply delay {t_reply} ns")]
    InvalidTiming { t_round: f64, t_reply: f64 },
    #[error("non-finite coordinate in {0}")]
    NonFinite(String),
    #[error("duplicate anchor id `{0}`")]
    DuplicateAnchor(String),
    #[error("{dimension} needs at least {needed} anchors, got {got}")]
    TooFewAnchors {
        dimension: Dimension,
        needed: usize,
        got: usize,
    },
    #[error("degenerate geometry: {0}")]
    Geometry(String),
    #[error("range refers to unknown anchor `{0}`")]
    UnknownAnchor(String),
    #[error("invalid range for anchor `{anchor_id}`: {reason}")]
    InvalidRange { anchor_id: String, reason: String },
    #[error("{dimension} needs at least {needed} ranges, got {got}")]
    TooFewRanges {
        dimension: Dimension,
        needed: usize,
        got: usize,
    },
    #[error("error radius undefined: {n} measurements leave no degrees of freedom in {dimension}")]
    UndefinedDof { n: usize, dimension: Dimension },
}

/// Number of solved coordinates. Planar solutions keep `z` fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dimension {
    Two,
    Three,
}

impl Dimension {
    pub fn count(self) -> usize {
        match self {
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }

    /// Minimum anchors (and ranges) for a determined fix.
    pub fn min_anchors(self) -> usize {
        self.count() + 1
    }
}

impl TryFrom<u8> for Dimension {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            other => Err(format!("dimension must be 2 or 3, got {other}")),
        }
    }
}

impl From<Dimension> for u8 {
    fn from(d: Dimension) -> u8 {
        d.count() as u8
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D", self.count())
    }
}

/// Cartesian coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub z: f64,
}

impl Position {
    pub const ORIGIN: Position = Position {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn planar(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        distance(self, other)
    }

    pub fn offset(&self, by: &Position) -> Position {
        Position::new(self.x + by.x, self.y + by.y, self.z + by.z)
    }

    fn coords(&self, dimension: Dimension) -> DVector<f64> {
        match dimension {
            Dimension::Two => DVector::from_vec(vec![self.x, self.y]),
            Dimension::Three => DVector::from_vec(vec![self.x, self.y, self.z]),
        }
    }

    fn with_coords(v: &DVector<f64>, z_fixed: f64) -> Position {
        if v.len() == 2 {
            Position::new(v[0], v[1], z_fixed)
        } else {
            Position::new(v[0], v[1], v[2])
        }
    }
}

/// Euclidean distance between two points.
pub fn distance(p: &Position, q: &Position) -> f64 {
    let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// SS-TWR distance from the initiator's round-trip time and the responder's
/// reply delay, both in nanoseconds. `c` is in m/s.
pub fn twr_distance(t_round_ns: f64, t_reply_ns: f64, c: f64) -> Result<f64, GeoError> {
    if !(t_round_ns.is_finite() && t_reply_ns.is_finite())
        || t_reply_ns < 0.0
        || t_round_ns < t_reply_ns
    {
        return Err(GeoError::InvalidTiming {
            t_round: t_round_ns,
            t_reply: t_reply_ns,
        });
    }
    Ok(c * (t_round_ns - t_reply_ns) * 1e-9 / 2.0)
}

/// Round-trip flight time in nanoseconds for a one-way distance `d` meters.
pub fn round_trip_ns(d: f64, c: f64) -> f64 {
    2.0 * d / c * 1e9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: String,
    pub position: Position,
}

impl Anchor {
    pub fn new(id: impl Into<String>, position: Position) -> Self {
        Self {
            id: id.into(),
            position,
        }
    }
}

/// Ordered set of anchors with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    anchors: Vec<Anchor>,
}

impl AnchorSet {
    /// Builds a set, checking only id uniqueness and finiteness. Use
    /// [`AnchorSet::validate`] for the geometric checks of a given dimension.
    pub fn new(anchors: Vec<Anchor>) -> Result<Self, GeoError> {
        let mut seen = HashSet::new();
        for a in &anchors {
            if !seen.insert(a.id.as_str()) {
                return Err(GeoError::DuplicateAnchor(a.id.clone()));
            }
            if !a.position.is_finite() {
                return Err(GeoError::NonFinite(format!("anchor `{}`", a.id)));
            }
        }
        Ok(Self { anchors })
    }

    /// Builds and validates in one go.
    pub fn with_dimension(anchors: Vec<Anchor>, dimension: Dimension) -> Result<Self, GeoError> {
        let set = Self::new(anchors)?;
        set.validate(dimension)?;
        Ok(set)
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.id == id)
    }

    pub fn centroid(&self) -> Position {
        let n = self.anchors.len().max(1) as f64;
        let (x, y, z) = self.anchors.iter().fold((0.0, 0.0, 0.0), |acc, a| {
            (acc.0 + a.position.x, acc.1 + a.position.y, acc.2 + a.position.z)
        });
        Position::new(x / n, y / n, z / n)
    }

    /// Count and spread checks: at least `dim + 1` anchors, not all
    /// collinear (2D) or coplanar (3D).
    pub fn validate(&self, dimension: Dimension) -> Result<(), GeoError> {
        let needed = dimension.min_anchors();
        if self.anchors.len() < needed {
            return Err(GeoError::TooFewAnchors {
                dimension,
                needed,
                got: self.anchors.len(),
            });
        }
        let k = dimension.count();
        let c = self.centroid().coords(dimension);
        let mut scatter = DMatrix::<f64>::zeros(k, k);
        for a in &self.anchors {
            let d = a.position.coords(dimension) - &c;
            scatter += &d * d.transpose();
        }
        let eig = SymmetricEigen::new(scatter).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if max <= 0.0 || min <= max * 1e-12 {
            let shape = match dimension {
                Dimension::Two => "anchors are collinear",
                Dimension::Three => "anchors are coplanar",
            };
            return Err(GeoError::Geometry(shape.to_string()));
        }
        Ok(())
    }
}

/// One ranged distance to a known anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMeasurement {
    pub anchor_id: String,
    pub distance: f64,
    /// Assumed noise standard deviation, meters.
    pub sigma: f64,
    pub timestamp_ns: u64,
}

impl RangeMeasurement {
    pub fn new(anchor_id: impl Into<String>, distance: f64, sigma: f64, timestamp_ns: u64) -> Self {
        Self {
            anchor_id: anchor_id.into(),
            distance,
            sigma,
            timestamp_ns,
        }
    }

    fn check(&self) -> Result<(), GeoError> {
        let reason = if !self.distance.is_finite() || self.distance < 0.0 {
            "distance must be finite and non-negative"
        } else if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            "sigma must be positive"
        } else {
            return Ok(());
        };
        Err(GeoError::InvalidRange {
            anchor_id: self.anchor_id.clone(),
            reason: reason.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateWarning {
    /// Fewer anchors than [`RECOMMENDED_ANCHORS`] were used.
    FewAnchors { used: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub position: Position,
    pub residual_rms: f64,
    pub error_radius: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub warnings: Vec<EstimateWarning>,
}

/// Resolved measurement rows: anchor coordinates and measured distance.
struct Problem {
    dimension: Dimension,
    rows: Vec<(DVector<f64>, f64)>,
    z_fixed: f64,
}

impl Problem {
    fn build(
        anchors: &AnchorSet,
        ranges: &[RangeMeasurement],
        dimension: Dimension,
    ) -> Result<Self, GeoError> {
        anchors.validate(dimension)?;
        let needed = dimension.min_anchors();
        if ranges.len() < needed {
            return Err(GeoError::TooFewRanges {
                dimension,
                needed,
                got: ranges.len(),
            });
        }
        let mut rows = Vec::with_capacity(ranges.len());
        for r in ranges {
            r.check()?;
            let anchor = anchors
                .get(&r.anchor_id)
                .ok_or_else(|| GeoError::UnknownAnchor(r.anchor_id.clone()))?;
            rows.push((anchor.position.coords(dimension), r.distance));
        }
        Ok(Self {
            dimension,
            rows,
            z_fixed: anchors.centroid().z,
        })
    }

    fn distinct_anchors(&self) -> usize {
        let mut seen: Vec<&DVector<f64>> = Vec::new();
        for (a, _) in &self.rows {
            if !seen.contains(&a) {
                seen.push(a);
            }
        }
        seen.len()
    }

    fn ssr(&self, p: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .map(|(a, d)| {
                let r = (p - a).norm() - d;
                r * r
            })
            .sum()
    }

    /// Residual vector and Jacobian at `p`.
    fn linearize(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.dimension.count();
        let n = self.rows.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, k);
        for (i, (a, d)) in self.rows.iter().enumerate() {
            let diff = p - a;
            let norm = diff.norm();
            r[i] = norm - d;
            if norm > 0.0 {
                for c in 0..k {
                    j[(i, c)] = diff[c] / norm;
                }
            }
        }
        (r, j)
    }

    /// Closed-form linearised solution obtained by differencing the squared
    /// range equations against the first row.
    fn linear_seed(&self) -> Option<DVector<f64>> {
        let (a0, d0) = &self.rows[0];
        let k = self.dimension.count();
        let m = self.rows.len() - 1;
        let mut a = DMatrix::zeros(m, k);
        let mut b = DVector::zeros(m);
        for (i, (ai, di)) in self.rows[1..].iter().enumerate() {
            for c in 0..k {
                a[(i, c)] = 2.0 * (ai[c] - a0[c]);
            }
            b[i] = ai.norm_squared() - a0.norm_squared() - di * di + d0 * d0;
        }
        let normal = a.transpose() * &a;
        if condition(&normal)? > MAX_CONDITION {
            return None;
        }
        let x = normal.try_inverse()? * a.transpose() * b;
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Condition number of a symmetric positive semi-definite matrix, or `None`
/// when it is singular.
fn condition(m: &DMatrix<f64>) -> Option<f64> {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    if !(min > 0.0) || !max.is_finite() {
        return None;
    }
    Some(max / min)
}

struct Fit {
    p: DVector<f64>,
    ssr: f64,
    iterations: usize,
    converged: bool,
}

fn gauss_newton(problem: &Problem, start: DVector<f64>) -> Result<Fit, GeoError> {
    let mut p = start;
    let mut ssr = problem.ssr(&p);
    for iter in 1..=MAX_ITERATIONS {
        let (r, j) = problem.linearize(&p);
        let jt = j.transpose();
        let normal = &jt * &j;
        match condition(&normal) {
            Some(c) if c <= MAX_CONDITION => {}
            _ => {
                return Err(GeoError::Geometry(
                    "normal equations are singular at the current iterate".into(),
                ))
            }
        }
        let inv = normal
            .try_inverse()
            .ok_or_else(|| GeoError::Geometry("normal equations are not invertible".into()))?;
        let full = -(inv * (jt * r));

        // Step halving keeps the sum of squares non-increasing.
        let mut step = full;
        let mut next = &p + &step;
        let mut next_ssr = problem.ssr(&next);
        let mut halvings = 0;
        while next_ssr > ssr && halvings < 40 {
            step *= 0.5;
            next = &p + &step;
            next_ssr = problem.ssr(&next);
            halvings += 1;
        }
        if next_ssr <= ssr {
            p = next;
            ssr = next_ssr;
        }
        if step.norm() < STEP_TOLERANCE {
            return Ok(Fit {
                p,
                ssr,
                iterations: iter,
                converged: true,
            });
        }
    }
    Ok(Fit {
        p,
        ssr,
        iterations: MAX_ITERATIONS,
        converged: false,
    })
}

/// Least-squares position fix from anchor ranges.
///
/// Without an explicit `init` the solver starts from the anchor centroid and
/// from the linearised closed-form fix, keeping whichever converges to the
/// lower sum of squares. This avoids the mirror minima that appear when the
/// target lies well outside a small anchor array.
pub fn multilaterate(
    anchors: &AnchorSet,
    ranges: &[RangeMeasurement],
    dimension: Dimension,
    init: Option<Position>,
) -> Result<EstimateResult, GeoError> {
    let problem = Problem::build(anchors, ranges, dimension)?;

    let starts: Vec<DVector<f64>> = match init {
        Some(p) => {
            if !p.is_finite() {
                return Err(GeoError::NonFinite("initial position".into()));
            }
            vec![p.coords(dimension)]
        }
        None => {
            let mut s = vec![anchors.centroid().coords(dimension)];
            s.extend(problem.linear_seed());
            s
        }
    };

    let mut best: Option<Fit> = None;
    let mut first_err = None;
    for start in starts {
        match gauss_newton(&problem, start) {
            Ok(fit) => {
                let better = match &best {
                    None => true,
                    Some(b) => (fit.converged, -fit.ssr) > (b.converged, -b.ssr),
                };
                if better {
                    best = Some(fit);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let fit = match (best, first_err) {
        (Some(fit), _) => fit,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("at least one start is always tried"),
    };

    let n = problem.rows.len();
    let position = Position::with_coords(&fit.p, problem.z_fixed);
    let error_radius = radius_at(&problem, &fit.p, fit.ssr)?;
    let mut warnings = Vec::new();
    let used = problem.distinct_anchors();
    if used < RECOMMENDED_ANCHORS {
        warnings.push(EstimateWarning::FewAnchors { used });
    }
    Ok(EstimateResult {
        position,
        residual_rms: (fit.ssr / n as f64).sqrt(),
        error_radius,
        iterations: fit.iterations,
        converged: fit.converged,
        warnings,
    })
}

fn radius_at(problem: &Problem, p: &DVector<f64>, ssr: f64) -> Result<f64, GeoError> {
    let n = problem.rows.len();
    let k = problem.dimension.count();
    if n <= k {
        return Err(GeoError::UndefinedDof {
            n,
            dimension: problem.dimension,
        });
    }
    let (_, j) = problem.linearize(p);
    let normal = j.transpose() * &j;
    let inv = normal
        .try_inverse()
        .ok_or_else(|| GeoError::Geometry("normal equations are not invertible".into()))?;
    let variance = ssr / (n - k) as f64;
    Ok((variance * inv.trace()).max(0.0).sqrt())
}

/// Covariance-based error radius of a solved `position`:
/// `sqrt(trace(s^2 * (J^T J)^-1))` with `s^2 = SSR / (n - dim)`.
pub fn error_radius(
    anchors: &AnchorSet,
    ranges: &[RangeMeasurement],
    position: &Position,
    dimension: Dimension,
) -> Result<f64, GeoError> {
    let n = ranges.len();
    if n <= dimension.count() {
        return Err(GeoError::UndefinedDof { n, dimension });
    }
    let problem = Problem::build(anchors, ranges, dimension)?;
    let p = position.coords(dimension);
    radius_at(&problem, &p, problem.ssr(&p))
}

/// Sum of squared range residuals at `position`.
pub fn sum_squared_residuals(
    anchors: &AnchorSet,
    ranges: &[RangeMeasurement],
    position: &Position,
    dimension: Dimension,
) -> Result<f64, GeoError> {
    let problem = Problem::build(anchors, ranges, dimension)?;
    Ok(problem.ssr(&position.coords(dimension)))
}
