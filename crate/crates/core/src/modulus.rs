//! Combinatorial `Q`-modulus of curve families on finite covers.
//!
//! A cover is a finite set of pieces; a curve is the set of pieces it meets.
//! The modulus is computed as
//!
//! ```text
//!     minimize Σ_s ρ(s)^Q   subject to   ℓ_ρ(γ) >= 1 for every γ, ρ >= 0,
//! ```
//!
//! which equals `inf V_ρ / L_ρ^Q` by homogeneity. The program is solved through
//! its dual in the multipliers `λ_γ` with a log-barrier Newton method, so every
//! run carries a lower bound (the dual value) next to the upper bound
//! `V(ρ/L)`. Large families are handled by constraint generation against a
//! shortest-curve oracle.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

/// Default relative tolerance on modulus values.
pub const DEFAULT_TOL: f64 = 1e-8;

const MAX_ROUNDS: usize = 2_000;
const MAX_NEWTON_PER_MU: usize = 200;
const MU_FACTOR: f64 = 0.1;
/// The barrier path is followed until the duality gap is this small relative
/// to the dual value.
const FINAL_GAP: f64 = 1e-12;
/// Length residual at which the active-set polish stops.
const POLISH_TOL: f64 = 1e-13;
/// Oracle lengths within this of 1 count as feasible.
const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulusError {
    #[error("a cover needs at least one piece")]
    EmptyCover,
    #[error("curve has no pieces")]
    EmptyCurve,
    #[error("piece index {index} out of range for a cover with {pieces} pieces")]
    PieceOutOfRange { index: usize, pieces: usize },
    #[error("explicit curve family is empty")]
    EmptyFamily,
    #[error("weight vector has {got} entries, cover has {expected} pieces")]
    WeightLength { expected: usize, got: usize },
    #[error("weight {value} at piece {index} is not a finite non-negative number")]
    InvalidWeight { index: usize, value: f64 },
    #[error("exponent Q = {0} must be a real number >= 1")]
    InvalidExponent(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("weight is not admissible: minimal curve length is {0}")]
    NotAdmissible(f64),
    #[error(
        "family is not nested: curve {0:?} of the smaller family is missing from the larger one"
    )]
    NotNested(Vec<usize>),
    #[error("solver did not converge after {rounds} rounds (bounds [{lower}, {upper}])")]
    NonConvergence {
        rounds: usize,
        lower: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cover {
    pieces: usize,
    labels: Option<Vec<String>>,
}

impl Cover {
    pub fn new(pieces: usize) -> Result<Self, ModulusError> {
        if pieces == 0 {
            return Err(ModulusError::EmptyCover);
        }
        Ok(Self {
            pieces,
            labels: None,
        })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self, ModulusError> {
        let mut cover = Self::new(labels.len())?;
        cover.labels = Some(labels);
        Ok(cover)
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

/// A curve, represented by the set of pieces it meets. Indices are kept
/// sorted and distinct, so a piece counts once however often it is crossed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct CombCurve(Vec<usize>);

impl CombCurve {
    pub fn new(
        indices: impl IntoIterator<Item = usize>,
        pieces: usize,
    ) -> Result<Self, ModulusError> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if set.is_empty() {
            return Err(ModulusError::EmptyCurve);
        }
        if let Some(&index) = set.iter().next_back() {
            if index >= pieces {
                return Err(ModulusError::PieceOutOfRange { index, pieces });
            }
        }
        Ok(Self(set.into_iter().collect()))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, piece: usize) -> bool {
        self.0.binary_search(&piece).is_ok()
    }
}

/// Separation oracle for an implicit curve family.
pub trait CurveOracle: Send + Sync {
    /// A curve of minimal `ρ`-length in the family. Must be deterministic.
    fn shortest(&self, rho: &[f64]) -> CombCurve;
}

pub enum CurveFamily {
    Explicit(Vec<CombCurve>),
    Oracle(Box<dyn CurveOracle>),
}

impl fmt::Debug for CurveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Explicit(curves) => f.debug_tuple("Explicit").field(curves).finish(),
            Self::Oracle(_) => f.write_str("Oracle(..)"),
        }
    }
}

impl CurveFamily {
    /// Shortest curve and its length. Ties go to the earliest explicit curve.
    pub fn shortest(&self, rho: &[f64]) -> (CombCurve, f64) {
        match self {
            Self::Explicit(curves) => {
                let mut best = 0;
                let mut best_len = f64::INFINITY;
                for (k, c) in curves.iter().enumerate() {
                    let l = length(rho, c);
                    if l < best_len {
                        best = k;
                        best_len = l;
                    }
                }
                (curves[best].clone(), best_len)
            }
            Self::Oracle(oracle) => {
                let c = oracle.shortest(rho);
                let l = length(rho, &c);
                (c, l)
            }
        }
    }

    fn validate(&self, pieces: usize) -> Result<(), ModulusError> {
        if let Self::Explicit(curves) = self {
            if curves.is_empty() {
                return Err(ModulusError::EmptyFamily);
            }
            for c in curves {
                check_curve(c, pieces)?;
            }
        }
        Ok(())
    }
}

fn check_curve(c: &CombCurve, pieces: usize) -> Result<(), ModulusError> {
    if c.is_empty() {
        return Err(ModulusError::EmptyCurve);
    }
    match c.indices().last() {
        Some(&index) if index >= pieces => Err(ModulusError::PieceOutOfRange { index, pieces }),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModulusError> {
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModulusError::InvalidWeight { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn constant(pieces: usize, value: f64) -> Self {
        Self(vec![value; pieces])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self(self.0.iter().map(|x| x * t).collect())
    }
}

fn length(rho: &[f64], curve: &CombCurve) -> f64 {
    curve.indices().iter().map(|&s| rho[s]).sum()
}

/// `ℓ_ρ(γ)`: sum of `ρ` over the pieces the curve meets.
pub fn rho_length(rho: &WeightVector, curve: &CombCurve) -> Result<f64, ModulusError> {
    check_curve(curve, rho.len())?;
    Ok(length(rho.values(), curve))
}

/// `V_ρ`: `Σ ρ(s)^Q` over `pieces`, or over the whole cover.
pub fn rho_volume(
    rho: &WeightVector,
    q: f64,
    pieces: Option<&[usize]>,
) -> Result<f64, ModulusError> {
    check_exponent(q)?;
    let v = rho.values();
    Ok(match pieces {
        Some(set) => {
            let mut total = 0.0;
            for &s in set {
                if s >= v.len() {
                    return Err(ModulusError::PieceOutOfRange {
                        index: s,
                        pieces: v.len(),
                    });
                }
                total += v[s].powf(q);
            }
            total
        }
        None => volume(v, q),
    })
}

fn volume(rho: &[f64], q: f64) -> f64 {
    rho.iter().map(|x| x.powf(q)).sum()
}

/// `V_ρ / L_ρ^Q` for an arbitrary non-negative weight.
pub fn normalized_ratio(
    rho: &WeightVector,
    family: &CurveFamily,
    q: f64,
) -> Result<f64, ModulusError> {
    check_exponent(q)?;
    let (_, l) = family.shortest(rho.values());
    if !(l > 0.0) {
        return Err(ModulusError::NotAdmissible(l));
    }
    Ok(volume(rho.values(), q) / l.powf(q))
}

fn check_exponent(q: f64) -> Result<(), ModulusError> {
    if q.is_finite() && q >= 1.0 {
        Ok(())
    } else {
        Err(ModulusError::InvalidExponent(q))
    }
}

/// Starting point of the barrier iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    Uniform,
    /// Random multipliers, and for oracle families a random first query.
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub init: Init,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            init: Init::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub active_curves: Vec<CombCurve>,
    /// `λ_γ` for the normalized optimizer, aligned with `active_curves`.
    pub multipliers: Vec<f64>,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusResult {
    /// `V_ρ / L_ρ^Q` of the returned optimizer; an upper bound on the modulus.
    pub value: f64,
    /// Dual value; a lower bound on the modulus.
    pub lower_bound: f64,
    /// Optimizer normalized so that the shortest curve has length 1.
    pub optimizer: WeightVector,
    pub min_length: f64,
    /// Present for `Q > 1`.
    pub certificate: Option<Certificate>,
    /// Curves that were added as constraints.
    pub constraints: Vec<CombCurve>,
    pub rounds: usize,
    pub newton_steps: usize,
}

impl ModulusResult {
    pub fn gap(&self) -> f64 {
        self.value - self.lower_bound
    }
}

/// `mod_Q(Γ, S)` with default options.
pub fn modulus(
    cover: &Cover,
    family: &CurveFamily,
    q: f64,
    tol: f64,
) -> Result<ModulusResult, ModulusError> {
    modulus_with(
        cover,
        family,
        q,
        SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    )
}

pub fn modulus_with(
    cover: &Cover,
    family: &CurveFamily,
    q: f64,
    opts: SolverOptions,
) -> Result<ModulusResult, ModulusError> {
    check_exponent(q)?;
    if !(opts.tol > 0.0) {
        return Err(ModulusError::InvalidTolerance(opts.tol));
    }
    family.validate(cover.pieces())?;
    let n = cover.pieces();
    let mut rng = match opts.init {
        Init::Uniform => None,
        Init::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
    };

    let mut constraints: Vec<CombCurve> = Vec::new();
    let mut known: HashSet<CombCurve> = HashSet::new();
    match family {
        CurveFamily::Explicit(curves) => {
            for c in curves {
                if known.insert(c.clone()) {
                    constraints.push(c.clone());
                }
            }
        }
        CurveFamily::Oracle(oracle) => {
            let probe: Vec<f64> = match rng.as_mut() {
                Some(r) => (0..n).map(|_| r.gen_range(0.5..1.5)).collect(),
                None => vec![1.0; n],
            };
            let c = oracle.shortest(&probe);
            check_curve(&c, n)?;
            known.insert(c.clone());
            constraints.push(c);
        }
    }

    let mut newton_steps = 0;
    let mut last = (0.0, f64::INFINITY);
    for round in 1..=MAX_ROUNDS {
        let sol = solve_restricted(n, &constraints, q, rng.as_mut())?;
        newton_steps += sol.newton_steps;
        let (shortest, l) = family.shortest(&sol.rho);
        check_curve(&shortest, n)?;
        if l >= 1.0 - FEASIBILITY_SLACK || known.contains(&shortest) {
            return finish(n, q, opts.tol, sol, l, constraints, round, newton_steps);
        }
        last = (
            sol.lower,
            volume(&sol.rho, q) / l.max(f64::MIN_POSITIVE).powf(q),
        );
        known.insert(shortest.clone());
        constraints.push(shortest);
    }
    Err(ModulusError::NonConvergence {
        rounds: MAX_ROUNDS,
        lower: last.0,
        upper: last.1,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    n: usize,
    q: f64,
    tol: f64,
    sol: Restricted,
    l: f64,
    constraints: Vec<CombCurve>,
    rounds: usize,
    newton_steps: usize,
) -> Result<ModulusResult, ModulusError> {
    if !(l > 0.0) {
        return Err(ModulusError::NonConvergence {
            rounds,
            lower: sol.lower,
            upper: f64::INFINITY,
        });
    }
    let rho: Vec<f64> = sol.rho.iter().map(|x| x / l).collect();
    let value = volume(&rho, q);
    if value - sol.lower > tol * value.max(f64::MIN_POSITIVE) {
        return Err(ModulusError::NonConvergence {
            rounds,
            lower: sol.lower,
            upper: value,
        });
    }
    let certificate = (q > 1.0).then(|| {
        let scale = l.powf(q - 1.0);
        let mut active_curves = Vec::new();
        let mut multipliers = Vec::new();
        for (k, &lam) in sol.lambda.iter().enumerate() {
            if sol.active[k] {
                active_curves.push(constraints[k].clone());
                multipliers.push(lam / scale);
            }
        }
        let kkt_residual = kkt_residual(n, &rho, q, &active_curves, &multipliers);
        Certificate {
            active_curves,
            multipliers,
            kkt_residual,
        }
    });
    Ok(ModulusResult {
        value,
        lower_bound: sol.lower.min(value),
        optimizer: WeightVector(rho),
        min_length: 1.0,
        certificate,
        constraints,
        rounds,
        newton_steps,
    })
}

/// Larger of the stationarity residual `max_s |Qρ^{Q-1} - Σ λ_γ|` and the
/// deviation of active curve lengths from 1.
fn kkt_residual(n: usize, rho: &[f64], q: f64, curves: &[CombCurve], lambda: &[f64]) -> f64 {
    let mut t = vec![0.0; n];
    for (c, &lam) in curves.iter().zip(lambda) {
        for &s in c.indices() {
            t[s] += lam;
        }
    }
    let stationarity = (0..n)
        .map(|s| (q * rho[s].powf(q - 1.0) - t[s]).abs())
        .fold(0.0, f64::max);
    let lengths = curves
        .iter()
        .map(|c| (length(rho, c) - 1.0).abs())
        .fold(0.0, f64::max);
    stationarity.max(lengths)
}

struct Restricted {
    lambda: Vec<f64>,
    active: Vec<bool>,
    /// Primal weight on all pieces, not yet normalized.
    rho: Vec<f64>,
    lower: f64,
    newton_steps: usize,
}

/// Conjugate of the volume term. For `Q > 1` it is `φ(t) = (Q-1)(t/Q)^{Q/(Q-1)}`
/// with `φ' = ρ`; for `Q = 1` the dual is a linear program and a log barrier
/// on `t < 1` takes its place.
#[derive(Clone, Copy)]
enum Conjugate {
    Power { q: f64 },
    Linear,
}

impl Conjugate {
    fn value(self, t: f64, mu: f64) -> f64 {
        match self {
            Self::Power { q } => (q - 1.0) * (t / q).powf(q / (q - 1.0)),
            Self::Linear => -mu * (1.0 - t).ln(),
        }
    }

    fn rho(self, t: f64, mu: f64) -> f64 {
        match self {
            Self::Power { q } => (t / q).powf(1.0 / (q - 1.0)),
            Self::Linear => mu / (1.0 - t),
        }
    }

    fn curvature(self, t: f64, mu: f64) -> f64 {
        match self {
            Self::Power { q } => {
                if t > 0.0 {
                    self.rho(t, mu) / ((q - 1.0) * t)
                } else {
                    0.0
                }
            }
            Self::Linear => mu / ((1.0 - t) * (1.0 - t)),
        }
    }

    fn in_domain(self, t: f64) -> bool {
        match self {
            Self::Power { .. } => t >= 0.0,
            Self::Linear => t < 1.0,
        }
    }
}

/// Incidence structure of the constraint set restricted to the pieces it uses.
struct Incidence {
    /// Curves as lists of local piece indices.
    curves: Vec<Vec<usize>>,
    /// For each local piece, the curves through it.
    through: Vec<Vec<usize>>,
    /// Local piece -> global piece.
    global: Vec<usize>,
}

impl Incidence {
    fn new(constraints: &[CombCurve]) -> Self {
        let used: BTreeSet<usize> = constraints
            .iter()
            .flat_map(|c| c.indices().iter().copied())
            .collect();
        let global: Vec<usize> = used.into_iter().collect();
        let local = |s: usize| global.binary_search(&s).expect("piece is used");
        let curves: Vec<Vec<usize>> = constraints
            .iter()
            .map(|c| c.indices().iter().map(|&s| local(s)).collect())
            .collect();
        let mut through = vec![Vec::new(); global.len()];
        for (k, c) in curves.iter().enumerate() {
            for &s in c {
                through[s].push(k);
            }
        }
        Self {
            curves,
            through,
            global,
        }
    }

    fn load(&self, lambda: &[f64]) -> Vec<f64> {
        self.through
            .iter()
            .map(|cs| cs.iter().map(|&k| lambda[k]).sum())
            .collect()
    }

    fn lengths(&self, rho: &[f64]) -> Vec<f64> {
        self.curves
            .iter()
            .map(|c| c.iter().map(|&s| rho[s]).sum())
            .collect()
    }
}

struct Barrier<'a> {
    inc: &'a Incidence,
    conj: Conjugate,
}

impl Barrier<'_> {
    /// Barrier objective, or `None` outside the domain.
    fn objective(&self, lambda: &[f64], mu: f64) -> Option<f64> {
        if lambda.iter().any(|&x| !(x > 0.0)) {
            return None;
        }
        let t = self.inc.load(lambda);
        if !t.iter().all(|&x| self.conj.in_domain(x)) {
            return None;
        }
        let linear: f64 = lambda.iter().sum();
        let conj: f64 = t.iter().map(|&x| self.conj.value(x, mu)).sum();
        let log: f64 = lambda.iter().map(|x| x.ln()).sum();
        Some(linear - conj + mu * log)
    }

    fn dual_value(&self, lambda: &[f64]) -> f64 {
        let linear: f64 = lambda.iter().sum();
        match self.conj {
            Conjugate::Power { .. } => {
                let t = self.inc.load(lambda);
                linear - t.iter().map(|&x| self.conj.value(x, 0.0)).sum::<f64>()
            }
            Conjugate::Linear => linear,
        }
    }

    fn rho(&self, lambda: &[f64], mu: f64) -> Vec<f64> {
        self.inc
            .load(lambda)
            .iter()
            .map(|&t| self.conj.rho(t, mu))
            .collect()
    }

    /// Newton direction for the barrier objective at `lambda`, with the
    /// squared Newton decrement.
    fn newton(&self, lambda: &[f64], mu: f64) -> Option<(Vec<f64>, f64)> {
        let k = lambda.len();
        let t = self.inc.load(lambda);
        let rho: Vec<f64> = t.iter().map(|&x| self.conj.rho(x, mu)).collect();
        let ell = self.inc.lengths(&rho);
        let grad = DVector::from_fn(k, |g, _| 1.0 - ell[g] + mu / lambda[g]);
        let mut h = DMatrix::<f64>::zeros(k, k);
        for (s, cs) in self.inc.through.iter().enumerate() {
            let w = self.conj.curvature(t[s], mu);
            if w == 0.0 {
                continue;
            }
            for &a in cs {
                for &b in cs {
                    h[(a, b)] += w;
                }
            }
        }
        for g in 0..k {
            h[(g, g)] += mu / (lambda[g] * lambda[g]);
        }
        let d = match h.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => h.lu().solve(&grad)?,
        };
        if d.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let decrement = grad.dot(&d);
        Some((d.iter().copied().collect(), decrement))
    }

    fn max_step(&self, lambda: &[f64], d: &[f64]) -> f64 {
        let mut alpha: f64 = 1.0;
        for (x, dx) in lambda.iter().zip(d) {
            if *dx < 0.0 {
                alpha = alpha.min(-0.99 * x / dx);
            }
        }
        if let Conjugate::Linear = self.conj {
            let t = self.inc.load(lambda);
            let dt = self.inc.load(d);
            for (x, dx) in t.iter().zip(&dt) {
                if *dx > 0.0 {
                    alpha = alpha.min(0.99 * (1.0 - x) / dx);
                }
            }
        }
        alpha
    }

    /// Newton iterations at fixed `mu`. Returns the number of steps taken.
    fn center(&self, lambda: &mut Vec<f64>, mu: f64, scale: f64) -> usize {
        let mut steps = 0;
        for _ in 0..MAX_NEWTON_PER_MU {
            let Some((d, decrement)) = self.newton(lambda, mu) else {
                break;
            };
            if decrement <= 1e-12 * mu * lambda.len() as f64 || decrement <= 1e-28 * scale {
                break;
            }
            let f0 = self
                .objective(lambda, mu)
                .expect("iterate stays in the domain");
            let mut alpha = self.max_step(lambda, &d);
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = lambda
                    .iter()
                    .zip(&d)
                    .map(|(x, dx)| x + alpha * dx)
                    .collect();
                if let Some(f) = self.objective(&trial, mu) {
                    if f >= f0 + 1e-4 * alpha * decrement {
                        *lambda = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            steps += 1;
            if !accepted {
                break;
            }
        }
        steps
    }

    /// Active-set Newton method on the dual over `λ >= 0`, started from a
    /// barrier iterate. Curves with `λ_γ > 0` are held at length 1; a curve
    /// leaves the free set when its multiplier reaches 0 and enters it when
    /// it becomes shorter than 1. Returns `None` if it does not settle.
    fn polish(&self, start: &[f64], cut: f64) -> Option<(Vec<f64>, usize)> {
        let k = start.len();
        let mut lambda: Vec<f64> = start
            .iter()
            .map(|&x| if x > cut { x } else { 0.0 })
            .collect();
        let mut free: Vec<bool> = lambda.iter().map(|&x| x > 0.0).collect();
        for step in 0..(100 + 4 * k) {
            let t = self.inc.load(&lambda);
            let rho: Vec<f64> = t.iter().map(|&x| self.conj.rho(x, 0.0)).collect();
            let grad: Vec<f64> = self.inc.lengths(&rho).iter().map(|l| 1.0 - l).collect();
            if (0..k)
                .filter(|&g| free[g])
                .all(|g| grad[g].abs() <= POLISH_TOL)
            {
                let violated = (0..k)
                    .filter(|&g| !free[g] && grad[g] > POLISH_TOL)
                    .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
                match violated {
                    None => return Some((lambda, step)),
                    Some(g) => {
                        free[g] = true;
                        continue;
                    }
                }
            }
            let idx: Vec<usize> = (0..k).filter(|&g| free[g]).collect();
            let mut pos = vec![usize::MAX; k];
            for (a, &g) in idx.iter().enumerate() {
                pos[g] = a;
            }
            let mut h = DMatrix::<f64>::zeros(idx.len(), idx.len());
            for (s, cs) in self.inc.through.iter().enumerate() {
                let w = self.conj.curvature(t[s], 0.0);
                if w == 0.0 {
                    continue;
                }
                for &a in cs.iter().filter(|&&g| free[g]) {
                    for &b in cs.iter().filter(|&&g| free[g]) {
                        h[(pos[a], pos[b])] += w;
                    }
                }
            }
            let rhs = DVector::from_fn(idx.len(), |a, _| grad[idx[a]]);
            let eps = 1e-14 * h.amax();
            let d = h.svd(true, true).solve(&rhs, eps).ok()?;
            if d.iter().any(|x| !x.is_finite()) {
                return None;
            }
            let slope = rhs.dot(&d);
            let mut alpha = 1.0;
            let mut block = None;
            for (a, &g) in idx.iter().enumerate() {
                if d[a] < 0.0 && lambda[g] + d[a] <= 0.0 {
                    let r = -lambda[g] / d[a];
                    if r < alpha {
                        alpha = r;
                        block = Some(g);
                    }
                }
            }
            let f0 = self.dual_value(&lambda);
            let floor = 8.0 * f64::EPSILON * f0.abs().max(1.0);
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial = lambda.clone();
                for (a, &g) in idx.iter().enumerate() {
                    trial[g] = (lambda[g] + alpha * d[a]).max(0.0);
                }
                if let Some(g) = block {
                    trial[g] = 0.0;
                }
                if self.dual_value(&trial) >= f0 + 1e-4 * alpha * slope - floor {
                    lambda = trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
                block = None;
            }
            if !accepted {
                return None;
            }
            for g in 0..k {
                if lambda[g] <= 0.0 {
                    lambda[g] = 0.0;
                    free[g] = false;
                }
            }
        }
        None
    }
}

/// Solves the program with only the listed constraints.
fn solve_restricted(
    n: usize,
    constraints: &[CombCurve],
    q: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Restricted, ModulusError> {
    let inc = Incidence::new(constraints);
    let k = constraints.len();
    let conj = if q > 1.0 {
        Conjugate::Power { q }
    } else {
        Conjugate::Linear
    };
    let barrier = Barrier { inc: &inc, conj };

    let shape: Vec<f64> = match rng {
        Some(r) => (0..k).map(|_| r.gen_range(0.5..1.5)).collect(),
        None => vec![1.0; k],
    };
    let mut lambda = match conj {
        Conjugate::Power { q } => {
            let rho = barrier.rho(&shape, 0.0);
            let shortest = inc.lengths(&rho).into_iter().fold(f64::INFINITY, f64::min);
            let alpha = shortest.powf(-(q - 1.0));
            shape.iter().map(|x| x * alpha).collect::<Vec<_>>()
        }
        Conjugate::Linear => {
            let peak = inc.load(&shape).into_iter().fold(0.0, f64::max);
            shape.iter().map(|x| 0.5 * x / peak).collect()
        }
    };

    let scale = match conj {
        Conjugate::Power { q } => volume(&barrier.rho(&lambda, 0.0), q),
        Conjugate::Linear => lambda.iter().sum::<f64>(),
    }
    .max(f64::MIN_POSITIVE);
    let mut mu = 0.1 * scale / k as f64;
    let mut newton_steps = 0;
    loop {
        newton_steps += barrier.center(&mut lambda, mu, scale);
        let lower = barrier.dual_value(&lambda);
        if k as f64 * mu <= FINAL_GAP * lower.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        mu *= MU_FACTOR;
        if mu < f64::MIN_POSITIVE {
            break;
        }
    }

    // Multipliers of order μ only exist because of the barrier.
    let peak = lambda.iter().copied().fold(0.0, f64::max);
    let cut = 1e-3 * (mu * peak).sqrt();
    let polished = match conj {
        Conjugate::Power { .. } => barrier.polish(&lambda, cut),
        Conjugate::Linear => None,
    };
    let (lambda, local_rho) = match polished {
        Some((kept, steps)) => {
            newton_steps += steps;
            let rho = barrier.rho(&kept, 0.0);
            (kept, rho)
        }
        None => {
            let rho = match conj {
                Conjugate::Power { .. } => {
                    let kept: Vec<f64> = lambda
                        .iter()
                        .map(|&x| if x > cut { x } else { 0.0 })
                        .collect();
                    barrier.rho(&kept, mu)
                }
                Conjugate::Linear => barrier.rho(&lambda, mu),
            };
            (lambda, rho)
        }
    };
    let active: Vec<bool> = lambda.iter().map(|&x| x > cut).collect();
    let mut rho = vec![0.0; n];
    for (s, &g) in inc.global.iter().enumerate() {
        rho[g] = local_rho[s];
    }
    Ok(Restricted {
        lower: barrier.dual_value(&lambda),
        lambda,
        active,
        rho,
        newton_steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeurlingReport {
    pub success: bool,
    /// Indices into the family of the curves of minimal length.
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    /// `max_s |Qρ(s)^{Q-1} - Σ_{γ∋s} λ_γ|` after normalizing `ρ` to `L = 1`.
    pub residual: f64,
}

/// Tests whether `ρ` satisfies the optimality identity
/// `Qρ(s)^{Q-1} = Σ_{γ ∈ Γ_0, s ∈ γ} λ_γ` with `λ >= 0`, where `Γ_0` is the set
/// of curves whose length is within a relative `tol` of the minimum.
pub fn beurling_check(
    cover: &Cover,
    family: &[CombCurve],
    rho: &WeightVector,
    q: f64,
    tol: f64,
) -> Result<BeurlingReport, ModulusError> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(ModulusError::InvalidExponent(q));
    }
    let n = cover.pieces();
    if rho.len() != n {
        return Err(ModulusError::WeightLength {
            expected: n,
            got: rho.len(),
        });
    }
    if family.is_empty() {
        return Err(ModulusError::EmptyFamily);
    }
    for c in family {
        check_curve(c, n)?;
    }
    let lengths: Vec<f64> = family.iter().map(|c| length(rho.values(), c)).collect();
    let l = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    if !(l > 0.0) {
        return Ok(BeurlingReport {
            success: false,
            active: Vec::new(),
            multipliers: Vec::new(),
            residual: f64::INFINITY,
        });
    }
    let rho: Vec<f64> = rho.values().iter().map(|x| x / l).collect();
    let active: Vec<usize> = (0..family.len())
        .filter(|&k| lengths[k] / l <= 1.0 + tol)
        .collect();
    let b = DMatrix::from_fn(n, active.len(), |s, a| {
        if family[active[a]].contains(s) {
            1.0
        } else {
            0.0
        }
    });
    let target = DVector::from_fn(n, |s, _| q * rho[s].powf(q - 1.0));
    let lambda = nnls(&b, &target);
    let residual = (&b * &lambda - &target).amax();
    Ok(BeurlingReport {
        success: residual <= tol && !active.is_empty(),
        active,
        multipliers: lambda.iter().copied().collect(),
        residual,
    })
}

/// Non-negative least squares `min |Ax - b|_2` subject to `x >= 0`
/// (Lawson–Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let mut passive = vec![false; n];
    let eps = 1e-14 * a.amax().max(1.0) * b.amax().max(1.0);
    let max_outer = 3 * n + 30;

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
        let sol = sub
            .svd(true, true)
            .solve(b, 1e-13)
            .unwrap_or_else(|_| DVector::zeros(cols.len()));
        let mut z = DVector::zeros(n);
        for (c, &j) in cols.iter().enumerate() {
            z[j] = sol[c];
        }
        z
    };

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > eps)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let z = solve_passive(&passive);
            if (0..n).all(|i| !passive[i] || z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..n {
                if passive[i] && z[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[i]));
                }
            }
            x += (z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= eps {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub smaller: f64,
    pub larger: f64,
    pub holds: bool,
}

/// Checks `mod_Q(Γ_1) <= mod_Q(Γ_2)` for `Γ_1 ⊆ Γ_2`, up to `2·tol`.
pub fn verify_monotonicity(
    cover: &Cover,
    smaller: &[CombCurve],
    larger: &[CombCurve],
    q: f64,
    tol: f64,
) -> Result<MonotonicityReport, ModulusError> {
    let big: HashSet<&CombCurve> = larger.iter().collect();
    if let Some(missing) = smaller.iter().find(|c| !big.contains(c)) {
        return Err(ModulusError::NotNested(missing.indices().to_vec()));
    }
    let m1 = modulus(cover, &CurveFamily::Explicit(smaller.to_vec()), q, tol)?.value;
    let m2 = modulus(cover, &CurveFamily::Explicit(larger.to_vec()), q, tol)?.value;
    Ok(MonotonicityReport {
        smaller: m1,
        larger: m2,
        holds: m1 <= m2 + 2.0 * tol * m2.max(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubadditivityReport {
    pub union_modulus: f64,
    pub parts: Vec<f64>,
    pub sum: f64,
    pub subadditive: bool,
    pub supports_disjoint: bool,
    /// Equality of the union with the sum; vacuously true when supports overlap.
    pub additive_when_disjoint: bool,
}

/// Checks `mod_Q(∪Γ_j) <= Σ mod_Q(Γ_j)`, with equality when the families meet
/// pairwise disjoint sets of pieces.
pub fn verify_subadditivity(
    cover: &Cover,
    families: &[Vec<CombCurve>],
    q: f64,
    tol: f64,
) -> Result<SubadditivityReport, ModulusError> {
    if families.is_empty() || families.iter().any(|f| f.is_empty()) {
        return Err(ModulusError::EmptyFamily);
    }
    let parts = families
        .iter()
        .map(|f| modulus(cover, &CurveFamily::Explicit(f.clone()), q, tol).map(|r| r.value))
        .collect::<Result<Vec<_>, _>>()?;
    let union: Vec<CombCurve> = families.iter().flatten().cloned().collect();
    let union_modulus = modulus(cover, &CurveFamily::Explicit(union), q, tol)?.value;
    let sum: f64 = parts.iter().sum();
    let slack = 2.0 * tol * sum.max(1.0);

    let supports: Vec<HashSet<usize>> = families
        .iter()
        .map(|f| f.iter().flat_map(|c| c.indices().iter().copied()).collect())
        .collect();
    let supports_disjoint = supports
        .iter()
        .enumerate()
        .all(|(i, a)| supports[i + 1..].iter().all(|b| a.is_disjoint(b)));
    Ok(SubadditivityReport {
        subadditive: union_modulus <= sum + slack,
        additive_when_disjoint: !supports_disjoint || (union_modulus - sum).abs() <= slack,
        union_modulus,
        parts,
        sum,
        supports_disjoint,
    })
}
