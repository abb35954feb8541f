//! Multicurve transition data.
//!
//! A [`MulticurveSpec`] lists curves `γ_1..γ_m` and, for each `γ_j`, the
//! connected components of its preimage with their degrees and homotopy
//! classes. The classes are supplied by the caller. From this data we build the
//! transition matrix `f_{Γ,Q}`, find Levy cycles, and solve
//! `λ(f_{Γ,Q}) = 1` for the critical exponent `Q(Γ)`.

use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::spectral::{self, BlockKind, NonNegMatrix, SpectralError};

/// Default tolerance on `Q(Γ)`.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Exponent at which the Levy test is probed. Degrees `>= 2` contribute at
/// most `2^-63` there, so only the degree-one part of the matrix survives.
pub const LEVY_PROBE_Q: f64 = 64.0;

const MAX_BISECTIONS: usize = 400;
const MAX_BRACKET_Q: f64 = (1u64 << 20) as f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MulticurveError {
    #[error("a multicurve needs at least one curve")]
    NoCurves,
    #[error("duplicate curve label {0:?}")]
    DuplicateLabel(String),
    #[error("expected preimage lists for {expected} curves, got {got}")]
    PreimageCount { expected: usize, got: usize },
    #[error("component {component} over curve {curve} has degree 0")]
    ZeroDegree { curve: usize, component: usize },
    #[error("component {component} over curve {curve} refers to unknown curve index {index}")]
    UnknownCurve {
        curve: usize,
        component: usize,
        index: usize,
    },
    #[error("preimage degrees over curve {curve} sum to {sum}, but the map has degree {degree}")]
    DegreeSum { curve: usize, sum: u64, degree: u32 },
    #[error("exponent Q = {0} must be a real number >= 1")]
    InvalidExponent(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("multicurve contains no irreducible sub-multicurve")]
    NoIrreducibleBlock,
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error(
        "critical exponent search stalled after {iterations} steps with bracket [{lower}, {upper}]"
    )]
    NonConvergence {
        iterations: usize,
        lower: f64,
        upper: f64,
    },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Homotopy class of a preimage component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentClass {
    /// Homotopic to the curve with this index.
    Essential(usize),
    Peripheral,
    Inessential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PreimageComponent {
    pub degree: u32,
    pub class: ComponentClass,
}

impl PreimageComponent {
    pub fn essential(degree: u32, target: usize) -> Self {
        Self {
            degree,
            class: ComponentClass::Essential(target),
        }
    }

    pub fn peripheral(degree: u32) -> Self {
        Self {
            degree,
            class: ComponentClass::Peripheral,
        }
    }

    pub fn inessential(degree: u32) -> Self {
        Self {
            degree,
            class: ComponentClass::Inessential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MulticurveSpec {
    curves: Vec<String>,
    map_degree: Option<u32>,
    preimages: Vec<Vec<PreimageComponent>>,
}

impl MulticurveSpec {
    /// `preimages[j]` lists the components of `f^{-1}(γ_j)`.
    pub fn new(
        curves: Vec<String>,
        map_degree: Option<u32>,
        preimages: Vec<Vec<PreimageComponent>>,
    ) -> Result<Self, MulticurveError> {
        if curves.is_empty() {
            return Err(MulticurveError::NoCurves);
        }
        let mut seen = HashSet::new();
        for label in &curves {
            if !seen.insert(label.as_str()) {
                return Err(MulticurveError::DuplicateLabel(label.clone()));
            }
        }
        let m = curves.len();
        if preimages.len() != m {
            return Err(MulticurveError::PreimageCount {
                expected: m,
                got: preimages.len(),
            });
        }
        for (j, comps) in preimages.iter().enumerate() {
            for (k, c) in comps.iter().enumerate() {
                if c.degree == 0 {
                    return Err(MulticurveError::ZeroDegree {
                        curve: j,
                        component: k,
                    });
                }
                if let ComponentClass::Essential(i) = c.class {
                    if i >= m {
                        return Err(MulticurveError::UnknownCurve {
                            curve: j,
                            component: k,
                            index: i,
                        });
                    }
                }
            }
            if let Some(d) = map_degree {
                let sum: u64 = comps.iter().map(|c| u64::from(c.degree)).sum();
                if sum != u64::from(d) {
                    return Err(MulticurveError::DegreeSum {
                        curve: j,
                        sum,
                        degree: d,
                    });
                }
            }
        }
        Ok(Self {
            curves,
            map_degree,
            preimages,
        })
    }

    pub fn curves(&self) -> &[String] {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn map_degree(&self) -> Option<u32> {
        self.map_degree
    }

    pub fn preimages(&self, curve: usize) -> &[PreimageComponent] {
        &self.preimages[curve]
    }

    /// Smallest degree among essential components, if any.
    pub fn min_essential_degree(&self) -> Option<u32> {
        self.essential_edges().map(|(_, _, d)| d).min()
    }

    /// `(source j, target i, degree)` for every essential component over `γ_j`.
    fn essential_edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.preimages.iter().enumerate().flat_map(|(j, comps)| {
            comps.iter().filter_map(move |c| match c.class {
                ComponentClass::Essential(i) => Some((j, i, c.degree)),
                _ => None,
            })
        })
    }

    /// Keeps the curves in `keep` (in the given order); components that were
    /// essential to a dropped curve become inessential.
    pub fn restrict(&self, keep: &[usize]) -> Result<MulticurveSpec, MulticurveError> {
        let mut new_index = vec![None; self.len()];
        for (new, &old) in keep.iter().enumerate() {
            new_index[old] = Some(new);
        }
        let curves = keep.iter().map(|&i| self.curves[i].clone()).collect();
        let preimages = keep
            .iter()
            .map(|&j| {
                self.preimages[j]
                    .iter()
                    .map(|c| PreimageComponent {
                        degree: c.degree,
                        class: match c.class {
                            ComponentClass::Essential(i) => match new_index[i] {
                                Some(n) => ComponentClass::Essential(n),
                                None => ComponentClass::Inessential,
                            },
                            other => other,
                        },
                    })
                    .collect()
            })
            .collect();
        MulticurveSpec::new(curves, self.map_degree, preimages)
    }
}

/// One curve whose preimage is two degree-2 curves homotopic to itself: the
/// integral Lattès pattern of a degree-4 map with `f_{Γ,2} = (1)`.
pub fn lattes_spec() -> MulticurveSpec {
    MulticurveSpec::new(
        vec!["gamma".to_string()],
        Some(4),
        vec![vec![
            PreimageComponent::essential(2, 0),
            PreimageComponent::essential(2, 0),
        ]],
    )
    .expect("static Lattès spec is valid")
}

fn check_exponent(q: f64) -> Result<(), MulticurveError> {
    if q.is_finite() && q >= 1.0 {
        Ok(())
    } else {
        Err(MulticurveError::InvalidExponent(q))
    }
}

/// `f_{Γ,Q}`: entry `(i, j)` sums `deg^{1-Q}` over components of `f^{-1}(γ_j)`
/// homotopic to `γ_i`.
pub fn transition_matrix(spec: &MulticurveSpec, q: f64) -> Result<NonNegMatrix, MulticurveError> {
    check_exponent(q)?;
    let mut a = NonNegMatrix::zeros(spec.len());
    for (j, i, degree) in spec.essential_edges() {
        a.accumulate(i, j, f64::from(degree).powf(1.0 - q));
    }
    Ok(a)
}

/// The constant part `C` of `f_{Γ,Q}`: only degree-one components.
pub fn degree_one_matrix(spec: &MulticurveSpec) -> NonNegMatrix {
    let mut c = NonNegMatrix::zeros(spec.len());
    for (j, i, degree) in spec.essential_edges() {
        if degree == 1 {
            c.accumulate(i, j, 1.0);
        }
    }
    c
}

/// λ(f_{Γ,Q}).
pub fn leading_eigenvalue(spec: &MulticurveSpec, q: f64, tol: f64) -> Result<f64, MulticurveError> {
    Ok(spectral::spectral_radius(
        &transition_matrix(spec, q)?,
        tol,
    )?)
}

/// All simple cycles of the digraph with an edge `j -> i` whenever `f^{-1}(γ_j)`
/// has a degree-one component homotopic to `γ_i`.
///
/// Each cycle starts at its smallest index; cycles are listed in
/// lexicographic order of their start and then discovery order.
pub fn detect_levy_cycles(spec: &MulticurveSpec) -> Vec<Vec<usize>> {
    let m = spec.len();
    let mut adj = vec![Vec::new(); m];
    for (j, i, degree) in spec.essential_edges() {
        if degree == 1 && !adj[j].contains(&i) {
            adj[j].push(i);
        }
    }
    for out in &mut adj {
        out.sort_unstable();
    }

    fn extend(
        start: usize,
        v: usize,
        adj: &[Vec<usize>],
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        out: &mut Vec<Vec<usize>>,
    ) {
        for &w in &adj[v] {
            if w == start {
                out.push(path.clone());
            } else if w > start && !on_path[w] {
                on_path[w] = true;
                path.push(w);
                extend(start, w, adj, path, on_path, out);
                path.pop();
                on_path[w] = false;
            }
        }
    }

    let mut cycles = Vec::new();
    let mut on_path = vec![false; m];
    for start in 0..m {
        let mut path = vec![start];
        on_path[start] = true;
        extend(start, start, &adj, &mut path, &mut on_path, &mut cycles);
        on_path[start] = false;
    }
    cycles
}

/// Whether some diagonal block of `f_{Γ,Q}` is irreducible. The support of the
/// matrix does not depend on `Q`, so `Q = 1` is used.
pub fn contains_irreducible(spec: &MulticurveSpec) -> bool {
    let a = transition_matrix(spec, 1.0).expect("Q = 1 is valid");
    spectral::decompose(&a)
        .blocks
        .iter()
        .any(|b| b.kind == BlockKind::Irreducible)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "q", rename_all = "snake_case")]
pub enum QKind {
    Finite(f64),
    Zero,
    LevyObstructed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QResult {
    pub kind: QKind,
    pub achieved_lambda: f64,
    pub iterations: usize,
}

impl QResult {
    pub fn q(&self) -> Option<f64> {
        match self.kind {
            QKind::Finite(q) => Some(q),
            _ => None,
        }
    }
}

/// Critical exponent `Q(Γ)`: the unique `Q >= 1` with `λ(f_{Γ,Q}) = 1`.
///
/// `Zero` when no block is irreducible, `LevyObstructed` when a Levy cycle
/// keeps `λ >= 1` for every `Q`. Otherwise the root is bracketed by doubling
/// from `[1, 2]` and bisected until the bracket is narrower than `tol` and the
/// eigenvalue at the returned point is within `tol` of 1.
pub fn q_of_multicurve(spec: &MulticurveSpec, tol: f64) -> Result<QResult, MulticurveError> {
    if !(tol > 0.0) {
        return Err(MulticurveError::InvalidTolerance(tol));
    }
    if !contains_irreducible(spec) {
        return Ok(QResult {
            kind: QKind::Zero,
            achieved_lambda: 0.0,
            iterations: 0,
        });
    }
    let eig_tol = (tol * 1e-2).max(1e-14);
    let lambda = |q: f64| leading_eigenvalue(spec, q, eig_tol);

    if !detect_levy_cycles(spec).is_empty() {
        let probe = lambda(LEVY_PROBE_Q)?;
        if probe >= 1.0 - eig_tol {
            return Ok(QResult {
                kind: QKind::LevyObstructed,
                achieved_lambda: probe,
                iterations: 0,
            });
        }
    }

    let at_one = lambda(1.0)?;
    if (at_one - 1.0).abs() <= tol {
        return Ok(QResult {
            kind: QKind::Finite(1.0),
            achieved_lambda: at_one,
            iterations: 0,
        });
    }

    let mut iterations = 0;
    let mut lo = 1.0;
    let mut hi = 2.0;
    loop {
        iterations += 1;
        let lh = lambda(hi)?;
        if lh == 1.0 {
            return Ok(QResult {
                kind: QKind::Finite(hi),
                achieved_lambda: lh,
                iterations,
            });
        }
        if lh < 1.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > MAX_BRACKET_Q {
            return Err(MulticurveError::NonConvergence {
                iterations,
                lower: lo,
                upper: hi,
            });
        }
    }

    for _ in 0..MAX_BISECTIONS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let lm = lambda(mid)?;
        if lm == 1.0 || (hi - lo <= tol && (lm - 1.0).abs() <= tol) {
            return Ok(QResult {
                kind: QKind::Finite(mid),
                achieved_lambda: lm,
                iterations,
            });
        }
        if mid <= lo || mid >= hi {
            break;
        }
        if lm >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(MulticurveError::NonConvergence {
        iterations,
        lower: lo,
        upper: hi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QMapReport {
    pub results: Vec<QResult>,
    /// Largest finite `Q(Γ)` in the catalog; 0 when none is finite.
    pub overall: f64,
    /// Catalog positions whose multicurve has a Levy cycle.
    pub levy_obstructed: Vec<usize>,
}

impl QMapReport {
    pub fn has_levy(&self) -> bool {
        !self.levy_obstructed.is_empty()
    }
}

/// `Q(f)` over a caller-supplied catalog of multicurves.
pub fn q_of_map(catalog: &[MulticurveSpec], tol: f64) -> Result<QMapReport, MulticurveError> {
    if catalog.is_empty() {
        return Err(MulticurveError::EmptyCatalog);
    }
    let results = catalog
        .iter()
        .map(|spec| q_of_multicurve(spec, tol))
        .collect::<Result<Vec<_>, _>>()?;
    let overall = results.iter().filter_map(QResult::q).fold(0.0, f64::max);
    let levy_obstructed = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == QKind::LevyObstructed)
        .map(|(k, _)| k)
        .collect();
    Ok(QMapReport {
        results,
        overall,
        levy_obstructed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrreducibleCore {
    /// Curve indices of the leading irreducible block.
    pub indices: Vec<usize>,
    /// λ of the restricted multicurve.
    pub lambda: f64,
    pub spec: MulticurveSpec,
}

/// Sub-multicurve on the leading block of `f_{Γ,Q}`; it carries the same
/// Perron–Frobenius eigenvalue as the whole multicurve.
pub fn irreducible_core(
    spec: &MulticurveSpec,
    q: f64,
    tol: f64,
) -> Result<IrreducibleCore, MulticurveError> {
    if !contains_irreducible(spec) {
        return Err(MulticurveError::NoIrreducibleBlock);
    }
    let a = transition_matrix(spec, q)?;
    let dec = spectral::decompose(&a);
    let lead = spectral::leading_block(&a, tol)?;
    let indices = dec.blocks[lead].indices.clone();
    let core = spec.restrict(&indices)?;
    let lambda = leading_eigenvalue(&core, q, tol)?;
    Ok(IrreducibleCore {
        indices,
        lambda,
        spec: core,
    })
}
