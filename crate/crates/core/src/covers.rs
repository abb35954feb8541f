//! Model covers: grid annuli and rectangles, refinements, cyclic covers, the
//! shortest essential cycle oracle, and the pillowcase model of the degree-4
//! Lattès map with its nested preimage annuli.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::Serialize;
use thiserror::Error;

use crate::modulus::{
    self, CombCurve, Cover, CurveFamily, CurveOracle, ModulusError, ModulusResult, SolverOptions,
};
use crate::multicurve::{self, MulticurveError, MulticurveSpec};
use crate::spectral::NonNegMatrix;

/// Default cap on the number of cells of a generated cover.
pub const DEFAULT_MAX_CELLS: usize = 100_000;

/// Environment variable overriding [`DEFAULT_MAX_CELLS`].
pub const MAX_CELLS_VAR: &str = "CONFDIM_MAX_CELLS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoverError {
    #[error("degenerate grid {columns}x{rows}")]
    Degenerate { columns: usize, rows: usize },
    #[error("operation needs a cylinder cover")]
    NotCylinder,
    #[error("covering degree must be at least 1")]
    ZeroDegree,
    #[error("refinement factor must be at least 2, got {0}")]
    RefineFactor(usize),
    #[error("cover would have {cells} cells, above the cap of {cap}")]
    CapExceeded { cells: usize, cap: usize },
    #[error("point ({0}, {1}) is not interior to the piece")]
    NotInterior(f64, f64),
    #[error("piece has empty interior")]
    EmptyPiece,
    #[error("rows {first}..{end} are not inside a height-{height} cover")]
    RowRange {
        first: usize,
        end: usize,
        height: usize,
    },
    #[error("weight vector has {got} entries, cover has {expected} cells")]
    WeightLength { expected: usize, got: usize },
    #[error("annuli at level {0} are not pairwise disjoint")]
    Overlap(usize),
    #[error("containment fails at level {level}: a piece meeting A is not inside B")]
    Containment { level: usize },
    #[error("model has {available} dynamical levels, {requested} requested")]
    Levels { available: usize, requested: usize },
    #[error("annulus at level {level} is not a union of full rows")]
    Ragged { level: usize },
    #[error(transparent)]
    Modulus(#[from] ModulusError),
    #[error(transparent)]
    Multicurve(#[from] MulticurveError),
}

/// Closed axis-parallel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    fn meets(&self, other: &Rect) -> bool {
        self.x0 <= other.x1 && other.x0 <= self.x1 && self.y0 <= other.y1 && other.y0 <= self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Columns are periodic.
    Cylinder {
        columns: usize,
        rows: usize,
    },
    Rectangle {
        columns: usize,
        rows: usize,
    },
    /// A cylinder whose bottom and top rows are folded onto themselves by
    /// `x -> -x`, giving the quotient of a torus by `z -> -z`.
    Pillowcase {
        columns: usize,
        rows: usize,
    },
    /// Arbitrary rectangles in the plane.
    Cells,
}

impl Geometry {
    fn grid(&self) -> Option<(usize, usize)> {
        match *self {
            Self::Cylinder { columns, rows }
            | Self::Rectangle { columns, rows }
            | Self::Pillowcase { columns, rows } => Some((columns, rows)),
            Self::Cells => None,
        }
    }
}

/// A cover whose pieces are closed rectangles; two pieces are adjacent when
/// they intersect, corners included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddedCover {
    geometry: Geometry,
    cells: Vec<Rect>,
    adjacency: Vec<Vec<usize>>,
}

impl EmbeddedCover {
    fn grid(geometry: Geometry, side: f64) -> Self {
        let (columns, rows) = geometry.grid().expect("grid geometry");
        let mut cells = Vec::with_capacity(columns * rows);
        for r in 0..rows {
            for c in 0..columns {
                let (x, y) = (c as f64 * side, r as f64 * side);
                cells.push(Rect::new(x, y, x + side, y + side));
            }
        }
        let mut adjacency = vec![BTreeSet::new(); columns * rows];
        let periodic = !matches!(geometry, Geometry::Rectangle { .. });
        for r in 0..rows {
            for c in 0..columns {
                let me = r * columns + c;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || rr >= rows as i64 {
                            continue;
                        }
                        let cc = if periodic {
                            cc.rem_euclid(columns as i64)
                        } else if cc < 0 || cc >= columns as i64 {
                            continue;
                        } else {
                            cc
                        };
                        let other = rr as usize * columns + cc as usize;
                        if other != me {
                            adjacency[me].insert(other);
                        }
                    }
                }
            }
        }
        if let Geometry::Pillowcase { .. } = geometry {
            for r in [0, rows - 1] {
                for c in 0..columns {
                    let me = r * columns + c;
                    let mirror = (columns - 1 - c) as i64;
                    for dc in -1i64..=1 {
                        let cc = (mirror + dc).rem_euclid(columns as i64) as usize;
                        let other = r * columns + cc;
                        if other != me {
                            adjacency[me].insert(other);
                            adjacency[other].insert(me);
                        }
                    }
                }
            }
        }
        Self {
            geometry,
            cells,
            adjacency: adjacency
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
        }
    }

    /// Cover by arbitrary closed rectangles.
    pub fn from_cells(cells: Vec<Rect>) -> Result<Self, CoverError> {
        if cells.is_empty() {
            return Err(CoverError::Degenerate {
                columns: 0,
                rows: 0,
            });
        }
        if cells.iter().any(|c| !(c.width() > 0.0 && c.height() > 0.0)) {
            return Err(CoverError::EmptyPiece);
        }
        let adjacency = (0..cells.len())
            .map(|i| {
                (0..cells.len())
                    .filter(|&j| j != i && cells[i].meets(&cells[j]))
                    .collect()
            })
            .collect();
        Ok(Self {
            geometry: Geometry::Cells,
            cells,
            adjacency,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn pieces(&self) -> usize {
        self.cells.len()
    }

    pub fn cover(&self) -> Cover {
        Cover::new(self.cells.len()).expect("covers are non-empty")
    }

    pub fn cells(&self) -> &[Rect] {
        &self.cells
    }

    pub fn neighbors(&self, piece: usize) -> &[usize] {
        &self.adjacency[piece]
    }

    /// Largest cell diameter.
    pub fn mesh(&self) -> f64 {
        self.cells.iter().map(Rect::diameter).fold(0.0, f64::max)
    }

    /// `(columns, rows)` of a grid cover.
    pub fn dimensions(&self) -> Option<(usize, usize)> {
        self.geometry.grid()
    }

    /// Index of the cell in column `c`, row `r` of a grid cover.
    pub fn index(&self, c: usize, r: usize) -> usize {
        let (columns, _) = self.dimensions().expect("grid cover");
        r * columns + c
    }

    /// `(column, row)` of a grid cell.
    pub fn position(&self, piece: usize) -> (usize, usize) {
        let (columns, _) = self.dimensions().expect("grid cover");
        (piece % columns, piece / columns)
    }

    /// Rows `first..first + rows` of a cylinder or pillowcase as a cylinder of
    /// their own, with the map from its cells back to this cover.
    pub fn sub_cylinder(
        &self,
        first: usize,
        rows: usize,
    ) -> Result<(EmbeddedCover, Vec<usize>), CoverError> {
        let (columns, height) = match self.geometry {
            Geometry::Cylinder { columns, rows } | Geometry::Pillowcase { columns, rows } => {
                (columns, rows)
            }
            _ => return Err(CoverError::NotCylinder),
        };
        if rows == 0 || first + rows > height {
            return Err(CoverError::RowRange {
                first,
                end: first + rows,
                height,
            });
        }
        let side = self.cells[0].width();
        let sub = EmbeddedCover::grid(Geometry::Cylinder { columns, rows }, side);
        let map = (0..columns * rows)
            .map(|i| (first + i / columns) * columns + i % columns)
            .collect();
        Ok((sub, map))
    }

    fn cylinder_dims(&self) -> Result<(usize, usize), CoverError> {
        match self.geometry {
            Geometry::Cylinder { columns, rows } => Ok((columns, rows)),
            _ => Err(CoverError::NotCylinder),
        }
    }
}

fn check_cells(columns: usize, rows: usize) -> Result<(), CoverError> {
    let cells = columns.saturating_mul(rows);
    let cap = max_cells();
    if cells > cap {
        return Err(CoverError::CapExceeded { cells, cap });
    }
    Ok(())
}

/// Cell cap from [`MAX_CELLS_VAR`], or the default.
pub fn max_cells() -> usize {
    std::env::var(MAX_CELLS_VAR)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_CELLS)
}

/// Unit-cell cylinder of circumference `c` and height `h`.
pub fn grid_annulus(c: usize, h: usize) -> Result<EmbeddedCover, CoverError> {
    if c < 3 || h < 1 {
        return Err(CoverError::Degenerate {
            columns: c,
            rows: h,
        });
    }
    check_cells(c, h)?;
    Ok(EmbeddedCover::grid(
        Geometry::Cylinder {
            columns: c,
            rows: h,
        },
        1.0,
    ))
}

/// Unit-cell rectangle with `m` columns and `n` rows.
pub fn grid_rectangle(m: usize, n: usize) -> Result<EmbeddedCover, CoverError> {
    if m < 1 || n < 1 {
        return Err(CoverError::Degenerate {
            columns: m,
            rows: n,
        });
    }
    check_cells(m, n)?;
    Ok(EmbeddedCover::grid(
        Geometry::Rectangle {
            columns: m,
            rows: n,
        },
        1.0,
    ))
}

/// Splits every cell into `k x k` cells.
pub fn refine(cover: &EmbeddedCover, k: usize) -> Result<EmbeddedCover, CoverError> {
    if k < 2 {
        return Err(CoverError::RefineFactor(k));
    }
    match cover.geometry {
        Geometry::Cells => {
            check_cells(cover.pieces(), k * k)?;
            let mut cells = Vec::with_capacity(cover.pieces() * k * k);
            for c in &cover.cells {
                let (w, h) = (c.width() / k as f64, c.height() / k as f64);
                for i in 0..k {
                    for j in 0..k {
                        let (x, y) = (c.x0 + i as f64 * w, c.y0 + j as f64 * h);
                        cells.push(Rect::new(x, y, x + w, y + h));
                    }
                }
            }
            EmbeddedCover::from_cells(cells)
        }
        g => {
            let (columns, rows) = g.grid().expect("grid geometry");
            let (columns, rows) = (columns * k, rows * k);
            check_cells(columns, rows)?;
            let geometry = match g {
                Geometry::Cylinder { .. } => Geometry::Cylinder { columns, rows },
                Geometry::Rectangle { .. } => Geometry::Rectangle { columns, rows },
                _ => Geometry::Pillowcase { columns, rows },
            };
            Ok(EmbeddedCover::grid(
                geometry,
                cover.cells[0].width() / k as f64,
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringMapData {
    pub source: EmbeddedCover,
    pub target: EmbeddedCover,
    /// Source piece -> target piece.
    pub piece_map: Vec<usize>,
    pub degree: usize,
}

/// Degree-`d` cyclic cover of a cylinder: circumference `d·c`, columns
/// reduced mod `c`.
pub fn cyclic_cover(annulus: &EmbeddedCover, d: usize) -> Result<CoveringMapData, CoverError> {
    let (c, h) = annulus.cylinder_dims()?;
    if d == 0 {
        return Err(CoverError::ZeroDegree);
    }
    check_cells(c * d, h)?;
    let side = annulus.cells[0].width();
    let source = EmbeddedCover::grid(
        Geometry::Cylinder {
            columns: c * d,
            rows: h,
        },
        side,
    );
    let piece_map = (0..source.pieces())
        .map(|i| {
            let (col, row) = source.position(i);
            row * c + col % c
        })
        .collect();
    Ok(CoveringMapData {
        source,
        target: annulus.clone(),
        piece_map,
        degree: d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InducedCover {
    pub cover: Cover,
    /// For each target piece, the source pieces over it.
    pub components: Vec<Vec<usize>>,
}

impl InducedCover {
    /// Preimage of a curve: every source piece over a piece of the curve.
    pub fn transport(&self, curve: &CombCurve) -> CombCurve {
        let pieces = curve
            .indices()
            .iter()
            .flat_map(|&s| self.components[s].iter().copied());
        CombCurve::new(pieces, self.cover.pieces()).expect("preimages of curves are non-empty")
    }
}

/// The cover of the source whose pieces are the components of preimages of
/// target pieces.
pub fn induced_cover(map: &CoveringMapData) -> InducedCover {
    let mut components = vec![Vec::new(); map.target.pieces()];
    for (s, &t) in map.piece_map.iter().enumerate() {
        components[t].push(s);
    }
    InducedCover {
        cover: map.source.cover(),
        components,
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Queued {
    dist: f64,
    node: usize,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cells of a minimal-weight nerve cycle winding once around the cylinder.
///
/// The cylinder is cut along the seam before column 0 and unrolled three
/// times; for each row `r` a shortest path runs from column `0` to its copy
/// in column `c`. The cheapest projection wins, ties going to the smaller
/// row and then to the lexicographically smaller cell set.
pub fn essential_cycle_oracle(
    annulus: &EmbeddedCover,
    rho: &[f64],
) -> Result<CombCurve, CoverError> {
    let (c, h) = annulus.cylinder_dims()?;
    if rho.len() != c * h {
        return Err(CoverError::WeightLength {
            expected: c * h,
            got: rho.len(),
        });
    }
    Ok(shortest_wrap(c, h, rho))
}

fn shortest_wrap(c: usize, h: usize, rho: &[f64]) -> CombCurve {
    let width = 3 * c;
    // lifted node (x, r), x in 0..3c stands for column x - c
    let cell = |node: usize| {
        let (x, r) = (node % width, node / width);
        r * c + x % c
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut dist = vec![f64::INFINITY; width * h];
    let mut prev = vec![usize::MAX; width * h];
    for seam in 0..h {
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        let source = seam * width + c;
        let target = seam * width + 2 * c;
        dist[source] = rho[cell(source)];
        let mut heap = BinaryHeap::new();
        heap.push(Queued {
            dist: dist[source],
            node: source,
        });
        while let Some(Queued { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            if node == target {
                break;
            }
            let (x, r) = ((node % width) as i64, (node / width) as i64);
            for dr in -1..=1 {
                for dx in -1..=1 {
                    let (xx, rr) = (x + dx, r + dr);
                    if (dr, dx) == (0, 0)
                        || xx < 0
                        || xx >= width as i64
                        || rr < 0
                        || rr >= h as i64
                    {
                        continue;
                    }
                    let next = rr as usize * width + xx as usize;
                    let nd = d + rho[cell(next)];
                    if nd < dist[next] {
                        dist[next] = nd;
                        prev[next] = node;
                        heap.push(Queued {
                            dist: nd,
                            node: next,
                        });
                    }
                }
            }
        }
        let mut cells = BTreeSet::new();
        let mut node = prev[target];
        while node != usize::MAX {
            cells.insert(cell(node));
            node = prev[node];
        }
        let cells: Vec<usize> = cells.into_iter().collect();
        let weight: f64 = cells.iter().map(|&s| rho[s]).sum();
        let better = match &best {
            None => true,
            Some((w, set)) => weight < *w || (weight == *w && cells < *set),
        };
        if better {
            best = Some((weight, cells));
        }
    }
    let (_, cells) = best.expect("height is at least 1");
    CombCurve::new(cells, c * h).expect("a wrap visits at least c cells")
}

/// The family of essential cycles of a cylinder cover, as a separation oracle.
#[derive(Debug, Clone)]
pub struct EssentialCycles {
    columns: usize,
    rows: usize,
}

impl EssentialCycles {
    pub fn new(annulus: &EmbeddedCover) -> Result<Self, CoverError> {
        let (columns, rows) = annulus.cylinder_dims()?;
        Ok(Self { columns, rows })
    }
}

impl CurveOracle for EssentialCycles {
    fn shortest(&self, rho: &[f64]) -> CombCurve {
        shortest_wrap(self.columns, self.rows, rho)
    }
}

/// Modulus of the essential cycles of a cylinder cover.
pub fn annulus_modulus(
    annulus: &EmbeddedCover,
    q: f64,
    tol: f64,
) -> Result<ModulusResult, CoverError> {
    annulus_modulus_with(
        annulus,
        q,
        SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    )
}

pub fn annulus_modulus_with(
    annulus: &EmbeddedCover,
    q: f64,
    opts: SolverOptions,
) -> Result<ModulusResult, CoverError> {
    let family = CurveFamily::Oracle(Box::new(EssentialCycles::new(annulus)?));
    Ok(modulus::modulus_with(&annulus.cover(), &family, q, opts)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub circumference: usize,
    pub height: usize,
    pub degree: usize,
    pub q: f64,
    pub base: f64,
    pub cover: f64,
    pub ratio: f64,
    pub expected: f64,
    pub rel_error: f64,
    pub pass: bool,
}

/// Compares the annulus modulus of the degree-`d` cyclic cover with
/// `d^{1-Q}` times that of the base.
pub fn verify_covering_scaling(
    annulus: &EmbeddedCover,
    d: usize,
    q: f64,
    tol: f64,
) -> Result<ScalingReport, CoverError> {
    let (c, h) = annulus.cylinder_dims()?;
    let lift = cyclic_cover(annulus, d)?;
    let solver_tol = (tol * 1e-2).max(1e-12);
    let base = annulus_modulus(annulus, q, solver_tol)?.value;
    let cover = annulus_modulus(&lift.source, q, solver_tol)?.value;
    let expected = (d as f64).powf(1.0 - q);
    let ratio = cover / base;
    let rel_error = (ratio - expected).abs() / expected;
    Ok(ScalingReport {
        circumference: c,
        height: h,
        degree: d,
        q,
        base,
        cover,
        ratio,
        expected,
        rel_error,
        pass: rel_error <= tol,
    })
}

/// Horizontal band `|y - center| < half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub center: f64,
    pub half_width: f64,
}

impl Band {
    fn meets(&self, r: &Rect) -> bool {
        r.y0 < self.center + self.half_width && r.y1 > self.center - self.half_width
    }

    fn contains(&self, r: &Rect) -> bool {
        r.y0 > self.center - self.half_width && r.y1 < self.center + self.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkedAnnulus {
    /// Index of the curve of the multicurve this annulus lies over.
    pub curve: usize,
    /// Cells of the level cover making up the annulus.
    pub cells: Vec<usize>,
    pub first_row: usize,
    pub rows: usize,
    /// Degree of the iterate of the map from this annulus onto the base annulus.
    pub degree: u64,
    /// Index of the image annulus one level down.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverDynamics {
    /// `U_0, U_1, ...`; the cell side halves from each level to the next.
    pub levels: Vec<EmbeddedCover>,
    /// `refinements[k]`: cell of `U_{k+1}` -> the cell of `U_k` containing it.
    pub refinements: Vec<Vec<usize>>,
    /// `dynamics[k]`: cell of `U_{k+1}` -> its image cell in `U_k`.
    pub dynamics: Vec<Vec<usize>>,
    /// First level at which every cell meeting `A` lies in `B`.
    pub n0: usize,
    pub base_band: Band,
    pub outer_band: Band,
    /// `annuli[n]`: preimage annuli at level `n0 + n`.
    pub annuli: Vec<Vec<MarkedAnnulus>>,
}

impl CoverDynamics {
    /// Number of dynamical levels above `n0`.
    pub fn depth(&self) -> usize {
        self.annuli.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LattesModel {
    pub dynamics: CoverDynamics,
    pub spec: MulticurveSpec,
}

const LATTES_COLUMNS: usize = 4;
const LATTES_ROWS: usize = 2;
const MAX_N0_SCAN: usize = 16;

/// Pillowcase model of the degree-4 Lattès map `z -> 2z`.
///
/// Level `k` is a pillowcase of circumference 2 and height 1 cut into
/// `4·2^k x 2·2^k` square cells; the map doubles both coordinates and folds
/// the upper half back. The core curve is `y = 1/2`, with `A` and `B` the
/// bands of half-width `1/8` and `3/8` about it. Preimage annuli are marked
/// on levels `n0..=n0 + n`.
pub fn lattes_model(n: usize) -> Result<LattesModel, CoverError> {
    lattes_model_capped(n, max_cells())
}

pub fn lattes_model_capped(n: usize, cap: usize) -> Result<LattesModel, CoverError> {
    let base_band = Band {
        center: 0.5,
        half_width: 0.125,
    };
    let outer_band = Band {
        center: 0.5,
        half_width: 0.375,
    };
    let size = |k: usize| (LATTES_COLUMNS * LATTES_ROWS) << (2 * k);

    let mut n0 = None;
    for k in 0..MAX_N0_SCAN {
        let level = pillowcase(k);
        let ok = level
            .cells
            .iter()
            .filter(|c| base_band.meets(c))
            .all(|c| outer_band.contains(c));
        if ok {
            n0 = Some(k);
            break;
        }
    }
    let n0 = n0.ok_or(CoverError::Containment { level: MAX_N0_SCAN })?;
    let top = n0 + n;
    if size(top) > cap {
        return Err(CoverError::CapExceeded {
            cells: size(top),
            cap,
        });
    }

    let levels: Vec<EmbeddedCover> = (0..=top).map(pillowcase).collect();
    let mut refinements: Vec<Vec<usize>> = Vec::with_capacity(top);
    let mut dynamics: Vec<Vec<usize>> = Vec::with_capacity(top);
    for k in 0..top {
        let (fine, coarse) = (&levels[k + 1], &levels[k]);
        let (cols, rows) = coarse.dimensions().expect("grid");
        refinements.push(
            (0..fine.pieces())
                .map(|i| {
                    let (c, r) = fine.position(i);
                    coarse.index(c / 2, r / 2)
                })
                .collect(),
        );
        dynamics.push(
            (0..fine.pieces())
                .map(|i| {
                    let (c, r) = fine.position(i);
                    if r < rows {
                        coarse.index(c % cols, r)
                    } else {
                        let folded = (cols - 1 - c % cols) % cols;
                        coarse.index(folded, 2 * rows - 1 - r)
                    }
                })
                .collect(),
        );
    }

    // base annulus: cells of U_{n0} meeting A
    let base = &levels[n0];
    let cells: Vec<usize> = (0..base.pieces())
        .filter(|&i| base_band.meets(&base.cells[i]))
        .collect();
    let mut annuli = vec![vec![
        marked(base, 0, cells, 1, None).ok_or(CoverError::Ragged { level: n0 })?
    ]];

    for m in 1..=n {
        let level = n0 + m;
        let cover = &levels[level];
        let f = &dynamics[level - 1];
        let mut next = Vec::new();
        for (p, parent) in annuli[m - 1].iter().enumerate() {
            let inside: BTreeSet<usize> = parent.cells.iter().copied().collect();
            let pre: Vec<usize> = (0..cover.pieces())
                .filter(|&i| inside.contains(&f[i]))
                .collect();
            for comp in components(cover, &pre) {
                let degree = (comp.len() / parent.cells.len()) as u64;
                let a = marked(cover, parent.curve, comp, parent.degree * degree, Some(p))
                    .ok_or(CoverError::Ragged { level })?;
                next.push(a);
            }
        }
        next.sort_by_key(|a| a.first_row);
        let mut seen = BTreeSet::new();
        for a in &next {
            for &s in &a.cells {
                if !seen.insert(s) {
                    return Err(CoverError::Overlap(level));
                }
            }
        }
        annuli.push(next);
    }

    Ok(LattesModel {
        dynamics: CoverDynamics {
            levels,
            refinements,
            dynamics,
            n0,
            base_band,
            outer_band,
            annuli,
        },
        spec: multicurve::lattes_spec(),
    })
}

fn pillowcase(k: usize) -> EmbeddedCover {
    EmbeddedCover::grid(
        Geometry::Pillowcase {
            columns: LATTES_COLUMNS << k,
            rows: LATTES_ROWS << k,
        },
        0.5 / (1u64 << k) as f64,
    )
}

/// Connected components of the nerve restricted to `set`, each sorted.
fn components(cover: &EmbeddedCover, set: &[usize]) -> Vec<Vec<usize>> {
    let inside: BTreeSet<usize> = set.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &start in set {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &w in cover.neighbors(v) {
                if inside.contains(&w) && seen.insert(w) {
                    comp.push(w);
                    stack.push(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Marks `cells` as an annulus if they are a block of full rows.
fn marked(
    cover: &EmbeddedCover,
    curve: usize,
    mut cells: Vec<usize>,
    degree: u64,
    parent: Option<usize>,
) -> Option<MarkedAnnulus> {
    let (columns, _) = cover.dimensions()?;
    cells.sort_unstable();
    let first = *cells.first()?;
    if first % columns != 0 || !cells.len().is_multiple_of(columns) {
        return None;
    }
    let first_row = first / columns;
    let rows = cells.len() / columns;
    if cells.iter().enumerate().any(|(k, &s)| s != first + k) {
        return None;
    }
    Some(MarkedAnnulus {
        curve,
        cells,
        first_row,
        rows,
        degree,
        parent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthRow {
    pub n: usize,
    pub level: usize,
    pub annuli: usize,
    /// Sum of the moduli of the preimage annuli.
    pub left: f64,
    /// `|f_{Γ,Q}^n v|_1`.
    pub right: f64,
    /// Largest deviation from `mod(A(γ~)) = deg^{1-Q} mod(A(f(γ~)))`.
    pub scaling_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub q: f64,
    pub n0: usize,
    /// Moduli of the base annuli `A_j` at level `n0`.
    pub base: Vec<f64>,
    pub rows: Vec<GrowthRow>,
    pub pass: bool,
}

/// Checks `Σ mod_Q(A(γ~), U_{n0+n}) >= |f_{Γ,Q}^n v|_1` for `n <= n_max`,
/// where `v_j = mod_Q(A_j, U_{n0})`, together with the exact scaling of each
/// preimage annulus against its image.
pub fn verify_growth_bound(
    model: &CoverDynamics,
    spec: &MulticurveSpec,
    q: f64,
    n_max: usize,
    tol: f64,
) -> Result<GrowthReport, CoverError> {
    if n_max > model.depth() {
        return Err(CoverError::Levels {
            available: model.depth(),
            requested: n_max,
        });
    }
    let base_level = &model.levels[model.n0];
    let contained = base_level
        .cells
        .iter()
        .filter(|c| model.base_band.meets(c))
        .all(|c| model.outer_band.contains(c));
    if !contained {
        return Err(CoverError::Containment { level: model.n0 });
    }

    let solver_tol = (tol * 1e-2).max(1e-12);
    let annulus_mod = |level: usize, a: &MarkedAnnulus| -> Result<f64, CoverError> {
        let (sub, _) = model.levels[level].sub_cylinder(a.first_row, a.rows)?;
        Ok(annulus_modulus(&sub, q, solver_tol)?.value)
    };

    let m = spec.len();
    let mut v = vec![0.0; m];
    let mut moduli: Vec<Vec<f64>> = Vec::with_capacity(n_max + 1);
    moduli.push(Vec::new());
    for a in &model.annuli[0] {
        let value = annulus_mod(model.n0, a)?;
        v[a.curve] += value;
        moduli[0].push(value);
    }
    let f = multicurve::transition_matrix(spec, q)?;
    let mut power = NonNegMatrix::identity(m);
    let mut rows = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let level = model.n0 + n;
        if n > 0 {
            let here = model.annuli[n]
                .iter()
                .map(|a| annulus_mod(level, a))
                .collect::<Result<Vec<_>, _>>()?;
            moduli.push(here);
            power = power.mul(&f);
        }
        let left: f64 = moduli[n].iter().sum();
        let right: f64 = power.mul_vec(&v).iter().sum();
        let mut scaling_error: f64 = 0.0;
        if n > 0 {
            for (a, &value) in model.annuli[n].iter().zip(&moduli[n]) {
                let p = a.parent.expect("annuli above n0 have parents");
                let parent = &model.annuli[n - 1][p];
                let step = (a.degree / parent.degree) as f64;
                let expected = step.powf(1.0 - q) * moduli[n - 1][p];
                scaling_error = scaling_error.max((value - expected).abs());
            }
        }
        rows.push(GrowthRow {
            n,
            level,
            annuli: model.annuli[n].len(),
            left,
            right,
            scaling_error,
            pass: left >= right - tol && scaling_error <= tol,
        });
    }
    Ok(GrowthReport {
        q,
        n0: model.n0,
        base: v,
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

/// A piece for [`roundness`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Shape {
    Rect(Rect),
    Disk { cx: f64, cy: f64, r: f64 },
}

/// `L(A, x) / l(A, x)`: distance to the farthest point of `A` over the
/// distance to its boundary.
pub fn roundness(shape: &Shape, x: (f64, f64)) -> Result<f64, CoverError> {
    let (px, py) = x;
    match *shape {
        Shape::Rect(r) => {
            if !(r.width() > 0.0 && r.height() > 0.0) {
                return Err(CoverError::EmptyPiece);
            }
            let inner = (px - r.x0).min(r.x1 - px).min(py - r.y0).min(r.y1 - py);
            if !(inner > 0.0) {
                return Err(CoverError::NotInterior(px, py));
            }
            let dx = (px - r.x0).max(r.x1 - px);
            let dy = (py - r.y0).max(r.y1 - py);
            Ok(dx.hypot(dy) / inner)
        }
        Shape::Disk { cx, cy, r } => {
            if !(r > 0.0) {
                return Err(CoverError::EmptyPiece);
            }
            let d = (px - cx).hypot(py - cy);
            if !(d < r) {
                return Err(CoverError::NotInterior(px, py));
            }
            Ok((d + r) / (r - d))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasipackingReport {
    /// Smallest `K` with `s ⊂ B(x_s, K r_s)` for every piece.
    pub k: f64,
    pub pass: bool,
    /// First pair of pieces whose inner balls meet.
    pub conflict: Option<(usize, usize)>,
}

/// Inner balls are centered at the cell centers with radius half the shorter
/// side; `K` is the largest ratio of half-diagonal to that radius.
pub fn quasipacking_check(cover: &EmbeddedCover) -> QuasipackingReport {
    let radius = |c: &Rect| 0.5 * c.width().min(c.height());
    let k = cover
        .cells
        .iter()
        .map(|c| 0.5 * c.diameter() / radius(c))
        .fold(0.0, f64::max);
    let (period, fold) = match cover.geometry {
        Geometry::Cylinder { columns, .. } => (Some(columns as f64 * cover.cells[0].width()), None),
        Geometry::Pillowcase { columns, rows } => {
            let side = cover.cells[0].width();
            (Some(columns as f64 * side), Some(rows as f64 * side))
        }
        _ => (None, None),
    };
    let distance = |a: (f64, f64), b: (f64, f64)| {
        let plain = |bx: f64, by: f64| {
            let mut dx = (a.0 - bx).abs();
            if let Some(w) = period {
                dx = dx.rem_euclid(w);
                dx = dx.min(w - dx);
            }
            dx.hypot(a.1 - by)
        };
        let mut d = plain(b.0, b.1);
        if let Some(height) = fold {
            // reflections across the folded top and bottom edges
            d = d
                .min(plain(-b.0, -b.1))
                .min(plain(-b.0, 2.0 * height - b.1));
        }
        d
    };
    let centers: Vec<(f64, f64)> = cover.cells.iter().map(Rect::center).collect();
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let reach = radius(&cover.cells[i]) + radius(&cover.cells[j]);
            if distance(centers[i], centers[j]) < reach * (1.0 - 1e-12) {
                return QuasipackingReport {
                    k,
                    pass: false,
                    conflict: Some((i, j)),
                };
            }
        }
    }
    QuasipackingReport {
        k,
        pass: true,
        conflict: None,
    }
}
