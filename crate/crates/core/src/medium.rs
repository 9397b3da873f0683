//! Domain, interface and piecewise coefficient, plus the travel-time metric
//! `|dx| / sqrt(c)` used to measure distances in the medium.
//!
//! Positions are `[f64; 2]`; 1D media ignore the second component.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
const GAUSS3: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

/// Relative tolerance used for "on the interface" and "inside the domain".
const GEOM_TOL: f64 = 1e-12;

/// Which side of the interface a point or evaluation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Minus,
    Plus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Minus => -1.0,
            Side::Plus => 1.0,
        }
    }
}

/// Side selector for coefficient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideQuery {
    Auto,
    Minus,
    Plus,
}

impl From<Side> for SideQuery {
    fn from(s: Side) -> Self {
        match s {
            Side::Minus => SideQuery::Minus,
            Side::Plus => SideQuery::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rectangle { x: (f64, f64), y: (f64, f64) },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }

    /// Lower and upper corners (second axis is `[0, 0]` in 1D).
    pub fn bounds(&self) -> (Point, Point) {
        match *self {
            Domain::Interval { a, b } => ([a, 0.0], [b, 0.0]),
            Domain::Rectangle { x, y } => ([x.0, y.0], [x.1, y.1]),
        }
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounds();
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    pub fn contains(&self, p: &Point) -> bool {
        let tol = GEOM_TOL * self.diameter().max(1.0);
        let (lo, hi) = self.bounds();
        let dim = self.dim();
        (0..dim).all(|k| p[k] >= lo[k] - tol && p[k] <= hi[k] + tol)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Domain::Interval { a, b } => a.is_finite() && b.is_finite() && b > a,
            Domain::Rectangle { x, y } => {
                x.0.is_finite() && x.1.is_finite() && y.0.is_finite() && y.1.is_finite() && x.1 > x.0 && y.1 > y.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("domain extents must be positive and finite: {self:?}")))
        }
    }
}

/// Interface between the two media. In 2D it is the graph `y = g(x)` of a
/// polyline, with `Ω+` above it.
#[derive(Debug, Clone, PartialEq)]
pub enum Interface {
    Point(f64),
    Graph(Vec<Point>),
}

impl Interface {
    /// Straight horizontal interface `y = level` spanning `[x0, x1]`.
    pub fn horizontal(x0: f64, x1: f64, level: f64) -> Self {
        Interface::Graph(vec![[x0, level], [x1, level]])
    }

    /// Height of the graph at `x` (linear interpolation, constant extension).
    pub fn graph_height(pts: &[Point], x: f64) -> f64 {
        if x <= pts[0][0] {
            return pts[0][1];
        }
        for w in pts.windows(2) {
            if x <= w[1][0] {
                let t = (x - w[0][0]) / (w[1][0] - w[0][0]);
                return w[0][1] + t * (w[1][1] - w[0][1]);
            }
        }
        pts[pts.len() - 1][1]
    }

    /// Signed level: negative in `Ω−`, positive in `Ω+`.
    pub fn level(&self, p: &Point) -> f64 {
        match self {
            Interface::Point(s) => p[0] - s,
            Interface::Graph(pts) => p[1] - Self::graph_height(pts, p[0]),
        }
    }

    /// Sample points with unit normals pointing from `Ω−` into `Ω+`.
    /// In 1D this is the single interface point with normal `+x`.
    pub fn samples(&self, per_segment: usize) -> Vec<(Point, Point)> {
        match self {
            Interface::Point(s) => vec![([*s, 0.0], [1.0, 0.0])],
            Interface::Graph(pts) => {
                let n = per_segment.max(1);
                let mut out = Vec::new();
                for (k, w) in pts.windows(2).enumerate() {
                    let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
                    let len = (dx * dx + dy * dy).sqrt();
                    let normal = [-dy / len, dx / len];
                    let start = if k == 0 { 0 } else { 1 };
                    for i in start..=n {
                        let t = i as f64 / n as f64;
                        out.push(([w[0][0] + t * dx, w[0][1] + t * dy], normal));
                    }
                }
                out
            }
        }
    }

    fn validate(&self, domain: &Domain) -> Result<()> {
        match (self, domain) {
            (Interface::Point(s), Domain::Interval { a, b }) => {
                if *s > *a && *s < *b {
                    Ok(())
                } else {
                    Err(Error::arg(format!("interface point {s} must lie strictly inside ({a}, {b})")))
                }
            }
            (Interface::Graph(pts), Domain::Rectangle { x, y }) => {
                if pts.len() < 2 {
                    return Err(Error::arg("graph interface needs at least two points"));
                }
                if pts.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::arg("graph interface abscissae must be strictly increasing"));
                }
                if pts[0][0] > x.0 || pts[pts.len() - 1][0] < x.1 {
                    return Err(Error::arg("graph interface must span the full width of the rectangle"));
                }
                if pts.iter().any(|p| p[1] <= y.0 || p[1] >= y.1) {
                    return Err(Error::arg("graph interface must lie strictly inside the rectangle"));
                }
                Ok(())
            }
            _ => Err(Error::arg("interface kind does not match domain dimension")),
        }
    }
}

/// One smooth branch of a coefficient field.
#[derive(Clone)]
pub enum Branch {
    Constant(f64),
    /// `value + gradient · p`
    Affine { value: f64, gradient: Point },
    Custom(Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Constant(c) => write!(f, "Constant({c})"),
            Branch::Affine { value, gradient } => write!(f, "Affine({value}, {gradient:?})"),
            Branch::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Branch {
    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            Branch::Constant(c) => *c,
            Branch::Affine { value, gradient } => value + gradient[0] * p[0] + gradient[1] * p[1],
            Branch::Custom(f) => f(p),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Branch::Constant(_))
    }

    /// Same branch multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Branch {
        match self {
            Branch::Constant(c) => Branch::Constant(c * k),
            Branch::Affine { value, gradient } => Branch::Affine {
                value: value * k,
                gradient: [gradient[0] * k, gradient[1] * k],
            },
            Branch::Custom(f) => {
                let f = f.clone();
                Branch::Custom(Arc::new(move |p| k * f(p)))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PiecewiseCoefficient {
    pub minus: Branch,
    pub plus: Branch,
    pub c_min: f64,
    pub c_max: f64,
}

impl PiecewiseCoefficient {
    pub fn constant(c_minus: f64, c_plus: f64) -> Self {
        let lo = c_minus.min(c_plus);
        let hi = c_minus.max(c_plus);
        PiecewiseCoefficient {
            minus: Branch::Constant(c_minus),
            plus: Branch::Constant(c_plus),
            c_min: 0.5 * lo,
            c_max: 2.0 * hi,
        }
    }

    pub fn branch(&self, side: Side) -> &Branch {
        match side {
            Side::Minus => &self.minus,
            Side::Plus => &self.plus,
        }
    }
}

/// Tangential form `Q(x, ξ') = b(x) |ξ'|²` (a scalar field since the
/// interface is one-dimensional in 2D), with declared bounds `b1 <= b <= b2`.
#[derive(Debug, Clone)]
pub struct TangentialForm {
    pub b: Branch,
    pub b1: f64,
    pub b2: f64,
}

impl Default for TangentialForm {
    fn default() -> Self {
        TangentialForm { b: Branch::Constant(1.0), b1: 1.0, b2: 1.0 }
    }
}

impl TangentialForm {
    pub fn q(&self, p: &Point, xi_prime_sq: f64) -> f64 {
        self.b.eval(p) * xi_prime_sq
    }
}

/// Closed subset of the domain used as an observation or control region.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Interval(f64, f64),
    Box { x: (f64, f64), y: (f64, f64) },
    Union(Vec<Region>),
    Everywhere,
}

impl Region {
    pub fn contains(&self, p: &Point) -> bool {
        let tol = 1e-12;
        match self {
            Region::Interval(a, b) => p[0] >= a - tol && p[0] <= b + tol,
            Region::Box { x, y } => p[0] >= x.0 - tol && p[0] <= x.1 + tol && p[1] >= y.0 - tol && p[1] <= y.1 + tol,
            Region::Union(parts) => parts.iter().any(|r| r.contains(p)),
            Region::Everywhere => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Medium {
    pub domain: Domain,
    pub interface: Interface,
    pub coefficient: PiecewiseCoefficient,
    pub tangential: TangentialForm,
}

/// Parameters of the grid graph used for distances.
#[derive(Debug, Clone, Copy)]
pub struct GraphSpec {
    /// Target node spacing.
    pub resolution: f64,
    /// Chebyshev radius of the edge stencil. Radius 1 is the 8-neighbor
    /// stencil in 2D; larger radii add every coprime offset up to that radius.
    pub stencil_radius: usize,
    /// Midpoint-rule subdivisions per straight piece of an edge.
    pub subdivisions: usize,
}

impl GraphSpec {
    pub fn new(resolution: f64) -> Self {
        GraphSpec { resolution, stencil_radius: 1, subdivisions: 4 }
    }

    pub fn with_stencil_radius(mut self, r: usize) -> Self {
        self.stencil_radius = r.max(1);
        self
    }
}

/// Shortest-path field on the grid nodes.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub shape: [usize; 2],
    pub origin: Point,
    pub spacing: Point,
    pub values: Vec<f64>,
}

impl DistanceField {
    pub fn node(&self, i: usize, j: usize) -> Point {
        [self.origin[0] + i as f64 * self.spacing[0], self.origin[1] + j as f64 * self.spacing[1]]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

impl Medium {
    pub fn new(domain: Domain, interface: Interface, coefficient: PiecewiseCoefficient) -> Result<Self> {
        Self::with_tangential(domain, interface, coefficient, TangentialForm::default())
    }

    pub fn with_tangential(
        domain: Domain,
        interface: Interface,
        coefficient: PiecewiseCoefficient,
        tangential: TangentialForm,
    ) -> Result<Self> {
        domain.validate()?;
        interface.validate(&domain)?;
        let m = Medium { domain, interface, coefficient, tangential };
        m.validate_coefficient()?;
        Ok(m)
    }

    /// 1D interval `[a, b]` with a point interface and constant branches.
    pub fn interval(a: f64, b: f64, s: f64, c_minus: f64, c_plus: f64) -> Result<Self> {
        Medium::new(
            Domain::Interval { a, b },
            Interface::Point(s),
            PiecewiseCoefficient::constant(c_minus, c_plus),
        )
    }

    /// Rectangle with horizontal interface `y = s` and constant branches.
    pub fn layered(x: (f64, f64), y: (f64, f64), s: f64, c_minus: f64, c_plus: f64) -> Result<Self> {
        Medium::new(
            Domain::Rectangle { x, y },
            Interface::horizontal(x.0, x.1, s),
            PiecewiseCoefficient::constant(c_minus, c_plus),
        )
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Copy of the medium with both coefficient branches multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Medium> {
        let c = &self.coefficient;
        let coefficient = PiecewiseCoefficient {
            minus: c.minus.scaled(k),
            plus: c.plus.scaled(k),
            c_min: c.c_min * k,
            c_max: c.c_max * k,
        };
        Medium::with_tangential(self.domain, self.interface.clone(), coefficient, self.tangential.clone())
    }

    fn validate_coefficient(&self) -> Result<()> {
        let c = &self.coefficient;
        if !(c.c_min > 0.0 && c.c_max > c.c_min) {
            return Err(Error::arg("need 0 < c_min < c_max"));
        }
        let t = &self.tangential;
        if !(t.b1 > 0.0 && t.b2 >= t.b1) {
            return Err(Error::arg("need 0 < b1 <= b2 for the tangential form"));
        }
        let (lo, hi) = self.domain.bounds();
        let n = 64;
        let ny = if self.dim() == 1 { 0 } else { n };
        for j in 0..=ny {
            for i in 0..=n {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / n.max(1) as f64,
                ];
                let lev = self.interface.level(&p);
                for side in [Side::Minus, Side::Plus] {
                    let on_side = match side {
                        Side::Minus => lev <= 0.0,
                        Side::Plus => lev >= 0.0,
                    };
                    if !on_side {
                        continue;
                    }
                    let v = c.branch(side).eval(&p);
                    if !(v > c.c_min && v < c.c_max) {
                        return Err(Error::arg(format!(
                            "coefficient {v} at {p:?} ({side:?}) outside ({}, {})",
                            c.c_min, c.c_max
                        )));
                    }
                }
                if self.dim() == 2 {
                    let b = t.b.eval(&p);
                    if !(b >= t.b1 && b <= t.b2) {
                        return Err(Error::arg(format!("tangential form b={b} at {p:?} outside [b1, b2]")));
                    }
                }
            }
        }
        Ok(())
    }

    fn interface_tol(&self) -> f64 {
        GEOM_TOL * self.domain.diameter().max(1.0)
    }

    /// Side of a point, `None` on the interface.
    pub fn side_of(&self, p: &Point) -> Option<Side> {
        let lev = self.interface.level(p);
        if lev.abs() <= self.interface_tol() {
            None
        } else if lev < 0.0 {
            Some(Side::Minus)
        } else {
            Some(Side::Plus)
        }
    }

    /// Coefficient at `p`. An explicit side evaluates that branch (which is
    /// also how one-sided extensions are taken); `Auto` resolves the side
    /// geometrically and refuses points on the interface.
    pub fn eval_c(&self, p: &Point, side: SideQuery) -> Result<f64> {
        if !self.domain.contains(p) {
            return Err(Error::Domain(format!("{p:?}")));
        }
        let side = match side {
            SideQuery::Minus => Side::Minus,
            SideQuery::Plus => Side::Plus,
            SideQuery::Auto => self
                .side_of(p)
                .ok_or_else(|| Error::Ambiguous(format!("{p:?} lies on the interface; pass an explicit side")))?,
        };
        Ok(self.coefficient.branch(side).eval(p))
    }

    /// Coefficient on a side without the domain check.
    #[inline]
    pub fn c_side(&self, p: &Point, side: Side) -> f64 {
        self.coefficient.branch(side).eval(p)
    }

    /// Parameters in `(0, 1)` where the segment `p -> q` crosses the interface.
    fn crossings(&self, p: &Point, q: &Point) -> Vec<f64> {
        let mut cuts = Vec::new();
        match &self.interface {
            Interface::Point(s) => {
                let (a, b) = (p[0] - s, q[0] - s);
                if (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0) {
                    cuts.push(a / (a - b));
                }
            }
            Interface::Graph(pts) => {
                // The level along the segment is piecewise linear with kinks
                // where x passes a polyline vertex.
                let mut knots = vec![0.0, 1.0];
                let dx = q[0] - p[0];
                if dx != 0.0 {
                    for v in pts {
                        let t = (v[0] - p[0]) / dx;
                        if t > 0.0 && t < 1.0 {
                            knots.push(t);
                        }
                    }
                }
                knots.sort_by(|a, b| a.total_cmp(b));
                let at = |t: f64| self.interface.level(&[p[0] + t * dx, p[1] + t * (q[1] - p[1])]);
                for w in knots.windows(2) {
                    let (la, lb) = (at(w[0]), at(w[1]));
                    if (la < 0.0 && lb > 0.0) || (la > 0.0 && lb < 0.0) {
                        cuts.push(w[0] + (w[1] - w[0]) * la / (la - lb));
                    }
                }
            }
        }
        cuts
    }

    /// Travel time along the straight segment `p -> q`, split at interface
    /// crossings, with `subdivisions` three-point Gauss cells per piece.
    pub fn segment_length(&self, p: &Point, q: &Point, subdivisions: usize) -> f64 {
        let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        if len == 0.0 {
            return 0.0;
        }
        let mut knots = vec![0.0];
        knots.extend(self.crossings(p, q));
        knots.push(1.0);
        let both_const = self.coefficient.minus.is_constant() && self.coefficient.plus.is_constant();
        let at = |t: f64| [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
        let tol = self.interface_tol();
        let mut total = 0.0;
        for w in knots.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 <= t0 {
                continue;
            }
            let mid = at(0.5 * (t0 + t1));
            let lev = self.interface.level(&mid);
            // A piece lying along the interface travels on the faster side.
            let side = if lev.abs() <= tol {
                let cm = self.c_side(&mid, Side::Minus);
                let cp = self.c_side(&mid, Side::Plus);
                if cp >= cm {
                    Side::Plus
                } else {
                    Side::Minus
                }
            } else if lev < 0.0 {
                Side::Minus
            } else {
                Side::Plus
            };
            let m = if both_const { 1 } else { subdivisions.max(1) };
            let dt = (t1 - t0) / m as f64;
            let mut s = 0.0;
            for k in 0..m {
                let centre = t0 + (k as f64 + 0.5) * dt;
                for (node, weight) in GAUSS3 {
                    let x = at(centre + 0.5 * dt * node);
                    s += weight / self.c_side(&x, side).sqrt();
                }
            }
            total += 0.5 * s * dt * len;
        }
        total
    }

    /// Length of a polyline in the metric `|dx|/sqrt(c)`.
    pub fn path_length(&self, path: &[Point]) -> Result<f64> {
        self.path_length_with(path, 64)
    }

    pub fn path_length_with(&self, path: &[Point], subdivisions: usize) -> Result<f64> {
        if path.is_empty() {
            return Err(Error::arg("empty polyline"));
        }
        for p in path {
            if !self.domain.contains(p) {
                return Err(Error::Domain(format!("path vertex {p:?}")));
            }
        }
        Ok(path.windows(2).map(|w| self.segment_length(&w[0], &w[1], subdivisions)).sum())
    }

    /// Approximate distance between two points by a shortest path on a grid
    /// graph whose edges are straight segments weighted by their travel time.
    pub fn distance(&self, x0: &Point, x1: &Point, spec: &GraphSpec) -> Result<f64> {
        let graph = Graph::new(self, spec)?;
        for p in [x0, x1] {
            if !self.domain.contains(p) {
                return Err(Error::Domain(format!("{p:?}")));
            }
        }
        if x0 == x1 {
            return Ok(0.0);
        }
        let sources = graph.attach(x0);
        let field = graph.dijkstra(&sources);
        let mut best = f64::INFINITY;
        if graph.within_stencil(x0, x1) {
            best = self.segment_length(x0, x1, spec.subdivisions);
        }
        for (node, w) in graph.attach(x1) {
            best = best.min(field[node] + w);
        }
        Ok(best)
    }

    /// Multi-source shortest-path field from every grid node inside `region`.
    pub fn distance_field(&self, region: &Region, spec: &GraphSpec) -> Result<DistanceField> {
        let graph = Graph::new(self, spec)?;
        let sources: Vec<(usize, f64)> =
            (0..graph.len()).filter(|&k| region.contains(&graph.point(k))).map(|k| (k, 0.0)).collect();
        if sources.is_empty() {
            return Err(Error::arg("region contains no grid node"));
        }
        let values = graph.dijkstra(&sources);
        Ok(DistanceField { shape: graph.shape, origin: graph.origin, spacing: graph.spacing, values })
    }

    /// `sup_x dist(x, E)` over the grid nodes.
    pub fn largest_distance(&self, region: &Region, spec: &GraphSpec) -> Result<f64> {
        Ok(self.distance_field(region, spec)?.max())
    }
}

struct Graph<'a> {
    medium: &'a Medium,
    shape: [usize; 2],
    origin: Point,
    spacing: Point,
    offsets: Vec<(i64, i64)>,
    radius: usize,
    subdivisions: usize,
}

#[derive(Copy, Clone, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl<'a> Graph<'a> {
    fn new(medium: &'a Medium, spec: &GraphSpec) -> Result<Self> {
        if !(spec.resolution > 0.0 && spec.resolution.is_finite()) {
            return Err(Error::arg(format!("resolution must be positive, got {}", spec.resolution)));
        }
        let (lo, hi) = medium.domain.bounds();
        let r = spec.stencil_radius.max(1) as i64;
        let (shape, spacing, offsets) = if medium.dim() == 1 {
            let n = ((hi[0] - lo[0]) / spec.resolution).ceil().max(1.0) as usize;
            ([n + 1, 1], [(hi[0] - lo[0]) / n as f64, 0.0], vec![(-1, 0), (1, 0)])
        } else {
            let nx = ((hi[0] - lo[0]) / spec.resolution).ceil().max(1.0) as usize;
            let ny = ((hi[1] - lo[1]) / spec.resolution).ceil().max(1.0) as usize;
            let mut off = Vec::new();
            for dj in -r..=r {
                for di in -r..=r {
                    if (di, dj) != (0, 0) && gcd(di, dj) == 1 {
                        off.push((di, dj));
                    }
                }
            }
            ([nx + 1, ny + 1], [(hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64], off)
        };
        Ok(Graph {
            medium,
            shape,
            origin: lo,
            spacing,
            offsets,
            radius: if medium.dim() == 1 { 1 } else { r as usize },
            subdivisions: spec.subdivisions,
        })
    }

    fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    fn point(&self, k: usize) -> Point {
        let (i, j) = (k % self.shape[0], k / self.shape[0]);
        [self.origin[0] + i as f64 * self.spacing[0], self.origin[1] + j as f64 * self.spacing[1]]
    }

    fn cell_of(&self, p: &Point) -> (i64, i64) {
        let i = ((p[0] - self.origin[0]) / self.spacing[0]).round() as i64;
        let j = if self.shape[1] > 1 { ((p[1] - self.origin[1]) / self.spacing[1]).round() as i64 } else { 0 };
        (i, j)
    }

    fn within_stencil(&self, a: &Point, b: &Point) -> bool {
        let (ia, ja) = self.cell_of(a);
        let (ib, jb) = self.cell_of(b);
        let r = self.radius as i64 + 1;
        (ia - ib).abs() <= r && (ja - jb).abs() <= r
    }

    /// Straight edges from an off-grid point to nearby nodes.
    fn attach(&self, p: &Point) -> Vec<(usize, f64)> {
        let (i0, j0) = self.cell_of(p);
        let r = self.radius as i64 + 1;
        let jr = if self.shape[1] > 1 { r } else { 0 };
        let mut out = Vec::new();
        for j in (j0 - jr)..=(j0 + jr) {
            for i in (i0 - r)..=(i0 + r) {
                if i < 0 || j < 0 || i >= self.shape[0] as i64 || j >= self.shape[1] as i64 {
                    continue;
                }
                let k = j as usize * self.shape[0] + i as usize;
                out.push((k, self.medium.segment_length(p, &self.point(k), self.subdivisions)));
            }
        }
        out
    }

    fn dijkstra(&self, sources: &[(usize, f64)]) -> Vec<f64> {
        let n = self.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        for &(k, d) in sources {
            if d < dist[k] {
                dist[k] = d;
                heap.push(Entry(d, k));
            }
        }
        let (nx, ny) = (self.shape[0] as i64, self.shape[1] as i64);
        while let Some(Entry(d, k)) = heap.pop() {
            if d > dist[k] {
                continue;
            }
            let (i, j) = ((k % self.shape[0]) as i64, (k / self.shape[0]) as i64);
            let p = self.point(k);
            for &(di, dj) in &self.offsets {
                let (ii, jj) = (i + di, j + dj);
                if ii < 0 || jj < 0 || ii >= nx || jj >= ny {
                    continue;
                }
                let kk = (jj * nx + ii) as usize;
                let w = self.medium.segment_length(&p, &self.point(kk), self.subdivisions);
                let nd = d + w;
                if nd < dist[kk] {
                    dist[kk] = nd;
                    heap.push(Entry(nd, kk));
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> Medium {
        Medium::interval(0.0, 1.0, 0.5, 1.0, 4.0).unwrap()
    }

    #[test]
    fn eval_c_sides() {
        let m = reference();
        assert_eq!(m.eval_c(&[0.25, 0.0], SideQuery::Auto).unwrap(), 1.0);
        assert_eq!(m.eval_c(&[0.75, 0.0], SideQuery::Auto).unwrap(), 4.0);
        assert_eq!(m.eval_c(&[0.5, 0.0], SideQuery::Plus).unwrap(), 4.0);
        assert!(matches!(m.eval_c(&[0.5, 0.0], SideQuery::Auto), Err(Error::Ambiguous(_))));
        assert!(matches!(m.eval_c(&[1.5, 0.0], SideQuery::Auto), Err(Error::Domain(_))));
    }

    #[test]
    fn path_lengths() {
        let m = reference();
        assert!((m.path_length(&[[0.0, 0.0], [0.5, 0.0]]).unwrap() - 0.5).abs() < 1e-15);
        assert!((m.path_length(&[[0.0, 0.0], [1.0, 0.0]]).unwrap() - 0.75).abs() < 1e-15);
        assert!((m.path_length(&[[0.6, 0.0], [0.9, 0.0]]).unwrap() - 0.15).abs() < 1e-15);
        assert!(m.path_length(&[]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Medium::interval(0.0, 1.0, 1.0, 1.0, 4.0).is_err());
        assert!(Medium::interval(1.0, 0.0, 0.5, 1.0, 4.0).is_err());
        let m = reference();
        assert!(m.distance(&[0.0, 0.0], &[1.0, 0.0], &GraphSpec::new(0.0)).is_err());
        assert!(m.largest_distance(&Region::Interval(2.0, 3.0), &GraphSpec::new(0.01)).is_err());
    }

    #[test]
    fn graph_normals_point_up() {
        let iface = Interface::Graph(vec![[0.0, 0.4], [0.5, 0.6], [1.0, 0.5]]);
        for (_, n) in iface.samples(4) {
            assert!((n[0] * n[0] + n[1] * n[1] - 1.0).abs() < 1e-14);
            assert!(n[1] > 0.0);
        }
    }

    #[test]
    fn crossing_of_polyline() {
        let m = Medium::new(
            Domain::Rectangle { x: (0.0, 1.0), y: (0.0, 1.0) },
            Interface::Graph(vec![[0.0, 0.4], [0.5, 0.6], [1.0, 0.4]]),
            PiecewiseCoefficient::constant(1.0, 4.0),
        )
        .unwrap();
        // vertical segment at x = 0.5 crosses at y = 0.6
        let l = m.segment_length(&[0.5, 0.0], &[0.5, 1.0], 1);
        assert!((l - (0.6 + 0.4 / 2.0)).abs() < 1e-14);
    }
}
