//! Flux-conservative discretisation of `A = -div(c grad)` with Dirichlet
//! boundary and the norms built from its spectral calculus.
//!
//! Grids are vertex-centred and include the boundary; the unknowns are the
//! interior nodes, stored row-major (`x` fastest). The interface must sit on
//! grid nodes: a node in 1D, a full grid row `y = s` in 2D. Interface nodes
//! are shared by both sides, so displacement continuity holds by construction,
//! and every face carries a single coefficient, so the discrete flux through
//! it is single-valued.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::medium::{Interface, Medium, Point, Side};

/// Uniform vertex-centred grid covering the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub origin: Point,
    pub spacing: Point,
    /// Number of cells per axis (`cells[1] == 0` in 1D).
    pub cells: [usize; 2],
}

impl Grid {
    /// Uniform grid with `cells` cells per axis over the medium's domain.
    pub fn new(medium: &Medium, cells: &[usize]) -> Result<Grid> {
        let (lo, hi) = medium.domain.bounds();
        match (medium.dim(), cells) {
            (1, [n]) if *n >= 2 => Ok(Grid {
                dim: 1,
                origin: lo,
                spacing: [(hi[0] - lo[0]) / *n as f64, 0.0],
                cells: [*n, 0],
            }),
            (2, [nx, ny]) if *nx >= 2 && *ny >= 2 => Ok(Grid {
                dim: 2,
                origin: lo,
                spacing: [(hi[0] - lo[0]) / *nx as f64, (hi[1] - lo[1]) / *ny as f64],
                cells: [*nx, *ny],
            }),
            (d, c) => Err(Error::arg(format!("{d}D medium needs {d} cell counts >= 2, got {c:?}"))),
        }
    }

    /// Interior node counts per axis.
    pub fn interior_shape(&self) -> [usize; 2] {
        if self.dim == 1 {
            [self.cells[0] - 1, 1]
        } else {
            [self.cells[0] - 1, self.cells[1] - 1]
        }
    }

    pub fn n_interior(&self) -> usize {
        let s = self.interior_shape();
        s[0] * s[1]
    }

    /// Node counts per axis including the boundary.
    pub fn node_shape(&self) -> [usize; 2] {
        if self.dim == 1 {
            [self.cells[0] + 1, 1]
        } else {
            [self.cells[0] + 1, self.cells[1] + 1]
        }
    }

    /// Volume element of the discrete `L²` inner product.
    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.spacing[0]
        } else {
            self.spacing[0] * self.spacing[1]
        }
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        [self.origin[0] + i as f64 * self.spacing[0], self.origin[1] + j as f64 * self.spacing[1]]
    }

    /// Position of the interior unknown with flat index `k`.
    pub fn interior_point(&self, k: usize) -> Point {
        let (i, j) = self.interior_ij(k);
        self.node(i, j)
    }

    /// Node indices `(i, j)` of interior unknown `k`.
    pub fn interior_ij(&self, k: usize) -> (usize, usize) {
        if self.dim == 1 {
            (k + 1, 0)
        } else {
            let nx = self.cells[0] - 1;
            (k % nx + 1, k / nx + 1)
        }
    }

    /// Flat interior index of node `(i, j)`, if interior.
    pub fn interior_index(&self, i: usize, j: usize) -> Option<usize> {
        if i == 0 || i >= self.cells[0] {
            return None;
        }
        if self.dim == 1 {
            return Some(i - 1);
        }
        if j == 0 || j >= self.cells[1] {
            return None;
        }
        Some((j - 1) * (self.cells[0] - 1) + (i - 1))
    }

    /// Evaluate `f` at every interior node.
    pub fn sample(&self, f: impl Fn(&Point) -> f64) -> Vec<f64> {
        (0..self.n_interior()).map(|k| f(&self.interior_point(k))).collect()
    }
}

/// Discrete operator `A` on the interior unknowns.
#[derive(Debug)]
pub struct DiscreteOperator {
    pub grid: Grid,
    /// Node index of the interface along the normal axis.
    pub interface_index: usize,
    /// Coefficients on `x`-faces: face `(i, j)-(i+1, j)` at `j * cells_x + i`.
    fx: Vec<f64>,
    /// Coefficients on `y`-faces: face `(i, j)-(i, j+1)` at `j * (cells_x + 1) + i`.
    fy: Vec<f64>,
    /// Branch values `(c_minus, c_plus)` at the interface nodes.
    c_interface: Vec<(f64, f64)>,
    lambda_max: OnceLock<f64>,
}

impl Clone for DiscreteOperator {
    fn clone(&self) -> Self {
        let lm = OnceLock::new();
        if let Some(v) = self.lambda_max.get() {
            let _ = lm.set(*v);
        }
        DiscreteOperator {
            grid: self.grid,
            interface_index: self.interface_index,
            fx: self.fx.clone(),
            fy: self.fy.clone(),
            c_interface: self.c_interface.clone(),
            lambda_max: lm,
        }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Interface position on the normal axis as a node index, if aligned.
fn aligned_index(origin: f64, h: f64, s: f64) -> Option<usize> {
    let r = (s - origin) / h;
    let k = r.round();
    if (r - k).abs() <= 1e-9 * r.abs().max(1.0) && k >= 1.0 {
        Some(k as usize)
    } else {
        None
    }
}

/// Assemble the operator on `grid`.
pub fn assemble(medium: &Medium, grid: &Grid) -> Result<DiscreteOperator> {
    match (&medium.interface, grid.dim) {
        (Interface::Point(s), 1) => {
            let h = grid.spacing[0];
            let n = grid.cells[0];
            let k = aligned_index(grid.origin[0], h, *s).filter(|&k| k < n).ok_or_else(|| Error::Geometry {
                message: format!("interface {s} is not a grid node (h = {h})"),
                hint: format!(
                    "choose a cell count n with n * ({} - {}) / ({} - {}) an integer",
                    s,
                    grid.origin[0],
                    grid.origin[0] + n as f64 * h,
                    grid.origin[0]
                ),
            })?;
            let mut fx = Vec::with_capacity(n);
            for i in 0..n {
                let side = if i < k { Side::Minus } else { Side::Plus };
                let a = medium.c_side(&grid.node(i, 0), side);
                let b = medium.c_side(&grid.node(i + 1, 0), side);
                fx.push(harmonic(a, b));
            }
            let p = grid.node(k, 0);
            let c_interface = vec![(medium.c_side(&p, Side::Minus), medium.c_side(&p, Side::Plus))];
            Ok(DiscreteOperator {
                grid: *grid,
                interface_index: k,
                fx,
                fy: Vec::new(),
                c_interface,
                lambda_max: OnceLock::new(),
            })
        }
        (Interface::Graph(pts), 2) => {
            let level = pts[0][1];
            let straight = pts.iter().all(|p| (p[1] - level).abs() <= 1e-12 * level.abs().max(1.0));
            let hy = grid.spacing[1];
            let ny = grid.cells[1];
            let hint = || {
                format!(
                    "use a horizontal interface y = s and a y cell count n with n * (s - {}) / {} an integer",
                    grid.origin[1],
                    ny as f64 * hy
                )
            };
            if !straight {
                return Err(Error::Geometry {
                    message: "only horizontal straight interfaces can be aligned with grid faces".into(),
                    hint: hint(),
                });
            }
            let k = aligned_index(grid.origin[1], hy, level).filter(|&k| k < ny).ok_or_else(|| Error::Geometry {
                message: format!("interface y = {level} is not a grid row (hy = {hy})"),
                hint: hint(),
            })?;
            let (cx, cy) = (grid.cells[0], grid.cells[1]);
            let side_of_row = |j: usize| if j < k { Side::Minus } else { Side::Plus };
            let mut fx = Vec::with_capacity(cx * (cy + 1));
            for j in 0..=cy {
                for i in 0..cx {
                    let (p, q) = (grid.node(i, j), grid.node(i + 1, j));
                    let c = if j == k {
                        // The control volume of this face straddles both media.
                        let hm = harmonic(medium.c_side(&p, Side::Minus), medium.c_side(&q, Side::Minus));
                        let hp = harmonic(medium.c_side(&p, Side::Plus), medium.c_side(&q, Side::Plus));
                        0.5 * (hm + hp)
                    } else {
                        let s = side_of_row(j);
                        harmonic(medium.c_side(&p, s), medium.c_side(&q, s))
                    };
                    fx.push(c);
                }
            }
            let mut fy = Vec::with_capacity(cy * (cx + 1));
            for j in 0..cy {
                let s = side_of_row(j);
                for i in 0..=cx {
                    let (p, q) = (grid.node(i, j), grid.node(i, j + 1));
                    fy.push(harmonic(medium.c_side(&p, s), medium.c_side(&q, s)));
                }
            }
            let c_interface = (0..=cx)
                .map(|i| {
                    let p = grid.node(i, k);
                    (medium.c_side(&p, Side::Minus), medium.c_side(&p, Side::Plus))
                })
                .collect();
            Ok(DiscreteOperator {
                grid: *grid,
                interface_index: k,
                fx,
                fy,
                c_interface,
                lambda_max: OnceLock::new(),
            })
        }
        _ => Err(Error::arg("interface kind does not match grid dimension")),
    }
}

/// One-sided interface diagnostics of a grid function.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InterfaceJumps {
    /// `|u(S-) - u(S+)|`
    pub displacement: f64,
    /// Jump of the scheme's own interface flux read from either side.
    pub harmonic_flux: f64,
    /// `|c+ D+ u - c- D- u|` with first-order one-sided differences.
    pub reconstructed_flux: f64,
}

impl InterfaceJumps {
    pub fn max(self, o: InterfaceJumps) -> InterfaceJumps {
        InterfaceJumps {
            displacement: self.displacement.max(o.displacement),
            harmonic_flux: self.harmonic_flux.max(o.harmonic_flux),
            reconstructed_flux: self.reconstructed_flux.max(o.reconstructed_flux),
        }
    }
}

impl DiscreteOperator {
    pub fn dim(&self) -> usize {
        self.grid.n_interior()
    }

    /// `y = A u`.
    pub fn apply_into(&self, u: &[f64], y: &mut [f64]) {
        let g = &self.grid;
        if g.dim == 1 {
            let n = g.cells[0] - 1;
            let inv = 1.0 / (g.spacing[0] * g.spacing[0]);
            for k in 0..n {
                let ul = if k > 0 { u[k - 1] } else { 0.0 };
                let ur = if k + 1 < n { u[k + 1] } else { 0.0 };
                let (cl, cr) = (self.fx[k], self.fx[k + 1]);
                y[k] = (cl * (u[k] - ul) + cr * (u[k] - ur)) * inv;
            }
        } else {
            let (cx, cy) = (g.cells[0], g.cells[1]);
            let (nx, ny) = (cx - 1, cy - 1);
            let ix = 1.0 / (g.spacing[0] * g.spacing[0]);
            let iy = 1.0 / (g.spacing[1] * g.spacing[1]);
            for jj in 0..ny {
                let j = jj + 1;
                for ii in 0..nx {
                    let i = ii + 1;
                    let k = jj * nx + ii;
                    let uc = u[k];
                    let ul = if ii > 0 { u[k - 1] } else { 0.0 };
                    let ur = if ii + 1 < nx { u[k + 1] } else { 0.0 };
                    let ud = if jj > 0 { u[k - nx] } else { 0.0 };
                    let uu = if jj + 1 < ny { u[k + nx] } else { 0.0 };
                    let cl = self.fx[j * cx + i - 1];
                    let cr = self.fx[j * cx + i];
                    let cd = self.fy[(j - 1) * (cx + 1) + i];
                    let cu = self.fy[j * (cx + 1) + i];
                    y[k] = (cl * (uc - ul) + cr * (uc - ur)) * ix + (cd * (uc - ud) + cu * (uc - uu)) * iy;
                }
            }
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; u.len()];
        self.apply_into(u, &mut y);
        y
    }

    /// Apply the stencil to a full nodal vector (boundary values included)
    /// and return the interior residual.
    pub fn apply_with_boundary(&self, u_full: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let ns = g.node_shape();
        let at = |i: usize, j: usize| u_full[j * ns[0] + i];
        (0..g.n_interior())
            .map(|k| {
                let (i, j) = g.interior_ij(k);
                if g.dim == 1 {
                    let inv = 1.0 / (g.spacing[0] * g.spacing[0]);
                    (self.fx[i - 1] * (at(i, 0) - at(i - 1, 0)) + self.fx[i] * (at(i, 0) - at(i + 1, 0))) * inv
                } else {
                    let cx = g.cells[0];
                    let ix = 1.0 / (g.spacing[0] * g.spacing[0]);
                    let iy = 1.0 / (g.spacing[1] * g.spacing[1]);
                    let uc = at(i, j);
                    (self.fx[j * cx + i - 1] * (uc - at(i - 1, j)) + self.fx[j * cx + i] * (uc - at(i + 1, j))) * ix
                        + (self.fy[(j - 1) * (cx + 1) + i] * (uc - at(i, j - 1))
                            + self.fy[j * (cx + 1) + i] * (uc - at(i, j + 1)))
                            * iy
                }
            })
            .collect()
    }

    /// Nonzero entries `(row, col, value)` of the matrix.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let n = self.dim();
        let mut e = Vec::new();
        let mut unit = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            unit[j] = 1.0;
            self.apply_into(&unit, &mut col);
            unit[j] = 0.0;
            let (lo, hi) = self.bandwidth_window(j);
            for (i, &v) in col.iter().enumerate().take(hi).skip(lo) {
                if v != 0.0 {
                    e.push((i, j, v));
                }
            }
        }
        e
    }

    fn bandwidth_window(&self, j: usize) -> (usize, usize) {
        let bw = if self.grid.dim == 1 { 1 } else { self.grid.cells[0] - 1 };
        (j.saturating_sub(bw), (j + bw + 1).min(self.dim()))
    }

    /// Dense copy of the matrix (for small problems and tests).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, j, v) in self.entries() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.dim();
        let g = &self.grid;
        (0..n)
            .map(|k| {
                let (i, j) = g.interior_ij(k);
                if g.dim == 1 {
                    (self.fx[i - 1] + self.fx[i]) / (g.spacing[0] * g.spacing[0])
                } else {
                    let cx = g.cells[0];
                    (self.fx[j * cx + i - 1] + self.fx[j * cx + i]) / (g.spacing[0] * g.spacing[0])
                        + (self.fy[(j - 1) * (cx + 1) + i] + self.fy[j * (cx + 1) + i]) / (g.spacing[1] * g.spacing[1])
                }
            })
            .collect()
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.grid.cell_volume() * dot(u, v)
    }

    pub fn norm_l2(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// `⟨A u, u⟩`
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        self.inner(&self.apply(u), u)
    }

    /// Upper estimate of the largest eigenvalue: 50 power iterations with a
    /// 10% safety margin. Cached after the first call.
    pub fn lambda_max(&self) -> f64 {
        *self.lambda_max.get_or_init(|| {
            let n = self.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let g = &self.grid;
            let mut v: Vec<f64> = (0..n)
                .map(|k| {
                    let (i, j) = g.interior_ij(k);
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (1.0 + 0.1 * rng.gen::<f64>())
                })
                .collect();
            let mut w = vec![0.0; n];
            let mut rq = 0.0;
            for _ in 0..50 {
                let nv = dot(&v, &v).sqrt();
                v.iter_mut().for_each(|x| *x /= nv);
                self.apply_into(&v, &mut w);
                rq = dot(&v, &w);
                std::mem::swap(&mut v, &mut w);
            }
            1.1 * rq
        })
    }

    /// Largest stable leapfrog step `2 / sqrt(lambda_max)`.
    pub fn cfl_limit(&self) -> f64 {
        2.0 / self.lambda_max().sqrt()
    }

    /// Extend an interior vector by zero boundary values.
    pub fn embed(&self, u: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let ns = g.node_shape();
        let mut full = vec![0.0; ns[0] * ns[1]];
        for (k, &v) in u.iter().enumerate() {
            let (i, j) = g.interior_ij(k);
            full[j * ns[0] + i] = v;
        }
        full
    }

    /// Interface diagnostics of a nodal vector (boundary values included).
    pub fn interface_jumps_full(&self, u_full: &[f64]) -> InterfaceJumps {
        let g = &self.grid;
        let ns = g.node_shape();
        let k = self.interface_index;
        if g.dim == 1 {
            let h = g.spacing[0];
            let (um, u0, up) = (u_full[k - 1], u_full[k], u_full[k + 1]);
            // Both sides read the same interface node and the same flux value.
            let trace_minus = u0;
            let trace_plus = u0;
            let flux = 0.5 * (self.fx[k - 1] * (u0 - um) + self.fx[k] * (up - u0)) / h;
            let (flux_minus, flux_plus) = (flux, flux);
            let (cm, cp) = self.c_interface[0];
            InterfaceJumps {
                displacement: (trace_minus - trace_plus).abs(),
                harmonic_flux: (flux_minus - flux_plus).abs(),
                reconstructed_flux: (cp * (up - u0) / h - cm * (u0 - um) / h).abs(),
            }
        } else {
            let (cx, hy) = (g.cells[0], g.spacing[1]);
            let at = |i: usize, j: usize| u_full[j * ns[0] + i];
            let mut out = InterfaceJumps::default();
            for i in 1..cx {
                let (ud, u0, uu) = (at(i, k - 1), at(i, k), at(i, k + 1));
                let fd = self.fy[(k - 1) * (cx + 1) + i] * (u0 - ud) / hy;
                let fu = self.fy[k * (cx + 1) + i] * (uu - u0) / hy;
                let flux = 0.5 * (fd + fu);
                let (trace_minus, trace_plus) = (u0, u0);
                let (flux_minus, flux_plus) = (flux, flux);
                let (cm, cp) = self.c_interface[i];
                out = out.max(InterfaceJumps {
                    displacement: (trace_minus - trace_plus).abs(),
                    harmonic_flux: (flux_minus - flux_plus).abs(),
                    reconstructed_flux: (cp * (uu - u0) / hy - cm * (u0 - ud) / hy).abs(),
                });
            }
            out
        }
    }

    pub fn interface_jumps(&self, u: &[f64]) -> InterfaceJumps {
        self.interface_jumps_full(&self.embed(u))
    }

    /// Flat interior indices of the interface nodes.
    pub fn interface_nodes(&self) -> Vec<usize> {
        let g = &self.grid;
        if g.dim == 1 {
            vec![self.interface_index - 1]
        } else {
            (1..g.cells[0]).filter_map(|i| g.interior_index(i, self.interface_index)).collect()
        }
    }

    /// Side of each interior unknown; `None` on the interface.
    pub fn node_sides(&self) -> Vec<Option<Side>> {
        let g = &self.grid;
        let k = self.interface_index;
        (0..g.n_interior())
            .map(|p| {
                let (i, j) = g.interior_ij(p);
                let a = if g.dim == 1 { i } else { j };
                match a.cmp(&k) {
                    std::cmp::Ordering::Less => Some(Side::Minus),
                    std::cmp::Ordering::Greater => Some(Side::Plus),
                    std::cmp::Ordering::Equal => None,
                }
            })
            .collect()
    }

    /// Solve `A x = b` by Jacobi-preconditioned conjugate gradients to
    /// relative residual `tol`.
    pub fn apply_inverse(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        if !(tol > 0.0) {
            return Err(Error::arg("tolerance must be positive"));
        }
        let n = self.dim();
        let bn = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if bn == 0.0 {
            return Ok(x);
        }
        let dinv: Vec<f64> = self.diagonal().iter().map(|d| 1.0 / d).collect();
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let budget = 10 * n + 100;
        for _ in 0..budget {
            self.apply_into(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rn = dot(&r, &r).sqrt();
            if rn <= tol * bn {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * dinv[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rn = dot(&r, &r).sqrt();
        Err(Error::numeric("conjugate gradient budget exceeded", rn / bn))
    }

    /// `(‖(u0, u1)‖_{L²×H⁻¹}, ‖(u0, u1)‖_{H¹×L²})` without a spectrum,
    /// using `⟨Au, u⟩` and a CG solve for the negative norm.
    pub fn data_norms(&self, u0: &[f64], u1: &[f64]) -> Result<(f64, f64)> {
        let h1 = self.quadratic_form(u0);
        let l2_0 = self.inner(u0, u0);
        let l2_1 = self.inner(u1, u1);
        let hm1 = self.inner(u1, &self.apply_inverse(u1, 1e-12)?);
        Ok(((l2_0 + hm1).sqrt(), (h1 + l2_1).sqrt()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Leading eigenpairs of `A`, orthonormal in the discrete `L²` product.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// Cell volume of the inner product.
    pub weight: f64,
    /// True when every eigenpair of the operator is present.
    pub complete: bool,
}

/// Value of a Sobolev-scale norm together with the mass the truncated
/// spectrum fails to capture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevNorm {
    pub value: f64,
    /// `1 - Σ⟨u,e_k⟩² / ‖u‖²`
    pub tail_mass: f64,
    /// Set when `tail_mass > 1e-6`.
    pub truncated: bool,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coefficients(&self, u: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|e| self.weight * dot(u, e)).collect()
    }

    /// `sqrt(Σ λ_k^s ⟨u, e_k⟩²)` for `s ∈ {-1, 0, 1}`.
    pub fn norm_hs(&self, u: &[f64], s: i32) -> Result<SobolevNorm> {
        if !(-1..=1).contains(&s) {
            return Err(Error::arg(format!("Sobolev exponent must be -1, 0 or 1, got {s}")));
        }
        if u.len() != self.vectors.first().map_or(0, |v| v.len()) {
            return Err(Error::arg("grid function does not match the spectrum"));
        }
        let c = self.coefficients(u);
        let mut acc = 0.0;
        let mut captured = 0.0;
        for (ck, lk) in c.iter().zip(&self.values) {
            acc += lk.powi(s) * ck * ck;
            captured += ck * ck;
        }
        let total = self.weight * dot(u, u);
        let tail_mass = if total > 0.0 { ((total - captured) / total).max(0.0) } else { 0.0 };
        Ok(SobolevNorm { value: acc.sqrt(), tail_mass, truncated: !self.complete && tail_mass > 1e-6 })
    }

    /// Typical frequency `‖(u0,u1)‖_{H¹×L²} / ‖(u0,u1)‖_{L²×H⁻¹}`.
    pub fn typical_frequency(&self, u0: &[f64], u1: &[f64]) -> Result<f64> {
        let num = self.norm_hs(u0, 1)?.value.powi(2) + self.norm_hs(u1, 0)?.value.powi(2);
        let den = self.norm_hs(u0, 0)?.value.powi(2) + self.norm_hs(u1, -1)?.value.powi(2);
        if den == 0.0 {
            return Err(Error::arg("typical frequency of zero data"));
        }
        Ok((num / den).sqrt())
    }
}

fn fix_sign(v: &mut [f64]) {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-6 * m) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// The `k` smallest eigenpairs: dense symmetric solve in 1D, shift-invert
/// Lanczos with full reorthogonalisation in 2D.
pub fn eigendecompose(op: &DiscreteOperator, k: usize) -> Result<Spectrum> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::arg(format!("need 1 <= k <= {n}, got {k}")));
    }
    let spec = if op.grid.dim == 1 { dense_eigen(op, k) } else { lanczos_eigen(op, k)? };
    check_residuals(op, &spec)?;
    Ok(spec)
}

/// Dense symmetric eigensolve (any dimension); used directly in 1D.
pub fn dense_eigen(op: &DiscreteOperator, k: usize) -> Spectrum {
    let n = op.dim();
    let eig = SymmetricEigen::new(op.to_dense());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = 1.0 / op.grid.cell_volume().sqrt();
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        values.push(eig.eigenvalues[i]);
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().map(|x| x * scale).collect();
        fix_sign(&mut v);
        vectors.push(v);
    }
    Spectrum { values, vectors, weight: op.grid.cell_volume(), complete: k == n }
}

fn lanczos_eigen(op: &DiscreteOperator, k: usize) -> Result<Spectrum> {
    let n = op.dim();
    let mut m = (2 * k + 30).min(n);
    loop {
        match lanczos_attempt(op, k, m) {
            Ok(s) => return Ok(s),
            Err(e) if m < n => {
                let _ = e;
                m = (2 * m).min(n);
            }
            Err(e) => return Err(e),
        }
    }
}

fn lanczos_attempt(op: &DiscreteOperator, k: usize, m: usize) -> Result<Spectrum> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a4c205);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let nv = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    for j in 0..m {
        q.push(v.clone());
        let mut w = op.apply_inverse(&v, 1e-14).or_else(|_| op.apply_inverse(&v, 1e-12))?;
        let a = dot(&w, &v);
        alpha.push(a);
        // full reorthogonalisation, twice
        for _ in 0..2 {
            for qi in &q {
                let c = dot(&w, qi);
                w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = dot(&w, &w).sqrt();
        if j + 1 == m {
            break;
        }
        if b < 1e-300 {
            return Err(Error::numeric("Lanczos breakdown", b));
        }
        beta.push(b);
        v = w.iter().map(|x| x / b).collect();
    }
    let mm = alpha.len();
    let mut t = DMatrix::zeros(mm, mm);
    for i in 0..mm {
        t[(i, i)] = alpha[i];
        if i + 1 < mm {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..mm).collect();
    // largest eigenvalues of A⁻¹ are the smallest of A
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = 1.0 / op.grid.cell_volume().sqrt();
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let y = eig.eigenvectors.column(i);
        let mut x = vec![0.0; n];
        for (j, qj) in q.iter().enumerate() {
            let c = y[j];
            x.iter_mut().zip(qj).for_each(|(a, b)| *a += c * b);
        }
        let nx = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|a| *a /= nx);
        let ax = op.apply(&x);
        values.push(dot(&x, &ax));
        x.iter_mut().for_each(|a| *a *= scale);
        fix_sign(&mut x);
        vectors.push(x);
    }
    let spec = Spectrum { values, vectors, weight: op.grid.cell_volume(), complete: k == n };
    check_residuals(op, &spec)?;
    Ok(spec)
}

fn check_residuals(op: &DiscreteOperator, spec: &Spectrum) -> Result<()> {
    for (lam, e) in spec.values.iter().zip(&spec.vectors) {
        let ae = op.apply(e);
        let r: Vec<f64> = ae.iter().zip(e).map(|(a, b)| a - lam * b).collect();
        let res = op.norm_l2(&r);
        if !(res <= 1e-8 * lam.abs().max(1.0) * op.norm_l2(e).max(1.0)) {
            return Err(Error::numeric("eigenpair residual above 1e-8 lambda", res / lam));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous(n: usize) -> DiscreteOperator {
        let m = Medium::interval(0.0, 1.0, 0.5, 1.0, 1.0).unwrap();
        assemble(&m, &Grid::new(&m, &[n]).unwrap()).unwrap()
    }

    #[test]
    fn closed_form_eigenvalues() {
        let op = homogeneous(40);
        let s = eigendecompose(&op, 39).unwrap();
        let h = 1.0 / 40.0;
        for (k, lam) in s.values.iter().enumerate() {
            let kk = (k + 1) as f64;
            let exact = 4.0 / (h * h) * (kk * std::f64::consts::PI / 80.0).sin().powi(2);
            assert!((lam - exact).abs() <= 1e-10 * exact, "{k}: {lam} vs {exact}");
        }
    }

    #[test]
    fn exact_symmetry() {
        let m = Medium::layered((0.0, 1.0), (0.0, 1.0), 0.5, 1.0, 4.0).unwrap();
        let op = assemble(&m, &Grid::new(&m, &[6, 8]).unwrap()).unwrap();
        let a = op.to_dense();
        assert_eq!((&a - a.transpose()).amax(), 0.0);
    }

    #[test]
    fn misaligned_interface() {
        let m = Medium::interval(0.0, 1.0, 0.33, 1.0, 4.0).unwrap();
        let err = assemble(&m, &Grid::new(&m, &[10]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Geometry { .. }));
    }

    #[test]
    fn lanczos_matches_dense() {
        let m = Medium::layered((0.0, 1.0), (0.0, 1.0), 0.5, 1.0, 4.0).unwrap();
        let op = assemble(&m, &Grid::new(&m, &[12, 12]).unwrap()).unwrap();
        let l = eigendecompose(&op, 8).unwrap();
        let d = dense_eigen(&op, 8);
        for (a, b) in l.values.iter().zip(&d.values) {
            assert!((a - b).abs() < 1e-9 * b, "{a} {b}");
        }
    }

    #[test]
    fn inverse_of_forward() {
        let op = homogeneous(50);
        let v: Vec<f64> = (0..49).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let x = op.apply_inverse(&op.apply(&v), 1e-13).unwrap();
        for (a, b) in x.iter().zip(&v) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
