//! Carleman weights, phase-space regions and factor symbols at the interface,
//! together with grid checks of the geometric and sub-ellipticity conditions
//! and a quadrature evaluation of both sides of the Carleman inequality.
//!
//! Local coordinates put the interface at `x_n = 0` with `Ω+` on the positive
//! side. For the flat interfaces supported here `x_n` is the signed level of
//! the medium (`x - s` in 1D, `y - s` in 2D) and `x' = x` in 2D.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::medium::{Interface, Medium, Point, Side};
use crate::spectral::{apply_qphi, SpaceTimeField, MAX_EXPONENT};

/// `φ = (α_± x_n + β x_n²/2)` on each side, optionally convexified to
/// `ψ = φ - δ̃ |(t, x) - (t0, x0)|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanWeight {
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub beta: f64,
    pub delta_tilde: f64,
    /// `(t0, x'_0)` in local coordinates (`x_n = 0` on the interface).
    pub center: (f64, f64),
}

impl CarlemanWeight {
    pub fn new(alpha_minus: f64, alpha_plus: f64, beta: f64) -> Result<Self> {
        if !(alpha_minus > 0.0 && alpha_plus > alpha_minus && beta > 0.0) {
            return Err(Error::arg("weight needs alpha_plus > alpha_minus > 0 and beta > 0"));
        }
        Ok(CarlemanWeight { alpha_minus, alpha_plus, beta, delta_tilde: 0.0, center: (0.0, 0.0) })
    }

    pub fn with_convexification(mut self, delta_tilde: f64) -> Self {
        self.delta_tilde = delta_tilde;
        self
    }

    pub fn alpha(&self, side: Side) -> f64 {
        match side {
            Side::Minus => self.alpha_minus,
            Side::Plus => self.alpha_plus,
        }
    }

    /// Branch polynomial `α_side x_n + β x_n²/2`.
    pub fn phi(&self, x_n: f64, side: Side) -> f64 {
        self.alpha(side) * x_n + 0.5 * self.beta * x_n * x_n
    }

    /// `α_side + β x_n`.
    pub fn phi_prime(&self, x_n: f64, side: Side) -> f64 {
        self.alpha(side) + self.beta * x_n
    }

    /// `φ` with the side taken from the sign of `x_n`.
    pub fn phi_auto(&self, x_n: f64) -> f64 {
        self.phi(x_n, if x_n < 0.0 { Side::Minus } else { Side::Plus })
    }

    /// `ψ(t, x', x_n) = φ(x_n) - δ̃ |(t, x', x_n) - (t0, x'_0, 0)|²`.
    pub fn psi(&self, t: f64, x_prime: f64, x_n: f64) -> f64 {
        let d2 = (t - self.center.0).powi(2) + (x_prime - self.center.1).powi(2) + x_n * x_n;
        self.phi_auto(x_n) - self.delta_tilde * d2
    }
}

/// Outcome of the grid check of the convexification inclusions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexificationReport {
    pub delta: f64,
    pub rho: f64,
    /// Annulus `R/2 < |z| < 5R/2` with `-9δ <= ψ <= 2δ` lies in `{φ > 2ρ} ∩ B(3R)`.
    pub inclusion_annulus: bool,
    /// `{δ/4 <= ψ <= 2δ} ∩ B(5R/2)` lies in `{φ > 2ρ} ∩ B(3R)`.
    pub inclusion_level: bool,
    /// Largest grid radius `r < R/2` with `B(2r) ⊂ {|ψ| <= δ/2} ∩ B(R)`.
    pub r: f64,
    pub points_checked: usize,
}

/// Check the three convexification inclusions on a uniform grid of
/// `B(0, 4R)` in `(t, x', x_n)` (with `x'` dropped when `spatial_dim == 1`),
/// taking `δ = δ̃ R²/40` and `ρ = δ/10`.
pub fn check_convexification(weight: &CarlemanWeight, radius: f64, spatial_dim: usize, n: usize) -> Result<ConvexificationReport> {
    if !(weight.delta_tilde > 0.0 && radius > 0.0) {
        return Err(Error::arg("convexification needs delta_tilde > 0 and R > 0"));
    }
    let delta = weight.delta_tilde * radius * radius / 40.0;
    let rho = delta / 10.0;
    let big = 4.0 * radius;
    let axis: Vec<f64> = (0..=n).map(|k| -big + 2.0 * big * k as f64 / n as f64).collect();
    let xps: Vec<f64> = if spatial_dim == 1 { vec![weight.center.1] } else { axis.clone() };
    let (mut ok1, mut ok2) = (true, true);
    let mut r_bad = f64::INFINITY;
    let mut count = 0;
    for &t in &axis {
        for &xp in &xps {
            for &xn in &axis {
                let z = ((t - weight.center.0).powi(2) + (xp - weight.center.1).powi(2) + xn * xn).sqrt();
                if z > big {
                    continue;
                }
                count += 1;
                let psi = weight.psi(t, xp, xn);
                let phi = weight.phi_auto(xn);
                let inside_target = phi > 2.0 * rho && z < 3.0 * radius;
                if z > radius / 2.0 && z < 2.5 * radius && (-9.0 * delta..=2.0 * delta).contains(&psi) && !inside_target {
                    ok1 = false;
                }
                if z < 2.5 * radius && (delta / 4.0..=2.0 * delta).contains(&psi) && !inside_target {
                    ok2 = false;
                }
                if psi.abs() > delta / 2.0 || z >= radius {
                    r_bad = r_bad.min(z);
                }
            }
        }
    }
    let r = (0.5 * r_bad).min(0.5 * radius) * (1.0 - 1e-9);
    Ok(ConvexificationReport { delta, rho, inclusion_annulus: ok1, inclusion_level: ok2, r, points_checked: count })
}

/// A point of the tangential phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicrolocalPoint {
    /// Physical position; its interface level is the normal coordinate `x_n`.
    pub x: Point,
    pub xi_prime: f64,
    pub xi_t: f64,
    pub tau: f64,
}

impl MicrolocalPoint {
    pub fn new(x: Point, xi_prime: f64, xi_t: f64, tau: f64) -> Self {
        MicrolocalPoint { x, xi_prime, xi_t, tau }
    }

    /// `|ξ'|² + ξ_t²`
    pub fn freq_sq(&self) -> f64 {
        self.xi_prime * self.xi_prime + self.xi_t * self.xi_t
    }

    /// `λ_τ = sqrt(τ² + |ξ'|² + ξ_t²)`
    pub fn lambda_tau(&self) -> f64 {
        (self.tau * self.tau + self.freq_sq()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegionTags {
    pub elliptic_minus: bool,
    pub elliptic_plus: bool,
    pub glancing_minus: bool,
    pub glancing_plus: bool,
}

impl RegionTags {
    pub fn elliptic(&self, side: Side) -> bool {
        match side {
            Side::Minus => self.elliptic_minus,
            Side::Plus => self.elliptic_plus,
        }
    }
}

/// `Q(x, ξ') - c_side(x)^{-1} ξ_t²`
pub fn wave_symbol(p: &MicrolocalPoint, medium: &Medium, side: Side) -> f64 {
    let q = medium.tangential.q(&p.x, p.xi_prime * p.xi_prime);
    q - p.xi_t * p.xi_t / medium.c_side(&p.x, side)
}

/// Elliptic tag iff the wave symbol is at least `ε (|ξ'|² + ξ_t²)`,
/// glancing/hyperbolic tag iff it is at most `2ε (|ξ'|² + ξ_t²)`.
pub fn classify(p: &MicrolocalPoint, medium: &Medium, eps: f64) -> Result<RegionTags> {
    let f2 = p.freq_sq();
    if f2 == 0.0 {
        return Err(Error::arg("region classification needs a nonzero frequency"));
    }
    let sm = wave_symbol(p, medium, Side::Minus);
    let sp = wave_symbol(p, medium, Side::Plus);
    Ok(RegionTags {
        elliptic_minus: sm >= eps * f2,
        elliptic_plus: sp >= eps * f2,
        glancing_minus: sm <= 2.0 * eps * f2,
        glancing_plus: sp <= 2.0 * eps * f2,
    })
}

/// `m_side = sqrt(Q - c_side^{-1} ξ_t²)` where the elliptic tag holds.
pub fn compute_m(p: &MicrolocalPoint, medium: &Medium, eps: f64) -> Result<(Option<f64>, Option<f64>)> {
    let tags = classify(p, medium, eps)?;
    let m = |side: Side| {
        if tags.elliptic(side) {
            Some(wave_symbol(p, medium, side).sqrt())
        } else {
            None
        }
    };
    Ok((m(Side::Minus), m(Side::Plus)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FactorSymbols {
    pub m_minus: Option<f64>,
    pub m_plus: Option<f64>,
    pub e_minus: Option<f64>,
    pub e_plus: Option<f64>,
    pub f_minus: Option<f64>,
    pub f_plus: Option<f64>,
}

/// `e_± = τ φ'_± + m_±`, `f_± = τ φ'_± - m_±` at the point's normal
/// coordinate, on each side where `m` is defined.
pub fn factors(p: &MicrolocalPoint, weight: &CarlemanWeight, medium: &Medium, eps: f64) -> Result<FactorSymbols> {
    let (mm, mp) = compute_m(p, medium, eps)?;
    let xn = medium.interface.level(&p.x);
    let tp = |side| p.tau * weight.phi_prime(xn, side);
    Ok(FactorSymbols {
        m_minus: mm,
        m_plus: mp,
        e_minus: mm.map(|m| tp(Side::Minus) + m),
        e_plus: mp.map(|m| tp(Side::Plus) + m),
        f_minus: mm.map(|m| tp(Side::Minus) - m),
        f_plus: mp.map(|m| tp(Side::Plus) - m),
    })
}

/// Points sampled along a flat interface and the map from local coordinates
/// `(x', x_n)` to physical positions.
#[derive(Debug, Clone, Copy)]
struct FlatChart {
    dim: usize,
    level: f64,
}

impl FlatChart {
    fn of(medium: &Medium) -> Result<FlatChart> {
        match &medium.interface {
            Interface::Point(s) => Ok(FlatChart { dim: 1, level: *s }),
            Interface::Graph(pts) => {
                let level = pts[0][1];
                if pts.iter().any(|p| (p[1] - level).abs() > 1e-12) {
                    return Err(Error::Geometry {
                        message: "interface checks need a flat interface".into(),
                        hint: "use a horizontal interface y = s".into(),
                    });
                }
                Ok(FlatChart { dim: 2, level })
            }
        }
    }

    fn point(&self, x_prime: f64, x_n: f64) -> Point {
        if self.dim == 1 {
            [self.level + x_n, 0.0]
        } else {
            [x_prime, self.level + x_n]
        }
    }
}

fn interface_abscissae(medium: &Medium, count: usize) -> Vec<f64> {
    if medium.dim() == 1 {
        return vec![0.0];
    }
    let (lo, hi) = medium.domain.bounds();
    let count = count.max(1);
    (0..count).map(|k| lo[0] + (hi[0] - lo[0]) * (k as f64 + 0.5) / count as f64).collect()
}

/// Location and value of the supremum of `m+/m-`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaRatio {
    pub sup: f64,
    /// `(x', ξ', ξ_t)` attaining the supremum (unit frequency).
    pub argmax: (f64, f64, f64),
    /// Value before boundary refinement.
    pub grid_sup: f64,
}

/// Supremum of `m+/m-` over interface samples and the unit frequency circle
/// restricted to `E- ∩ E+`, by a dense angular grid followed by bisection
/// onto every boundary crossing of the elliptic set.
pub fn geometric_alpha_ratio(medium: &Medium, eps: f64, angles: usize, interface_samples: usize) -> Result<AlphaRatio> {
    let chart = FlatChart::of(medium)?;
    if medium.dim() == 1 {
        return Err(Error::Region("a 1D interface has no tangential frequencies, so the elliptic set is empty".into()));
    }
    let ratio_at = |xp: f64, th: f64| -> Option<f64> {
        let p = MicrolocalPoint::new(chart.point(xp, 0.0), th.cos(), th.sin(), 1.0);
        match compute_m(&p, medium, eps) {
            Ok((Some(a), Some(b))) => Some(b / a),
            _ => None,
        }
    };
    let mut best = AlphaRatio { sup: f64::NEG_INFINITY, argmax: (0.0, 0.0, 0.0), grid_sup: f64::NEG_INFINITY };
    let n = angles.max(8);
    for xp in interface_abscissae(medium, interface_samples) {
        let ths: Vec<f64> = (0..n).map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64).collect();
        let vals: Vec<Option<f64>> = ths.iter().map(|&th| ratio_at(xp, th)).collect();
        for (k, v) in vals.iter().enumerate() {
            if let Some(r) = v {
                best.grid_sup = best.grid_sup.max(*r);
                if *r > best.sup {
                    best.sup = *r;
                    best.argmax = (xp, ths[k].cos(), ths[k].sin());
                }
            }
            let nk = (k + 1) % n;
            let next_th = if nk == 0 { ths[k] + 2.0 * std::f64::consts::PI / n as f64 } else { ths[nk] };
            if v.is_some() != vals[nk].is_some() {
                let (mut a, mut b) = if v.is_some() { (ths[k], next_th) } else { (next_th, ths[k]) };
                for _ in 0..60 {
                    let mid = 0.5 * (a + b);
                    if ratio_at(xp, mid).is_some() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                if let Some(r) = ratio_at(xp, a) {
                    if r > best.sup {
                        best.sup = r;
                        best.argmax = (xp, a.cos(), a.sin());
                    }
                }
            }
        }
    }
    if !best.sup.is_finite() {
        return Err(Error::Region(format!("E- ∩ E+ is empty on the unit frequency circle for eps = {eps}")));
    }
    Ok(best)
}

/// Sampling of the `(τ, ξ, x_n, x')` space used by the interface checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    pub taus: Vec<f64>,
    pub radii: Vec<f64>,
    pub angles: usize,
    /// Samples of `x_n` per half interval `[0, η]`.
    pub normal_samples: usize,
    pub interface_samples: usize,
}

/// `n` geometrically spaced values from `a` to `b`.
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
}

impl SymbolGrid {
    pub fn standard() -> Self {
        SymbolGrid {
            taus: geomspace(0.25, 256.0, 31),
            radii: geomspace(0.125, 512.0, 37),
            angles: 360,
            normal_samples: 5,
            interface_samples: 3,
        }
    }
}

/// A grid point where the cover check fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub tau: f64,
    pub xi_prime: f64,
    pub xi_t: f64,
    pub x_prime: f64,
    pub x_n: f64,
    pub reason: WitnessKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessKind {
    /// Neither region contains the point.
    Uncovered,
    /// In `Γ` but `f+ < C λ_τ` somewhere on `[0, η]`.
    PlusNotPositive,
    /// In `Γ~` but `f- > -C λ_τ` somewhere on `[-η, 0]`.
    MinusNotNegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaCoverReport {
    pub passed: bool,
    /// Largest `C` valid for all grid points with `τ >= τ0`.
    pub c: f64,
    pub tau0: Option<f64>,
    pub witness: Option<Witness>,
    pub points_checked: usize,
}

/// Grid check of the cover of the tangential phase space by `Γ_lo ∪ Γ~_hi`
/// (`lo = min(μ, μ0)`, `hi = max(μ, μ0)`), with
///
/// * `Γ_s  = {|ξ| < 2 or τ α+ > s m+(x_n = 0)}`, requiring `f+ >= C λ_τ` on `0 <= x_n <= η`;
/// * `Γ~_s = {|ξ| > 1 and τ α+ < s m+(x_n = 0)}`, requiring `f- <= -C λ_τ` on `-η <= x_n <= 0`.
///
/// Only points in `E- ∩ E+` (where both `m` are defined) are sampled.
#[allow(clippy::too_many_arguments)]
pub fn check_gamma_cover(
    weight: &CarlemanWeight,
    medium: &Medium,
    eps: f64,
    mu: f64,
    mu0: f64,
    eta: f64,
    grid: &SymbolGrid,
) -> Result<GammaCoverReport> {
    if !(mu > 1.0 && mu0 > 1.0 && eta > 0.0) {
        return Err(Error::arg("need mu, mu0 > 1 and eta > 0"));
    }
    let chart = FlatChart::of(medium)?;
    let (lo, hi) = (mu.min(mu0), mu.max(mu0));
    let ns = grid.normal_samples.max(1);
    let xns: Vec<f64> = (0..=ns).map(|k| eta * k as f64 / ns as f64).collect();
    let xps = interface_abscissae(medium, grid.interface_samples);
    let angles: Vec<(f64, f64)> = (0..grid.angles.max(4))
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / grid.angles.max(4) as f64;
            (th.cos(), th.sin())
        })
        .collect();
    let mut taus = grid.taus.clone();
    taus.sort_by(|a, b| a.total_cmp(b));

    // per τ: (min margin, first witness, count)
    let per_tau: Vec<(f64, Option<Witness>, usize)> = taus
        .par_iter()
        .map(|&tau| {
            let mut cmin = f64::INFINITY;
            let mut witness = None;
            let mut count = 0;
            for &xp in &xps {
                for &(a, b) in &angles {
                    // m is homogeneous of degree one in ξ, so the region
                    // boundaries along this ray are known in closed form
                    let unit = MicrolocalPoint::new(chart.point(xp, 0.0), a, b, tau);
                    let mut radii = grid.radii.clone();
                    if let Ok((Some(_), Some(mp1))) = compute_m(&unit, medium, eps) {
                        let edge = |s: f64| tau * weight.alpha_plus / (s * mp1);
                        radii.extend([edge(lo) * (1.0 - 1e-12), edge(hi) * (1.0 + 1e-12), 2.0 * (1.0 - 1e-12), 1.0 + 1e-12]);
                    }
                    for &r in &radii {
                        let (xi_p, xi_t) = (r * a, r * b);
                        let at = |xn: f64| MicrolocalPoint::new(chart.point(xp, xn), xi_p, xi_t, tau);
                        let m0 = match compute_m(&at(0.0), medium, eps) {
                            Ok((Some(m), Some(p))) => (m, p),
                            _ => continue,
                        };
                        count += 1;
                        let in_gamma = r < 2.0 || tau * weight.alpha_plus > lo * m0.1;
                        let in_tilde = r > 1.0 && tau * weight.alpha_plus < hi * m0.1;
                        let mk = |reason, xn| Witness { tau, xi_prime: xi_p, xi_t, x_prime: xp, x_n: xn, reason };
                        if !(in_gamma || in_tilde) {
                            cmin = cmin.min(f64::NEG_INFINITY);
                            witness.get_or_insert(mk(WitnessKind::Uncovered, 0.0));
                            continue;
                        }
                        if in_gamma {
                            for &xn in &xns {
                                let p = at(xn);
                                let mp = match compute_m(&p, medium, eps) {
                                    Ok((_, Some(m))) => m,
                                    _ => continue,
                                };
                                let f = tau * weight.phi_prime(xn, Side::Plus) - mp;
                                let v = f / p.lambda_tau();
                                if v <= 0.0 {
                                    witness.get_or_insert(mk(WitnessKind::PlusNotPositive, xn));
                                }
                                cmin = cmin.min(v);
                            }
                        }
                        if in_tilde {
                            for &xn in &xns {
                                let p = at(-xn);
                                let mm = match compute_m(&p, medium, eps) {
                                    Ok((Some(m), _)) => m,
                                    _ => continue,
                                };
                                let f = tau * weight.phi_prime(-xn, Side::Minus) - mm;
                                let v = -f / p.lambda_tau();
                                if v <= 0.0 {
                                    witness.get_or_insert(mk(WitnessKind::MinusNotNegative, -xn));
                                }
                                cmin = cmin.min(v);
                            }
                        }
                    }
                }
            }
            (cmin, witness, count)
        })
        .collect();

    let points_checked = per_tau.iter().map(|x| x.2).sum();
    // τ0: smallest grid τ from which every larger τ passes
    let mut tau0 = None;
    let mut c = f64::INFINITY;
    for (k, &tau) in taus.iter().enumerate().rev() {
        let (cm, w, _) = &per_tau[k];
        if w.is_some() || *cm <= 0.0 {
            break;
        }
        tau0 = Some(tau);
        c = c.min(*cm);
    }
    let witness = if tau0.is_none() { per_tau.iter().rev().find_map(|x| x.1) } else { None };
    let passed = tau0.is_some() && c > 0.0 && c.is_finite();
    Ok(GammaCoverReport { passed, c: if passed { c } else { 0.0 }, tau0, witness, points_checked })
}

/// Sub-ellipticity margin `(μ f+² + τ (τ β - ∂_{x_n} m+)) / λ_τ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubellipticityReport {
    /// Minimum over the whole grid.
    pub min_margin: f64,
    /// Minimum over the inserted points where `f+ = 0`.
    pub min_margin_at_zeros: f64,
    pub points_checked: usize,
}

fn dxn_m_plus(medium: &Medium, chart: &FlatChart, xp: f64, xn: f64, xi_p: f64, xi_t: f64, eps: f64, h: f64) -> Option<f64> {
    let mp = |x: f64| {
        let p = MicrolocalPoint::new(chart.point(xp, x), xi_p, xi_t, 1.0);
        let s = wave_symbol(&p, medium, Side::Plus);
        if s >= eps * p.freq_sq() {
            Some(s.sqrt())
        } else {
            None
        }
    };
    Some((mp(xn + h)? - mp(xn - h)?) / (2.0 * h))
}

/// Grid evaluation of the sub-ellipticity margin over `0 <= x_n <= η`, the
/// unit frequency circle (points in `E+`), the `τ` grid and the inserted
/// roots `τ = m+ / φ'` of `f+`.
pub fn check_subellipticity(
    weight: &CarlemanWeight,
    medium: &Medium,
    eps: f64,
    mu: f64,
    eta: f64,
    grid: &SymbolGrid,
) -> Result<SubellipticityReport> {
    let chart = FlatChart::of(medium)?;
    let ns = grid.normal_samples.max(1);
    let h = 1e-4;
    let mut min_all = f64::INFINITY;
    let mut min_zero = f64::INFINITY;
    let mut count = 0;
    for xp in interface_abscissae(medium, grid.interface_samples) {
        for k in 0..=ns {
            let xn = eta * k as f64 / ns as f64;
            for a in 0..grid.angles.max(4) {
                let th = 2.0 * std::f64::consts::PI * a as f64 / grid.angles.max(4) as f64;
                let (xi_p, xi_t) = (th.cos(), th.sin());
                let p1 = MicrolocalPoint::new(chart.point(xp, xn), xi_p, xi_t, 1.0);
                let s = wave_symbol(&p1, medium, Side::Plus);
                if s < eps * p1.freq_sq() {
                    continue;
                }
                let mp = s.sqrt();
                let Some(dm) = dxn_m_plus(medium, &chart, xp, xn, xi_p, xi_t, eps, h) else {
                    continue;
                };
                let phi_p = weight.phi_prime(xn, Side::Plus);
                let margin = |tau: f64| {
                    let f = tau * phi_p - mp;
                    let lt2 = tau * tau + p1.freq_sq();
                    (mu * f * f + tau * (tau * weight.beta - dm)) / lt2
                };
                for &tau in &grid.taus {
                    count += 1;
                    min_all = min_all.min(margin(tau));
                }
                let tz = mp / phi_p;
                count += 1;
                let mz = margin(tz);
                min_all = min_all.min(mz);
                min_zero = min_zero.min(mz);
            }
        }
    }
    if count == 0 {
        return Err(Error::Region("no grid point lies in E+".into()));
    }
    Ok(SubellipticityReport { min_margin: min_all, min_margin_at_zeros: min_zero, points_checked: count })
}

/// Space-time box around an interface point, in local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalChart {
    /// Interface point `(t0, x'_0)`; `x'_0` is ignored in 1D.
    pub center: (f64, f64),
    pub half_width: f64,
    /// Nodes per unit length (same spacing on every axis).
    pub nodes_per_unit: usize,
}

impl LocalChart {
    pub fn spacing(&self) -> f64 {
        1.0 / self.nodes_per_unit as f64
    }

    /// Node offsets `-K..=K` along each axis.
    pub fn half_count(&self) -> usize {
        (self.half_width * self.nodes_per_unit as f64).round() as usize
    }
}

/// A pair of side functions `u_±(t, x', x_n)`, each defined on the whole chart.
pub struct SidePair<'a> {
    pub minus: &'a (dyn Fn(f64, f64, f64) -> f64 + Sync),
    pub plus: &'a (dyn Fn(f64, f64, f64) -> f64 + Sync),
}

/// Breakdown of both sides of the Carleman inequality. All terms are scaled
/// by the common factor `e^{-2τ φ_ref}` (see `log_scale`) so that they stay
/// finite; ratios between them are unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CarlemanTerms {
    /// `Σ ‖H_± Q P^± u_±‖²`
    pub operator: f64,
    /// `e^{-dτ} (τ³ ‖e^{τφ} u‖² + τ Σ ‖H_± ∇ e^{τφ} u_±‖²)`
    pub remainder: f64,
    /// `T_{θ,Θ}`
    pub transmission: f64,
    /// `τ³ ‖Q u‖²`
    pub rhs_l2: f64,
    /// `τ Σ ‖H_± ∇ Q u_±‖²`
    pub rhs_grad: f64,
    /// `2 τ φ_ref`, the natural log of the scale removed from every term.
    pub log_scale: f64,
    /// `max |θ|` and `max |Θ|` on the interface.
    pub theta_max: f64,
    pub big_theta_max: f64,
}

impl CarlemanTerms {
    pub fn lhs(&self) -> f64 {
        self.operator + self.remainder + self.transmission
    }

    pub fn rhs(&self) -> f64 {
        self.rhs_l2 + self.rhs_grad
    }
}

/// Carleman parameters other than the weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanParams {
    pub tau: f64,
    pub delta: f64,
    /// Exponent of the remainder factor `e^{-dτ}`.
    pub d: f64,
    /// Support radius around the chart centre.
    pub r0: f64,
}

struct ChartGrid {
    k: usize,
    h: f64,
    spatial_dim: usize,
    t: Vec<f64>,
    xp: Vec<f64>,
    xn: Vec<f64>,
}

impl ChartGrid {
    fn new(chart: &LocalChart, spatial_dim: usize) -> ChartGrid {
        let k = chart.half_count();
        let h = chart.spacing();
        let axis = |c: f64| (0..=2 * k).map(|i| c + (i as f64 - k as f64) * h).collect::<Vec<_>>();
        ChartGrid {
            k,
            h,
            spatial_dim,
            t: axis(chart.center.0),
            xp: if spatial_dim == 1 { vec![chart.center.1] } else { axis(chart.center.1) },
            xn: axis(0.0),
        }
    }

    fn nx(&self) -> usize {
        self.xp.len() * self.xn.len()
    }

    /// Spatial index of `(x'_i, x_n_j)`.
    fn sidx(&self, i: usize, j: usize) -> usize {
        i * self.xn.len() + j
    }

    fn dvol(&self) -> f64 {
        if self.spatial_dim == 1 {
            self.h * self.h
        } else {
            self.h * self.h * self.h
        }
    }

    /// Trapezoid weight in `x_n` for side `side` (half weight on the interface).
    fn side_weight(&self, j: usize, side: Side) -> f64 {
        let c = self.k;
        match side {
            Side::Minus if j < c => 1.0,
            Side::Plus if j > c => 1.0,
            _ if j == c => 0.5,
            _ => 0.0,
        }
    }
}

fn sample_side(g: &ChartGrid, f: &(dyn Fn(f64, f64, f64) -> f64 + Sync)) -> SpaceTimeField {
    let mut u = SpaceTimeField::zeros(g.t.len(), g.nx(), g.h);
    for (it, &t) in g.t.iter().enumerate() {
        for (i, &xp) in g.xp.iter().enumerate() {
            for (j, &xn) in g.xn.iter().enumerate() {
                *u.at_mut(it, g.sidx(i, j)) = f(t, xp, xn);
            }
        }
    }
    u
}

/// `P u = u_tt - div(c ∇u)` on the chart interior with the side's branch
/// extended over the whole chart (flux form, second order).
fn apply_p(g: &ChartGrid, u: &SpaceTimeField, c: &dyn Fn(f64, f64) -> f64) -> SpaceTimeField {
    let (nt, nxp, nxn) = (g.t.len(), g.xp.len(), g.xn.len());
    let h2 = g.h * g.h;
    let mut out = SpaceTimeField::zeros(nt, g.nx(), g.h);
    let get = |it: isize, i: isize, j: isize| -> f64 {
        if it < 0 || it >= nt as isize || i < 0 || i >= nxp as isize || j < 0 || j >= nxn as isize {
            0.0
        } else {
            u.at(it as usize, g.sidx(i as usize, j as usize))
        }
    };
    let hh = 0.5 * g.h;
    for it in 0..nt {
        for i in 0..nxp {
            for j in 0..nxn {
                let (iti, ii, jj) = (it as isize, i as isize, j as isize);
                let u0 = get(iti, ii, jj);
                let utt = (get(iti + 1, ii, jj) - 2.0 * u0 + get(iti - 1, ii, jj)) / h2;
                let (xp, xn) = (g.xp[i], g.xn[j]);
                let cn_up = c(xp, xn + hh);
                let cn_dn = c(xp, xn - hh);
                let mut div = (cn_up * (get(iti, ii, jj + 1) - u0) - cn_dn * (u0 - get(iti, ii, jj - 1))) / h2;
                if g.spatial_dim == 2 {
                    let cr = c(xp + hh, xn);
                    let cl = c(xp - hh, xn);
                    div += (cr * (get(iti, ii + 1, jj) - u0) - cl * (u0 - get(iti, ii - 1, jj))) / h2;
                }
                *out.at_mut(it, g.sidx(i, j)) = utt - div;
            }
        }
    }
    out
}

/// `Σ |∂ w|²` over the space-time gradient by central differences, per point.
fn grad_sq(g: &ChartGrid, w: &SpaceTimeField, it: usize, i: usize, j: usize) -> f64 {
    let (nt, nxp, nxn) = (g.t.len(), g.xp.len(), g.xn.len());
    let at = |a: usize, b: usize, c: usize| w.at(a, g.sidx(b, c));
    let d = |lo: f64, hi: f64, span: f64| (hi - lo) / span;
    let cd = |n: usize, k: usize, f: &dyn Fn(usize) -> f64| -> f64 {
        if k == 0 {
            d(f(0), f(1), g.h)
        } else if k + 1 == n {
            d(f(n - 2), f(n - 1), g.h)
        } else {
            d(f(k - 1), f(k + 1), 2.0 * g.h)
        }
    };
    let dt = cd(nt, it, &|a| at(a, i, j));
    let dn = cd(nxn, j, &|c| at(it, i, c));
    let mut s = dt * dt + dn * dn;
    if g.spatial_dim == 2 {
        let dp = cd(nxp, i, &|b| at(it, b, j));
        s += dp * dp;
    }
    s
}

/// Quadrature of both sides of the Carleman inequality for one side pair.
pub fn carleman_sides(
    u: &SidePair<'_>,
    weight: &CarlemanWeight,
    params: &CarlemanParams,
    medium: &Medium,
    chart: &LocalChart,
) -> Result<CarlemanTerms> {
    let CarlemanParams { tau, delta, d, r0 } = *params;
    if !(tau >= 1.0 && delta > 0.0 && d > 0.0 && r0 > 0.0) {
        return Err(Error::arg("need tau >= 1 and positive delta, d, r0"));
    }
    let fc = FlatChart::of(medium)?;
    let g = ChartGrid::new(chart, fc.dim);
    let um = sample_side(&g, u.minus);
    let up = sample_side(&g, u.plus);

    // support inside B((t0, x0), r0)
    let umax = um.data.iter().chain(&up.data).fold(0.0f64, |a, x| a.max(x.abs()));
    if umax == 0.0 {
        return Ok(CarlemanTerms::default());
    }
    for (it, &t) in g.t.iter().enumerate() {
        for (i, &xp) in g.xp.iter().enumerate() {
            for (j, &xn) in g.xn.iter().enumerate() {
                let dx = if fc.dim == 2 { xp - chart.center.1 } else { 0.0 };
                let z = ((t - chart.center.0).powi(2) + dx * dx + xn * xn).sqrt();
                if z >= r0 {
                    let s = g.sidx(i, j);
                    let v = um.at(it, s).abs().max(up.at(it, s).abs());
                    if v > 1e-12 * umax {
                        return Err(Error::arg(format!("support leaves B(center, r0 = {r0}) at distance {z:.4}")));
                    }
                }
            }
        }
    }

    let phi_m: Vec<f64> = (0..g.nx()).map(|s| weight.phi(g.xn[s % g.xn.len()], Side::Minus)).collect();
    let phi_p: Vec<f64> = (0..g.nx()).map(|s| weight.phi(g.xn[s % g.xn.len()], Side::Plus)).collect();
    // overflow guard on the side where each branch is used
    let mut phi_ref = f64::NEG_INFINITY;
    for s in 0..g.nx() {
        let j = s % g.xn.len();
        if g.side_weight(j, Side::Minus) > 0.0 {
            phi_ref = phi_ref.max(phi_m[s]);
        }
        if g.side_weight(j, Side::Plus) > 0.0 {
            phi_ref = phi_ref.max(phi_p[s]);
        }
    }
    if tau * phi_ref > MAX_EXPONENT {
        return Err(Error::Rescaling(format!(
            "tau * max(phi) = {:.1} over the chart exceeds {MAX_EXPONENT}; shrink the chart or lower tau",
            tau * phi_ref
        )));
    }
    let shift = |p: &[f64]| p.iter().map(|x| x - phi_ref).collect::<Vec<_>>();
    let (wm, wp) = (shift(&phi_m), shift(&phi_p));

    let c_of = |side: Side| move |xp: f64, xn: f64| medium.c_side(&fc.point(xp, xn), side);
    let pum = apply_p(&g, &um, &c_of(Side::Minus));
    let pup = apply_p(&g, &up, &c_of(Side::Plus));
    let q_pum = apply_qphi(&pum, tau, delta, &wm)?;
    let q_pup = apply_qphi(&pup, tau, delta, &wp)?;
    let q_um = apply_qphi(&um, tau, delta, &wm)?;
    let q_up = apply_qphi(&up, tau, delta, &wp)?;
    let scale = |u: &SpaceTimeField, w: &[f64]| {
        let mut e = u.clone();
        for it in 0..u.nt {
            for s in 0..u.nx {
                *e.at_mut(it, s) *= (tau * w[s]).exp();
            }
        }
        e
    };
    let e_um = scale(&um, &wm);
    let e_up = scale(&up, &wp);

    let dv = g.dvol();
    let (mut op_term, mut rem_l2, mut rem_grad, mut rhs_l2, mut rhs_grad) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for it in 0..g.t.len() {
        for i in 0..g.xp.len() {
            for j in 0..g.xn.len() {
                let s = g.sidx(i, j);
                for (side, qp, qu, eu) in
                    [(Side::Minus, &q_pum, &q_um, &e_um), (Side::Plus, &q_pup, &q_up, &e_up)]
                {
                    let w = g.side_weight(j, side) * dv;
                    if w == 0.0 {
                        continue;
                    }
                    op_term += w * qp.at(it, s).powi(2);
                    rhs_l2 += w * qu.at(it, s).powi(2);
                    rem_l2 += w * eu.at(it, s).powi(2);
                    rhs_grad += w * grad_sq(&g, qu, it, i, j);
                    rem_grad += w * grad_sq(&g, eu, it, i, j);
                }
            }
        }
    }

    // interface traces: θ = u- - u+, Θ = c+ ∂n u+ - c- ∂n u- (one-sided, second order)
    let c0 = g.k;
    let nt = g.t.len();
    let nxp = g.xp.len();
    let mut theta = SpaceTimeField::zeros(nt, nxp, g.h);
    let mut big_theta = SpaceTimeField::zeros(nt, nxp, g.h);
    let (mut th_max, mut bt_max) = (0.0f64, 0.0f64);
    for it in 0..nt {
        for i in 0..nxp {
            let m = |j: usize| um.at(it, g.sidx(i, j));
            let p = |j: usize| up.at(it, g.sidx(i, j));
            let th = m(c0) - p(c0);
            let dn_p = (-3.0 * p(c0) + 4.0 * p(c0 + 1) - p(c0 + 2)) / (2.0 * g.h);
            let dn_m = (3.0 * m(c0) - 4.0 * m(c0 - 1) + m(c0 - 2)) / (2.0 * g.h);
            let x = fc.point(g.xp[i], 0.0);
            let bt = medium.c_side(&x, Side::Plus) * dn_p - medium.c_side(&x, Side::Minus) * dn_m;
            *theta.at_mut(it, i) = th;
            *big_theta.at_mut(it, i) = bt;
            th_max = th_max.max(th.abs());
            bt_max = bt_max.max(bt.abs());
        }
    }
    // φ = 0 on the interface, so Q acts there as the Gaussian alone
    let w0 = vec![-phi_ref; nxp];
    let q_theta = apply_qphi(&theta, tau, delta, &w0)?;
    let q_big = apply_qphi(&big_theta, tau, delta, &w0)?;
    let da = if fc.dim == 1 { g.h } else { g.h * g.h };
    let mut t_l2 = 0.0;
    let mut t_grad = 0.0;
    let mut t_big = 0.0;
    for it in 0..nt {
        for i in 0..nxp {
            t_l2 += da * q_theta.at(it, i).powi(2);
            t_big += da * q_big.at(it, i).powi(2);
            // tangential gradient of θ, then Q (Q commutes with ∂_t; x'-derivative is pointwise)
            let dt = if it == 0 || it + 1 == nt { 0.0 } else { (q_theta.at(it + 1, i) - q_theta.at(it - 1, i)) / (2.0 * g.h) };
            let mut gsq = dt * dt;
            if nxp > 1 {
                let dp = if i == 0 || i + 1 == nxp { 0.0 } else { (q_theta.at(it, i + 1) - q_theta.at(it, i - 1)) / (2.0 * g.h) };
                gsq += dp * dp;
            }
            t_grad += da * gsq;
        }
    }
    let damp = (-d * tau).exp();
    Ok(CarlemanTerms {
        operator: op_term,
        remainder: damp * (tau.powi(3) * rem_l2 + tau * rem_grad),
        transmission: tau.powi(3) * t_l2 + tau * t_grad + tau * t_big,
        rhs_l2: tau.powi(3) * rhs_l2,
        rhs_grad: tau * rhs_grad,
        log_scale: 2.0 * tau * phi_ref,
        theta_max: th_max,
        big_theta_max: bt_max,
    })
}

/// Smooth bump `exp(1 - 1/(1 - |z - c|²/ρ²))` (peak value 1, support radius ρ).
pub fn bump(t: f64, xp: f64, xn: f64, center: (f64, f64, f64), radius: f64) -> f64 {
    let r2 = ((t - center.0).powi(2) + (xp - center.1).powi(2) + (xn - center.2).powi(2)) / (radius * radius);
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// One family member: independent bumps on each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpMember {
    pub minus: (f64, (f64, f64, f64), f64),
    pub plus: (f64, (f64, f64, f64), f64),
}

impl BumpMember {
    pub fn eval(&self, side: Side, t: f64, xp: f64, xn: f64) -> f64 {
        let (a, c, r) = match side {
            Side::Minus => self.minus,
            Side::Plus => self.plus,
        };
        a * bump(t, xp, xn, c, r)
    }
}

/// `n` random bump pairs supported inside `B(center, r0)`.
pub fn random_bumps(n: usize, chart: &LocalChart, r0: f64, spatial_dim: usize, seed: u64) -> Vec<BumpMember> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let radius = r0 * rng.gen_range(0.3..0.5);
        let room = r0 - radius;
        loop {
            let c: (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let cp = if spatial_dim == 1 { 0.0 } else { c.1 };
            if (c.0 * c.0 + cp * cp + c.2 * c.2).sqrt() < 1.0 {
                let amp = rng.gen_range(0.5..1.5);
                return (amp, (chart.center.0 + room * c.0, chart.center.1 + room * cp, room * c.2), radius);
            }
        }
    };
    (0..n).map(|_| BumpMember { minus: draw(&mut rng), plus: draw(&mut rng) }).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyRow {
    pub tau: f64,
    /// Smallest `C` with `C · LHS >= RHS` over the family.
    pub c: f64,
    pub binding_member: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyReport {
    pub rows: Vec<CertifyRow>,
    /// `sup_τ C(τ)` over the grid.
    pub sup_c: f64,
    /// No member has a nonzero left-hand side.
    pub degenerate: bool,
    /// `C` is nonincreasing over the upper half of the `τ` grid.
    pub nonincreasing_top_half: bool,
    /// `C` increases over the last three grid points.
    pub growth_flag: bool,
}

/// Fit the Carleman constant over a family of side pairs and a `τ` grid.
pub fn carleman_certify(
    family: &[SidePair<'_>],
    weight: &CarlemanWeight,
    delta: f64,
    d: f64,
    r0: f64,
    taus: &[f64],
    medium: &Medium,
    chart: &LocalChart,
) -> Result<CertifyReport> {
    let mut rows = Vec::with_capacity(taus.len());
    let mut any_nonzero = false;
    for &tau in taus {
        let params = CarlemanParams { tau, delta, d, r0 };
        let terms: Vec<CarlemanTerms> = family
            .par_iter()
            .map(|u| carleman_sides(u, weight, &params, medium, chart))
            .collect::<Result<_>>()?;
        let mut c = 0.0f64;
        let mut bind = 0;
        for (k, t) in terms.iter().enumerate() {
            let (l, r) = (t.lhs(), t.rhs());
            if l == 0.0 && r == 0.0 {
                continue;
            }
            any_nonzero = true;
            let ratio = if l == 0.0 { f64::INFINITY } else { r / l };
            if ratio > c {
                c = ratio;
                bind = k;
            }
        }
        rows.push(CertifyRow { tau, c, binding_member: bind });
    }
    if !any_nonzero {
        return Ok(CertifyReport {
            rows,
            sup_c: f64::NAN,
            degenerate: true,
            nonincreasing_top_half: false,
            growth_flag: false,
        });
    }
    let sup_c = rows.iter().map(|r| r.c).fold(0.0, f64::max);
    let half = rows.len() / 2;
    let top = &rows[half.min(rows.len().saturating_sub(1))..];
    let nonincreasing_top_half = top.windows(2).all(|w| w[1].c <= w[0].c * (1.0 + 1e-9));
    let n = rows.len();
    let growth_flag = n >= 3 && rows[n - 1].c > rows[n - 2].c && rows[n - 2].c > rows[n - 3].c;
    Ok(CertifyReport { rows, sup_c, degenerate: false, nonincreasing_top_half, growth_flag })
}
