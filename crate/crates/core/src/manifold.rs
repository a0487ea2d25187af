//! Charts of the Poincaré ball with an excised inner sphere.
//!
//! Two node layouts share one indexing scheme `(i_r · n_θ + j_θ) · n_φ + k_φ`:
//!
//! * [`Layout::Gauss`]: Gauss–Legendre in r per cell (cells graded uniformly in
//!   hyperbolic distance), Gauss–Legendre in cos θ, trapezoid in φ. Used with
//!   analytic jets, where quadrature is the only error source.
//! * [`Layout::Lattice`]: uniform (r, θ, φ) lattice with endpoints in r,
//!   half-offset θ rows and periodic φ. Carries second-order finite
//!   differences and exact cell-integral weights.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::jet::Jet;
use crate::{Error, Result};

pub const GRID_FORMAT_VERSION: u32 = 1;

/// ρ = (1 − r²)/2.
#[inline]
pub fn rho(x: &[f64; 3]) -> f64 {
    0.5 * (1.0 - (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]))
}

#[inline]
pub fn rho_jet(x: &[Jet; 3]) -> Jet {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * -0.5 + 0.5
}

#[inline]
pub fn rho_of_r(r: f64) -> f64 {
    0.5 * (1.0 - r * r)
}

/// Radius of the level set {ρ = t}.
pub fn r_of_rho(t: f64) -> f64 {
    (1.0 - 2.0 * t).max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Gauss,
    Lattice,
}

impl Layout {
    pub fn name(&self) -> &'static str {
        match self {
            Layout::Gauss => "gauss",
            Layout::Lattice => "lattice",
        }
    }
}

/// Where a field is evaluated: a Cartesian point, plus the node it sits on if any.
#[derive(Clone, Copy, Debug)]
pub struct Site {
    pub x: [f64; 3],
    pub node: Option<usize>,
}

/// Quadrature on one of the two bounding spheres (Euclidean area weights).
#[derive(Clone, Debug)]
pub struct Surface {
    pub r: f64,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub node_index: Option<Vec<usize>>,
}

impl Surface {
    pub fn sites(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.points.iter().enumerate().map(move |(q, x)| {
            let node = self.node_index.as_ref().map(|ix| ix[q]);
            (Site { x: *x, node }, self.weights[q])
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Inner,
    Outer,
}

#[derive(Clone, Debug)]
pub struct ChartGrid {
    pub layout: Layout,
    pub r_inner: f64,
    pub r_outer: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    /// (r, θ, φ) per node.
    pub nodes: Vec<[f64; 3]>,
    pub xyz: Vec<[f64; 3]>,
    /// Weights for the Euclidean measure dμ(h̊).
    pub quad_weights: Vec<f64>,
    pub inner: Surface,
    pub outer: Surface,
    pub radii: Vec<f64>,
    pub thetas: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = z;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn check_radii(r_inner: f64, r_outer: f64) -> Result<()> {
    if !(r_inner > 0.0 && r_inner < r_outer && r_outer < 1.0) {
        return Err(Error::InvalidGeometry(format!(
            "need 0 < r_inner < r_outer < 1, got r_inner = {r_inner}, r_outer = {r_outer}"
        )));
    }
    Ok(())
}

fn spherical(r: f64, th: f64, ph: f64) -> [f64; 3] {
    let (st, ct) = th.sin_cos();
    let (sp, cp) = ph.sin_cos();
    [r * st * cp, r * st * sp, r * ct]
}

/// Gauss chart: `ceil(n_r/4)` radial cells of 4-point Gauss–Legendre, graded
/// uniformly in hyperbolic distance; `n_ang` Gauss nodes in cos θ and
/// `2·n_ang` equispaced φ.
pub fn build_ball_chart(r_inner: f64, r_outer: f64, n_r: usize, n_ang: usize) -> Result<ChartGrid> {
    check_radii(r_inner, r_outer)?;
    if n_r < 8 || n_ang < 8 {
        return Err(Error::InvalidGeometry(format!("counts must be ≥ 8, got n_r = {n_r}, n_ang = {n_ang}")));
    }
    let cells = n_r.div_ceil(4);
    let (gx, gw) = gauss_legendre(4);
    let d_in = 2.0 * r_inner.atanh();
    let d_out = 2.0 * r_outer.atanh();
    let mut radii = Vec::with_capacity(4 * cells);
    let mut rw = Vec::with_capacity(4 * cells);
    for c in 0..cells {
        let a = (0.5 * (d_in + (d_out - d_in) * c as f64 / cells as f64)).tanh();
        let b = (0.5 * (d_in + (d_out - d_in) * (c + 1) as f64 / cells as f64)).tanh();
        let (a, b) = (if c == 0 { r_inner } else { a }, if c + 1 == cells { r_outer } else { b });
        for q in 0..4 {
            let r = 0.5 * (a + b) + 0.5 * (b - a) * gx[q];
            radii.push(r);
            rw.push(0.5 * (b - a) * gw[q] * r * r);
        }
    }
    let (cx, cw) = gauss_legendre(n_ang);
    // cos θ descending so θ ascends
    let thetas: Vec<f64> = cx.iter().rev().map(|c| c.acos()).collect();
    let tw: Vec<f64> = cw.iter().rev().copied().collect();
    let n_phi = 2 * n_ang;
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let n_r_eff = radii.len();

    let mut nodes = Vec::with_capacity(n_r_eff * n_ang * n_phi);
    let mut xyz = Vec::with_capacity(nodes.capacity());
    let mut quad = Vec::with_capacity(nodes.capacity());
    for (i, &r) in radii.iter().enumerate() {
        for (j, &th) in thetas.iter().enumerate() {
            for k in 0..n_phi {
                let ph = k as f64 * dphi;
                nodes.push([r, th, ph]);
                xyz.push(spherical(r, th, ph));
                quad.push(rw[i] * tw[j] * dphi);
            }
        }
    }
    let sphere = |r: f64| {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (j, &th) in thetas.iter().enumerate() {
            for k in 0..n_phi {
                points.push(spherical(r, th, k as f64 * dphi));
                weights.push(r * r * tw[j] * dphi);
            }
        }
        Surface { r, points, weights, node_index: None }
    };
    Ok(ChartGrid {
        layout: Layout::Gauss,
        r_inner,
        r_outer,
        n_r: n_r_eff,
        n_theta: n_ang,
        n_phi,
        inner: sphere(r_inner),
        outer: sphere(r_outer),
        nodes,
        xyz,
        quad_weights: quad,
        radii,
        thetas,
    })
}

/// Uniform lattice with `n_r` radial nodes (endpoints included), `n_theta`
/// half-offset rows and `n_phi` (even) meridians.
pub fn build_lattice_chart(r_inner: f64, r_outer: f64, n_r: usize, n_theta: usize, n_phi: usize) -> Result<ChartGrid> {
    check_radii(r_inner, r_outer)?;
    if n_r < 5 || n_theta < 4 || n_phi < 8 || n_phi % 2 != 0 {
        return Err(Error::InvalidGeometry(format!(
            "lattice needs n_r ≥ 5, n_theta ≥ 4, even n_phi ≥ 8 (got {n_r}, {n_theta}, {n_phi})"
        )));
    }
    let dr = (r_outer - r_inner) / (n_r - 1) as f64;
    let dth = std::f64::consts::PI / n_theta as f64;
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let radii: Vec<f64> = (0..n_r).map(|i| r_inner + i as f64 * dr).collect();
    let thetas: Vec<f64> = (0..n_theta).map(|j| (j as f64 + 0.5) * dth).collect();
    // ∫ hat_i(r) r² dr, exact
    let hat_r2 = |i: usize| -> f64 {
        let ri = radii[i];
        let mut s = 0.0;
        if i > 0 {
            let a = radii[i - 1];
            // ∫_a^ri (r − a)/dr · r² dr
            s += ((ri.powi(4) - a.powi(4)) / 4.0 - a * (ri.powi(3) - a.powi(3)) / 3.0) / dr;
        }
        if i + 1 < n_r {
            let b = radii[i + 1];
            s += ((b * (b.powi(3) - ri.powi(3))) / 3.0 - (b.powi(4) - ri.powi(4)) / 4.0) / dr;
        }
        s
    };
    let rw: Vec<f64> = (0..n_r).map(hat_r2).collect();
    let tw: Vec<f64> = (0..n_theta)
        .map(|j| (j as f64 * dth).cos() - ((j + 1) as f64 * dth).cos())
        .collect();
    let mut nodes = Vec::with_capacity(n_r * n_theta * n_phi);
    let mut xyz = Vec::with_capacity(nodes.capacity());
    let mut quad = Vec::with_capacity(nodes.capacity());
    for (i, &r) in radii.iter().enumerate() {
        for (j, &th) in thetas.iter().enumerate() {
            for k in 0..n_phi {
                let ph = k as f64 * dphi;
                nodes.push([r, th, ph]);
                xyz.push(spherical(r, th, ph));
                quad.push(rw[i] * tw[j] * dphi);
            }
        }
    }
    let sphere = |i: usize| {
        let r = radii[i];
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut index = Vec::new();
        for (j, &th) in thetas.iter().enumerate() {
            for k in 0..n_phi {
                points.push(spherical(r, th, k as f64 * dphi));
                weights.push(r * r * tw[j] * dphi);
                index.push((i * n_theta + j) * n_phi + k);
            }
        }
        Surface { r, points, weights, node_index: Some(index) }
    };
    Ok(ChartGrid {
        layout: Layout::Lattice,
        r_inner,
        r_outer,
        n_r,
        n_theta,
        n_phi,
        inner: sphere(0),
        outer: sphere(n_r - 1),
        nodes,
        xyz,
        quad_weights: quad,
        radii,
        thetas,
    })
}

/// Chart for a ladder resolution `n`: Gauss uses (n_r, n_ang) = (n, n/2);
/// the lattice uses n radial intervals, n/2 rows and n meridians.
pub fn chart_for_resolution(layout: Layout, r_inner: f64, r_outer: f64, n: usize) -> Result<ChartGrid> {
    match layout {
        Layout::Gauss => build_ball_chart(r_inner, r_outer, n.max(8), (n / 2).max(8)),
        Layout::Lattice => build_lattice_chart(r_inner, r_outer, n + 1, (n / 2).max(4), n.max(8)),
    }
}

/// ρ, dρ and the Euclidean Hessian of ρ at every node.
#[derive(Clone, Debug)]
pub struct DefiningFunction {
    pub value: Vec<f64>,
    pub gradient: Vec<[f64; 3]>,
    pub euclidean_hessian: [[f64; 3]; 3],
}

pub fn evaluate_defining_function(chart: &ChartGrid) -> DefiningFunction {
    DefiningFunction {
        value: chart.xyz.iter().map(rho).collect(),
        gradient: chart.xyz.iter().map(|x| [-x[0], -x[1], -x[2]]).collect(),
        euclidean_hessian: [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
    }
}

/// Smoothstep profile: 1 on ]−∞, 1], 0 on [2, ∞[, quintic in between.
pub fn chi_profile(t: f64) -> f64 {
    if t <= 1.0 {
        1.0
    } else if t >= 2.0 {
        0.0
    } else {
        let u = t - 1.0;
        1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    }
}

/// Jet version of χ_R = χ(−ln ρ / R).
pub fn chi_jet(x: &[Jet; 3], big_r: f64) -> Jet {
    let t = rho_jet(x).ln() * (-1.0 / big_r);
    if t.v <= 1.0 {
        Jet::cst(1.0)
    } else if t.v >= 2.0 {
        Jet::ZERO
    } else {
        let u = t.v - 1.0;
        let f = 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
        let f1 = -30.0 * u * u * (1.0 - u) * (1.0 - u);
        let f2 = -60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
        t.compose(f, f1, f2)
    }
}

pub fn cutoff_chi(chart: &ChartGrid, big_r: f64) -> Result<Vec<f64>> {
    let thr = (-2.0 * big_r).exp();
    if !chart.xyz.iter().any(|x| rho(x) > thr) {
        return Err(Error::DegenerateRegion(format!("Ω_R empty for R = {big_r}")));
    }
    Ok(chart.xyz.iter().map(|x| chi_profile(-rho(x).ln() / big_r)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionKind {
    /// Ω_R = {ρ > e^{−2R}}.
    Omega,
    /// E_R = M ∖ Ω_R.
    Exterior,
    /// A_R = Ω_R ∖ Ω_{R/2}.
    Annulus,
    Whole,
}

impl RegionKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegionKind::Omega => "Omega_R",
            RegionKind::Exterior => "E_R",
            RegionKind::Annulus => "A_R",
            RegionKind::Whole => "M",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegionMask {
    pub kind: RegionKind,
    pub big_r: f64,
    pub node_membership: Vec<bool>,
    /// Ω_R uses the strict inequality ρ > e^{−2R}.
    pub strict: bool,
}

impl RegionMask {
    pub fn whole(chart: &ChartGrid) -> RegionMask {
        RegionMask {
            kind: RegionKind::Whole,
            big_r: f64::INFINITY,
            node_membership: vec![true; chart.xyz.len()],
            strict: true,
        }
    }

    pub fn contains_point(kind: RegionKind, big_r: f64, x: &[f64; 3]) -> bool {
        let p = rho(x);
        let om = |rr: f64| p > (-2.0 * rr).exp();
        match kind {
            RegionKind::Omega => om(big_r),
            RegionKind::Exterior => !om(big_r),
            RegionKind::Annulus => om(big_r) && !om(0.5 * big_r),
            RegionKind::Whole => true,
        }
    }

    pub fn count(&self) -> usize {
        self.node_membership.iter().filter(|b| **b).count()
    }
}

pub fn region_mask(chart: &ChartGrid, kind: RegionKind, big_r: f64) -> Result<RegionMask> {
    if !(big_r > 0.0) {
        return Err(Error::Range(format!("R must be positive, got {big_r}")));
    }
    let node_membership: Vec<bool> = chart.xyz.iter().map(|x| RegionMask::contains_point(kind, big_r, x)).collect();
    if !node_membership.iter().any(|b| *b) {
        return Err(Error::DegenerateRegion(format!("{} empty for R = {big_r}", kind.name())));
    }
    Ok(RegionMask { kind, big_r, node_membership, strict: true })
}

/// Radius of ∂Ω_R on the ball.
pub fn omega_radius(big_r: f64) -> f64 {
    r_of_rho((-2.0 * big_r).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Measure {
    /// dμ(g̊) = ρ⁻³ dμ(h̊).
    Background,
    Euclidean,
}

impl ChartGrid {
    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn site(&self, node: usize) -> Site {
        Site { x: self.xyz[node], node: Some(node) }
    }

    pub fn surface(&self, which: Boundary) -> &Surface {
        match which {
            Boundary::Inner => &self.inner,
            Boundary::Outer => &self.outer,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_theta + j) * self.n_phi + k
    }

    #[inline]
    pub fn ijk(&self, node: usize) -> (usize, usize, usize) {
        let k = node % self.n_phi;
        let t = node / self.n_phi;
        (t / self.n_theta, t % self.n_theta, k)
    }

    /// Weight of node `n` for the background measure dμ(g̊).
    #[inline]
    pub fn bg_weight(&self, n: usize) -> f64 {
        self.quad_weights[n] / rho(&self.xyz[n]).powi(3)
    }

    /// Nodes kept in residual norms: θ ∈ [cap, π − cap].
    pub fn off_pole(&self, node: usize, cap: f64) -> bool {
        let th = self.nodes[node][1];
        th >= cap && th <= std::f64::consts::PI - cap
    }

    /// Parallel per-node map followed by a fixed-order sum.
    pub fn sum_nodes<const K: usize, F>(&self, f: F) -> [f64; K]
    where
        F: Fn(usize) -> [f64; K] + Sync,
    {
        let parts: Vec<[f64; K]> = (0..self.len()).into_par_iter().map(&f).collect();
        let mut acc = [0.0; K];
        for p in parts {
            for k in 0..K {
                acc[k] += p[k];
            }
        }
        acc
    }

    pub fn sum_surface<const K: usize, F>(&self, which: Boundary, f: F) -> [f64; K]
    where
        F: Fn(Site) -> [f64; K] + Sync,
    {
        let s = self.surface(which);
        let parts: Vec<[f64; K]> = (0..s.points.len())
            .into_par_iter()
            .map(|q| {
                let site = Site { x: s.points[q], node: s.node_index.as_ref().map(|ix| ix[q]) };
                let v = f(site);
                let mut out = [0.0; K];
                for k in 0..K {
                    out[k] = v[k] * s.weights[q];
                }
                out
            })
            .collect();
        let mut acc = [0.0; K];
        for p in parts {
            for k in 0..K {
                acc[k] += p[k];
            }
        }
        acc
    }

    pub fn shell_volume(&self) -> f64 {
        4.0 * std::f64::consts::PI / 3.0 * (self.r_outer.powi(3) - self.r_inner.powi(3))
    }
}

/// Σ f·ρ^{power}·w over the region; the background measure adds ρ⁻³.
pub fn integrate_weighted(chart: &ChartGrid, f: &[f64], power: f64, region: &RegionMask, measure: Measure) -> Result<f64> {
    if let Some(n) = f.iter().zip(&region.node_membership).position(|(v, m)| *m && !v.is_finite()) {
        return Err(Error::NonFinite(n));
    }
    let extra = match measure {
        Measure::Background => -3.0,
        Measure::Euclidean => 0.0,
    };
    let [s] = chart.sum_nodes(|n| {
        if !region.node_membership[n] {
            return [0.0];
        }
        [f[n] * rho(&chart.xyz[n]).powf(power + extra) * chart.quad_weights[n]]
    });
    Ok(s)
}

/// Surface integral with respect to dσ(g̊) = ρ⁻² dσ(h̊).
pub fn boundary_integrate(chart: &ChartGrid, which: Boundary, f: impl Fn(Site) -> f64 + Sync) -> f64 {
    let [s] = chart.sum_surface(which, |site| [f(site) / rho(&site.x).powi(2)]);
    s
}

/// Outward unit normal of M for g̊ (as a vector field), and the
/// pairing ⟨dρ/ρ, η⟩ at a boundary point.
pub fn outward_normal(which: Boundary, x: &[f64; 3]) -> [f64; 3] {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let sgn = match which {
        Boundary::Inner => -1.0,
        Boundary::Outer => 1.0,
    };
    let p = rho(x);
    [sgn * p * x[0] / r, sgn * p * x[1] / r, sgn * p * x[2] / r]
}

pub fn d_log_rho_dot_normal(which: Boundary, r: f64) -> f64 {
    match which {
        Boundary::Inner => r,
        Boundary::Outer => -r,
    }
}

// ---------------------------------------------------------------------------
// Finite differences on the lattice

#[derive(Clone, Copy)]
struct Axis {
    d1: f64,
    d2: f64,
}

impl ChartGrid {
    fn theta_neighbor(&self, j: usize, k: usize, up: bool) -> (usize, usize) {
        let half = self.n_phi / 2;
        if up {
            if j + 1 == self.n_theta {
                (j, (k + half) % self.n_phi)
            } else {
                (j + 1, k)
            }
        } else if j == 0 {
            (0, (k + half) % self.n_phi)
        } else {
            (j - 1, k)
        }
    }

    fn dr(&self) -> f64 {
        (self.r_outer - self.r_inner) / (self.n_r - 1) as f64
    }

    fn d_r(&self, f: &dyn Fn(usize, usize, usize) -> f64, i: usize, j: usize, k: usize) -> Axis {
        let h = self.dr();
        let n = self.n_r;
        if i == 0 {
            let (f0, f1, f2, f3) = (f(0, j, k), f(1, j, k), f(2, j, k), f(3, j, k));
            Axis { d1: (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h), d2: (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h) }
        } else if i == n - 1 {
            let (f0, f1, f2, f3) = (f(i, j, k), f(i - 1, j, k), f(i - 2, j, k), f(i - 3, j, k));
            Axis { d1: (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h), d2: (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h) }
        } else {
            let (fm, f0, fp) = (f(i - 1, j, k), f(i, j, k), f(i + 1, j, k));
            Axis { d1: (fp - fm) / (2.0 * h), d2: (fp - 2.0 * f0 + fm) / (h * h) }
        }
    }

    fn d_theta(&self, f: &dyn Fn(usize, usize, usize) -> f64, i: usize, j: usize, k: usize) -> Axis {
        let h = std::f64::consts::PI / self.n_theta as f64;
        let (jp, kp) = self.theta_neighbor(j, k, true);
        let (jm, km) = self.theta_neighbor(j, k, false);
        let (fm, f0, fp) = (f(i, jm, km), f(i, j, k), f(i, jp, kp));
        Axis { d1: (fp - fm) / (2.0 * h), d2: (fp - 2.0 * f0 + fm) / (h * h) }
    }

    fn d_phi(&self, f: &dyn Fn(usize, usize, usize) -> f64, i: usize, j: usize, k: usize) -> Axis {
        let h = 2.0 * std::f64::consts::PI / self.n_phi as f64;
        let kp = (k + 1) % self.n_phi;
        let km = (k + self.n_phi - 1) % self.n_phi;
        let (fm, f0, fp) = (f(i, j, km), f(i, j, k), f(i, j, kp));
        Axis { d1: (fp - fm) / (2.0 * h), d2: (fp - 2.0 * f0 + fm) / (h * h) }
    }

    /// Second-order FD partials in (r, θ, φ): first derivatives and the packed
    /// second-derivative matrix.
    pub fn fd_spherical(&self, vals: &dyn Fn(usize) -> f64, node: usize) -> ([f64; 3], [f64; 6]) {
        debug_assert_eq!(self.layout, Layout::Lattice);
        let (i, j, k) = self.ijk(node);
        let f = |a: usize, b: usize, c: usize| vals(self.index(a, b, c));
        let ar = self.d_r(&f, i, j, k);
        let at = self.d_theta(&f, i, j, k);
        let ap = self.d_phi(&f, i, j, k);
        let ft = |a: usize, b: usize, c: usize| self.d_theta(&f, a, b, c).d1;
        let fp = |a: usize, b: usize, c: usize| self.d_phi(&f, a, b, c).d1;
        let f_rt = self.d_r(&ft, i, j, k).d1;
        let f_rp = self.d_r(&fp, i, j, k).d1;
        let f_tp = self.d_theta(&fp, i, j, k).d1;
        ([ar.d1, at.d1, ap.d1], [ar.d2, f_rt, f_rp, at.d2, f_tp, ap.d2])
    }

    /// Cartesian jet of a nodal scalar from FD partials and the chain rule.
    pub fn fd_jet(&self, vals: &dyn Fn(usize) -> f64, node: usize) -> Jet {
        let (d1, d2) = self.fd_spherical(vals, node);
        let q = spherical_jets(&self.xyz[node]);
        let mut out = Jet { v: vals(node), g: [0.0; 3], h: [0.0; 6], ord: 2 };
        for i in 0..3 {
            out.g[i] = (0..3).map(|a| d1[a] * q[a].g[i]).sum();
        }
        for i in 0..3 {
            for j in i..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    s += d1[a] * q[a].hess(i, j);
                    for b in 0..3 {
                        s += d2[crate::jet::sym(a, b)] * q[a].g[i] * q[b].g[j];
                    }
                }
                out.h[crate::jet::sym(i, j)] = s;
            }
        }
        out
    }
}

/// Jets of (r, θ, φ) as functions of Cartesian position.
pub fn spherical_jets(x: &[f64; 3]) -> [Jet; 3] {
    let c = Jet::coords(*x);
    let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    let th = (c[2] / r).acos();
    let ph = Jet::atan2(&c[1], &c[0]);
    [r, th, ph]
}

// ---------------------------------------------------------------------------
// Serialization

impl ChartGrid {
    /// Versioned text header followed by little-endian f64 columns
    /// r, θ, φ, x, y, z, w.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "hyperkid-grid v{GRID_FORMAT_VERSION}")?;
        writeln!(w, "layout = {}", self.layout.name())?;
        writeln!(w, "r_inner = {:.17e}", self.r_inner)?;
        writeln!(w, "r_outer = {:.17e}", self.r_outer)?;
        writeln!(w, "n_r = {}", self.n_r)?;
        writeln!(w, "n_theta = {}", self.n_theta)?;
        writeln!(w, "n_phi = {}", self.n_phi)?;
        writeln!(w, "rows = {}", self.len())?;
        writeln!(w, "columns = r,theta,phi,x,y,z,w")?;
        writeln!(w, "end")?;
        let mut buf = Vec::with_capacity(self.len() * 56);
        for n in 0..self.len() {
            for v in self.nodes[n].iter().chain(self.xyz[n].iter()).chain(std::iter::once(&self.quad_weights[n])) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Rebuilds the chart from a header and checks the stored columns agree.
    pub fn read_from(mut r: impl Read) -> Result<ChartGrid> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let marker = b"end\n";
        let pos = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| Error::Parse { line: 0, col: 0, msg: "missing header terminator".into() })?;
        let header = std::str::from_utf8(&bytes[..pos]).map_err(|e| Error::Parse { line: 0, col: 0, msg: e.to_string() })?;
        let mut kv = std::collections::BTreeMap::new();
        for (ln, line) in header.lines().enumerate() {
            if ln == 0 {
                if line.trim() != format!("hyperkid-grid v{GRID_FORMAT_VERSION}") {
                    return Err(Error::Parse { line: 1, col: 1, msg: format!("unsupported header `{line}`") });
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: ln + 1, col: 1, msg: "expected key = value".into() })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> { kv.get(k).ok_or_else(|| Error::Parse { line: 0, col: 0, msg: format!("missing `{k}`") }) };
        let num = |k: &str| -> Result<f64> { get(k)?.parse::<f64>().map_err(|e| Error::Parse { line: 0, col: 0, msg: e.to_string() }) };
        let cnt = |k: &str| -> Result<usize> { get(k)?.parse::<usize>().map_err(|e| Error::Parse { line: 0, col: 0, msg: e.to_string() }) };
        let chart = match get("layout")?.as_str() {
            "gauss" => build_ball_chart(num("r_inner")?, num("r_outer")?, cnt("n_r")?, cnt("n_theta")?)?,
            "lattice" => build_lattice_chart(num("r_inner")?, num("r_outer")?, cnt("n_r")?, cnt("n_theta")?, cnt("n_phi")?)?,
            other => return Err(Error::Parse { line: 2, col: 10, msg: format!("unknown layout `{other}`") }),
        };
        let body = &bytes[pos + marker.len()..];
        if body.len() != chart.len() * 56 || cnt("rows")? != chart.len() {
            return Err(Error::Parse { line: 0, col: 0, msg: "row count mismatch".into() });
        }
        for n in 0..chart.len() {
            let w = f64::from_le_bytes(body[n * 56 + 48..n * 56 + 56].try_into().unwrap());
            if w != chart.quad_weights[n] {
                return Err(Error::Parse { line: 0, col: 0, msg: format!("weight mismatch at row {n}") });
            }
        }
        Ok(chart)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(["node", "r", "theta", "phi", "x", "y", "z", "weight", "rho"]).map_err(io)?;
        for n in 0..self.len() {
            let [r, t, p] = self.nodes[n];
            let [x, y, z] = self.xyz[n];
            wr.write_record([
                n.to_string(),
                format!("{r:.17e}"),
                format!("{t:.17e}"),
                format!("{p:.17e}"),
                format!("{x:.17e}"),
                format!("{y:.17e}"),
                format!("{z:.17e}"),
                format!("{:.17e}", self.quad_weights[n]),
                format!("{:.17e}", rho(&self.xyz[n])),
            ])
            .map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        for deg in 0..14 {
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((s - exact).abs() < 1e-14, "deg {deg}");
        }
    }

    #[test]
    fn shell_volume_both_layouts() {
        let c = build_ball_chart(0.25, 0.99, 64, 32).unwrap();
        let v: f64 = c.quad_weights.iter().sum();
        assert!((v / 3.99893 - 1.0).abs() < 1e-5);
        assert!((v / c.shell_volume() - 1.0).abs() < 1e-12);
        let l = build_lattice_chart(0.3, 0.9, 17, 8, 16).unwrap();
        let v: f64 = l.quad_weights.iter().sum();
        assert!((v / l.shell_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_geometry() {
        assert!(matches!(build_ball_chart(0.9, 0.5, 8, 8), Err(Error::InvalidGeometry(_))));
        assert!(matches!(build_ball_chart(0.5, 1.0, 8, 8), Err(Error::InvalidGeometry(_))));
        assert!(build_ball_chart(0.5, 0.9, 8, 8).is_ok());
    }

    #[test]
    fn defining_function_values() {
        assert!((rho_of_r(0.5) - 0.375).abs() < 1e-15);
        assert!((rho_of_r(0.99) - 0.00995).abs() < 1e-15);
        assert_eq!(rho(&[0.0; 3]), 0.5);
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(chi_profile(-(0.4f64).ln()), 1.0);
        assert_eq!(chi_profile(4.0), 0.0);
        let c = build_ball_chart(0.25, 0.99, 16, 8).unwrap();
        assert!(cutoff_chi(&c, 1e9).unwrap().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn region_examples() {
        assert!((omega_radius(1.0) - 0.8540).abs() < 1e-3);
        assert!((omega_radius(2.0) - 0.9816).abs() < 1e-3);
        let c = build_ball_chart(0.25, 0.99, 16, 8).unwrap();
        assert!(matches!(region_mask(&c, RegionKind::Omega, 0.1), Err(Error::DegenerateRegion(_))));
        let a = region_mask(&c, RegionKind::Annulus, 2.0).unwrap();
        for (n, m) in a.node_membership.iter().enumerate() {
            let r = c.nodes[n][0];
            assert_eq!(*m, r > omega_radius(1.0) && r < omega_radius(2.0));
        }
    }

    #[test]
    fn weighted_integral_of_rho() {
        // ∫ρ²·ρ²·ρ⁻³ dx = ∫_B ρ dx = 4π/15 (inner ball and outer shell negligible at this size)
        let c = build_ball_chart(1e-4, 1.0 - 1e-9, 64, 16).unwrap();
        let f: Vec<f64> = c.xyz.iter().map(|x| rho(x).powi(2)).collect();
        let s = integrate_weighted(&c, &f, 2.0, &RegionMask::whole(&c), Measure::Background).unwrap();
        assert!((s / (4.0 * PI / 15.0) - 1.0).abs() < 1e-8, "{s}");
    }

    #[test]
    fn inner_sphere_area() {
        let c = build_ball_chart(0.5, 0.9, 8, 8).unwrap();
        let a = boundary_integrate(&c, Boundary::Inner, |_| 1.0);
        assert!((a - 4.0 * PI * 0.25 / (0.375 * 0.375)).abs() < 1e-10);
        assert!((a - 22.34).abs() < 0.01);
    }

    #[test]
    fn fd_jet_is_second_order() {
        let f = |x: &[f64; 3]| (x[0] + 2.0 * x[1] * x[2]).sin() + x[2] * x[2] * x[0];
        let err = |n: usize| {
            let c = build_lattice_chart(0.3, 0.8, n + 1, n / 2, n).unwrap();
            let vals: Vec<f64> = c.xyz.iter().map(f).collect();
            let mut e: f64 = 0.0;
            for node in 0..c.len() {
                if !c.off_pole(node, 0.3) {
                    continue;
                }
                let j = c.fd_jet(&|m| vals[m], node);
                let x = Jet::coords(c.xyz[node]);
                let ex = (x[0] + x[1] * x[2] * 2.0).compose(
                    (x[0].v + 2.0 * x[1].v * x[2].v).sin(),
                    (x[0].v + 2.0 * x[1].v * x[2].v).cos(),
                    -(x[0].v + 2.0 * x[1].v * x[2].v).sin(),
                ) + x[2] * x[2] * x[0];
                for k in 0..6 {
                    e = e.max((j.h[k] - ex.h[k]).abs());
                }
                for k in 0..3 {
                    e = e.max((j.g[k] - ex.g[k]).abs());
                }
            }
            e
        };
        let (a, b) = (err(32), err(64));
        assert!(a / b > 3.4, "ratio {}", a / b);
    }

    #[test]
    fn grid_round_trip() {
        let c = build_lattice_chart(0.3, 0.8, 9, 4, 8).unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let d = ChartGrid::read_from(&buf[..]).unwrap();
        assert_eq!(d.xyz, c.xyz);
        let mut csv = Vec::new();
        c.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), c.len() + 1);
    }
}
