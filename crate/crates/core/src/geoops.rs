//! The background operators T̊, S̊, Ů, the second-derivative identity for
//! 1-forms, and the model operators 𝒜 = −Δ + 3, B = −Δ + 2 with a
//! finite-volume solver on the lattice chart.

use crate::jet::Jet;
use crate::linalg::{pcg, CgTrace, Csr};
use crate::manifold::{rho, rho_of_r, ChartGrid, Layout, RegionMask, Site};
use crate::tensor::{
    dot_m3, flatten_m3, flatten_t3, map_nodes, residual_over_nodes, riemann_low, sym_part, Ctx, Geom, Metric,
    TensorField, M3, T3, V3, ZT,
};
use crate::verify::Residual;
use crate::wspace::{weighted_norm, WeightSpec};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct OperatorOutput {
    pub field: TensorField,
    pub trace: Option<TensorField>,
}

fn need_order(j: &[Jet], ord: u8, what: &str) -> Result<()> {
    if j.iter().any(|c| c.ord < ord) {
        return Err(Error::InsufficientSmoothness(format!("{what} needs {ord} derivatives")));
    }
    Ok(())
}

/// T̊(N) = ∇̊²N − N g̊.
pub fn t_at(geo: &Geom, n: &Jet) -> M3 {
    let mut t = geo.hessian(n);
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] -= *n * geo.g[i][j];
        }
    }
    t
}

/// S̊(Y)_ij = ∇̊_(i Y_j).
pub fn s_at(geo: &Geom, y: &V3) -> M3 {
    sym_part(&geo.cov_form(y))
}

/// Ů_kji = ∇̊²_kj X_i − g̊_jk X_i + g̊_ik X_j, indexed `[k][j][i]`.
pub fn u_at(geo: &Geom, x: &V3) -> T3 {
    let dx = geo.cov_form(x);
    let d2 = geo.cov_co2(&dx);
    let mut u = ZT;
    for k in 0..3 {
        for j in 0..3 {
            for i in 0..3 {
                u[k][j][i] = d2[k][j][i] - geo.g[j][k] * x[i] + geo.g[i][k] * x[j];
            }
        }
    }
    u
}

/// ∇²_kj X_i − (Riem_ijkl X^l + ∇_k S_ij + ∇_j S_ik − ∇_i S_jk), indexed `[k][j][i]`.
pub fn second_derivative_residual_at(geo: &Geom, x: &V3) -> T3 {
    let dx = geo.cov_form(x);
    let d2 = geo.cov_co2(&dx);
    let s = sym_part(&dx);
    let ds = geo.cov_co2(&s);
    let riem = riemann_low(&geo.g, &geo.gam);
    let xu = geo.raise(x);
    let mut r = ZT;
    for k in 0..3 {
        for j in 0..3 {
            for i in 0..3 {
                let mut curv = Jet::ZERO;
                for l in 0..3 {
                    curv += riem[i][j][k][l] * xu[l];
                }
                r[k][j][i] = d2[k][j][i] - (curv + ds[k][i][j] + ds[j][i][k] - ds[i][j][k]);
            }
        }
    }
    r
}

fn vals(v: impl IntoIterator<Item = Jet>) -> Vec<f64> {
    v.into_iter().map(|j| j.v).collect()
}

fn check_kind(u: &TensorField, rank: (u8, u8), what: &str) -> Result<()> {
    if u.rank != rank {
        return Err(Error::KindMismatch(format!("{what} expects rank {:?}, got {:?}", rank, u.rank)));
    }
    Ok(())
}

pub fn op_t(ctx: &Ctx, n: &TensorField) -> Result<OperatorOutput> {
    check_kind(n, (0, 0), "T̊")?;
    let both = map_nodes(ctx, (0, 3), |site| {
        let f = n.scalar_jet(ctx, site)?;
        need_order(&[f], 2, "T̊")?;
        let geo = Geom::background(&Jet::coords(site.x));
        let t = t_at(&geo, &f);
        let mut v = vals(flatten_m3(&t));
        v.extend(std::iter::repeat(0.0).take(26 - 9));
        v.push(dot_m3(&geo.gi, &t).v);
        Ok(v)
    })?;
    split_trace(both, 9)
}

pub fn op_s(ctx: &Ctx, y: &TensorField) -> Result<OperatorOutput> {
    check_kind(y, (0, 1), "S̊")?;
    let both = map_nodes(ctx, (0, 3), |site| {
        let f = y.form_jets(ctx, site)?;
        need_order(&f, 1, "S̊")?;
        let geo = Geom::background(&Jet::coords(site.x));
        let s = s_at(&geo, &f);
        let mut v = vals(flatten_m3(&s));
        v.extend(std::iter::repeat(0.0).take(26 - 9));
        v.push(dot_m3(&geo.gi, &s).v);
        Ok(v)
    })?;
    split_trace(both, 9)
}

// packs a 9-component field and its trace into one pass, then splits
fn split_trace(both: TensorField, nc: usize) -> Result<OperatorOutput> {
    let rows = both.comps.len() / 27;
    let mut f = Vec::with_capacity(rows * nc);
    let mut t = Vec::with_capacity(rows);
    for r in 0..rows {
        f.extend_from_slice(&both.comps[r * 27..r * 27 + nc]);
        t.push(both.comps[r * 27 + 26]);
    }
    Ok(OperatorOutput { field: TensorField::nodal((0, 2), f), trace: Some(TensorField::nodal((0, 0), t)) })
}

pub fn op_u(ctx: &Ctx, x: &TensorField) -> Result<TensorField> {
    check_kind(x, (0, 1), "Ů")?;
    map_nodes(ctx, (0, 3), |site| {
        let f = x.form_jets(ctx, site)?;
        need_order(&f, 2, "Ů")?;
        let geo = Geom::background(&Jet::coords(site.x));
        Ok(vals(flatten_t3(&u_at(&geo, &f))))
    })
}

/// g̊^{kj} Ů_kji.
pub fn u_contraction_at(geo: &Geom, x: &V3) -> V3 {
    let u = u_at(geo, x);
    let mut out = [Jet::ZERO; 3];
    for (i, o) in out.iter_mut().enumerate() {
        for k in 0..3 {
            for j in 0..3 {
                *o += geo.gi[k][j] * u[k][j][i];
            }
        }
    }
    out
}

pub fn second_derivative_identity_residual(ctx: &Ctx, x: &TensorField, pole_cap: f64) -> Result<Residual> {
    check_kind(x, (0, 1), "identity")?;
    residual_over_nodes(ctx, "B29", pole_cap, |site| {
        let f = x.form_jets(ctx, site)?;
        need_order(&f, 2, "identity")?;
        let geo = Geom::background(&Jet::coords(site.x));
        // report components in a g̊-orthonormal frame
        let p = rho(&site.x);
        Ok(vals(flatten_t3(&second_derivative_residual_at(&geo, &f))).into_iter().map(|v| v * p.powi(3)).collect())
    })
}

// ---------------------------------------------------------------------------
// Model operators

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelOp {
    /// 𝒜 = −Δ + 3 on functions.
    A,
    /// B = −Δ + 2 on 1-forms.
    B,
}

impl ModelOp {
    pub fn mass(&self) -> f64 {
        match self {
            ModelOp::A => 3.0,
            ModelOp::B => 2.0,
        }
    }

    pub fn rank(&self) -> (u8, u8) {
        match self {
            ModelOp::A => (0, 0),
            ModelOp::B => (0, 1),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelOp::A => "A",
            ModelOp::B => "B",
        }
    }
}

pub fn model_apply_at(which: ModelOp, geo: &Geom, u: &[Jet]) -> Vec<Jet> {
    match which {
        ModelOp::A => vec![-geo.laplacian(&u[0]) + u[0] * 3.0],
        ModelOp::B => {
            let y = [u[0], u[1], u[2]];
            let d2 = geo.cov_co2(&geo.cov_form(&y));
            (0..3)
                .map(|i| {
                    let mut lap = Jet::ZERO;
                    for k in 0..3 {
                        for j in 0..3 {
                            lap += geo.gi[k][j] * d2[k][j][i];
                        }
                    }
                    -lap + y[i] * 2.0
                })
                .collect()
        }
    }
}

/// −Δu + 3u or −ΔY + 2Y with the Laplacian of `metric`.
pub fn model_operator_apply(ctx: &Ctx, which: ModelOp, u: &TensorField, metric: Metric) -> Result<TensorField> {
    check_kind(u, which.rank(), which.name())?;
    map_nodes(ctx, which.rank(), |site| {
        let c = u.jets(ctx, site)?;
        need_order(&c, 2, which.name())?;
        let geo = metric.geom(ctx, site)?;
        Ok(vals(model_apply_at(which, &geo, &c)))
    })
}

/// Finite-volume discretisation of the background model operator on the lattice,
/// homogeneous Dirichlet on both spheres. The weak form
/// ∫ ⟨∇u, ∇v⟩ + c⟨u, v⟩ dμ(g̊) = ∫ ⟨f, v⟩ dμ(g̊) becomes (K + cM) u = M f.
#[derive(Clone, Debug)]
pub struct ModelSystem {
    pub which: ModelOp,
    /// Unknown index → (node, component).
    pub dofs: Vec<(usize, usize)>,
    pub node_dof: Vec<Option<usize>>,
    pub stiffness: Csr,
    /// Diagonal of M (mass per dof).
    pub mass: Vec<f64>,
}

impl ModelSystem {
    pub fn assemble(chart: &ChartGrid, which: ModelOp) -> Result<ModelSystem> {
        if chart.layout != Layout::Lattice {
            return Err(Error::InvalidGeometry("model solves need the lattice chart".into()));
        }
        let nc = if which == ModelOp::A { 1 } else { 3 };
        let (nr, nt, np) = (chart.n_r, chart.n_theta, chart.n_phi);
        let dr = (chart.r_outer - chart.r_inner) / (nr - 1) as f64;
        let dth = std::f64::consts::PI / nt as f64;
        let dph = 2.0 * std::f64::consts::PI / np as f64;
        let mut node_dof = vec![None; chart.len() * nc];
        let mut dofs = Vec::new();
        for n in 0..chart.len() {
            let (i, _, _) = chart.ijk(n);
            if i == 0 || i == nr - 1 {
                continue;
            }
            for c in 0..nc {
                node_dof[n * nc + c] = Some(dofs.len());
                dofs.push((n, c));
            }
        }
        let mut mass = vec![0.0; dofs.len()];
        for (d, &(n, _)) in dofs.iter().enumerate() {
            let (i, j, _) = chart.ijk(n);
            let r = chart.radii[i];
            let vol = ((r + 0.5 * dr).powi(3) - (r - 0.5 * dr).powi(3)) / 3.0
                * ((j as f64 * dth).cos() - ((j + 1) as f64 * dth).cos())
                * dph;
            let p = rho_of_r(r);
            mass[d] = vol * if which == ModelOp::A { p.powi(-3) } else { 1.0 / p };
        }
        // faces: (node a, node b, weight = k·A/L, unit direction, midpoint, length)
        let mut faces: Vec<(usize, usize, f64, [f64; 3], [f64; 3], f64)> = Vec::new();
        let sph = |r: f64, t: f64, f: f64| [r * t.sin() * f.cos(), r * t.sin() * f.sin(), r * t.cos()];
        for i in 0..nr {
            let r = chart.radii[i];
            for j in 0..nt {
                let th = chart.thetas[j];
                let cosd = (j as f64 * dth).cos() - ((j + 1) as f64 * dth).cos();
                for k in 0..np {
                    let ph = k as f64 * dph;
                    let a = chart.index(i, j, k);
                    if i + 1 < nr {
                        let rf = r + 0.5 * dr;
                        let area = rf * rf * cosd * dph;
                        let dir = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                        faces.push((a, chart.index(i + 1, j, k), area, dir, sph(rf, th, ph), dr));
                    }
                    if i == 0 || i == nr - 1 {
                        continue;
                    }
                    if j + 1 < nt {
                        let tf = (j + 1) as f64 * dth;
                        let area = r * tf.sin() * dr * dph;
                        let dir = [tf.cos() * ph.cos(), tf.cos() * ph.sin(), -tf.sin()];
                        faces.push((a, chart.index(i, j + 1, k), area, dir, sph(r, tf, ph), r * dth));
                    }
                    let pf = ph + 0.5 * dph;
                    let area = r * dr * dth;
                    let dir = [-pf.sin(), pf.cos(), 0.0];
                    faces.push((a, chart.index(i, j, (k + 1) % np), area, dir, sph(r, th, pf), r * th.sin() * dph));
                }
            }
        }
        let mut trip = Vec::new();
        for (a, b, area, dir, mid, len) in faces {
            let p = rho(&mid);
            match which {
                ModelOp::A => {
                    let w = area / (p * len);
                    let (da, db) = (node_dof[a], node_dof[b]);
                    if let Some(x) = da {
                        trip.push((x, x, w));
                    }
                    if let Some(y) = db {
                        trip.push((y, y, w));
                    }
                    if let (Some(x), Some(y)) = (da, db) {
                        trip.push((x, y, -w));
                        trip.push((y, x, -w));
                    }
                }
                ModelOp::B => {
                    // D Y = (Y_b − Y_a)/L − G (Y_a + Y_b)/2, G_jk = e^i Γ̊^k_ij at the midpoint;
                    // energy ρ A L |D Y|²
                    let gam = crate::tensor::background_christoffel(&Jet::coords(mid));
                    let mut g = [[0.0; 3]; 3];
                    for (jj, row) in g.iter_mut().enumerate() {
                        for (kk, v) in row.iter_mut().enumerate() {
                            *v = (0..3).map(|ii| dir[ii] * gam[kk][ii][jj].v).sum();
                        }
                    }
                    // D = Ca Y_a + Cb Y_b with 3×3 blocks
                    let mut ca = [[0.0; 3]; 3];
                    let mut cb = [[0.0; 3]; 3];
                    for jj in 0..3 {
                        for kk in 0..3 {
                            let id = if jj == kk { 1.0 / len } else { 0.0 };
                            ca[jj][kk] = -id - 0.5 * g[jj][kk];
                            cb[jj][kk] = id - 0.5 * g[jj][kk];
                        }
                    }
                    let w = p * area * len;
                    let blocks = [(a, &ca), (b, &cb)];
                    for (na, ma) in blocks.iter() {
                        for (nb, mb) in blocks.iter() {
                            for c1 in 0..3 {
                                let Some(r1) = node_dof[na * 3 + c1] else { continue };
                                for c2 in 0..3 {
                                    let Some(r2) = node_dof[nb * 3 + c2] else { continue };
                                    let v: f64 = (0..3).map(|jj| ma[jj][c1] * mb[jj][c2]).sum();
                                    if v != 0.0 {
                                        trip.push((r1, r2, w * v));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let n = dofs.len();
        Ok(ModelSystem { which, dofs, node_dof, stiffness: Csr::from_triplets(n, trip), mass })
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    /// (K + cM) x.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.stiffness.apply(x, y);
        let c = self.which.mass();
        for i in 0..y.len() {
            y[i] += c * self.mass[i] * x[i];
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        let c = self.which.mass();
        self.stiffness.diag().iter().zip(&self.mass).map(|(k, m)| k + c * m).collect()
    }

    /// Restriction of a nodal field to the unknowns.
    pub fn gather(&self, u: &[f64]) -> Vec<f64> {
        let nc = if self.which == ModelOp::A { 1 } else { 3 };
        self.dofs.iter().map(|&(n, c)| u[n * nc + c]).collect()
    }

    pub fn scatter(&self, x: &[f64], nodes: usize) -> Vec<f64> {
        let nc = if self.which == ModelOp::A { 1 } else { 3 };
        let mut out = vec![0.0; nodes * nc];
        for (d, &(n, c)) in self.dofs.iter().enumerate() {
            out[n * nc + c] = x[d];
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub u: TensorField,
    pub trace: CgTrace,
    /// ‖u‖_{2,2,s} / ‖f‖_{2,s}.
    pub estimate: f64,
    pub dof: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    /// Proceed (with the result flagged by the caller) when |s| ≥ 2.
    pub warn_only: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, warn_only: false }
    }
}

fn check_weight(s: f64, opts: &SolveOptions) -> Result<()> {
    if s.abs() >= 2.0 && !opts.warn_only {
        return Err(Error::WeightOutOfRange(s));
    }
    Ok(())
}

fn solve_system(sys: &ModelSystem, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, CgTrace)> {
    let mut x = vec![0.0; sys.len()];
    let cap = (10.0 * (sys.len() as f64).sqrt()).ceil() as usize;
    let trace = pcg(|a, b| sys.apply(a, b), &sys.diag(), rhs, &mut x, tol, cap.max(50))?;
    Ok((x, trace))
}

/// Solves the background model equation with right-hand side `f` (sampled at nodes).
pub fn model_operator_solve(chart: &ChartGrid, which: ModelOp, f: &TensorField, s: f64, opts: SolveOptions) -> Result<SolveOutcome> {
    check_weight(s, &opts)?;
    check_kind(f, which.rank(), which.name())?;
    let sys = ModelSystem::assemble(chart, which)?;
    let fs = if f.has_nodal(chart) { f.clone() } else { f.clone().sampled(chart) };
    let fg = sys.gather(&fs.comps);
    let rhs: Vec<f64> = fg.iter().zip(&sys.mass).map(|(f, m)| f * m).collect();
    let (x, trace) = solve_system(&sys, &rhs, opts.tol)?;
    let u = TensorField::nodal(which.rank(), sys.scatter(&x, chart.len()));
    let ctx = Ctx::fd(chart);
    let region = RegionMask::whole(chart);
    let un = weighted_norm(&ctx, &u, &WeightSpec::h(2, s), &region)?;
    let fnorm = weighted_norm(&ctx, &fs, &WeightSpec::l2(s), &region)?;
    Ok(SolveOutcome { u, trace, estimate: if fnorm > 0.0 { un / fnorm } else { 0.0 }, dof: sys.len() })
}

#[derive(Clone, Debug)]
pub struct ManufacturedOutcome {
    /// Relative discrete L²_s error of the recovered solution against u*.
    pub recovery_error: f64,
    /// Relative L²_s error of the solve driven by the continuous 𝒜(u*).
    pub discretisation_error: f64,
    /// ‖u*‖_{2,2,s} / ‖𝒜u*‖_{2,s} with analytic jets on the nodes.
    pub estimate: f64,
    pub iterations: usize,
    pub dof: usize,
}

fn l2s(chart: &ChartGrid, sys: &ModelSystem, v: &[f64], s: f64) -> f64 {
    let nc = if sys.which == ModelOp::A { 1 } else { 3 };
    let mut acc = 0.0;
    for (d, &(n, c)) in sys.dofs.iter().enumerate() {
        let _ = c;
        let p = rho(&chart.xyz[n]);
        // orthonormal-frame magnitude: a 1-form component scales by ρ
        let sc = if nc == 3 { p } else { 1.0 };
        acc += (v[d] * sc).powi(2) * p.powf(2.0 * s) * chart.bg_weight(n);
    }
    acc.sqrt()
}

/// Manufactured-solution run: the discrete image of u* drives the solver, so
/// the recovery error measures the solver; the continuous image measures the
/// discretisation.
pub fn manufactured_solution(
    chart: &ChartGrid,
    which: ModelOp,
    u_star: &TensorField,
    s: f64,
    opts: SolveOptions,
) -> Result<ManufacturedOutcome> {
    check_weight(s, &opts)?;
    check_kind(u_star, which.rank(), which.name())?;
    let sys = ModelSystem::assemble(chart, which)?;
    let us = u_star.clone().sampled(chart);
    let xs = sys.gather(&us.comps);
    let mut rhs = vec![0.0; sys.len()];
    sys.apply(&xs, &mut rhs);
    let (x, trace) = solve_system(&sys, &rhs, opts.tol)?;
    let diff: Vec<f64> = x.iter().zip(&xs).map(|(a, b)| a - b).collect();
    let denom = l2s(chart, &sys, &xs, s);
    let recovery_error = l2s(chart, &sys, &diff, s) / denom;

    let ctx = Ctx::jet(chart);
    let f = model_operator_apply(&ctx, which, u_star, Metric::Background)?;
    let fg = sys.gather(&f.comps);
    let rhs2: Vec<f64> = fg.iter().zip(&sys.mass).map(|(f, m)| f * m).collect();
    let (x2, _) = solve_system(&sys, &rhs2, opts.tol)?;
    let diff2: Vec<f64> = x2.iter().zip(&xs).map(|(a, b)| a - b).collect();
    let discretisation_error = l2s(chart, &sys, &diff2, s) / denom;

    let region = RegionMask::whole(chart);
    let un = weighted_norm(&ctx, u_star, &WeightSpec::h(2, s), &region)?;
    let fnorm = weighted_norm(&ctx, &f, &WeightSpec::l2(s), &region)?;
    Ok(ManufacturedOutcome {
        recovery_error,
        discretisation_error,
        estimate: un / fnorm,
        iterations: trace.iterations,
        dof: sys.len(),
    })
}

/// Model operator at a site, used by pointwise checks.
pub fn model_apply_site(ctx: &Ctx, which: ModelOp, u: &TensorField, site: Site) -> Result<Vec<f64>> {
    let c = u.jets(ctx, site)?;
    let geo = Geom::background(&Jet::coords(site.x));
    Ok(vals(model_apply_at(which, &geo, &c)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{cosh_potential, radial_window, rotation_form};
    use crate::manifold::{build_ball_chart, build_lattice_chart};

    #[test]
    fn kernel_witnesses() {
        for p in [[0.3, -0.2, 0.5], [0.01, 0.7, -0.1], [-0.6, 0.6, 0.3]] {
            let x = Jet::coords(p);
            let geo = Geom::background(&x);
            let sc = rho(&p);
            let t = t_at(&geo, &cosh_potential(&x));
            for row in t.iter() {
                for c in row {
                    assert!(c.v.abs() * sc * sc < 1e-9);
                }
            }
            for axis in 0..3 {
                let y = rotation_form(&x, axis);
                let s = s_at(&geo, &y);
                let u = u_at(&geo, &y);
                for i in 0..3 {
                    for j in 0..3 {
                        assert!(s[i][j].v.abs() * sc * sc < 1e-9);
                        for k in 0..3 {
                            assert!(u[k][j][i].v.abs() * sc.powi(3) < 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn second_derivative_identity_on_generic_form() {
        let x = Jet::coords([0.2, 0.35, -0.4]);
        let geo = Geom::background(&x);
        let y = [x[0] * x[1] + x[2], (x[0] * 2.0).exp() * 0.1, x[1] * x[2] * x[2]];
        let r = second_derivative_residual_at(&geo, &y);
        for a in r.iter().flatten().flatten() {
            assert!(a.v.abs() < 1e-10, "{}", a.v);
        }
    }

    #[test]
    fn traces_and_contractions() {
        let x = Jet::coords([0.1, -0.3, 0.2]);
        let geo = Geom::background(&x);
        let n = x[0] * x[1] + (x[2] * 3.0).exp();
        let t = t_at(&geo, &n);
        let tr = dot_m3(&geo.gi, &t);
        assert!((tr.v - (geo.laplacian(&n).v - 3.0 * n.v)).abs() < 1e-11);
        let y = [x[1] * x[1], x[0] + x[2], x[0] * x[1] * x[2]];
        let c = u_contraction_at(&geo, &y);
        let b = model_apply_at(ModelOp::B, &geo, &y);
        for i in 0..3 {
            // g̊^{kj}Ů_kji = ΔX_i − 2X_i = −B(X)_i
            assert!((c[i].v + b[i].v).abs() < 1e-10);
        }
    }

    #[test]
    fn model_operator_examples() {
        let chart = build_ball_chart(0.2, 0.8, 8, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let one = TensorField::scalar(|_| Jet::cst(1.0));
        let a1 = model_operator_apply(&ctx, ModelOp::A, &one, Metric::Background).unwrap();
        assert!(a1.comps.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let ch = TensorField::scalar(cosh_potential);
        let a2 = model_operator_apply(&ctx, ModelOp::A, &ch, Metric::Background).unwrap();
        assert!(a2.comps.iter().all(|v| v.abs() < 1e-9));
        let rot = TensorField::form(|x| rotation_form(x, 2));
        let b = model_operator_apply(&ctx, ModelOp::B, &rot, Metric::Background).unwrap();
        // ΔY = −Ric(Y) = 2Y for a Killing form, so B(Y) = 0
        assert!(b.comps.iter().all(|v| v.abs() < 1e-8));
        assert!(matches!(
            model_operator_apply(&ctx, ModelOp::B, &one, Metric::Background),
            Err(Error::KindMismatch(_))
        ));
    }

    #[test]
    fn model_solve_recovers_bump() {
        let chart = build_lattice_chart(0.2, 0.9, 17, 8, 16).unwrap();
        let u = TensorField::scalar(|x| radial_window(x, 0.3, 0.8) * (x[0] + 0.5));
        let out = manufactured_solution(&chart, ModelOp::A, &u, 0.0, SolveOptions::default()).unwrap();
        assert!(out.recovery_error < 1e-6, "{}", out.recovery_error);
        let f0 = TensorField::scalar(|_| Jet::ZERO);
        let z = model_operator_solve(&chart, ModelOp::A, &f0, 0.0, SolveOptions::default()).unwrap();
        assert!(z.u.comps.iter().all(|v| *v == 0.0));
        assert!(matches!(
            model_operator_solve(&chart, ModelOp::A, &f0, 2.5, SolveOptions::default()),
            Err(Error::WeightOutOfRange(_))
        ));
        let sys = ModelSystem::assemble(&chart, ModelOp::B).unwrap();
        assert!(sys.stiffness.max_asymmetry() < 1e-12);
    }
}
