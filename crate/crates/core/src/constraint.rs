//! The constraint operator Φ = (Φ₀, Φᵢ), its linearization DΦ, the formal
//! adjoint DΦ*, the restructured operator P* and the variation operator F.
//!
//! Momenta are densities stored relative to dμ(g̊): a stored component π^{ij}
//! stands for π^{ij} dμ(g̊), and s = √det g / √det g̊ carries every √g factor.
//! The shift X is a 1-form lowered with the point's own metric g.

use nalgebra::Matrix3;

use crate::jet::Jet;
use crate::manifold::{rho, rho_jet, ChartGrid, Site};
use crate::tensor::{
    background_metric_field, dot_m3, flatten_m3, inv3, map_nodes, raise2, ricci_of, riemann_low, Ctx, Geom, Metric,
    TensorField, M3, T3, V3, ZM, ZT,
};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.5;

/// τ, Λ = 3(τ² − 1), K̊ = τ g̊ and π̊ = −2τ g̊^{ij} dμ(g̊).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceData {
    pub tau: f64,
    pub lambda_cc: f64,
}

pub fn reference_data(tau: f64) -> ReferenceData {
    ReferenceData { tau, lambda_cc: 3.0 * (tau * tau - 1.0) }
}

impl ReferenceData {
    pub fn k_ref(&self, x: &[Jet; 3]) -> M3 {
        let p = rho_jet(x);
        diag(p.powi(2).recip() * self.tau)
    }

    pub fn pi_ref(&self, x: &[Jet; 3]) -> M3 {
        let p = rho_jet(x);
        diag(p * p * (-2.0 * self.tau))
    }

    pub fn pi_ref_field(&self) -> TensorField {
        let me = *self;
        TensorField::sym2((2, 0), move |x| me.pi_ref(x))
    }
}

fn diag(c: Jet) -> M3 {
    let mut m = ZM;
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = c;
    }
    m
}

/// (g, π) with the equivalence constant λ: λ g̊ < g < λ⁻¹ g̊.
#[derive(Clone, Debug)]
pub struct PhasePoint {
    pub g: TensorField,
    pub pi: TensorField,
    pub lambda: f64,
}

impl PhasePoint {
    pub fn background(rf: &ReferenceData) -> PhasePoint {
        PhasePoint { g: background_metric_field(), pi: rf.pi_ref_field(), lambda: DEFAULT_LAMBDA }
    }

    pub fn new(g: TensorField, pi: TensorField, lambda: f64) -> Result<PhasePoint> {
        if g.rank != (0, 2) || pi.rank != (2, 0) {
            return Err(Error::KindMismatch("phase point needs g of rank (0,2) and π of rank (2,0)".into()));
        }
        Ok(PhasePoint { g, pi, lambda })
    }

    /// (g̊ + h, π̊ + p).
    pub fn perturbed(rf: &ReferenceData, h: &TensorField, p: &TensorField) -> Result<PhasePoint> {
        let bg = PhasePoint::background(rf);
        PhasePoint::new(bg.g.lincomb(1.0, h, 1.0), bg.pi.lincomb(1.0, p, 1.0), DEFAULT_LAMBDA)
    }

    /// Discrete copy: both fields sampled on the chart, closures dropped.
    pub fn discrete(&self, chart: &ChartGrid) -> PhasePoint {
        PhasePoint { g: self.g.discrete(chart), pi: self.pi.discrete(chart), lambda: self.lambda }
    }

    /// Eigenvalues of ρ²g (= g relative to g̊) must lie in (λ, 1/λ) at every node.
    pub fn check_equivalence(&self, ctx: &Ctx) -> Result<()> {
        let chart = ctx.chart;
        for n in 0..chart.len() {
            let site = chart.site(n);
            let g = self.g.m3_jets(ctx, site)?;
            let p2 = rho(&site.x).powi(2);
            let m = Matrix3::from_fn(|i, j| g[i][j].v * p2);
            let ev = m.symmetric_eigenvalues();
            if ev.iter().any(|e| !e.is_finite()) {
                return Err(Error::NonFinite(n));
            }
            if ev.iter().any(|e| *e <= 0.0) {
                return Err(Error::SingularMetric(n));
            }
            if ev.iter().any(|e| *e <= self.lambda || *e >= 1.0 / self.lambda) {
                return Err(Error::EquivalenceViolation(n));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LapseShift {
    pub n: TensorField,
    pub x: TensorField,
}

impl LapseShift {
    pub fn new(n: TensorField, x: TensorField) -> Result<LapseShift> {
        if n.rank != (0, 0) || x.rank != (0, 1) {
            return Err(Error::KindMismatch("lapse-shift needs a scalar and a 1-form".into()));
        }
        Ok(LapseShift { n, x })
    }
}

/// Everything Φ and its derivatives need at one site.
#[derive(Clone, Debug)]
pub struct PointState {
    pub geo: Geom,
    pub pi: M3,
    /// Density covariant derivative ∇_k π^{ij}, indexed `[k][i][j]`.
    pub dpi: T3,
    /// π_ij lowered with g.
    pub pi_low: M3,
    pub tr_pi: Jet,
    pub ric: M3,
    pub scal: Jet,
    /// E^{ij} = Ric^{ij} − ½(R − 2Λ) g^{ij}.
    pub e_up: M3,
    /// Q^{ij} = trπ π^{ij} − 2π^{ia}g_ab π^{bj} + ½(|π|² − ½ tr²π) g^{ij}.
    pub q_up: M3,
    pub pi_sq: Jet,
    pub lambda_cc: f64,
    pub tau: f64,
}

fn lower_both(g: &M3, p: &M3) -> M3 {
    let mut r = ZM;
    for i in 0..3 {
        for j in 0..3 {
            let mut v = Jet::ZERO;
            for a in 0..3 {
                for b in 0..3 {
                    v += g[i][a] * g[j][b] * p[a][b];
                }
            }
            r[i][j] = v;
        }
    }
    r
}

pub fn state_from(x: &[Jet; 3], g: M3, pi: M3, rf: &ReferenceData) -> Result<PointState> {
    let (_, det) = inv3(&g);
    if !(det.v > 0.0) || !det.v.is_finite() {
        return Err(Error::SingularMetric(usize::MAX));
    }
    let geo = Geom::new(x, g);
    let dpi = geo.cov_up2_density(&pi);
    let pi_low = lower_both(&geo.g, &pi);
    let tr_pi = dot_m3(&geo.g, &pi);
    let riem = riemann_low(&geo.g, &geo.gam);
    let ric = ricci_of(&geo.gi, &riem);
    let scal = dot_m3(&geo.gi, &ric);
    let ric_up = raise2(&geo.gi, &ric);
    let pi_sq = dot_m3(&pi_low, &pi);
    let mut e_up = ZM;
    let mut q_up = ZM;
    let half_r = (scal - 2.0 * rf.lambda_cc) * 0.5;
    let q_iso = (pi_sq - tr_pi * tr_pi * 0.5) * 0.5;
    for i in 0..3 {
        for j in 0..3 {
            e_up[i][j] = ric_up[i][j] - half_r * geo.gi[i][j];
            let mut pp = Jet::ZERO;
            for a in 0..3 {
                for b in 0..3 {
                    pp += pi[i][a] * geo.g[a][b] * pi[b][j];
                }
            }
            q_up[i][j] = tr_pi * pi[i][j] - pp * 2.0 + q_iso * geo.gi[i][j];
        }
    }
    Ok(PointState { geo, pi, dpi, pi_low, tr_pi, ric, scal, e_up, q_up, pi_sq, lambda_cc: rf.lambda_cc, tau: rf.tau })
}

pub fn state_at(ctx: &Ctx, point: &PhasePoint, rf: &ReferenceData, site: Site) -> Result<PointState> {
    let g = point.g.m3_jets(ctx, site)?;
    let pi = point.pi.m3_jets(ctx, site)?;
    state_from(&Jet::coords(site.x), g, pi, rf).map_err(|e| match e {
        Error::SingularMetric(_) => Error::SingularMetric(site.node.unwrap_or(usize::MAX)),
        other => other,
    })
}

/// (Φ₀, Φ_i) at a site.
pub fn phi_at(st: &PointState) -> [Jet; 4] {
    let s = st.geo.s;
    let p0 = (st.scal - 2.0 * st.lambda_cc) * s - (st.pi_sq - st.tr_pi * st.tr_pi * 0.5) / s;
    let mut out = [p0, Jet::ZERO, Jet::ZERO, Jet::ZERO];
    for i in 0..3 {
        let mut v = Jet::ZERO;
        for j in 0..3 {
            for k in 0..3 {
                v += st.geo.g[i][j] * st.dpi[k][j][k];
            }
        }
        out[i + 1] = v * 2.0;
    }
    out
}

/// DΦ(g, π)(h, p) at a site; h needs two derivatives, p one.
pub fn dphi_at(st: &PointState, h: &M3, p: &M3) -> [Jet; 4] {
    let geo = &st.geo;
    let s = geo.s;
    let dh = geo.cov_co2(h);
    let ddh = geo.cov_co3(&dh);
    let mut divdiv = Jet::ZERO;
    let mut laptr = Jet::ZERO;
    for a in 0..3 {
        for b in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    divdiv += geo.gi[i][a] * geo.gi[j][b] * ddh[a][b][i][j];
                    laptr += geo.gi[a][b] * geo.gi[i][j] * ddh[a][b][i][j];
                }
            }
        }
    }
    let mut d0 = (divdiv - laptr) * s - dot_m3(h, &st.e_up) * s + dot_m3(h, &st.q_up) / s;
    for i in 0..3 {
        for j in 0..3 {
            d0 += p[i][j] * (st.tr_pi * geo.g[i][j] - st.pi_low[i][j] * 2.0) / s;
        }
    }
    let dp = geo.cov_up2_density(p);
    let mut out = [d0, Jet::ZERO, Jet::ZERO, Jet::ZERO];
    for i in 0..3 {
        let mut v = Jet::ZERO;
        for j in 0..3 {
            for k in 0..3 {
                v += st.pi[j][k] * (dh[k][i][j] * 2.0 - dh[i][j][k]);
                v += h[i][j] * st.dpi[k][j][k] * 2.0;
                v += geo.g[i][k] * dp[j][j][k] * 2.0;
            }
        }
        out[i + 1] = v;
    }
    out
}

/// (DΦ*₁ξ)^{ij} and (DΦ*₂ξ)_ij at a site; N and X need two derivatives.
pub fn dphi_adjoint_at(st: &PointState, n: &Jet, x: &V3) -> (M3, M3) {
    let geo = &st.geo;
    let s = geo.s;
    let hess = geo.hessian(n);
    let hess_up = raise2(&geo.gi, &hess);
    let lap = dot_m3(&geo.gi, &hess);
    let dx = geo.cov_form(x); // ∇_k X_l
    let xu = geo.raise(x);
    let mut dxu = ZM; // ∇_k X^i
    for k in 0..3 {
        for i in 0..3 {
            for l in 0..3 {
                dxu[k][i] += geo.gi[i][l] * dx[k][l];
            }
        }
    }
    let div = dxu[0][0] + dxu[1][1] + dxu[2][2];
    let mut a1 = ZM;
    let mut a2 = ZM;
    for i in 0..3 {
        for j in 0..3 {
            let mut v = (hess_up[i][j] - geo.gi[i][j] * lap - st.e_up[i][j] * *n) * s + *n * st.q_up[i][j] / s;
            for k in 0..3 {
                v += xu[k] * st.dpi[k][i][j];
                v -= dxu[k][i] * st.pi[j][k] + dxu[k][j] * st.pi[i][k];
            }
            v += div * st.pi[i][j];
            a1[i][j] = v;
            a2[i][j] = *n * (st.tr_pi * geo.g[i][j] - st.pi_low[i][j] * 2.0) / s - (dx[i][j] + dx[j][i]);
        }
    }
    (a1, a2)
}

/// P*ξ = (s^{−1/2} g_jk DΦ*₁^{ik}, s^{1/2} g^{ik} ∇_l DΦ*₂_kj): a mixed
/// (1,1) tensor `[i][j]` and a (1,2) tensor indexed `[l][i][j]`.
pub fn p_star_at(st: &PointState, n: &Jet, x: &V3) -> (M3, T3) {
    let geo = &st.geo;
    let (a1, a2) = dphi_adjoint_at(st, n, x);
    let s = geo.s;
    let rs = s.sqrt();
    let mut b1 = ZM;
    for i in 0..3 {
        for j in 0..3 {
            let mut v = Jet::ZERO;
            for k in 0..3 {
                v += geo.g[j][k] * a1[i][k];
            }
            b1[i][j] = v / rs;
        }
    }
    let da2 = geo.cov_co2(&a2);
    let mut b2 = ZT;
    for l in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut v = Jet::ZERO;
                for k in 0..3 {
                    v += geo.gi[i][k] * da2[l][k][j];
                }
                b2[l][i][j] = v * rs;
            }
        }
    }
    (b1, b2)
}

/// O(N) = ∇²N − g Δ_g N.
pub fn op_o_at(geo: &Geom, n: &Jet) -> M3 {
    let h = geo.hessian(n);
    let lap = dot_m3(&geo.gi, &h);
    let mut o = h;
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] -= geo.g[i][j] * lap;
        }
    }
    o
}

/// The variation (h, p) generated by a scalar y and a vector Y:
/// h = 2y g, p^{ij} = (2S(Y)^{ij} − g^{ij} tr S(Y) − 2τ y g^{ij}) s.
pub fn variation_at(st: &PointState, y: &Jet, yv: &V3) -> (M3, M3) {
    let geo = &st.geo;
    let yl = geo.lower(yv);
    let dy = geo.cov_form(&yl);
    let mut sy = ZM;
    for i in 0..3 {
        for j in 0..3 {
            sy[i][j] = (dy[i][j] + dy[j][i]) * 0.5;
        }
    }
    let sy_up = raise2(&geo.gi, &sy);
    let tr = dot_m3(&geo.gi, &sy);
    let mut h = ZM;
    let mut p = ZM;
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] = *y * geo.g[i][j] * 2.0;
            p[i][j] = (sy_up[i][j] * 2.0 - geo.gi[i][j] * tr - geo.gi[i][j] * *y * (2.0 * st.tau)) * geo.s;
        }
    }
    (h, p)
}

pub fn f_at(st: &PointState, y: &Jet, yv: &V3) -> [Jet; 4] {
    let (h, p) = variation_at(st, y, yv);
    dphi_at(st, &h, &p)
}

/// Leading model parts of F: 4s(−Δy + 3y) and −2s(−ΔY + 2Y)_i (lowered).
pub fn f_leading_at(st: &PointState, y: &Jet, yv: &V3) -> [Jet; 4] {
    let geo = &st.geo;
    let a = crate::geoops::model_apply_at(crate::geoops::ModelOp::A, geo, &[*y]);
    let yl = geo.lower(yv);
    let b = crate::geoops::model_apply_at(crate::geoops::ModelOp::B, geo, &yl);
    [a[0] * geo.s * 4.0, b[0] * geo.s * -2.0, b[1] * geo.s * -2.0, b[2] * geo.s * -2.0]
}

// ---------------------------------------------------------------------------
// Field-level wrappers

fn vals(v: impl IntoIterator<Item = Jet>) -> Vec<f64> {
    v.into_iter().map(|j| j.v).collect()
}

fn split4(both: TensorField) -> (TensorField, TensorField) {
    // four values per node: Φ₀ then Φ_i
    let nodes = both.comps.len() / 4;
    let mut a = Vec::with_capacity(nodes);
    let mut b = Vec::with_capacity(3 * nodes);
    for n in 0..nodes {
        a.push(both.comps[4 * n]);
        b.extend_from_slice(&both.comps[4 * n + 1..4 * n + 4]);
    }
    (TensorField::nodal((0, 0), a), TensorField::nodal((0, 1), b))
}

fn map4(ctx: &Ctx, f: impl Fn(Site) -> Result<[Jet; 4]> + Sync) -> Result<(TensorField, TensorField)> {
    let chart = ctx.chart;
    let rows: Vec<Result<[Jet; 4]>> = {
        use rayon::prelude::*;
        (0..chart.len()).into_par_iter().map(|n| f(chart.site(n))).collect()
    };
    let mut comps = Vec::with_capacity(4 * chart.len());
    for (n, r) in rows.into_iter().enumerate() {
        let r = r?;
        if r.iter().any(|j| !j.v.is_finite()) {
            return Err(Error::NonFinite(n));
        }
        comps.extend(r.iter().map(|j| j.v));
    }
    Ok(split4(TensorField::nodal((0, 0), comps)))
}

pub fn phi(ctx: &Ctx, point: &PhasePoint, rf: &ReferenceData) -> Result<(TensorField, TensorField)> {
    map4(ctx, |site| Ok(phi_at(&state_at(ctx, point, rf, site)?)))
}

pub fn dphi(
    ctx: &Ctx,
    point: &PhasePoint,
    rf: &ReferenceData,
    h: &TensorField,
    p: &TensorField,
) -> Result<(TensorField, TensorField)> {
    map4(ctx, |site| {
        let st = state_at(ctx, point, rf, site)?;
        Ok(dphi_at(&st, &h.m3_jets(ctx, site)?, &p.m3_jets(ctx, site)?))
    })
}

pub fn dphi_adjoint(ctx: &Ctx, point: &PhasePoint, rf: &ReferenceData, xi: &LapseShift) -> Result<(TensorField, TensorField)> {
    let both = map_nodes(ctx, (0, 3), |site| {
        let st = state_at(ctx, point, rf, site)?;
        let (a, b) = dphi_adjoint_at(&st, &xi.n.scalar_jet(ctx, site)?, &xi.x.form_jets(ctx, site)?);
        let mut v = vals(flatten_m3(&a));
        v.extend(vals(flatten_m3(&b)));
        v.extend([0.0; 9]);
        Ok(v)
    })?;
    let nodes = both.comps.len() / 27;
    let (mut a, mut b) = (Vec::with_capacity(9 * nodes), Vec::with_capacity(9 * nodes));
    for n in 0..nodes {
        a.extend_from_slice(&both.comps[27 * n..27 * n + 9]);
        b.extend_from_slice(&both.comps[27 * n + 9..27 * n + 18]);
    }
    Ok((TensorField::nodal((2, 0), a), TensorField::nodal((0, 2), b)))
}

pub fn p_star(ctx: &Ctx, point: &PhasePoint, rf: &ReferenceData, xi: &LapseShift) -> Result<(TensorField, TensorField)> {
    let first = map_nodes(ctx, (1, 1), |site| {
        let st = state_at(ctx, point, rf, site)?;
        Ok(vals(flatten_m3(&p_star_at(&st, &xi.n.scalar_jet(ctx, site)?, &xi.x.form_jets(ctx, site)?).0)))
    })?;
    let second = map_nodes(ctx, (1, 2), |site| {
        let st = state_at(ctx, point, rf, site)?;
        let (_, b) = p_star_at(&st, &xi.n.scalar_jet(ctx, site)?, &xi.x.form_jets(ctx, site)?);
        Ok(vals(crate::tensor::flatten_t3(&b)))
    })?;
    Ok((first, second))
}

pub fn op_o(ctx: &Ctx, point: &PhasePoint, n: &TensorField) -> Result<TensorField> {
    map_nodes(ctx, (0, 2), |site| {
        let geo = Metric::Field(&point.g).geom(ctx, site)?;
        Ok(vals(flatten_m3(&op_o_at(&geo, &n.scalar_jet(ctx, site)?))))
    })
}

pub fn f_operator(
    ctx: &Ctx,
    point: &PhasePoint,
    rf: &ReferenceData,
    y: &TensorField,
    yv: &TensorField,
) -> Result<(TensorField, TensorField)> {
    if y.rank != (0, 0) || yv.rank != (1, 0) {
        return Err(Error::KindMismatch("F takes a scalar and a vector".into()));
    }
    map4(ctx, |site| {
        let st = state_at(ctx, point, rf, site)?;
        Ok(f_at(&st, &y.scalar_jet(ctx, site)?, &yv.form_jets(ctx, site)?))
    })
}

/// π^{ij} = (K^{ij} − tr_g K g^{ij}) s, K covariant.
pub fn momentum_from_k(ctx: &Ctx, g: &TensorField, k: &TensorField) -> Result<TensorField> {
    map_nodes(ctx, (2, 0), |site| {
        let geo = Metric::Field(g).geom(ctx, site)?;
        let kk = k.m3_jets(ctx, site)?;
        let ku = raise2(&geo.gi, &kk);
        let tr = dot_m3(&geo.gi, &kk);
        let mut p = ZM;
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = (ku[i][j] - tr * geo.gi[i][j]) * geo.s;
            }
        }
        Ok(vals(flatten_m3(&p)))
    })
}

/// Inverse of [`momentum_from_k`]: K_ij = π_ij/s − ½ tr_g π g_ij / s.
pub fn k_from_momentum(ctx: &Ctx, g: &TensorField, pi: &TensorField) -> Result<TensorField> {
    map_nodes(ctx, (0, 2), |site| {
        let geo = Metric::Field(g).geom(ctx, site)?;
        let p = pi.m3_jets(ctx, site)?;
        let pl = lower_both(&geo.g, &p);
        let tr = dot_m3(&geo.g, &p);
        let mut k = ZM;
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = (pl[i][j] - tr * geo.g[i][j] * 0.5) / geo.s;
            }
        }
        Ok(vals(flatten_m3(&k)))
    })
}

/// Node-wise residuals of the exact-model integrability conditions:
/// Riem − (g_il g_jk − g_ik g_jl), Ric + 2g, R − 2Λ + 6τ², Π − τ²g̊ and
/// E + 2g̊ − 3τ²g̊, each as a g̊-norm.
pub fn integrability_residuals_at(st: &PointState, x: &[f64; 3]) -> [f64; 5] {
    let geo = &st.geo;
    let p = rho(x);
    let riem = riemann_low(&geo.g, &geo.gam);
    let t2 = st.tau * st.tau;
    let mut r = [0.0f64; 5];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let e = geo.g[i][l] * geo.g[j][k] - geo.g[i][k] * geo.g[j][l];
                    r[0] = r[0].max(((riem[i][j][k][l] - e).v * p.powi(4)).abs());
                }
            }
            let c = if i == j { 1.0 / (p * p) } else { 0.0 };
            r[1] = r[1].max(((st.ric[i][j].v + 2.0 * c) * p * p).abs());
            let s2 = geo.s * geo.s;
            let mut pi_low = Jet::ZERO;
            let mut e_low = Jet::ZERO;
            for a in 0..3 {
                for b in 0..3 {
                    pi_low += geo.g[i][a] * geo.g[j][b] * st.q_up[a][b] / s2;
                    e_low += geo.g[i][a] * geo.g[j][b] * st.e_up[a][b];
                }
            }
            r[3] = r[3].max(((pi_low.v - t2 * c) * p * p).abs());
            r[4] = r[4].max(((e_low.v + (2.0 - 3.0 * t2) * c) * p * p).abs());
        }
    }
    r[2] = (st.scal.v - 2.0 * st.lambda_cc + 6.0 * t2).abs();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::radial_window;
    use crate::manifold::build_ball_chart;

    fn bump_h(x: &[Jet; 3]) -> M3 {
        let w = radial_window(x, 0.3, 0.8) * rho_jet(x).powi(2).recip() * 0.05;
        let mut m = ZM;
        m[0][0] = w * (x[1] + 1.0);
        m[0][1] = w * x[2];
        m[1][0] = m[0][1];
        m[1][1] = w * (x[0] * x[2] + 0.5);
        m[2][2] = w * 0.3;
        m[1][2] = w * x[0];
        m[2][1] = m[1][2];
        m
    }

    #[test]
    fn reference_data_examples() {
        assert_eq!(reference_data(1.0).lambda_cc, 0.0);
        assert_eq!(reference_data(0.0).lambda_cc, -3.0);
        assert_eq!(2.0 * reference_data(2.0).lambda_cc, 18.0);
    }

    #[test]
    fn exact_model_is_a_solution() {
        for tau in [0.0, 1.0, 2.0] {
            let rf = reference_data(tau);
            let x = Jet::coords([0.3, -0.4, 0.5]);
            let g = Geom::background(&x).g;
            let st = state_from(&x, g, rf.pi_ref(&x), &rf).unwrap();
            for c in phi_at(&st) {
                assert!(c.v.abs() < 1e-10, "τ={tau}: {}", c.v);
            }
            for r in integrability_residuals_at(&st, &[0.3, -0.4, 0.5]) {
                assert!(r < 1e-9);
            }
        }
    }

    #[test]
    fn linearization_matches_difference_quotient() {
        let rf = reference_data(1.0);
        let x = Jet::coords([0.35, 0.2, -0.3]);
        let g0 = Geom::background(&x).g;
        let pi0 = rf.pi_ref(&x);
        let h = bump_h(&x);
        let mut p = ZM;
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = h[i][j] * rho_jet(&x).powi(4) * (1.0 + (i + j) as f64);
            }
        }
        let p = crate::tensor::sym_part(&p);
        let st = state_from(&x, g0, pi0, &rf).unwrap();
        let lin = dphi_at(&st, &h, &p);
        let at = |t: f64| {
            let mut g = g0;
            let mut q = pi0;
            for i in 0..3 {
                for j in 0..3 {
                    g[i][j] += h[i][j] * t;
                    q[i][j] += p[i][j] * t;
                }
            }
            phi_at(&state_from(&x, g, q, &rf).unwrap())
        };
        let t = 1e-4;
        let (a, b) = (at(t), at(-t));
        for c in 0..4 {
            let fd = (a[c].v - b[c].v) / (2.0 * t);
            assert!((fd - lin[c].v).abs() < 1e-5 * (1.0 + lin[c].v.abs()), "{c}: {fd} vs {}", lin[c].v);
        }
    }

    #[test]
    fn momentum_round_trip_and_reference() {
        let chart = build_ball_chart(0.2, 0.8, 8, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let rf = reference_data(1.0);
        let g = background_metric_field();
        let k = TensorField::sym2((0, 2), move |x| rf.k_ref(x));
        let pi = momentum_from_k(&ctx, &g, &k).unwrap();
        let want = rf.pi_ref_field().sampled(&chart);
        for (a, b) in pi.comps.iter().zip(&want.comps) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = k_from_momentum(&ctx, &g, &rf.pi_ref_field()).unwrap();
        let kk = k.sampled(&chart);
        for (a, b) in back.comps.iter().zip(&kk.comps) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn f_at_time_symmetric_model_is_the_model_operators() {
        let rf = reference_data(0.0);
        let x = Jet::coords([0.1, 0.4, -0.2]);
        let st = state_from(&x, Geom::background(&x).g, rf.pi_ref(&x), &rf).unwrap();
        let y = x[0] * x[1] + (x[2]).exp();
        let yv = [x[1] * x[2], x[0] * x[0], x[1] + x[2] * x[0]];
        let f = f_at(&st, &y, &yv);
        let l = f_leading_at(&st, &y, &yv);
        for c in 0..4 {
            assert!((f[c].v - l[c].v).abs() < 1e-9 * (1.0 + l[c].v.abs()), "{c}: {} vs {}", f[c].v, l[c].v);
        }
    }

    #[test]
    fn adjoint_second_block_at_background() {
        let rf = reference_data(1.5);
        let x = Jet::coords([0.2, -0.1, 0.45]);
        let st = state_from(&x, Geom::background(&x).g, rf.pi_ref(&x), &rf).unwrap();
        let n = x[0] * x[2] + 1.0;
        let xf = [x[1] * x[1], x[0], x[2] * x[0]];
        let (_, b) = dphi_adjoint_at(&st, &n, &xf);
        let s = crate::geoops::s_at(&st.geo, &xf);
        for i in 0..3 {
            for j in 0..3 {
                let want = (s[i][j] + st.geo.g[i][j] * n * rf.tau) * -2.0;
                assert!((b[i][j].v - want.v).abs() < 1e-10 * (1.0 + want.v.abs()));
            }
        }
    }

    #[test]
    fn equivalence_band_is_enforced() {
        let chart = build_ball_chart(0.2, 0.8, 8, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let rf = reference_data(1.0);
        let bg = PhasePoint::background(&rf);
        bg.check_equivalence(&ctx).unwrap();
        let fat = PhasePoint::new(background_metric_field().scaled(3.0), rf.pi_ref_field(), 0.5).unwrap();
        assert!(matches!(fat.check_equivalence(&ctx), Err(Error::EquivalenceViolation(_))));
    }
}
