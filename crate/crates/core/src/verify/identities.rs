//! Integration-by-parts identities on (M, g̊), checked as
//! ∫ LHS = ∫ RHS + ∮ boundary with every asymptotic coefficient replaced by
//! its exact ball-model value, so the defect is pure discretisation error.
//!
//! Weighted identities use ρ^{2δ} dμ(g̊) inside and ρ^{2δ} dσ(g̊) on ∂M, with
//! D = dρ/ρ and η the outward unit normal of M. The boundary of M that can
//! carry data is the inner sphere; inputs must vanish at the outer one.

use rayon::prelude::*;

use super::Residual;
use crate::geoops::u_at;
use crate::jet::Jet;
use crate::manifold::{outward_normal, rho, rho_jet, Boundary, Site};
use crate::tensor::{Ctx, Geom, TensorField};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum IdentityId {
    Lem2,
    Lem4,
    Lem6,
    Comb7,
    Cord10,
    Cord11,
    Ihp0,
    IhpM1,
    Ihp1,
    Ihp2,
    Ihp3,
    CombU,
    LemD1,
    PropD2,
    LemPD3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Scalar,
    Form,
}

impl IdentityId {
    pub const ALL: [IdentityId; 15] = [
        IdentityId::Lem2,
        IdentityId::Lem4,
        IdentityId::Lem6,
        IdentityId::Comb7,
        IdentityId::Cord10,
        IdentityId::Cord11,
        IdentityId::Ihp0,
        IdentityId::IhpM1,
        IdentityId::Ihp1,
        IdentityId::Ihp2,
        IdentityId::Ihp3,
        IdentityId::CombU,
        IdentityId::LemD1,
        IdentityId::PropD2,
        IdentityId::LemPD3,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            IdentityId::Lem2 => "LEM2",
            IdentityId::Lem4 => "LEM4",
            IdentityId::Lem6 => "LEM6",
            IdentityId::Comb7 => "COMB7",
            IdentityId::Cord10 => "CORD10",
            IdentityId::Cord11 => "CORD11",
            IdentityId::Ihp0 => "IHP0",
            IdentityId::IhpM1 => "IHP-1",
            IdentityId::Ihp1 => "IHP1",
            IdentityId::Ihp2 => "IHP2",
            IdentityId::Ihp3 => "IHP3",
            IdentityId::CombU => "COMB_U",
            IdentityId::LemD1 => "LEMD1",
            IdentityId::PropD2 => "PROPD2",
            IdentityId::LemPD3 => "LEMPD3",
        }
    }

    pub fn parse(s: &str) -> Result<IdentityId> {
        IdentityId::ALL
            .iter()
            .copied()
            .find(|c| c.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownIdentity(s.to_string()))
    }

    pub fn kind(&self) -> InputKind {
        match self {
            IdentityId::Lem2 | IdentityId::Lem4 | IdentityId::Lem6 | IdentityId::Comb7 => InputKind::Scalar,
            _ => InputKind::Form,
        }
    }

    /// Whether the identity carries the ρ^{2δ} weight.
    pub fn weighted(&self) -> bool {
        !matches!(self, IdentityId::LemD1 | IdentityId::PropD2 | IdentityId::LemPD3)
    }
}

/// The three integrals of one identity and the resulting defect.
#[derive(Clone, Debug)]
pub struct IdentityCheck {
    pub id: IdentityId,
    pub lhs: f64,
    pub rhs_interior: f64,
    pub boundary: f64,
    pub residual: Residual,
}

impl IdentityCheck {
    pub fn defect(&self) -> f64 {
        self.lhs - self.rhs_interior - self.boundary
    }
}

// ---------------------------------------------------------------------------
// Auxiliary inputs of the unweighted lemmas: a vector field V and scalars u, v.

fn aux_vector(x: &[Jet; 3]) -> [Jet; 3] {
    let p2 = rho_jet(x) * rho_jet(x);
    [(x[0] + 1.0) * p2, x[1] * x[2] * p2, (0.5 - x[0] * x[0]) * p2]
}

fn aux_u(x: &[Jet; 3]) -> Jet {
    x[0] * 0.3 - x[1] * x[2] * 0.2 + 0.1
}

fn aux_v(x: &[Jet; 3]) -> Jet {
    rho_jet(x).recip() + x[2] * 0.1
}

type V = [f64; 3];
type M = [[f64; 3]; 3];

fn vals3(v: &[Jet; 3]) -> V {
    [v[0].v, v[1].v, v[2].v]
}

fn vals33(m: &[[Jet; 3]; 3]) -> M {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] = m[i][j].v;
        }
    }
    o
}

fn dot(a: &V, b: &V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A(a, b) = Σ A_ij a_i b_j (components only).
fn bil(m: &M, a: &V, b: &V) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += m[i][j] * a[i] * b[j];
        }
    }
    s
}

/// Pointwise data of the input at one site, with the ball-model constants.
struct Local {
    p: f64,
    p2: f64,
    /// D = dρ/ρ.
    d: V,
    kind: InputKind,
    n: f64,
    dn: V,
    hess: M,
    xf: V,
    dx: M,
    ddx: [[[f64; 3]; 3]; 3],
    u: [[[f64; 3]; 3]; 3],
    aux: Option<Aux>,
}

struct Aux {
    vv: V,
    dvv: M,
    e2u: f64,
    du: V,
    v: f64,
    dv: V,
    hv: M,
}

impl Local {
    fn new(x: &[f64; 3], f: &[Jet], kind: InputKind, need_aux: bool) -> Local {
        let xj = Jet::coords(*x);
        let geo = Geom::background(&xj);
        let p = rho(x);
        let mut l = Local {
            p,
            p2: p * p,
            d: [-x[0] / p, -x[1] / p, -x[2] / p],
            kind,
            n: 0.0,
            dn: [0.0; 3],
            hess: [[0.0; 3]; 3],
            xf: [0.0; 3],
            dx: [[0.0; 3]; 3],
            ddx: [[[0.0; 3]; 3]; 3],
            u: [[[0.0; 3]; 3]; 3],
            aux: None,
        };
        match kind {
            InputKind::Scalar => {
                l.n = f[0].v;
                l.dn = f[0].g;
                l.hess = vals33(&geo.hessian(&f[0]));
            }
            InputKind::Form => {
                let xv = [f[0], f[1], f[2]];
                l.xf = vals3(&xv);
                let dx = geo.cov_form(&xv);
                l.dx = vals33(&dx);
                let ddx = geo.cov_co2(&dx);
                let u = u_at(&geo, &xv);
                for k in 0..3 {
                    for j in 0..3 {
                        for i in 0..3 {
                            l.ddx[k][j][i] = ddx[k][j][i].v;
                            l.u[k][j][i] = u[k][j][i].v;
                        }
                    }
                }
                if need_aux {
                    let vv = aux_vector(&xj);
                    let u = aux_u(&xj);
                    let v = aux_v(&xj);
                    l.aux = Some(Aux {
                        vv: vals3(&vv),
                        dvv: vals33(&geo.cov_vec(&vv)),
                        e2u: (2.0 * u.v).exp(),
                        du: u.g,
                        v: v.v,
                        dv: v.g,
                        hv: vals33(&geo.hessian(&v)),
                    });
                }
            }
        }
        l
    }

    /// g̊(a, b) for 1-forms.
    fn ip(&self, a: &V, b: &V) -> f64 {
        self.p2 * dot(a, b)
    }

    /// A(a^♯, b^♯) for a covariant 2-tensor and 1-forms.
    fn bil_up(&self, m: &M, a: &V, b: &V) -> f64 {
        self.p2 * self.p2 * bil(m, a, b)
    }

    fn c2(&self, delta: f64) -> f64 {
        self.p * (1.0 - 4.0 * delta)
    }

    fn sym(&self) -> M {
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = 0.5 * (self.dx[i][j] + self.dx[j][i]);
            }
        }
        s
    }

    fn div(&self) -> f64 {
        self.p2 * (self.dx[0][0] + self.dx[1][1] + self.dx[2][2])
    }

    fn sq2(&self, m: &M) -> f64 {
        let s: f64 = m.iter().flatten().map(|v| v * v).sum();
        s * self.p2 * self.p2
    }

    /// |T̊N|-type quantities for the scalar identities: (T(dN, D), tr T).
    fn t_terms(&self) -> (f64, f64) {
        let mut t = self.hess;
        for (i, row) in t.iter_mut().enumerate() {
            row[i] -= self.n / self.p2;
        }
        let tr = self.p2 * (t[0][0] + t[1][1] + t[2][2]);
        (self.bil_up(&t, &self.dn, &self.d), tr)
    }

    /// Interior integrands (lhs, rhs), weight not included.
    fn interior(&self, id: IdentityId, delta: f64) -> (f64, f64) {
        let c2 = self.c2(delta);
        let k1 = 2.0 * delta - 2.0 + c2;
        match self.kind {
            InputKind::Scalar => {
                let n = self.n;
                let n2 = n * n;
                let dn2 = self.ip(&self.dn, &self.dn);
                let (tdd, trt) = self.t_terms();
                match id {
                    IdentityId::Lem2 => (2.0 * n * self.ip(&self.dn, &self.d), -k1 * n2),
                    IdentityId::Lem4 => (-2.0 * tdd, k1 * (dn2 - n2)),
                    IdentityId::Lem6 => (-trt * n, dn2 + (3.0 - delta * k1) * n2),
                    IdentityId::Comb7 => (
                        tdd - n * trt,
                        (2.0 - delta - 0.5 * c2) * dn2
                            + (-2.0 * delta * delta + 3.0 * delta + 2.0 + c2 * (0.5 - delta)) * n2,
                    ),
                    _ => unreachable!(),
                }
            }
            InputKind::Form => self.form_interior(id, delta),
        }
    }

    fn form_interior(&self, id: IdentityId, delta: f64) -> (f64, f64) {
        let p = self.p;
        let p2 = self.p2;
        let x = &self.xf;
        let d = &self.d;
        let s = self.sym();
        let a = self.ip(x, d);
        let div = self.div();
        let x2 = self.ip(x, x);
        let gx2 = self.sq2(&self.dx);
        let o0 = p * (4.0 * delta - 1.0) / 2.0;
        // ∇X(A, B) = A^k B^i ∇_k X_i
        let nab = |u: &V, v: &V| self.bil_up(&self.dx, u, v);
        let ihp1 = || {
            let mut lap = [0.0; 3];
            for (i, l) in lap.iter_mut().enumerate() {
                *l = p2 * (0..3).map(|k| self.ddx[k][k][i]).sum::<f64>();
            }
            (
                self.ip(x, &lap) - 2.0 * x2,
                -gx2 + (2.0 * delta * delta - 2.0 * delta - 2.0 - delta * p * (4.0 * delta - 1.0)) * x2,
            )
        };
        let u_grad = || {
            let mut t = 0.0;
            for k in 0..3 {
                for j in 0..3 {
                    for i in 0..3 {
                        t += self.u[k][j][i] * self.dx[j][i] * d[k];
                    }
                }
            }
            t * p2 * p2 * p2
        };
        let u_trace_ik = || {
            let mut t = 0.0;
            for k in 0..3 {
                for j in 0..3 {
                    t += self.u[k][j][k] * x[j];
                }
            }
            t * p2 * p2
        };
        let u_trace_kj = || {
            let mut t = 0.0;
            for k in 0..3 {
                for i in 0..3 {
                    t += self.u[k][k][i] * x[i];
                }
            }
            t * p2 * p2
        };
        let cord10 = || {
            (
                2.0 * self.bil_up(&s, x, d) + div * a,
                (2.0 - delta + p * (2.0 * delta - 1.5)) * x2 - (2.0 * delta + 1.0) * a * a,
            )
        };
        let cord11 = || {
            (2.0 * self.bil_up(&s, d, d) * a, (2.0 - 2.0 * delta + p * (4.0 * delta + 1.0)) * a * a)
        };
        let ihp2_rhs = (1.0 - delta + o0) * (gx2 - x2) - ((2.0 * delta + 1.0) * a * a - (1.0 - p) * x2);
        let ihp3_rhs = (2.0 - 2.0 * delta + 2.0 * delta * p) * x2 + gx2 + 2.0 * delta * (2.0 * delta + 1.0) * a * a;
        match id {
            IdentityId::Cord10 => cord10(),
            IdentityId::Cord11 => cord11(),
            IdentityId::Ihp0 => (nab(d, x), (1.0 - delta + o0) * x2),
            IdentityId::IhpM1 => (nab(x, d), -(a * div + (2.0 * delta + 1.0) * a * a) + (1.0 - p) * x2),
            IdentityId::Ihp1 => ihp1(),
            IdentityId::Ihp2 => (u_grad() + div * a, ihp2_rhs),
            IdentityId::Ihp3 => (u_trace_ik() + 2.0 * self.sq2(&s) - 2.0 * delta * div * a, ihp3_rhs),
            IdentityId::CombU => {
                let lhs = u_grad() - 0.5 * u_trace_kj() + 0.5 * u_trace_ik() + self.sq2(&s) - self.bil_up(&s, d, d) * a
                    + (2.0 - delta) * div * a
                    + 2.0 * self.bil_up(&s, x, d);
                let rhs = ihp2_rhs - 0.5 * ihp1().1 + 0.5 * ihp3_rhs + cord10().1 - 0.5 * cord11().1;
                (lhs, rhs)
            }
            IdentityId::LemD1 | IdentityId::PropD2 => {
                let ax = self.aux.as_ref().expect("auxiliary data");
                // S(Y^♯, V) + ½ div Y ⟨Y, V⟩, V a vector
                let yv = dot(x, &ax.vv);
                let mut syv = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        syv += s[i][j] * x[i] * ax.vv[j];
                    }
                }
                let lhs = p2 * syv + 0.5 * div * yv;
                let mut nv = 0.0;
                for k in 0..3 {
                    for i in 0..3 {
                        nv += x[k] * x[i] * ax.dvv[k][i];
                    }
                }
                let nv = p2 * nv;
                let divv = ax.dvv[0][0] + ax.dvv[1][1] + ax.dvv[2][2];
                let rhs = -0.5 * (nv + 0.5 * divv * x2);
                if id == IdentityId::LemD1 {
                    (lhs, rhs)
                } else {
                    let extra = -0.5 * (2.0 * self.ip(&ax.du, x) * yv + dot(&ax.du, &ax.vv) * x2);
                    (ax.e2u * lhs, ax.e2u * (rhs + extra))
                }
            }
            IdentityId::LemPD3 => {
                let ax = self.aux.as_ref().expect("auxiliary data");
                let av = self.ip(&ax.dv, x);
                let lhs = -2.0 * ax.v * ax.e2u * self.bil_up(&s, &ax.dv, &ax.dv) * av;
                let lap_v = p2 * (ax.hv[0][0] + ax.hv[1][1] + ax.hv[2][2]);
                let rhs = ax.e2u
                    * av
                    * (av * (self.ip(&ax.dv, &ax.dv) + ax.v * lap_v + 2.0 * ax.v * self.ip(&ax.dv, &ax.du))
                        + 2.0 * ax.v * self.bil_up(&ax.hv, x, &ax.dv));
                (lhs, rhs)
            }
            _ => unreachable!(),
        }
    }

    /// Boundary integrand against dσ(g̊), weight not included; `eta` is the
    /// outward unit normal as a vector.
    fn boundary(&self, id: IdentityId, delta: f64, eta: &V) -> f64 {
        let d_eta = dot(&self.d, eta);
        match self.kind {
            InputKind::Scalar => {
                let n2 = self.n * self.n;
                let dn2 = self.ip(&self.dn, &self.dn);
                let dn_eta = dot(&self.dn, eta);
                match id {
                    IdentityId::Lem2 => n2 * d_eta,
                    IdentityId::Lem4 => (n2 - dn2) * d_eta,
                    IdentityId::Lem6 => -self.n * dn_eta + delta * n2 * d_eta,
                    IdentityId::Comb7 => (delta - 0.5) * n2 * d_eta + 0.5 * dn2 * d_eta - self.n * dn_eta,
                    _ => unreachable!(),
                }
            }
            InputKind::Form => {
                let x = &self.xf;
                let p2 = self.p2;
                let a = self.ip(x, &self.d);
                let x2 = self.ip(x, x);
                let gx2 = self.sq2(&self.dx);
                let x_eta = dot(x, eta);
                let xu = [p2 * x[0], p2 * x[1], p2 * x[2]];
                // ∇X(η, X) = η^k X^i ∇_k X_i and ∇X(X, η) = X^k η^i ∇_k X_i
                let n_ex = bil(&self.dx, eta, &xu);
                let n_xe = bil(&self.dx, &xu, eta);
                match id {
                    IdentityId::Cord10 => 0.5 * x2 * d_eta + a * x_eta,
                    IdentityId::Cord11 => a * a * d_eta,
                    IdentityId::Ihp0 => 0.5 * x2 * d_eta,
                    IdentityId::IhpM1 => a * x_eta,
                    IdentityId::Ihp1 => n_ex - delta * x2 * d_eta,
                    IdentityId::Ihp2 => 0.5 * (gx2 - x2) * d_eta + a * x_eta,
                    IdentityId::Ihp3 => n_xe - 2.0 * delta * a * x_eta,
                    IdentityId::CombU => {
                        0.5 * gx2 * d_eta + 0.5 * delta * x2 * d_eta + (2.0 - delta) * a * x_eta - 0.5 * a * a * d_eta
                            + 0.5 * n_xe
                            - 0.5 * n_ex
                    }
                    IdentityId::LemD1 | IdentityId::PropD2 => {
                        let ax = self.aux.as_ref().expect("auxiliary data");
                        let yv = dot(x, &ax.vv);
                        let v_eta = dot(&ax.vv, eta) / p2;
                        let b = 0.5 * yv * x_eta + 0.25 * x2 * v_eta;
                        if id == IdentityId::LemD1 {
                            b
                        } else {
                            ax.e2u * b
                        }
                    }
                    IdentityId::LemPD3 => {
                        let ax = self.aux.as_ref().expect("auxiliary data");
                        let av = self.ip(&ax.dv, x);
                        -ax.v * ax.e2u * av * av * dot(&ax.dv, eta)
                    }
                    _ => unreachable!(),
                }
            }
        }
    }
}

fn input_kind(u: &TensorField) -> Result<InputKind> {
    match u.rank {
        (0, 0) => Ok(InputKind::Scalar),
        (0, 1) => Ok(InputKind::Form),
        r => Err(Error::KindMismatch(format!("identity inputs are scalars or 1-forms, got rank {r:?}"))),
    }
}

/// Rejects inputs that do not vanish on the outer sphere.
pub fn check_outer_support(ctx: &Ctx, u: &TensorField) -> Result<()> {
    let surf = ctx.chart.surface(Boundary::Outer);
    for (site, _) in surf.sites() {
        let j = u.jets(ctx, site)?;
        // lattice jets use one-sided stencils here, so only values are checked on that path
        let with_grad = ctx.mode == crate::tensor::Deriv::Jet;
        let m = j
            .iter()
            .map(|c| if with_grad { c.v.abs().max(c.g.iter().fold(0.0f64, |a, b| a.max(b.abs()))) } else { c.v.abs() })
            .fold(0.0, f64::max);
        if m > 1e-12 {
            return Err(Error::SupportViolation(format!(
                "input is {m:.3e} on the truncation sphere r = {}",
                surf.r
            )));
        }
    }
    Ok(())
}

/// Evaluates several identities of the same input kind in one pass over the chart.
pub fn check_identities(ctx: &Ctx, ids: &[IdentityId], u: &TensorField, delta: f64) -> Result<Vec<IdentityCheck>> {
    let kind = input_kind(u)?;
    if let Some(bad) = ids.iter().find(|i| i.kind() != kind) {
        return Err(Error::KindMismatch(format!("{} expects a {:?} input", bad.id(), bad.kind())));
    }
    check_outer_support(ctx, u)?;
    let chart = ctx.chart;
    let need_aux = ids.iter().any(|i| !i.weighted());
    let m = ids.len();
    let weight_of = |id: &IdentityId, p: f64| if id.weighted() { p.powf(2.0 * delta) } else { 1.0 };

    let rows: Vec<Result<Vec<f64>>> = (0..chart.len())
        .into_par_iter()
        .map(|n| {
            let site = chart.site(n);
            let f = u.jets(ctx, site)?;
            let loc = Local::new(&site.x, &f, kind, need_aux);
            let w = chart.bg_weight(n);
            let mut out = Vec::with_capacity(2 * m);
            for id in ids {
                let (l, r) = loc.interior(*id, delta);
                let ww = w * weight_of(id, loc.p);
                out.push(l * ww);
                out.push(r * ww);
            }
            Ok(out)
        })
        .collect();
    let mut interior = vec![0.0; 2 * m];
    for (n, r) in rows.into_iter().enumerate() {
        let r = r?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(n));
        }
        for (a, b) in interior.iter_mut().zip(&r) {
            *a += b;
        }
    }

    let surf = chart.surface(Boundary::Inner);
    let brows: Vec<Result<Vec<f64>>> = (0..surf.points.len())
        .into_par_iter()
        .map(|q| {
            let site = Site { x: surf.points[q], node: surf.node_index.as_ref().map(|ix| ix[q]) };
            let f = u.jets(ctx, site)?;
            let loc = Local::new(&site.x, &f, kind, need_aux);
            let eta = outward_normal(Boundary::Inner, &site.x);
            // dσ(g̊) = ρ⁻² dσ(h̊)
            let w = surf.weights[q] / (loc.p2);
            Ok(ids.iter().map(|id| loc.boundary(*id, delta, &eta) * w * weight_of(id, loc.p)).collect())
        })
        .collect();
    let mut bdy = vec![0.0; m];
    for r in brows {
        for (a, b) in bdy.iter_mut().zip(&r?) {
            *a += b;
        }
    }

    Ok(ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let (lhs, rhs, b) = (interior[2 * k], interior[2 * k + 1], bdy[k]);
            let defect = (lhs - rhs - b).abs();
            let scale = lhs.abs().max(rhs.abs()).max(b.abs()).max(1e-300);
            let residual = Residual::new(id.id(), defect / scale, defect)
                .with_meta("delta", delta)
                .with_meta("resolution", chart.n_r as f64)
                .with_meta("lhs", lhs)
                .with_meta("rhs_interior", rhs)
                .with_meta("boundary", b);
            IdentityCheck { id: *id, lhs, rhs_interior: rhs, boundary: b, residual }
        })
        .collect())
}

/// One identity: `residual.l2` is the defect relative to the largest of the
/// three integrals, `residual.sup` the absolute defect.
pub fn check_identity(ctx: &Ctx, id: IdentityId, u: &TensorField, delta: f64) -> Result<IdentityCheck> {
    Ok(check_identities(ctx, &[id], u, delta)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{blob_family, cosh_potential, rotation_form, FamilySpec, WindowKind};
    use crate::manifold::build_ball_chart;

    fn capped(seed: u64) -> FamilySpec {
        FamilySpec::new(seed, 2, (0.2, 0.85), 2, WindowKind::Cap)
    }

    #[test]
    fn every_identity_balances_with_exact_jets() {
        let chart = build_ball_chart(0.2, 0.85, 64, 32).unwrap();
        let ctx = Ctx::jet(&chart);
        let scalars: Vec<IdentityId> = IdentityId::ALL.iter().copied().filter(|i| i.kind() == InputKind::Scalar).collect();
        let forms: Vec<IdentityId> = IdentityId::ALL.iter().copied().filter(|i| i.kind() == InputKind::Form).collect();
        for delta in [-0.7, 0.5, 1.3] {
            for b in blob_family(&capped(11)) {
                let checks = check_identities(&ctx, &scalars, &b.scalar_field(), delta).unwrap();
                assert!(checks.iter().any(|c| c.boundary.abs() > 1e-8));
                for c in checks {
                    assert!(c.residual.l2 < 1e-8, "{} δ={delta}: {:?}", c.id.id(), c);
                }
                for c in check_identities(&ctx, &forms, &b.form_field(), delta).unwrap() {
                    assert!(c.residual.l2 < 1e-8, "{} δ={delta}: {:?}", c.id.id(), c);
                }
            }
        }
    }

    #[test]
    fn interior_support_zeroes_boundary_terms() {
        let chart = build_ball_chart(0.2, 0.9, 16, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let spec = FamilySpec::new(3, 1, (0.3, 0.8), 2, WindowKind::Bump);
        let b = &blob_family(&spec)[0];
        for c in check_identities(&ctx, &[IdentityId::Lem2, IdentityId::Lem6], &b.scalar_field(), 1.0).unwrap() {
            assert_eq!(c.boundary, 0.0);
        }
        for c in check_identities(&ctx, &[IdentityId::Cord10, IdentityId::Cord11], &b.form_field(), 1.0).unwrap() {
            assert_eq!(c.boundary, 0.0);
        }
    }

    #[test]
    fn killing_form_makes_the_u_contraction_vanish() {
        let chart = build_ball_chart(0.2, 0.85, 64, 32).unwrap();
        let ctx = Ctx::jet(&chart);
        let y = TensorField::form(|x| {
            let q = 1.0 - (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * (1.0 / (0.85 * 0.85));
            let w = if q.v > 0.0 { q.powi(4) } else { Jet::ZERO };
            let r = rotation_form(x, 2);
            [r[0] * w, r[1] * w, r[2] * w]
        });
        let c = check_identity(&ctx, IdentityId::Ihp1, &y, 0.5).unwrap();
        assert!(c.residual.l2 < 1e-9, "{c:?}");
    }

    #[test]
    fn rejects_inputs_reaching_the_outer_sphere() {
        let chart = build_ball_chart(0.2, 0.9, 16, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let n = TensorField::scalar(cosh_potential);
        assert!(matches!(check_identity(&ctx, IdentityId::Lem2, &n, 1.0), Err(Error::SupportViolation(_))));
        assert!(matches!(IdentityId::parse("LEM9"), Err(Error::UnknownIdentity(_))));
        assert_eq!(IdentityId::parse("comb_u").unwrap(), IdentityId::CombU);
    }
}
