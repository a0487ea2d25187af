//! Tensor fields, Levi-Civita connections, covariant derivatives and curvature.
//!
//! Components are Cartesian. A field is either an analytic closure returning
//! jets, or nodal values differentiated by finite differences on a lattice
//! chart; [`TensorField::jets`] hides the difference.
//!
//! Curvature convention: R^m_{lij} = ∂_iΓ^m_{jl} − ∂_jΓ^m_{il} + Γ^m_{ip}Γ^p_{jl} − Γ^m_{jp}Γ^p_{il},
//! Riem_{ijkl} = g_{km} R^m_{lij}, Ric_{jl} = g^{ik} Riem_{ijkl}. Hyperbolic space
//! then has Riem_{ijkl} = g_{il}g_{jk} − g_{ik}g_{jl}, Ric = −2g and R = −6.

use std::sync::Arc;

use rayon::prelude::*;

use crate::jet::Jet;
use crate::manifold::{rho_jet, ChartGrid, Layout, Site};
use crate::verify::Residual;
use crate::{Error, Result};

pub type V3 = [Jet; 3];
pub type M3 = [[Jet; 3]; 3];
pub type T3 = [[[Jet; 3]; 3]; 3];
pub type T4 = [[[[Jet; 3]; 3]; 3]; 3];

pub const Z3: V3 = [Jet::ZERO; 3];
pub const ZM: M3 = [[Jet::ZERO; 3]; 3];
pub const ZT: T3 = [[[Jet::ZERO; 3]; 3]; 3];
pub const ZT4: T4 = [[[[Jet::ZERO; 3]; 3]; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deriv {
    /// Analytic jets where a closure exists, FD otherwise.
    Jet,
    /// Always FD from nodal values.
    Fd,
}

#[derive(Clone, Copy)]
pub struct Ctx<'a> {
    pub chart: &'a ChartGrid,
    pub mode: Deriv,
}

impl<'a> Ctx<'a> {
    pub fn jet(chart: &'a ChartGrid) -> Self {
        Ctx { chart, mode: Deriv::Jet }
    }
    pub fn fd(chart: &'a ChartGrid) -> Self {
        Ctx { chart, mode: Deriv::Fd }
    }
}

pub type JetFn = Arc<dyn Fn(&[Jet; 3]) -> Vec<Jet> + Send + Sync>;

/// Rank-(r, m) field with contravariant indices first in the flat component index.
#[derive(Clone)]
pub struct TensorField {
    pub rank: (u8, u8),
    /// Node-major component values (may be empty for purely analytic fields).
    pub comps: Vec<f64>,
    pub analytic: Option<JetFn>,
}

impl std::fmt::Debug for TensorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TensorField")
            .field("rank", &self.rank)
            .field("nodes", &(self.comps.len() / self.ncomp().max(1)))
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

impl TensorField {
    pub fn ncomp(&self) -> usize {
        3usize.pow((self.rank.0 + self.rank.1) as u32)
    }

    pub fn analytic(rank: (u8, u8), f: impl Fn(&[Jet; 3]) -> Vec<Jet> + Send + Sync + 'static) -> TensorField {
        TensorField { rank, comps: Vec::new(), analytic: Some(Arc::new(f)) }
    }

    pub fn scalar(f: impl Fn(&[Jet; 3]) -> Jet + Send + Sync + 'static) -> TensorField {
        TensorField::analytic((0, 0), move |x| vec![f(x)])
    }

    pub fn form(f: impl Fn(&[Jet; 3]) -> V3 + Send + Sync + 'static) -> TensorField {
        TensorField::analytic((0, 1), move |x| f(x).to_vec())
    }

    pub fn sym2(rank: (u8, u8), f: impl Fn(&[Jet; 3]) -> M3 + Send + Sync + 'static) -> TensorField {
        TensorField::analytic(rank, move |x| flatten_m3(&f(x)))
    }

    pub fn nodal(rank: (u8, u8), comps: Vec<f64>) -> TensorField {
        TensorField { rank, comps, analytic: None }
    }

    pub fn zeros(rank: (u8, u8), chart: &ChartGrid) -> TensorField {
        let nc = 3usize.pow((rank.0 + rank.1) as u32);
        TensorField::nodal(rank, vec![0.0; nc * chart.len()])
    }

    /// Fills nodal values from the analytic closure.
    pub fn sampled(mut self, chart: &ChartGrid) -> TensorField {
        if let Some(f) = &self.analytic {
            let nc = self.ncomp();
            let vals: Vec<Vec<f64>> = chart
                .xyz
                .par_iter()
                .map(|x| {
                    let c = Jet::coords(*x);
                    f(&c).iter().map(|j| j.v).collect::<Vec<f64>>()
                })
                .collect();
            let mut comps = Vec::with_capacity(nc * chart.len());
            for v in vals {
                comps.extend(v);
            }
            self.comps = comps;
        }
        self
    }

    /// Drops the analytic closure so every derivative comes from the lattice.
    pub fn discrete(&self, chart: &ChartGrid) -> TensorField {
        let s = self.clone().sampled(chart);
        TensorField::nodal(s.rank, s.comps)
    }

    pub fn node_values(&self, node: usize) -> &[f64] {
        let nc = self.ncomp();
        &self.comps[node * nc..(node + 1) * nc]
    }

    pub fn has_nodal(&self, chart: &ChartGrid) -> bool {
        self.comps.len() == self.ncomp() * chart.len()
    }

    /// Component jets at a site.
    pub fn jets(&self, ctx: &Ctx, site: Site) -> Result<Vec<Jet>> {
        if ctx.mode == Deriv::Jet {
            if let Some(f) = &self.analytic {
                return Ok(f(&Jet::coords(site.x)));
            }
        }
        let chart = ctx.chart;
        let node = site
            .node
            .ok_or_else(|| Error::StencilOutOfDomain("finite differences need a lattice node".into()))?;
        if chart.layout != Layout::Lattice {
            return Err(Error::StencilOutOfDomain("finite differences need the lattice layout".into()));
        }
        if !self.has_nodal(chart) {
            return Err(Error::StencilOutOfDomain("field has no nodal values on this chart".into()));
        }
        let nc = self.ncomp();
        Ok((0..nc).map(|c| chart.fd_jet(&|m| self.comps[m * nc + c], node)).collect())
    }

    pub fn scalar_jet(&self, ctx: &Ctx, site: Site) -> Result<Jet> {
        Ok(self.jets(ctx, site)?[0])
    }

    pub fn form_jets(&self, ctx: &Ctx, site: Site) -> Result<V3> {
        let v = self.jets(ctx, site)?;
        Ok([v[0], v[1], v[2]])
    }

    pub fn m3_jets(&self, ctx: &Ctx, site: Site) -> Result<M3> {
        Ok(unflatten_m3(&self.jets(ctx, site)?))
    }

    /// Pointwise linear combination a·self + b·other (analytic closures combine too).
    pub fn lincomb(&self, a: f64, other: &TensorField, b: f64) -> TensorField {
        assert_eq!(self.rank, other.rank);
        let comps = if self.comps.len() == other.comps.len() {
            self.comps.iter().zip(&other.comps).map(|(x, y)| a * x + b * y).collect()
        } else {
            Vec::new()
        };
        let analytic = match (&self.analytic, &other.analytic) {
            (Some(f), Some(g)) => {
                let (f, g) = (f.clone(), g.clone());
                Some(Arc::new(move |x: &[Jet; 3]| f(x).iter().zip(g(x)).map(|(p, q)| *p * a + q * b).collect::<Vec<Jet>>())
                    as JetFn)
            }
            _ => None,
        };
        TensorField { rank: self.rank, comps, analytic }
    }

    pub fn scaled(&self, a: f64) -> TensorField {
        self.lincomb(a, self, 0.0)
    }
}

pub fn flatten_m3(m: &M3) -> Vec<Jet> {
    m.iter().flat_map(|r| r.iter().copied()).collect()
}

pub fn unflatten_m3(v: &[Jet]) -> M3 {
    let mut m = ZM;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = v[3 * i + j];
        }
    }
    m
}

pub fn flatten_t3(t: &T3) -> Vec<Jet> {
    t.iter().flat_map(|a| a.iter().flat_map(|b| b.iter().copied())).collect()
}

// ---------------------------------------------------------------------------
// Pointwise algebra

pub fn det3(m: &M3) -> Jet {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse via adjugate / determinant.
pub fn inv3(m: &M3) -> (M3, Jet) {
    let d = det3(m);
    let id = d.recip();
    let mut r = ZM;
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, e) = ((i + 1) % 3, (i + 2) % 3);
            r[i][j] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) * id;
        }
    }
    (r, d)
}

pub fn ident_m3(c: Jet) -> M3 {
    let mut m = ZM;
    for i in 0..3 {
        m[i][i] = c;
    }
    m
}

pub fn scale_m3(m: &M3, c: Jet) -> M3 {
    let mut r = *m;
    for row in r.iter_mut() {
        for x in row.iter_mut() {
            *x *= c;
        }
    }
    r
}

pub fn add_m3(a: &M3, b: &M3) -> M3 {
    let mut r = *a;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += b[i][j];
        }
    }
    r
}

pub fn sub_m3(a: &M3, b: &M3) -> M3 {
    let mut r = *a;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] -= b[i][j];
        }
    }
    r
}

pub fn matmul(a: &M3, b: &M3) -> M3 {
    let mut r = ZM;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    r
}

pub fn transpose(a: &M3) -> M3 {
    let mut r = ZM;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[j][i];
        }
    }
    r
}

/// Full contraction Σ a_ij b_ij.
pub fn dot_m3(a: &M3, b: &M3) -> Jet {
    let mut s = Jet::ZERO;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

pub fn mat_vec(a: &M3, v: &V3) -> V3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn dot3(a: &V3, b: &V3) -> Jet {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sym_part(a: &M3) -> M3 {
    let mut r = ZM;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (a[i][j] + a[j][i]) * 0.5;
        }
    }
    r
}

pub fn trace_with(gi: &M3, h: &M3) -> Jet {
    dot_m3(gi, h)
}

/// Raise both indices: g^{ia} h_ab g^{bj}.
pub fn raise2(gi: &M3, h: &M3) -> M3 {
    matmul(&matmul(gi, h), gi)
}

/// Lower both indices: g_ia π^{ab} g_bj.
pub fn lower2(g: &M3, p: &M3) -> M3 {
    matmul(&matmul(g, p), g)
}

pub fn grad(f: &Jet) -> V3 {
    [f.d(0), f.d(1), f.d(2)]
}

pub fn vf(v: f64) -> V3 {
    [Jet::cst(v); 3]
}

// ---------------------------------------------------------------------------
// Connections

/// Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij}), indexed `[k][i][j]`.
pub fn christoffel_from(g: &M3, gi: &M3) -> T3 {
    let mut dg = ZT; // dg[l][i][j] = ∂_l g_ij
    for l in 0..3 {
        for i in 0..3 {
            for j in i..3 {
                let d = g[i][j].d(l);
                dg[l][i][j] = d;
                dg[l][j][i] = d;
            }
        }
    }
    let mut low = ZT; // Γ_{l i j}
    for l in 0..3 {
        for i in 0..3 {
            for j in i..3 {
                let v = (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]) * 0.5;
                low[l][i][j] = v;
                low[l][j][i] = v;
            }
        }
    }
    let mut gam = ZT;
    for k in 0..3 {
        for i in 0..3 {
            for j in i..3 {
                let v = gi[k][0] * low[0][i][j] + gi[k][1] * low[1][i][j] + gi[k][2] * low[2][i][j];
                gam[k][i][j] = v;
                gam[k][j][i] = v;
            }
        }
    }
    gam
}

/// Closed-form Christoffel symbols of g̊ = ρ⁻²δ: Γ̊^k_ij = δ^k_i φ_j + δ^k_j φ_i − δ_ij φ_k, φ = x/ρ.
pub fn background_christoffel(x: &[Jet; 3]) -> T3 {
    let ir = rho_jet(x).recip();
    let phi = [x[0] * ir, x[1] * ir, x[2] * ir];
    let mut gam = ZT;
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut v = Jet::ZERO;
                if k == i {
                    v += phi[j];
                }
                if k == j {
                    v += phi[i];
                }
                if i == j {
                    v -= phi[k];
                }
                gam[k][i][j] = v;
            }
        }
    }
    gam
}

/// Pointwise geometry of a metric: g, g⁻¹, s = √(det g / det g̊), Γ.
#[derive(Clone, Debug)]
pub struct Geom {
    pub g: M3,
    pub gi: M3,
    pub s: Jet,
    pub gam: T3,
}

impl Geom {
    pub fn new(x: &[Jet; 3], g: M3) -> Geom {
        let (gi, det) = inv3(&g);
        let s = det.sqrt() * rho_jet(x).powi(3);
        let gam = christoffel_from(&g, &gi);
        Geom { g, gi, s, gam }
    }

    pub fn background(x: &[Jet; 3]) -> Geom {
        let p = rho_jet(x);
        let ip2 = (p * p).recip();
        Geom {
            g: ident_m3(ip2),
            gi: ident_m3(p * p),
            s: Jet::cst(1.0),
            gam: background_christoffel(x),
        }
    }

    /// ∇_i Y_j for a 1-form.
    pub fn cov_form(&self, y: &V3) -> M3 {
        let mut r = ZM;
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = y[j].d(i) - (self.gam[0][i][j] * y[0] + self.gam[1][i][j] * y[1] + self.gam[2][i][j] * y[2]);
            }
        }
        r
    }

    /// ∇_i V^j for a vector.
    pub fn cov_vec(&self, v: &V3) -> M3 {
        let mut r = ZM;
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = v[j].d(i) + self.gam[j][i][0] * v[0] + self.gam[j][i][1] * v[1] + self.gam[j][i][2] * v[2];
            }
        }
        r
    }

    pub fn hessian(&self, f: &Jet) -> M3 {
        self.cov_form(&grad(f))
    }

    pub fn laplacian(&self, f: &Jet) -> Jet {
        dot_m3(&self.gi, &self.hessian(f))
    }

    /// ∇_k h_ij for a covariant 2-tensor, indexed `[k][i][j]`.
    pub fn cov_co2(&self, h: &M3) -> T3 {
        let mut r = ZT;
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = h[i][j].d(k);
                    for l in 0..3 {
                        v -= self.gam[l][k][i] * h[l][j] + self.gam[l][k][j] * h[i][l];
                    }
                    r[k][i][j] = v;
                }
            }
        }
        r
    }

    /// ∇_k π^ij for a contravariant 2-tensor, indexed `[k][i][j]`.
    pub fn cov_up2(&self, p: &M3) -> T3 {
        let mut r = ZT;
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = p[i][j].d(k);
                    for l in 0..3 {
                        v += self.gam[i][k][l] * p[l][j] + self.gam[j][k][l] * p[i][l];
                    }
                    r[k][i][j] = v;
                }
            }
        }
        r
    }

    /// ∇_a t_bij for a covariant 3-tensor, indexed `[a][b][i][j]`.
    pub fn cov_co3(&self, t: &T3) -> T4 {
        let mut r = ZT4;
        for a in 0..3 {
            for b in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut v = t[b][i][j].d(a);
                        for l in 0..3 {
                            v -= self.gam[l][a][b] * t[l][i][j] + self.gam[l][a][i] * t[b][l][j] + self.gam[l][a][j] * t[b][i][l];
                        }
                        r[a][b][i][j] = v;
                    }
                }
            }
        }
        r
    }

    /// A^l_{lk} = ∂_k ln s: the trace of Γ − Γ̊.
    pub fn density_shift(&self) -> V3 {
        let ls = self.s.ln();
        grad(&ls)
    }

    /// ∇_k of a density-valued contravariant 2-tensor stored relative to dμ(g̊).
    pub fn cov_up2_density(&self, p: &M3) -> T3 {
        let mut r = self.cov_up2(p);
        let a = self.density_shift();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    r[k][i][j] -= a[k] * p[i][j];
                }
            }
        }
        r
    }

    pub fn lower(&self, v: &V3) -> V3 {
        mat_vec(&self.g, v)
    }

    pub fn raise(&self, y: &V3) -> V3 {
        mat_vec(&self.gi, y)
    }
}

/// R^m_{lij} indexed `[m][l][i][j]`; needs Γ with at least one derivative.
pub fn riemann_up(gam: &T3) -> T4 {
    let mut r = ZT4;
    for m in 0..3 {
        for l in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = gam[m][j][l].d(i) - gam[m][i][l].d(j);
                    for p in 0..3 {
                        v += gam[m][i][p] * gam[p][j][l] - gam[m][j][p] * gam[p][i][l];
                    }
                    r[m][l][i][j] = v;
                }
            }
        }
    }
    r
}

/// Riem_{ijkl} = g_km R^m_{lij}.
pub fn riemann_low(g: &M3, gam: &T3) -> T4 {
    let up = riemann_up(gam);
    let mut r = ZT4;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    r[i][j][k][l] = g[k][0] * up[0][l][i][j] + g[k][1] * up[1][l][i][j] + g[k][2] * up[2][l][i][j];
                }
            }
        }
    }
    r
}

/// Ric_{jl} = g^{ik} Riem_{ijkl}.
pub fn ricci_of(gi: &M3, riem: &T4) -> M3 {
    let mut r = ZM;
    for j in 0..3 {
        for l in 0..3 {
            let mut v = Jet::ZERO;
            for i in 0..3 {
                for k in 0..3 {
                    v += gi[i][k] * riem[i][j][k][l];
                }
            }
            r[j][l] = v;
        }
    }
    r
}

/// Ricci tensor directly from Γ: Ric_{jl} = R^i_{jil}.
pub fn ricci_from_gamma(gam: &T3) -> M3 {
    let up = riemann_up(gam);
    let mut r = ZM;
    for j in 0..3 {
        for l in 0..3 {
            r[j][l] = up[0][j][0][l] + up[1][j][1][l] + up[2][j][2][l];
        }
    }
    // R^m_{lij} contracted m with i gives Ric_{lj}; symmetric for Levi-Civita.
    transpose(&r)
}

/// Ricci tensor of g written through A = Γ − Γ̊ and the background.
pub fn ricci_via_a(bg: &Geom, a: &T3, ric_bg: &M3) -> M3 {
    // ∇̊_i A^i_{jk} − ∇̊_j A^i_{ik} + A^m_{jk} A^i_{im} − A^i_{jm} A^m_{ki}
    let mut da = [[[[Jet::ZERO; 3]; 3]; 3]; 3]; // da[c][k][i][j] = ∇̊_c A^k_ij
    for c in 0..3 {
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = a[k][i][j].d(c);
                    for l in 0..3 {
                        v += bg.gam[k][c][l] * a[l][i][j] - bg.gam[l][c][i] * a[k][l][j] - bg.gam[l][c][j] * a[k][i][l];
                    }
                    da[c][k][i][j] = v;
                }
            }
        }
    }
    let mut r = *ric_bg;
    for j in 0..3 {
        for k in 0..3 {
            let mut v = Jet::ZERO;
            for i in 0..3 {
                v += da[i][i][j][k] - da[j][i][i][k];
                for m in 0..3 {
                    v += a[m][j][k] * a[i][i][m] - a[i][j][m] * a[m][k][i];
                }
            }
            r[j][k] += v;
        }
    }
    r
}

// ---------------------------------------------------------------------------
// Field-level operations

/// Which metric a field operation uses.
#[derive(Clone, Copy)]
pub enum Metric<'a> {
    Background,
    Field(&'a TensorField),
}

impl<'a> Metric<'a> {
    pub fn geom(&self, ctx: &Ctx, site: Site) -> Result<Geom> {
        let x = Jet::coords(site.x);
        match self {
            Metric::Background => Ok(Geom::background(&x)),
            Metric::Field(g) => {
                let m = g.m3_jets(ctx, site)?;
                let d = det3(&m);
                if !(d.v > 0.0) || !(m[0][0].v > 0.0) {
                    return Err(Error::SingularMetric(site.node.unwrap_or(usize::MAX)));
                }
                Ok(Geom::new(&x, m))
            }
        }
    }
}

/// Per-node evaluation into a nodal field of the given rank.
pub fn map_nodes(ctx: &Ctx, rank: (u8, u8), f: impl Fn(Site) -> Result<Vec<f64>> + Sync) -> Result<TensorField> {
    let chart = ctx.chart;
    let rows: Vec<Result<Vec<f64>>> = (0..chart.len()).into_par_iter().map(|n| f(chart.site(n))).collect();
    let nc = 3usize.pow((rank.0 + rank.1) as u32);
    let mut comps = Vec::with_capacity(nc * chart.len());
    for r in rows {
        let r = r?;
        debug_assert_eq!(r.len(), nc);
        comps.extend(r);
    }
    Ok(TensorField::nodal(rank, comps))
}

fn vals(v: impl IntoIterator<Item = Jet>) -> Vec<f64> {
    v.into_iter().map(|j| j.v).collect()
}

/// Christoffel symbols of `g` as a rank-(1,2) nodal field `Γ^k_ij`.
pub fn christoffel(ctx: &Ctx, g: &TensorField) -> Result<TensorField> {
    map_nodes(ctx, (1, 2), |site| Ok(vals(flatten_t3(&Metric::Field(g).geom(ctx, site)?.gam))))
}

/// ∇T with the derivative index prepended. Slots of `t` are contravariant first.
pub fn covariant_derivative(ctx: &Ctx, t: &TensorField, metric: Metric) -> Result<TensorField> {
    let (r, m) = t.rank;
    let slots: Vec<bool> = (0..r).map(|_| true).chain((0..m).map(|_| false)).collect();
    let out = map_nodes(ctx, (r, m + 1), |site| {
        let geo = metric.geom(ctx, site)?;
        let c = t.jets(ctx, site)?;
        Ok(vals(cov_generic(&c, &slots, &geo.gam)))
    })?;
    // the derivative slot comes first, so contravariant slots are no longer leading;
    // the stored rank records counts only
    Ok(out)
}

/// Covariant derivative of a flat tensor with the given slot kinds (true = up).
/// Output slots: `[down] ++ slots`.
pub fn cov_generic(t: &[Jet], slots: &[bool], gam: &T3) -> Vec<Jet> {
    let rank = slots.len();
    let n = 3usize.pow(rank as u32);
    debug_assert_eq!(t.len(), n);
    let mut out = vec![Jet::ZERO; 3 * n];
    let digit = |idx: usize, s: usize| (idx / 3usize.pow((rank - 1 - s) as u32)) % 3;
    let replace = |idx: usize, s: usize, v: usize| {
        let p = 3usize.pow((rank - 1 - s) as u32);
        idx - digit(idx, s) * p + v * p
    };
    for k in 0..3 {
        for idx in 0..n {
            let mut v = t[idx].d(k);
            for (s, up) in slots.iter().enumerate() {
                let a = digit(idx, s);
                for l in 0..3 {
                    let other = t[replace(idx, s, l)];
                    if *up {
                        v += gam[a][k][l] * other;
                    } else {
                        v -= gam[l][k][a] * other;
                    }
                }
            }
            out[k * n + idx] = v;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    pub riemann: TensorField,
    pub ricci: TensorField,
    pub scalar: TensorField,
}

pub fn curvature(ctx: &Ctx, metric: Metric) -> Result<CurvatureBundle> {
    let chart = ctx.chart;
    let rows: Vec<Result<(Vec<f64>, Vec<f64>, f64)>> = (0..chart.len())
        .into_par_iter()
        .map(|n| {
            let geo = metric.geom(ctx, chart.site(n))?;
            let riem = riemann_low(&geo.g, &geo.gam);
            let ric = ricci_of(&geo.gi, &riem);
            let r = dot_m3(&geo.gi, &ric);
            let flat: Vec<f64> = riem.iter().flatten().flatten().flatten().map(|j| j.v).collect();
            Ok((flat, vals(flatten_m3(&ric)), r.v))
        })
        .collect();
    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for r in rows {
        let (x, y, z) = r?;
        a.extend(x);
        b.extend(y);
        c.push(z);
    }
    Ok(CurvatureBundle {
        riemann: TensorField::nodal((0, 4), a),
        ricci: TensorField::nodal((0, 2), b),
        scalar: TensorField::nodal((0, 0), c),
    })
}

/// A^k_ij = Γ^k_ij − Γ̊^k_ij.
pub fn a_tensor_at(geo: &Geom, x: &[Jet; 3]) -> T3 {
    let bg = background_christoffel(x);
    let mut a = ZT;
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                a[k][i][j] = geo.gam[k][i][j] - bg[k][i][j];
            }
        }
    }
    a
}

pub fn a_tensor(ctx: &Ctx, g: &TensorField) -> Result<TensorField> {
    map_nodes(ctx, (1, 2), |site| {
        let geo = Metric::Field(g).geom(ctx, site)?;
        Ok(vals(flatten_t3(&a_tensor_at(&geo, &Jet::coords(site.x)))))
    })
}

/// Ric(g) − Ric(g̊) written through A.
pub fn ricci_difference(ctx: &Ctx, g: &TensorField) -> Result<TensorField> {
    map_nodes(ctx, (0, 2), |site| {
        let x = Jet::coords(site.x);
        let geo = Metric::Field(g).geom(ctx, site)?;
        let bg = Geom::background(&x);
        let a = a_tensor_at(&geo, &x);
        Ok(vals(flatten_m3(&ricci_via_a(&bg, &a, &ZM))))
    })
}

/// R(g) = g^{jk}(Ric g̊_{jk} + A-terms).
pub fn scalar_curvature_covariant(ctx: &Ctx, g: &TensorField) -> Result<TensorField> {
    map_nodes(ctx, (0, 0), |site| {
        let x = Jet::coords(site.x);
        let geo = Metric::Field(g).geom(ctx, site)?;
        let bg = Geom::background(&x);
        let ric_bg = scale_m3(&bg.g, Jet::cst(-2.0));
        let a = a_tensor_at(&geo, &x);
        Ok(vec![dot_m3(&geo.gi, &ricci_via_a(&bg, &a, &ric_bg)).v])
    })
}

// ---------------------------------------------------------------------------
// Conformal identities of the ball model

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConformalIdentity {
    ChristoffelConf,
    HessRho,
    LaplRho,
    LaplGen,
    NormRel,
    HessRhoInv,
    LaplRhoInv,
}

impl ConformalIdentity {
    pub const ALL: [ConformalIdentity; 7] = [
        ConformalIdentity::ChristoffelConf,
        ConformalIdentity::HessRho,
        ConformalIdentity::LaplRho,
        ConformalIdentity::LaplGen,
        ConformalIdentity::NormRel,
        ConformalIdentity::HessRhoInv,
        ConformalIdentity::LaplRhoInv,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ConformalIdentity::ChristoffelConf => "CHRISTOFFEL_CONF",
            ConformalIdentity::HessRho => "HESS_RHO",
            ConformalIdentity::LaplRho => "LAPL_RHO",
            ConformalIdentity::LaplGen => "LAPL_GEN",
            ConformalIdentity::NormRel => "NORM_REL",
            ConformalIdentity::HessRhoInv => "HESS_RHOINV",
            ConformalIdentity::LaplRhoInv => "LAPL_RHOINV",
        }
    }

    pub fn parse(s: &str) -> Result<ConformalIdentity> {
        ConformalIdentity::ALL
            .iter()
            .copied()
            .find(|c| c.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownIdentity(s.to_string()))
    }
}

/// Inputs of a conformal-identity check: the metric g̊ as a (possibly discrete)
/// field, a scalar u and a rank-(0,2) field w.
pub struct ConformalInputs {
    pub metric: TensorField,
    pub rho: TensorField,
    pub rho_inv: TensorField,
    pub u: TensorField,
    pub w: TensorField,
}

impl ConformalInputs {
    pub fn analytic(u: TensorField, w: TensorField) -> ConformalInputs {
        ConformalInputs {
            metric: background_metric_field(),
            rho: TensorField::scalar(rho_jet),
            rho_inv: TensorField::scalar(|x| rho_jet(x).recip()),
            u,
            w,
        }
    }

    pub fn discrete(&self, chart: &ChartGrid) -> ConformalInputs {
        ConformalInputs {
            metric: self.metric.discrete(chart),
            rho: self.rho.discrete(chart),
            rho_inv: self.rho_inv.discrete(chart),
            u: self.u.discrete(chart),
            w: self.w.discrete(chart),
        }
    }
}

pub fn background_metric_field() -> TensorField {
    TensorField::sym2((0, 2), |x| {
        let p = rho_jet(x);
        ident_m3((p * p).recip())
    })
}

/// Pointwise residual vector of one conformal identity. Every derivative of a
/// field comes from the field (jets or FD); ρ-dependent coefficients are exact.
pub fn conformal_residual_at(which: ConformalIdentity, ctx: &Ctx, inp: &ConformalInputs, site: Site) -> Result<Vec<f64>> {
    let x = Jet::coords(site.x);
    let p = rho_jet(&x).v;
    let r2 = 1.0 - 2.0 * p;
    let geo = Metric::Field(&inp.metric).geom(ctx, site)?;
    let mut out = Vec::new();
    match which {
        ConformalIdentity::ChristoffelConf => {
            // Γ̊^k_ij = −ρ⁻¹(δ^k_i ∂_jρ + δ^k_j ∂_iρ − δ_ij ∂_kρ), flat Γ(h̊) = 0
            let rj = inp.rho.scalar_jet(ctx, site)?;
            let dr = grad(&rj);
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut e = 0.0;
                        if k == i {
                            e += dr[j].v;
                        }
                        if k == j {
                            e += dr[i].v;
                        }
                        if i == j {
                            e -= dr[k].v;
                        }
                        out.push(geo.gam[k][i][j].v + e / p);
                    }
                }
            }
        }
        ConformalIdentity::HessRho => {
            // ∇̊²ρ = ∇²_h̊ρ + ρ⁻¹(2 dρ⊗dρ − |dρ|²_h̊ h̊) with ∇²_h̊ρ = −h̊
            let rj = inp.rho.scalar_jet(ctx, site)?;
            let h = geo.hessian(&rj);
            for i in 0..3 {
                for j in 0..3 {
                    let xi = site.x[i];
                    let xj = site.x[j];
                    let d = if i == j { 1.0 } else { 0.0 };
                    let rhs = -d + (2.0 * xi * xj - r2 * d) / p;
                    out.push(h[i][j].v - rhs);
                }
            }
        }
        ConformalIdentity::LaplRho => {
            let rj = inp.rho.scalar_jet(ctx, site)?;
            out.push(geo.laplacian(&rj).v - (-3.0 * p * p - p * r2));
        }
        ConformalIdentity::LaplGen => {
            // Δ̊u = ρ²Δ_h̊u − (n−2)ρ⟨dρ, du⟩_h̊
            let u = inp.u.scalar_jet(ctx, site)?;
            let lap_h = u.h[0] + u.h[3] + u.h[5];
            let dd = -(site.x[0] * u.g[0] + site.x[1] * u.g[1] + site.x[2] * u.g[2]);
            out.push(geo.laplacian(&u).v - (p * p * lap_h - p * dd));
        }
        ConformalIdentity::NormRel => {
            // |w|_g̊ = ρ²|w|_h̊ for a rank-(0,2) tensor
            let w = inp.w.m3_jets(ctx, site)?;
            let wg = dot_m3(&w, &raise2(&geo.gi, &w)).v.sqrt();
            let wh = dot_m3(&w, &w).v.sqrt();
            out.push(wg - p * p * wh);
        }
        ConformalIdentity::HessRhoInv => {
            // ∇̊²(ρ⁻¹) = ρ⁻¹|dρ|²_h̊ g̊ − ρ⁻² ∇²_h̊ρ
            let v = inp.rho_inv.scalar_jet(ctx, site)?;
            let h = geo.hessian(&v);
            for i in 0..3 {
                for j in 0..3 {
                    let d = if i == j { 1.0 } else { 0.0 };
                    out.push(h[i][j].v - d * (r2 / (p * p * p) + 1.0 / (p * p)));
                }
            }
        }
        ConformalIdentity::LaplRhoInv => {
            let v = inp.rho_inv.scalar_jet(ctx, site)?;
            // n ρ⁻¹|dρ|²_h̊ − Δ_h̊ρ
            out.push(geo.laplacian(&v).v - (3.0 * r2 / p + 3.0));
        }
    }
    Ok(out)
}

/// Sup and weighted L² (dμ(g̊)) of a pointwise residual over off-pole nodes.
pub fn residual_over_nodes(ctx: &Ctx, id: &str, pole_cap: f64, f: impl Fn(Site) -> Result<Vec<f64>> + Sync) -> Result<Residual> {
    let chart = ctx.chart;
    let rows: Vec<Result<(f64, f64)>> = (0..chart.len())
        .into_par_iter()
        .map(|n| {
            if !chart.off_pole(n, pole_cap) {
                return Ok((0.0, 0.0));
            }
            let r = f(chart.site(n))?;
            let sup = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let sq: f64 = r.iter().map(|v| v * v).sum();
            Ok((sup, sq * chart.bg_weight(n)))
        })
        .collect();
    let (mut sup, mut l2) = (0.0f64, 0.0);
    for r in rows {
        let (s, q) = r?;
        if !s.is_finite() {
            return Err(Error::NonFinite(0));
        }
        sup = sup.max(s);
        l2 += q;
    }
    Ok(Residual::new(id, l2.sqrt(), sup).with_meta("pole_cap", pole_cap).with_meta("resolution", chart.n_r as f64))
}

pub fn conformal_identity_residual(which: ConformalIdentity, ctx: &Ctx, inp: &ConformalInputs, pole_cap: f64) -> Result<Residual> {
    residual_over_nodes(ctx, which.id(), pole_cap, |site| conformal_residual_at(which, ctx, inp, site))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::build_ball_chart;

    #[test]
    fn background_christoffel_value() {
        let x = Jet::coords([0.5, 0.0, 0.0]);
        let g = Geom::background(&x);
        assert!((g.gam[0][0][0].v - 4.0 / 3.0).abs() < 1e-14);
        let gen = Geom::new(&x, g.g);
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((gen.gam[k][i][j].v - g.gam[k][i][j].v).abs() < 1e-13);
                    for c in 0..3 {
                        assert!((gen.gam[k][i][j].g[c] - g.gam[k][i][j].g[c]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn hyperbolic_curvature_tensor() {
        let x = Jet::coords([0.2, -0.3, 0.4]);
        let g = Geom::background(&x);
        let riem = riemann_low(&g.g, &g.gam);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let e = g.g[i][l].v * g.g[j][k].v - g.g[i][k].v * g.g[j][l].v;
                        assert!((riem[i][j][k][l].v - e).abs() < 1e-10);
                    }
                }
            }
        }
        let ric = ricci_of(&g.gi, &riem);
        assert!((dot_m3(&g.gi, &ric).v + 6.0).abs() < 1e-12);
        let ric2 = ricci_from_gamma(&g.gam);
        for j in 0..3 {
            for l in 0..3 {
                assert!((ric[j][l].v - ric2[j][l].v).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn metric_compatibility_and_generic_derivative() {
        let chart = build_ball_chart(0.3, 0.9, 8, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let d = covariant_derivative(&ctx, &background_metric_field(), Metric::Background).unwrap();
        assert!(d.comps.iter().all(|v| v.abs() < 1e-9));
        let x = Jet::coords([0.1, 0.2, 0.3]);
        let g = Geom::background(&x);
        let y = [x[0] * x[1], x[2].exp(), x[0] * x[0]];
        let a = g.cov_form(&y);
        let b = cov_generic(&y, &[false], &g.gam);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[i][j].v - b[3 * i + j].v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn laplacian_of_rho_at_centre_limit() {
        let x = Jet::coords([1e-9, 0.0, 0.0]);
        let g = Geom::background(&x);
        assert!((g.laplacian(&rho_jet(&x)).v + 0.75).abs() < 1e-12);
    }
}
