//! Weighted Lebesgue, Sobolev and Hölder norms on (M, g̊), and empirical
//! probes of the standard weighted inequalities.
//!
//! Weights follow one convention everywhere: ‖u‖_{p,δ} = (∫ |u|^p ρ^{pδ} dμ(g̊))^{1/p}
//! with δ passed exactly as it appears in the norm subscript.

use rayon::prelude::*;

use crate::jet::Jet;
use crate::manifold::{rho, ChartGrid, RegionMask};
use crate::tensor::{background_christoffel, cov_generic, Ctx, TensorField};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    /// δ as written in the norm subscript.
    AsWritten,
    /// The caller negated δ (the ‖·‖_{2,−δ} family).
    Negated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSpec {
    pub k: usize,
    pub p: f64,
    pub delta: f64,
    pub convention: Convention,
}

impl WeightSpec {
    pub fn new(k: usize, p: f64, delta: f64) -> WeightSpec {
        WeightSpec { k, p, delta, convention: Convention::AsWritten }
    }

    pub fn l2(delta: f64) -> WeightSpec {
        WeightSpec::new(0, 2.0, delta)
    }

    pub fn h(k: usize, delta: f64) -> WeightSpec {
        WeightSpec::new(k, 2.0, delta)
    }

    pub fn negated(mut self) -> WeightSpec {
        self.convention = Convention::Negated;
        self
    }
}

/// Pointwise g̊-magnitudes |∇̊^j u| (j ≤ 2) of a field over a region, from
/// which any weighted norm of order ≤ 2 follows without re-evaluating the field.
#[derive(Clone, Debug)]
pub struct Profile {
    pub nodes: Vec<usize>,
    pub rho: Vec<f64>,
    pub weight: Vec<f64>,
    pub mags: Vec<[f64; 3]>,
    pub order: usize,
}

/// |T|_g̊ for Cartesian components of a tensor with `up` contravariant and
/// `down` covariant slots.
pub fn bg_norm(comps: &[f64], up: usize, down: usize, p: f64) -> f64 {
    let s: f64 = comps.iter().map(|c| c * c).sum();
    s.sqrt() * p.powi(down as i32 - up as i32)
}

/// |∇̊^j u|_g̊ for j = 0..=order at one site.
pub fn derivative_magnitudes(ctx: &Ctx, u: &TensorField, node: usize, order: usize) -> Result<[f64; 3]> {
    let site = ctx.chart.site(node);
    if order == 0 && u.has_nodal(ctx.chart) {
        let p = rho(&site.x);
        return Ok([bg_norm(u.node_values(node), u.rank.0 as usize, u.rank.1 as usize, p), 0.0, 0.0]);
    }
    let c = u.jets(ctx, site)?;
    Ok(jet_magnitudes(&c, u.rank.0 as usize, u.rank.1 as usize, &site.x, &background_christoffel(&Jet::coords(site.x)), order))
}

/// |∇̊^j T|_g̊ for j = 0..=order from Cartesian component jets; `gam` is the
/// g̊ connection at `x`.
pub fn jet_magnitudes(c: &[Jet], up: usize, down: usize, x: &[f64; 3], gam: &crate::tensor::T3, order: usize) -> [f64; 3] {
    let p = rho(x);
    let mut out = [0.0; 3];
    out[0] = bg_norm(&c.iter().map(|j| j.v).collect::<Vec<_>>(), up, down, p);
    if order == 0 {
        return out;
    }
    let slots: Vec<bool> = (0..up).map(|_| true).chain((0..down).map(|_| false)).collect();
    let d1 = cov_generic(c, &slots, gam);
    out[1] = bg_norm(&d1.iter().map(|j| j.v).collect::<Vec<_>>(), up, down + 1, p);
    if order == 1 {
        return out;
    }
    let mut slots2 = vec![false];
    slots2.extend(&slots);
    let d2 = cov_generic(&d1, &slots2, gam);
    out[2] = bg_norm(&d2.iter().map(|j| j.v).collect::<Vec<_>>(), up, down + 2, p);
    out
}

impl Profile {
    pub fn build(ctx: &Ctx, u: &TensorField, region: &RegionMask, order: usize) -> Result<Profile> {
        if order > 2 {
            return Err(Error::InsufficientSmoothness(format!("derivative order {order} > 2")));
        }
        let chart = ctx.chart;
        let nodes: Vec<usize> = (0..chart.len()).filter(|n| region.node_membership[*n]).collect();
        let mags: Vec<Result<[f64; 3]>> =
            nodes.par_iter().map(|&n| derivative_magnitudes(ctx, u, n, order)).collect();
        let mut out = Vec::with_capacity(nodes.len());
        for (m, &n) in mags.into_iter().zip(&nodes) {
            let m = m?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(n));
            }
            out.push(m);
        }
        Ok(Profile {
            rho: nodes.iter().map(|&n| rho(&chart.xyz[n])).collect(),
            weight: nodes.iter().map(|&n| chart.bg_weight(n)).collect(),
            nodes,
            mags: out,
            order,
        })
    }

    /// ‖∇̊^j u‖_{p,δ}.
    pub fn part(&self, j: usize, p: f64, delta: f64) -> f64 {
        if p.is_infinite() {
            return self.mags.iter().zip(&self.rho).fold(0.0f64, |a, (m, r)| a.max(r.powf(delta) * m[j]));
        }
        let s: f64 = self
            .mags
            .iter()
            .zip(&self.rho)
            .zip(&self.weight)
            .map(|((m, r), w)| m[j].powf(p) * r.powf(p * delta) * w)
            .sum();
        s.powf(1.0 / p)
    }

    pub fn norm(&self, spec: &WeightSpec) -> Result<f64> {
        if spec.k > self.order {
            return Err(Error::InsufficientSmoothness(format!(
                "norm needs {} derivatives, profile has {}",
                spec.k, self.order
            )));
        }
        Ok((0..=spec.k).map(|j| self.part(j, spec.p, spec.delta)).sum())
    }
}

/// ‖u‖_{k,p,δ} over the region.
pub fn weighted_norm(ctx: &Ctx, u: &TensorField, spec: &WeightSpec, region: &RegionMask) -> Result<f64> {
    if spec.p < 1.0 {
        return Err(Error::Range(format!("p must be ≥ 1, got {}", spec.p)));
    }
    if spec.k > 2 {
        return Err(Error::InsufficientSmoothness(format!("k = {} > 2", spec.k)));
    }
    Profile::build(ctx, u, region, spec.k)?.norm(spec)
}

/// Orthonormal-frame components ρ^{m−r}·T of a nodal or analytic field at a node.
fn frame_values(u: &TensorField, chart: &ChartGrid, node: usize) -> Vec<f64> {
    let p = rho(&chart.xyz[node]);
    let scale = p.powi(u.rank.1 as i32 - u.rank.0 as i32);
    if u.has_nodal(chart) {
        u.node_values(node).iter().map(|v| v * scale).collect()
    } else {
        let f = u.analytic.as_ref().expect("field has neither nodal values nor a closure");
        f(&Jet::coords(chart.xyz[node])).iter().map(|j| j.v * scale).collect()
    }
}

pub fn hyperbolic_distance(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
    let a = 1.0 - (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    let b = 1.0 - (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
    (1.0 + 2.0 * d2 / (a * b)).acosh()
}

#[derive(Clone, Debug)]
pub struct HolderEstimate {
    pub sup_part: f64,
    pub seminorm: f64,
    pub pairs: usize,
    /// Always true: the sampled sup never exceeds the true norm.
    pub lower_bound: bool,
}

impl HolderEstimate {
    pub fn value(&self) -> f64 {
        self.sup_part + self.seminorm
    }
}

/// Sampled ‖u‖_{C^{0,α}_δ}: every node is paired with its index neighbours and
/// with a fixed coarse set of anchor nodes, keeping pairs at g̊-distance ≤ 1.
pub fn holder_seminorm_estimate(chart: &ChartGrid, u: &TensorField, alpha: f64, delta: f64) -> Result<HolderEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Range(format!("α must lie in (0, 1), got {alpha}")));
    }
    let vals: Vec<Vec<f64>> = (0..chart.len()).into_par_iter().map(|n| frame_values(u, chart, n)).collect();
    let stride = |n: usize, target: usize| (n / target).max(1);
    let (sr, st, sp) = (stride(chart.n_r, 12), stride(chart.n_theta, 8), stride(chart.n_phi, 16));
    let anchors: Vec<usize> = (0..chart.len())
        .filter(|&n| {
            let (i, j, k) = chart.ijk(n);
            i % sr == 0 && j % st == 0 && k % sp == 0
        })
        .collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rows: Vec<(f64, f64, usize)> = (0..chart.len())
        .into_par_iter()
        .map(|n| {
            let x = chart.xyz[n];
            let w = rho(&x).powf(delta);
            let (i, j, k) = chart.ijk(n);
            let mut others: Vec<usize> = Vec::with_capacity(anchors.len() + 6);
            if i + 1 < chart.n_r {
                others.push(chart.index(i + 1, j, k));
            }
            if j + 1 < chart.n_theta {
                others.push(chart.index(i, j + 1, k));
            }
            others.push(chart.index(i, j, (k + 1) % chart.n_phi));
            others.extend(&anchors);
            let mut best = 0.0f64;
            let mut count = 0;
            for &m in &others {
                if m == n {
                    continue;
                }
                let d = hyperbolic_distance(&x, &chart.xyz[m]);
                if d > 1.0 || d == 0.0 {
                    continue;
                }
                count += 1;
                best = best.max(diff(&vals[n], &vals[m]) / d.powf(alpha));
            }
            (w * norm(&vals[n]), w * best, count)
        })
        .collect();
    let mut est = HolderEstimate { sup_part: 0.0, seminorm: 0.0, pairs: 0, lower_bound: true };
    for (a, b, c) in rows {
        est.sup_part = est.sup_part.max(a);
        est.seminorm = est.seminorm.max(b);
        est.pairs += c;
    }
    Ok(est)
}

// ---------------------------------------------------------------------------
// Inequality probes

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InequalityId {
    Holder1,
    Holder2,
    SobolevInc,
    SobolevIneq,
    Ehrling,
    Prod19g,
    Prod19gBis,
    UInfD,
    U3D,
    Annulus,
    Decay,
}

impl InequalityId {
    pub const ALL: [InequalityId; 11] = [
        InequalityId::Holder1,
        InequalityId::Holder2,
        InequalityId::SobolevInc,
        InequalityId::SobolevIneq,
        InequalityId::Ehrling,
        InequalityId::Prod19g,
        InequalityId::Prod19gBis,
        InequalityId::UInfD,
        InequalityId::U3D,
        InequalityId::Annulus,
        InequalityId::Decay,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            InequalityId::Holder1 => "HOLDER1",
            InequalityId::Holder2 => "HOLDER2",
            InequalityId::SobolevInc => "SOBOLEV_INC",
            InequalityId::SobolevIneq => "SOBOLEV_INEQ",
            InequalityId::Ehrling => "EHRLING",
            InequalityId::Prod19g => "PROD_19G",
            InequalityId::Prod19gBis => "PROD_19GBIS",
            InequalityId::UInfD => "UINFD",
            InequalityId::U3D => "U3D",
            InequalityId::Annulus => "ANNULUS",
            InequalityId::Decay => "DECAY",
        }
    }

    pub fn parse(s: &str) -> Result<InequalityId> {
        InequalityId::ALL
            .iter()
            .copied()
            .find(|c| c.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownIdentity(s.to_string()))
    }

    /// Number of WeightSpecs the probe reads.
    pub fn arity(&self) -> usize {
        match self {
            InequalityId::Holder1 | InequalityId::Holder2 | InequalityId::Prod19g => 3,
            InequalityId::SobolevInc | InequalityId::SobolevIneq | InequalityId::Ehrling | InequalityId::Annulus => 2,
            InequalityId::Prod19gBis | InequalityId::UInfD | InequalityId::U3D | InequalityId::Decay => 1,
        }
    }

    /// Whether the inequality has an explicit constant 1.
    pub fn explicit(&self) -> bool {
        matches!(self, InequalityId::Holder1 | InequalityId::Holder2 | InequalityId::Annulus)
    }
}

#[derive(Clone, Debug)]
pub struct TestFamily {
    pub label: String,
    pub members: Vec<TensorField>,
}

impl TestFamily {
    pub fn new(label: impl Into<String>, members: Vec<TensorField>) -> TestFamily {
        TestFamily { label: label.into(), members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn truncated(&self, n: usize) -> TestFamily {
        TestFamily { label: self.label.clone(), members: self.members[..n.min(self.len())].to_vec() }
    }
}

#[derive(Clone, Debug)]
pub struct ConstantEstimate {
    pub id: String,
    pub value: f64,
    pub family_size: usize,
    pub specs: Vec<WeightSpec>,
    pub region: String,
    pub big_r: f64,
    /// Family index realising the sup.
    pub argmax: usize,
    /// Per-member ratios in family order.
    pub ratios: Vec<f64>,
}

impl ConstantEstimate {
    pub fn from_ratios(id: &str, ratios: Vec<f64>, specs: Vec<WeightSpec>, region: &RegionMask) -> Result<ConstantEstimate> {
        if ratios.is_empty() {
            return Err(Error::EmptyFamily);
        }
        let mut argmax = 0;
        for (i, r) in ratios.iter().enumerate() {
            if !r.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if *r > ratios[argmax] {
                argmax = i;
            }
        }
        Ok(ConstantEstimate {
            id: id.to_string(),
            value: ratios[argmax].max(0.0),
            family_size: ratios.len(),
            specs,
            region: region.kind.name().to_string(),
            big_r: region.big_r,
            argmax,
            ratios,
        })
    }

    /// CSV row: id, δ-tuple, family size, value, R.
    pub fn csv_row(&self) -> Vec<String> {
        let deltas: Vec<String> = self.specs.iter().map(|s| format!("{}", s.delta)).collect();
        vec![
            self.id.clone(),
            deltas.join(";"),
            self.family_size.to_string(),
            format!("{:.16e}", self.value),
            format!("{}", self.big_r),
        ]
    }
}

fn product_field(u: &TensorField, v: &TensorField) -> TensorField {
    assert_eq!(u.rank, (0, 0));
    assert_eq!(v.rank, (0, 0));
    match (&u.analytic, &v.analytic) {
        (Some(f), Some(g)) => {
            let (f, g) = (f.clone(), g.clone());
            TensorField::scalar(move |x| f(x)[0] * g(x)[0])
        }
        _ => {
            let comps = u.comps.iter().zip(&v.comps).map(|(a, b)| a * b).collect();
            TensorField::nodal((0, 0), comps)
        }
    }
}

/// Empirical ratio LHS/RHS of a weighted inequality, sup over the family.
///
/// Weight layout per id (`param` is ε for EHRLING/UINFD/U3D/DECAY):
/// - HOLDER1 `[(p,δ), (q,δ₁), (r,δ₂)]`: ‖uv‖_{p,δ} / ‖u‖_{q,δ₁}‖v‖_{r,δ₂}
/// - HOLDER2 `[(p,·), (q,·), (r,·)]`, common δ in the first: interpolation with
///   1/p = λ/q + (1−λ)/r
/// - SOBOLEV_INC `[(k',p',δ'), (k,p,δ)]`: ‖u‖_{k',p',δ'} / ‖u‖_{k,p,δ}
/// - SOBOLEV_INEQ `[(j,q,δ), (j+k,p,δ)]`
/// - EHRLING `[(j,p,δ), (k,p,δ)]`: (‖u‖_{j,p,δ} − ε‖u‖_{k,p,δ}) / ‖u‖_{p,δ}
/// - PROD_19G `[(0,2,δ), (1,2,δ₁), (1,2,δ₂)]`; PROD_19GBIS `[(0,2,δ)]` with δ₁ = δ₂ = δ
/// - UINFD `[(·,·,δ)]`: (‖u‖_{∞,δ} − ε‖u‖_{2,2,δ}) ε³ / ‖u‖_{1,2,δ}
/// - U3D `[(·,·,δ)]`: (‖u‖_{3,δ} − ε‖u‖_{1,2,δ}) ε / ‖u‖_{2,δ}
/// - ANNULUS `[(0,p,δ), (0,p,η)]` on E_R: ‖u‖_{p,η} / (e^{2R(δ−η)} ‖u‖_{p,δ})
/// - DECAY `[(·,·,δ)]`: sup ρ^{δ+ε}|u| / ‖u‖_{2,2,δ} (a sup-bound proxy for the
///   asymptotic o(ρ^{−δ}) statement)
pub fn inequality_ratio(
    ctx: &Ctx,
    which: InequalityId,
    family: &TestFamily,
    specs: &[WeightSpec],
    region: &RegionMask,
    param: f64,
) -> Result<ConstantEstimate> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if specs.len() != which.arity() {
        return Err(Error::KindMismatch(format!(
            "{} takes {} weight specs, got {}",
            which.id(),
            which.arity(),
            specs.len()
        )));
    }
    let n = family.len();
    let order = match which {
        InequalityId::Holder1 | InequalityId::Holder2 | InequalityId::Annulus => 0,
        InequalityId::Prod19g | InequalityId::Prod19gBis | InequalityId::U3D => 1,
        _ => specs.iter().map(|s| s.k).max().unwrap_or(0).max(if which == InequalityId::UInfD || which == InequalityId::Decay { 2 } else { 0 }),
    };
    let profiles: Vec<Profile> = family
        .members
        .iter()
        .map(|u| Profile::build(ctx, u, region, order))
        .collect::<Result<_>>()?;
    let eps = param;
    let mut ratios = Vec::with_capacity(n);
    for i in 0..n {
        let pu = &profiles[i];
        let r = match which {
            InequalityId::Holder1 | InequalityId::Prod19g | InequalityId::Prod19gBis => {
                let j = (i + 1) % n;
                let prod = product_field(&family.members[i], &family.members[j]);
                let pp = Profile::build(ctx, &prod, region, 0)?;
                let pv = &profiles[j];
                match which {
                    InequalityId::Holder1 => {
                        pp.part(0, specs[0].p, specs[0].delta)
                            / (pu.part(0, specs[1].p, specs[1].delta) * pv.part(0, specs[2].p, specs[2].delta))
                    }
                    InequalityId::Prod19g => {
                        pp.part(0, 2.0, specs[0].delta)
                            / (pu.norm(&WeightSpec::h(1, specs[1].delta))? * pv.norm(&WeightSpec::h(1, specs[2].delta))?)
                    }
                    _ => {
                        let d = specs[0].delta;
                        pp.part(0, 2.0, d) / (pu.norm(&WeightSpec::h(1, d))? * pv.norm(&WeightSpec::h(1, d))?)
                    }
                }
            }
            InequalityId::Holder2 => {
                let (p, q, r) = (specs[0].p, specs[1].p, specs[2].p);
                let d = specs[0].delta;
                // 1/p = λ/q + (1−λ)/r
                let lam = if q.is_infinite() {
                    1.0 - r / p
                } else if r.is_infinite() {
                    q / p
                } else {
                    (1.0 / p - 1.0 / r) / (1.0 / q - 1.0 / r)
                };
                pu.part(0, p, d) / (pu.part(0, q, d).powf(lam) * pu.part(0, r, d).powf(1.0 - lam))
            }
            InequalityId::SobolevInc | InequalityId::SobolevIneq => pu.norm(&specs[0])? / pu.norm(&specs[1])?,
            InequalityId::Ehrling => {
                let base = pu.part(0, specs[0].p, specs[0].delta);
                ((pu.norm(&specs[0])? - eps * pu.norm(&specs[1])?) / base).max(0.0)
            }
            InequalityId::UInfD => {
                let d = specs[0].delta;
                ((pu.part(0, f64::INFINITY, d) - eps * pu.norm(&WeightSpec::h(2, d))?) * eps.powi(3)
                    / pu.norm(&WeightSpec::h(1, d))?)
                .max(0.0)
            }
            InequalityId::U3D => {
                let d = specs[0].delta;
                ((pu.part(0, 3.0, d) - eps * pu.norm(&WeightSpec::h(1, d))?) * eps / pu.part(0, 2.0, d)).max(0.0)
            }
            InequalityId::Annulus => {
                let (d, eta, p) = (specs[0].delta, specs[1].delta, specs[0].p);
                pu.part(0, p, eta) / ((2.0 * region.big_r * (d - eta)).exp() * pu.part(0, p, d))
            }
            InequalityId::Decay => {
                let d = specs[0].delta;
                pu.part(0, f64::INFINITY, d + eps) / pu.norm(&WeightSpec::h(2, d))?
            }
        };
        ratios.push(r);
    }
    ConstantEstimate::from_ratios(which.id(), ratios, specs.to_vec(), region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{build_ball_chart, region_mask, rho_jet, RegionKind};

    #[test]
    fn rho_norm_matches_radial_integral() {
        let chart = build_ball_chart(1e-3, 0.9999, 64, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let u = TensorField::scalar(rho_jet);
        let v = weighted_norm(&ctx, &u, &WeightSpec::l2(1.0), &RegionMask::whole(&chart)).unwrap();
        assert!((v - (4.0 * std::f64::consts::PI / 15.0).sqrt()).abs() < 1e-3);
        let one = TensorField::scalar(|_| Jet::cst(1.0));
        let s = weighted_norm(&ctx, &one, &WeightSpec::new(0, f64::INFINITY, 1.0), &RegionMask::whole(&chart)).unwrap();
        assert!((s - 0.5).abs() < 1e-3);
    }

    #[test]
    fn annulus_bound_has_slack() {
        let chart = build_ball_chart(0.3, 0.995, 32, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let region = region_mask(&chart, RegionKind::Exterior, 1.0).unwrap();
        let fam = TestFamily::new("one", vec![TensorField::scalar(|_| Jet::cst(1.0))]);
        let e = inequality_ratio(&ctx, InequalityId::Annulus, &fam, &[WeightSpec::l2(2.0), WeightSpec::l2(3.0)], &region, 0.0)
            .unwrap();
        assert!(e.value <= 1.0 + 1e-10);
    }
}
