//! Empirical constants of the coercivity and elliptic estimates: the sup over
//! a test family of LHS / RHS, each side a sum of weighted Sobolev norms.
//!
//! Every weight `w` is the exponent as it appears in the norm subscript. For
//! the adjoint-side estimates, whose statements read ‖·‖_{2,−δ}, that means
//! w = −δ.

use rayon::prelude::*;

use crate::constraint::{dphi_adjoint_at, f_at, p_star_at, state_at, PhasePoint, PointState, ReferenceData};
use crate::fields::{blob_family, rotation_form, FamilySpec, Window, WindowKind};
use crate::geoops::{model_apply_at, s_at, t_at, u_at, ModelOp};
use crate::jet::Jet;
use crate::manifold::{omega_radius, region_mask, rho, rho_jet, RegionKind, RegionMask};
use crate::tensor::{background_christoffel, flatten_m3, flatten_t3, Ctx, Geom, Metric, TensorField, V3};
use crate::wspace::{jet_magnitudes, ConstantEstimate, WeightSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimateId {
    PoincareT,
    PoincareTGlobal,
    KornS,
    CoerciveU,
    Adj35cg,
    Adj422,
    PsEst,
    SbeA,
    SbeB,
    SbeF,
    SbeFStar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemberKind {
    Scalar,
    Form,
    /// A scalar and a 1-form: (N, X) or (y, Y♭).
    Pair,
}

/// Admissible weights lo < w < hi (closed ends where flagged), minus `excluded`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightWindow {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
    pub excluded: Option<f64>,
}

impl WeightWindow {
    const fn open(lo: f64, hi: f64) -> WeightWindow {
        WeightWindow { lo, hi, lo_closed: false, hi_closed: false, excluded: None }
    }

    pub fn contains(&self, w: f64) -> bool {
        let above = if self.lo_closed { w >= self.lo } else { w > self.lo };
        let below = if self.hi_closed { w <= self.hi } else { w < self.hi };
        above && below && self.excluded.is_none_or(|e| (w - e).abs() > 1e-12)
    }

    pub fn describe(&self) -> String {
        let l = if self.lo_closed { '[' } else { ']' };
        let r = if self.hi_closed { ']' } else { '[' };
        let mut s = format!("{l}{}, {}{r}", self.lo, self.hi);
        if let Some(e) = self.excluded {
            s.push_str(&format!(" \\ {{{e}}}"));
        }
        s
    }
}

impl EstimateId {
    pub const ALL: [EstimateId; 11] = [
        EstimateId::PoincareT,
        EstimateId::PoincareTGlobal,
        EstimateId::KornS,
        EstimateId::CoerciveU,
        EstimateId::Adj35cg,
        EstimateId::Adj422,
        EstimateId::PsEst,
        EstimateId::SbeA,
        EstimateId::SbeB,
        EstimateId::SbeF,
        EstimateId::SbeFStar,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            EstimateId::PoincareT => "POINCARE_T",
            EstimateId::PoincareTGlobal => "POINCARE_T_GLOBAL",
            EstimateId::KornS => "KORN_S",
            EstimateId::CoerciveU => "COERCIVE_U",
            EstimateId::Adj35cg => "ADJ_35CG",
            EstimateId::Adj422 => "ADJ_422",
            EstimateId::PsEst => "PS_EST",
            EstimateId::SbeA => "SBE_A",
            EstimateId::SbeB => "SBE_B",
            EstimateId::SbeF => "SBE_F",
            EstimateId::SbeFStar => "SBE_FSTAR",
        }
    }

    pub fn parse(s: &str) -> Result<EstimateId> {
        EstimateId::ALL
            .into_iter()
            .find(|e| e.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownIdentity(s.to_string()))
    }

    pub fn member_kind(&self) -> MemberKind {
        match self {
            EstimateId::PoincareT | EstimateId::PoincareTGlobal | EstimateId::SbeA => MemberKind::Scalar,
            EstimateId::KornS | EstimateId::CoerciveU | EstimateId::SbeB => MemberKind::Form,
            _ => MemberKind::Pair,
        }
    }

    /// Members must be supported in E_R.
    pub fn exterior(&self) -> bool {
        matches!(self, EstimateId::PoincareT | EstimateId::CoerciveU)
    }

    /// The norm subscripts read −δ in the statement, so w = −δ.
    pub fn negated(&self) -> bool {
        !matches!(self, EstimateId::SbeA | EstimateId::SbeB | EstimateId::SbeF)
    }

    /// Window for w. POINCARE_T uses the interval on which the proof
    /// concludes; [`EstimateId::statement_window`] gives the stated one.
    pub fn window(&self) -> WeightWindow {
        let zero_two = WeightWindow { lo: 0.0, hi: 2.0, lo_closed: true, hi_closed: false, excluded: None };
        match self {
            EstimateId::PoincareT | EstimateId::CoerciveU => WeightWindow::open(1.0, 2.0),
            EstimateId::PoincareTGlobal | EstimateId::SbeFStar => zero_two,
            EstimateId::KornS => WeightWindow { excluded: Some(1.0), ..WeightWindow::open(f64::NEG_INFINITY, 2.0) },
            EstimateId::Adj35cg | EstimateId::Adj422 => WeightWindow { excluded: Some(1.0), ..zero_two },
            EstimateId::PsEst => WeightWindow { lo: 0.0, hi: f64::INFINITY, lo_closed: true, hi_closed: false, excluded: None },
            EstimateId::SbeA | EstimateId::SbeB => WeightWindow::open(-2.0, 2.0),
            EstimateId::SbeF => WeightWindow { lo: -2.0, hi: 0.0, lo_closed: false, hi_closed: true, excluded: None },
        }
    }

    /// POINCARE_T as stated: δ ∈ ]−2, −1[ with ‖·‖_{2,2,−δ}, i.e. w ∈ ]1, 2[
    /// again after negation, or w ∈ ]−2, −1[ if the subscript is read literally.
    pub fn statement_window(&self) -> WeightWindow {
        match self {
            EstimateId::PoincareT => WeightWindow::open(-2.0, -1.0),
            _ => self.window(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Member {
    Scalar(TensorField),
    Form(TensorField),
    Pair(TensorField, TensorField),
}

impl Member {
    pub fn kind(&self) -> MemberKind {
        match self {
            Member::Scalar(_) => MemberKind::Scalar,
            Member::Form(_) => MemberKind::Form,
            Member::Pair(..) => MemberKind::Pair,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EstimateFamily {
    pub label: String,
    pub members: Vec<Member>,
}

impl EstimateFamily {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn truncated(&self, n: usize) -> EstimateFamily {
        EstimateFamily { label: self.label.clone(), members: self.members[..n.min(self.len())].to_vec() }
    }
}

/// The point at which DΦ*, P*, 𝒜, B and F are taken.
#[derive(Clone, Copy)]
pub struct Setting<'a> {
    pub point: &'a PhasePoint,
    pub rf: &'a ReferenceData,
}

/// ‖q‖_{k,2,w} over the chart, or over Ω_R when `omega`.
#[derive(Clone, Copy, Debug)]
struct NormTerm {
    q: usize,
    k: usize,
    w: f64,
    omega: bool,
}

const fn nt(q: usize, k: usize, w: f64) -> NormTerm {
    NormTerm { q, k, w, omega: false }
}

/// LHS and RHS norms; each side is the sum of its norms.
fn layout(id: EstimateId, w: f64) -> (Vec<NormTerm>, Vec<NormTerm>) {
    let om = |q| NormTerm { q, k: 0, w, omega: true };
    match id {
        EstimateId::PoincareT | EstimateId::PoincareTGlobal => (vec![nt(0, 2, w)], vec![nt(1, 0, w)]),
        EstimateId::KornS => (vec![nt(0, 1, w)], vec![nt(1, 0, w)]),
        EstimateId::CoerciveU => (vec![nt(0, 1, w)], vec![nt(1, 0, w), nt(2, 0, w)]),
        EstimateId::Adj35cg => {
            (vec![nt(0, 2, w), nt(1, 2, w)], vec![nt(2, 0, w), nt(3, 1, w), nt(0, 1, 2.0 * w), nt(1, 1, 2.0 * w)])
        }
        EstimateId::Adj422 => {
            (vec![nt(0, 2, w), nt(1, 2, w)], vec![nt(2, 0, w), nt(3, 1, w), nt(0, 0, 2.0 * w), nt(1, 0, 2.0 * w)])
        }
        EstimateId::PsEst => {
            (vec![nt(0, 2, w), nt(1, 2, w)], vec![nt(2, 0, w), nt(3, 0, w), nt(0, 1, 2.0 * w), nt(1, 1, 2.0 * w)])
        }
        EstimateId::SbeA | EstimateId::SbeB => (vec![nt(0, 2, w)], vec![nt(1, 0, w), om(0)]),
        EstimateId::SbeF => (
            vec![nt(0, 2, w), nt(1, 2, w)],
            vec![nt(2, 0, w), nt(3, 0, w), nt(0, 0, 0.0), nt(1, 0, 0.0), om(0), om(1)],
        ),
        EstimateId::SbeFStar => (
            vec![nt(0, 2, w), nt(1, 2, w)],
            vec![nt(2, 0, w), nt(3, 0, w), nt(0, 0, 2.0 * w), nt(1, 0, 2.0 * w), om(0), om(1)],
        ),
    }
}

/// A quantity's component jets with its (up, down) rank.
struct Q {
    c: Vec<Jet>,
    up: usize,
    down: usize,
}

fn q(c: Vec<Jet>, up: usize, down: usize) -> Q {
    Q { c, up, down }
}

enum Frame {
    None,
    Geom(Geom),
    State(Box<PointState>),
}

/// F̃*(y, Y) = (2 g_ij A₁^{ij} − 2τ s tr_g A₂, −2s ∇^i(A₂ − ½ g tr_g A₂)_ik)
/// with (A₁, A₂) = DΦ*(y, Y): the L²(dμ(g̊))-adjoint of F = DΦ ∘ (variation).
pub fn f_adjoint_at(st: &PointState, y: &Jet, yf: &V3) -> [Jet; 4] {
    let geo = &st.geo;
    let (a1, a2) = dphi_adjoint_at(st, y, yf);
    let tr1 = crate::tensor::dot_m3(&geo.g, &a1);
    let tr2 = crate::tensor::dot_m3(&geo.gi, &a2);
    let mut b = a2;
    for i in 0..3 {
        for k in 0..3 {
            b[i][k] -= geo.g[i][k] * tr2 * 0.5;
        }
    }
    let db = geo.cov_co2(&b);
    let mut out = [tr1 * 2.0 - tr2 * geo.s * (2.0 * st.tau), Jet::ZERO, Jet::ZERO, Jet::ZERO];
    for k in 0..3 {
        let mut v = Jet::ZERO;
        for i in 0..3 {
            for l in 0..3 {
                v += geo.gi[i][l] * db[l][i][k];
            }
        }
        out[k + 1] = v * geo.s * -2.0;
    }
    out
}

fn quantities(id: EstimateId, m: &Member, ctx: &Ctx, site: crate::Site, frame: &Frame) -> Result<Vec<Q>> {
    let x = Jet::coords(site.x);
    let state = || match frame {
        Frame::State(s) => s.as_ref(),
        _ => unreachable!("estimate needs the point state"),
    };
    Ok(match (id, m) {
        (EstimateId::PoincareT | EstimateId::PoincareTGlobal, Member::Scalar(n)) => {
            let n = n.scalar_jet(ctx, site)?;
            let t = t_at(&Geom::background(&x), &n);
            vec![q(vec![n], 0, 0), q(flatten_m3(&t), 0, 2)]
        }
        (EstimateId::KornS, Member::Form(y)) => {
            let y = y.form_jets(ctx, site)?;
            let s = s_at(&Geom::background(&x), &y);
            vec![q(y.to_vec(), 0, 1), q(flatten_m3(&s), 0, 2)]
        }
        (EstimateId::CoerciveU, Member::Form(y)) => {
            let y = y.form_jets(ctx, site)?;
            let geo = Geom::background(&x);
            vec![q(y.to_vec(), 0, 1), q(flatten_t3(&u_at(&geo, &y)), 0, 3), q(flatten_m3(&s_at(&geo, &y)), 0, 2)]
        }
        (EstimateId::Adj35cg | EstimateId::Adj422, Member::Pair(n, xf)) => {
            let n = n.scalar_jet(ctx, site)?;
            let xf = xf.form_jets(ctx, site)?;
            let (a1, a2) = dphi_adjoint_at(state(), &n, &xf);
            vec![q(vec![n], 0, 0), q(xf.to_vec(), 0, 1), q(flatten_m3(&a1), 2, 0), q(flatten_m3(&a2), 0, 2)]
        }
        (EstimateId::PsEst, Member::Pair(n, xf)) => {
            let n = n.scalar_jet(ctx, site)?;
            let xf = xf.form_jets(ctx, site)?;
            let (b1, b2) = p_star_at(state(), &n, &xf);
            vec![q(vec![n], 0, 0), q(xf.to_vec(), 0, 1), q(flatten_m3(&b1), 1, 1), q(flatten_t3(&b2), 1, 2)]
        }
        (EstimateId::SbeA, Member::Scalar(u)) => {
            let Frame::Geom(geo) = frame else { unreachable!() };
            let u = u.scalar_jet(ctx, site)?;
            let a = model_apply_at(ModelOp::A, geo, &[u]);
            vec![q(vec![u], 0, 0), q(a, 0, 0)]
        }
        (EstimateId::SbeB, Member::Form(y)) => {
            let Frame::Geom(geo) = frame else { unreachable!() };
            let y = y.form_jets(ctx, site)?;
            let b = model_apply_at(ModelOp::B, geo, &y);
            vec![q(y.to_vec(), 0, 1), q(b, 0, 1)]
        }
        (EstimateId::SbeF | EstimateId::SbeFStar, Member::Pair(y, yf)) => {
            let y = y.scalar_jet(ctx, site)?;
            let yf = yf.form_jets(ctx, site)?;
            let st = state();
            let f = if id == EstimateId::SbeF { f_at(st, &y, &st.geo.raise(&yf)) } else { f_adjoint_at(st, &y, &yf) };
            vec![q(vec![y], 0, 0), q(yf.to_vec(), 0, 1), q(vec![f[0]], 0, 0), q(f[1..].to_vec(), 0, 1)]
        }
        _ => return Err(Error::KindMismatch(format!("{} does not take {:?} members", id.id(), m.kind()))),
    })
}

fn member_is_zero(m: &Member, ctx: &Ctx, site: crate::Site) -> Result<bool> {
    let fields: Vec<&TensorField> = match m {
        Member::Scalar(u) | Member::Form(u) => vec![u],
        Member::Pair(a, b) => vec![a, b],
    };
    for f in fields {
        if f.jets(ctx, site)?.iter().any(|c| c.v != 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Sup over the family of LHS / RHS. Out-of-window weights are an error in
/// strict mode and are otherwise evaluated as an exploratory scan.
pub fn estimate_constant(
    ctx: &Ctx,
    setting: Setting,
    id: EstimateId,
    family: &EstimateFamily,
    w: f64,
    big_r: f64,
    strict: bool,
) -> Result<ConstantEstimate> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if strict && !id.window().contains(w) {
        return Err(Error::WindowViolation(format!("{} at w = {w} outside {}", id.id(), id.window().describe())));
    }
    if let Some(m) = family.members.iter().find(|m| m.kind() != id.member_kind()) {
        return Err(Error::KindMismatch(format!("{} does not take {:?} members", id.id(), m.kind())));
    }
    let chart = ctx.chart;
    let region = if id.exterior() {
        region_mask(chart, RegionKind::Exterior, big_r)?
    } else {
        let mut m = RegionMask::whole(chart);
        m.big_r = big_r;
        m
    };
    let (lhs, rhs) = layout(id, w);
    // one accumulator per (norm, derivative order)
    let slots: Vec<(NormTerm, usize)> =
        lhs.iter().chain(&rhs).flat_map(|t| (0..=t.k).map(move |j| (*t, j))).collect();
    let nq = slots.iter().map(|(t, _)| t.q + 1).max().unwrap_or(0);
    let mut order = vec![0usize; nq];
    for (t, j) in &slots {
        order[t.q] = order[t.q].max(*j);
    }
    let frame_kind = match id {
        EstimateId::SbeA | EstimateId::SbeB => 1,
        EstimateId::Adj35cg | EstimateId::Adj422 | EstimateId::PsEst | EstimateId::SbeF | EstimateId::SbeFStar => 2,
        _ => 0,
    };
    let nm = family.len();
    let ns = slots.len();
    let chunks: Vec<std::ops::Range<usize>> =
        (0..chart.len()).step_by(256).map(|a| a..(a + 256).min(chart.len())).collect();
    let partial: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|range| {
            let mut acc = vec![0.0; nm * ns];
            for node in range.clone() {
                let site = chart.site(node);
                let in_omega = RegionMask::contains_point(RegionKind::Omega, big_r, &site.x);
                if !region.node_membership[node] {
                    if id.exterior() {
                        for m in &family.members {
                            if !member_is_zero(m, ctx, site)? {
                                return Err(Error::SupportViolation(format!(
                                    "{} member nonzero inside Ω_R at node {node}",
                                    id.id()
                                )));
                            }
                        }
                    }
                    continue;
                }
                let frame = match frame_kind {
                    1 => Frame::Geom(Metric::Field(&setting.point.g).geom(ctx, site)?),
                    2 => Frame::State(Box::new(state_at(ctx, setting.point, setting.rf, site)?)),
                    _ => Frame::None,
                };
                let gam = background_christoffel(&Jet::coords(site.x));
                let p = rho(&site.x);
                let wt = chart.bg_weight(node);
                for (mi, m) in family.members.iter().enumerate() {
                    let qs = quantities(id, m, ctx, site, &frame)?;
                    let mags: Vec<[f64; 3]> =
                        qs.iter().enumerate().map(|(i, qq)| jet_magnitudes(&qq.c, qq.up, qq.down, &site.x, &gam, order[i])).collect();
                    for (si, (t, j)) in slots.iter().enumerate() {
                        if t.omega && !in_omega {
                            continue;
                        }
                        let v = mags[t.q][*j];
                        acc[mi * ns + si] += v * v * p.powf(2.0 * t.w) * wt;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut sums = vec![0.0; nm * ns];
    for part in partial {
        for (s, v) in sums.iter_mut().zip(part?) {
            *s += v;
        }
    }
    let nl: usize = lhs.iter().map(|t| t.k + 1).sum();
    let ratios: Vec<f64> = (0..nm)
        .map(|mi| {
            let row = &sums[mi * ns..(mi + 1) * ns];
            let l: f64 = row[..nl].iter().map(|v| v.sqrt()).sum();
            let r: f64 = row[nl..].iter().map(|v| v.sqrt()).sum();
            l / r
        })
        .collect();
    let mut lspec = WeightSpec::h(lhs[0].k, w);
    let mut rspec = WeightSpec::l2(w);
    if id.negated() {
        lspec = lspec.negated();
        rspec = rspec.negated();
    }
    ConstantEstimate::from_ratios(id.id(), ratios, vec![lspec, rspec], &region)
}

/// Chart radii, support shell and window used by [`standard_family`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateSetup {
    pub r_in: f64,
    pub r_out: f64,
}

pub const OUTER_RADIUS: f64 = 0.97;

pub fn setup(id: EstimateId, big_r: f64) -> EstimateSetup {
    if id.exterior() {
        EstimateSetup { r_in: omega_radius(big_r), r_out: OUTER_RADIUS }
    } else {
        EstimateSetup { r_in: 0.05, r_out: OUTER_RADIUS }
    }
}

/// Rotation form × window × ρ^a: Killing away from the window's slopes.
pub fn killing_like(axis: usize, a: f64, window: Window) -> TensorField {
    TensorField::form(move |x| {
        let c = window.eval(x) * rho_jet(x).powf(a);
        let y = rotation_form(x, axis);
        [y[0] * c, y[1] * c, y[2] * c]
    })
}

/// Seeded blob family matching `setup(id, big_r)`. E_R families are capped at
/// the outer radius and nonzero on ∂Ω_R; the others vanish near both
/// spheres. COERCIVE_U and KORN_S families end with Killing-like members.
pub fn standard_family(id: EstimateId, seed: u64, size: usize, big_r: f64) -> EstimateFamily {
    let su = setup(id, big_r);
    let spec = if id.exterior() {
        let width = su.r_out - su.r_in;
        FamilySpec::new(seed, 2 * size, (su.r_in, su.r_out), 2, WindowKind::Cap).with_sigma(0.35 / width, 0.9 / width)
    } else {
        FamilySpec::new(seed, 2 * size, (0.1, su.r_out - 0.02), 2, WindowKind::Shell).with_sigma(0.3, 1.0)
    };
    let blobs = blob_family(&spec);
    let window = blobs[0].window;
    let killing = matches!(id, EstimateId::CoerciveU | EstimateId::KornS);
    let n_kill = if killing { (size / 8).min(6) } else { 0 };
    let mut members: Vec<Member> = (0..size - n_kill)
        .map(|i| match id.member_kind() {
            MemberKind::Scalar => Member::Scalar(blobs[i].scalar_field()),
            MemberKind::Form => Member::Form(blobs[i].form_field()),
            MemberKind::Pair => Member::Pair(blobs[2 * i].scalar_field(), blobs[2 * i + 1].form_field()),
        })
        .collect();
    for k in 0..n_kill {
        members.push(Member::Form(killing_like(k % 3, 0.5 * (k / 3) as f64, window)));
    }
    EstimateFamily { label: format!("{}:seed{seed}", id.id()), members }
}

/// |v_i − v_last| / v_last, maximised over a refinement ladder.
pub fn ladder_variation(values: &[f64]) -> f64 {
    let last = *values.last().unwrap_or(&0.0);
    if last == 0.0 {
        return if values.iter().all(|v| *v == 0.0) { 0.0 } else { f64::INFINITY };
    }
    values.iter().map(|v| (v - last).abs() / last.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::reference_data;
    use crate::manifold::build_ball_chart;

    #[test]
    fn ids_round_trip() {
        for e in EstimateId::ALL {
            assert_eq!(EstimateId::parse(&e.id().to_lowercase()).unwrap(), e);
        }
        assert!(matches!(EstimateId::parse("KORN"), Err(Error::UnknownIdentity(_))));
    }

    #[test]
    fn windows() {
        assert!(EstimateId::PoincareT.window().contains(1.5));
        assert!(!EstimateId::PoincareT.window().contains(1.0));
        assert!(!EstimateId::KornS.window().contains(1.0));
        assert!(EstimateId::KornS.window().contains(-3.0));
        assert!(EstimateId::SbeF.window().contains(0.0));
        assert!(!EstimateId::SbeA.window().contains(2.0));
    }

    #[test]
    fn killing_like_members_dominate_coercive_u() {
        let big_r = 1.0;
        let su = setup(EstimateId::CoerciveU, big_r);
        let chart = build_ball_chart(su.r_in, su.r_out, 16, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let rf = reference_data(1.0);
        let bg = PhasePoint::background(&rf);
        let set = Setting { point: &bg, rf: &rf };
        let fam = standard_family(EstimateId::CoerciveU, 3, 16, big_r);
        let e = estimate_constant(&ctx, set, EstimateId::CoerciveU, &fam, 1.5, big_r, true).unwrap();
        assert!(e.value.is_finite() && e.value > 0.0);
        assert!(e.argmax >= 14, "argmax {}", e.argmax);
    }

    #[test]
    fn strict_mode_rejects_out_of_window_weights() {
        let chart = build_ball_chart(0.05, 0.9, 8, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let rf = reference_data(1.0);
        let bg = PhasePoint::background(&rf);
        let set = Setting { point: &bg, rf: &rf };
        let fam = standard_family(EstimateId::KornS, 1, 2, 1.0);
        let err = estimate_constant(&ctx, set, EstimateId::KornS, &fam, 1.0, 1.0, true).unwrap_err();
        assert!(matches!(err, Error::WindowViolation(_)));
        assert!(estimate_constant(&ctx, set, EstimateId::KornS, &fam, 1.0, 1.0, false).is_ok());
        let empty = EstimateFamily { label: "none".into(), members: vec![] };
        assert!(matches!(estimate_constant(&ctx, set, EstimateId::KornS, &empty, 1.5, 1.0, true), Err(Error::EmptyFamily)));
    }

    #[test]
    fn members_inside_omega_are_rejected_for_exterior_estimates() {
        let chart = build_ball_chart(0.3, 0.9, 8, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let rf = reference_data(1.0);
        let bg = PhasePoint::background(&rf);
        let set = Setting { point: &bg, rf: &rf };
        let fam = EstimateFamily { label: "one".into(), members: vec![Member::Scalar(TensorField::scalar(|_| Jet::cst(1.0)))] };
        let err = estimate_constant(&ctx, set, EstimateId::PoincareT, &fam, 1.5, 1.0, true).unwrap_err();
        assert!(matches!(err, Error::SupportViolation(_)));
    }
}
