//! Kernel-triviality and Lipschitz probes for P*.
//!
//! The kernel probe is a Galerkin computation: ξ = (N, X) is expanded in
//! cubic B-splines of hyperbolic distance times real harmonics of degree ≤ 2,
//! and σ_min² is the smallest eigenvalue of
//! ⟨P*ξ, P*ξ⟩_{L²_w} = σ² ⟨ξ, ξ⟩_{W^{2,2}_w} on that subspace.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::constraint::{p_star_at, state_at, LapseShift, PhasePoint, PointState, ReferenceData};
use crate::fields::{cosh_potential, r_jet, smooth_step};
use crate::jet::Jet;
use crate::linalg::{generalized_eigenvalues, smallest_generalized_eigen};
use crate::manifold::{build_ball_chart, rho, rho_jet, RegionMask};
use crate::tensor::{cov_generic, flatten_m3, Ctx, Geom, M3, T3, V3};
use crate::wspace::{jet_magnitudes, ConstantEstimate, WeightSpec};
use crate::verify::ladder_variation;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub probe: String,
    pub params: BTreeMap<String, f64>,
    pub outcomes: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub labels: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub pass: bool,
}

impl ProbeReport {
    pub fn new(probe: &str) -> ProbeReport {
        ProbeReport {
            probe: probe.to_string(),
            params: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            series: BTreeMap::new(),
            labels: BTreeMap::new(),
            warnings: Vec::new(),
            pass: false,
        }
    }
}

/// Kernel-probe weight window for δ.
pub const KERNEL_DELTA_WINDOW: (f64, f64) = (-2.0, -1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct KernelOptions {
    pub r_in: f64,
    pub r_out: f64,
    pub n_ang: usize,
    /// Resolution units per radial spline interval.
    pub spline_div: usize,
    /// Extra outer radii evaluated at the coarsest resolution.
    pub truncation_scan: Vec<f64>,
    pub tol: f64,
    pub max_outer: usize,
    pub max_variation: f64,
    pub strict: bool,
    /// Append the truncated static potential as an extra basis function.
    pub planted: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            r_in: 0.05,
            r_out: 0.99,
            n_ang: 8,
            spline_div: 2,
            truncation_scan: Vec::new(),
            tol: 1e-8,
            max_outer: 200,
            max_variation: 0.2,
            strict: false,
            planted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelLevel {
    pub resolution: usize,
    pub basis: usize,
    pub sigma_min: f64,
    /// σ_min from the dense generalized eigensolver, as a cross-check.
    pub sigma_dense: f64,
    pub iterations: usize,
    /// ‖P*ξ‖/‖ξ‖ of the planted field alone.
    pub planted_quotient: Option<f64>,
}

/// All cubic B-splines on the clamped uniform knot vector over [0, m]:
/// (value, first, second derivative) in t.
pub fn cubic_bsplines(m: usize, t: f64) -> Vec<[f64; 3]> {
    let mut knots = vec![0.0; 3];
    knots.extend((0..=m).map(|i| i as f64));
    knots.extend([m as f64; 3]);
    let nk = knots.len();
    let span = (t.floor().max(0.0) as usize).min(m - 1) + 3;
    let mut n = vec![vec![0.0; nk]; 4];
    n[0][span] = 1.0;
    for p in 1..4 {
        for i in 0..nk - p - 1 {
            let mut v = 0.0;
            let d0 = knots[i + p] - knots[i];
            if d0 > 0.0 {
                v += (t - knots[i]) / d0 * n[p - 1][i];
            }
            let d1 = knots[i + p + 1] - knots[i + 1];
            if d1 > 0.0 {
                v += (knots[i + p + 1] - t) / d1 * n[p - 1][i + 1];
            }
            n[p][i] = v;
        }
    }
    let ratio = |a: f64, d: f64| if d > 0.0 { a / d } else { 0.0 };
    let deriv = |p: usize, lower: &dyn Fn(usize) -> f64, i: usize| {
        p as f64 * (ratio(lower(i), knots[i + p] - knots[i]) - ratio(lower(i + 1), knots[i + p + 1] - knots[i + 1]))
    };
    let d2 = |i: usize| deriv(2, &|j| n[1][j], i);
    (0..m + 3)
        .map(|i| [n[3][i], deriv(3, &|j| n[2][j], i), deriv(3, &d2, i)])
        .collect()
}

/// Real harmonics of degree ≤ 2 in Cartesian form.
fn harmonics(x: &[Jet; 3]) -> [Jet; 9] {
    let r = r_jet(x).recip();
    let u = [x[0] * r, x[1] * r, x[2] * r];
    [
        Jet::cst(1.0),
        u[0],
        u[1],
        u[2],
        u[0] * u[1],
        u[1] * u[2],
        u[2] * u[2] * 3.0 - 1.0,
        u[0] * u[2],
        u[0] * u[0] - u[1] * u[1],
    ]
}

const NP: usize = 36;
const NG: usize = 52;

/// Columns: P*ξ and the W^{2,2} pieces of ξ for each of the 40 unit jets of
/// (N, X₀, X₁, X₂), in orthonormal-frame components.
fn node_maps(st: &PointState, x: &[f64; 3]) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = rho(x);
    let bg = Geom::background(&Jet::coords(*x));
    let mut mp = DMatrix::zeros(NP, 40);
    let mut mg = DMatrix::zeros(NG, 40);
    for col in 0..40 {
        let (slot, k) = (col / 10, col % 10);
        let mut n = Jet::ZERO;
        let mut xf: V3 = [Jet::ZERO; 3];
        if slot == 0 {
            n = Jet::unit(k);
        } else {
            xf[slot - 1] = Jet::unit(k);
        }
        let (b1, b2) = p_star_at(st, &n, &xf);
        let mut row = 0;
        for i in 0..3 {
            for j in 0..3 {
                mp[(row, col)] = b1[i][j].v;
                row += 1;
            }
        }
        for l in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    mp[(row, col)] = b2[l][i][j].v * p;
                    row += 1;
                }
            }
        }
        if slot == 0 {
            mg[(0, col)] = n.v;
            for i in 0..3 {
                mg[(1 + i, col)] = n.g[i] * p;
            }
            let h = bg.hessian(&n);
            for i in 0..3 {
                for j in 0..3 {
                    mg[(4 + 3 * i + j, col)] = h[i][j].v * p * p;
                }
            }
        } else {
            let dx = bg.cov_form(&xf);
            let ddx = cov_generic(&flatten_m3(&dx), &[false, false], &bg.gam);
            for i in 0..3 {
                mg[(13 + i, col)] = xf[i].v * p;
            }
            for i in 0..3 {
                for j in 0..3 {
                    mg[(16 + 3 * i + j, col)] = dx[i][j].v * p * p;
                }
            }
            for (i, v) in ddx.iter().enumerate() {
                mg[(25 + i, col)] = v.v * p * p * p;
            }
        }
    }
    (mp, mg)
}

/// The truncated static potential: N = cosh(d)·(1 − step) with the step
/// rising over the last tenth of the chart.
fn planted_field(x: &[Jet; 3], r_in: f64, r_out: f64) -> Jet {
    let a = r_out - 0.1 * (r_out - r_in);
    let s = smooth_step((r_jet(x) - a) * (1.0 / (r_out - a)));
    cosh_potential(x) * s
}

struct Assembly {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
}

fn assemble(point: &PhasePoint, rf: &ReferenceData, w: f64, n: usize, opts: &KernelOptions) -> Result<Assembly> {
    let div = opts.spline_div.max(1);
    if n % div != 0 || n / div < 2 {
        return Err(Error::Range(format!("kernel resolution {n} must be a multiple of {div} with at least 2 intervals")));
    }
    let m = n / div;
    let chart = build_ball_chart(opts.r_in, opts.r_out, (8 * m).max(8), opts.n_ang)?;
    let ctx = Ctx::jet(&chart);
    let k_rad = m;
    let nh = 9;
    let nb_spline = 4 * nh * k_rad;
    let nb = nb_spline + usize::from(opts.planted);
    let d_in = 2.0 * opts.r_in.atanh();
    let d_out = 2.0 * opts.r_out.atanh();
    let scale = m as f64 / (d_out - d_in);
    let index = |comp: usize, h: usize, i: usize| (comp * nh + h) * k_rad + i;

    let chunks: Vec<std::ops::Range<usize>> =
        (0..chart.len()).step_by(128).map(|a| a..(a + 128).min(chart.len())).collect();
    let parts: Vec<Result<Assembly>> = chunks
        .par_iter()
        .map(|range| {
            let mut a = DMatrix::zeros(nb, nb);
            let mut g = DMatrix::zeros(nb, nb);
            for node in range.clone() {
                let site = chart.site(node);
                let xj = Jet::coords(site.x);
                let st = state_at(&ctx, point, rf, site)?;
                let (mp, mg) = node_maps(&st, &site.x);
                let r = r_jet(&xj);
                let d = ((r + 1.0) / (1.0 - r)).ln();
                let t = (d.v - d_in) * scale;
                let splines = cubic_bsplines(m, t);
                let ys = harmonics(&xj);
                let inv_rho = rho_jet(&xj).recip();
                let mut active: Vec<(usize, usize, [f64; 10])> = Vec::new();
                for (i, b) in splines.iter().enumerate().take(k_rad) {
                    if b.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let radial = d.compose(b[0], b[1] * scale, b[2] * scale * scale);
                    for (h, y) in ys.iter().enumerate() {
                        let phi = radial * *y;
                        active.push((index(0, h, i), 0, phi.to_array()));
                        let xphi = (phi * inv_rho).to_array();
                        for c in 0..3 {
                            active.push((index(c + 1, h, i), c + 1, xphi));
                        }
                    }
                }
                if opts.planted {
                    active.push((nb_spline, 0, planted_field(&xj, opts.r_in, opts.r_out).to_array()));
                }
                let wt = (rho(&site.x).powf(2.0 * w) * chart.bg_weight(node)).sqrt();
                let na = active.len();
                let mut vp = DMatrix::zeros(NP, na);
                let mut vg = DMatrix::zeros(NG, na);
                for (col, (_, slot, c)) in active.iter().enumerate() {
                    let cj = nalgebra::DVector::from_column_slice(c);
                    let blk = 10 * slot;
                    vp.set_column(col, &(mp.columns(blk, 10) * &cj * wt));
                    vg.set_column(col, &(mg.columns(blk, 10) * &cj * wt));
                }
                let la = vp.transpose() * &vp;
                let lg = vg.transpose() * &vg;
                for (p, (ip, _, _)) in active.iter().enumerate() {
                    for (q, (iq, _, _)) in active.iter().enumerate() {
                        a[(*ip, *iq)] += la[(p, q)];
                        g[(*ip, *iq)] += lg[(p, q)];
                    }
                }
            }
            Ok(Assembly { a, g })
        })
        .collect();
    let mut a = DMatrix::zeros(nb, nb);
    let mut g = DMatrix::zeros(nb, nb);
    for part in parts {
        let part = part?;
        a += part.a;
        g += part.g;
    }
    Ok(Assembly { a, g })
}

/// σ_min of P* on the Galerkin space at resolution `n`; `w` is the norm
/// weight (w = −δ).
pub fn kernel_level(point: &PhasePoint, rf: &ReferenceData, w: f64, n: usize, opts: &KernelOptions) -> Result<KernelLevel> {
    let Assembly { a, g } = assemble(point, rf, w, n, opts)?;
    let nb = a.nrows();
    let planted_quotient = opts.planted.then(|| (a[(nb - 1, nb - 1)] / g[(nb - 1, nb - 1)]).sqrt());
    let dscale: Vec<f64> = (0..nb).map(|i| 1.0 / g[(i, i)].sqrt()).collect();
    let a = DMatrix::from_fn(nb, nb, |i, j| a[(i, j)] * dscale[i] * dscale[j]);
    let g = DMatrix::from_fn(nb, nb, |i, j| g[(i, j)] * dscale[i] * dscale[j]);
    let (lam, _, iterations) = smallest_generalized_eigen(&a, &g, opts.tol, opts.max_outer)?;
    let dense = generalized_eigenvalues(&a, &g)?;
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(Error::SolverDivergence { iters: iterations, residual: lam });
    }
    Ok(KernelLevel {
        resolution: n,
        basis: nb,
        sigma_min: lam.sqrt(),
        sigma_dense: dense[0].max(0.0).sqrt(),
        iterations,
        planted_quotient,
    })
}

/// σ_min over a resolution ladder at weight δ.
pub fn kernel_probe(
    point: &PhasePoint,
    rf: &ReferenceData,
    delta: f64,
    ladder: &[usize],
    opts: &KernelOptions,
) -> Result<(ProbeReport, Vec<KernelLevel>)> {
    let mut rep = ProbeReport::new("kernel");
    let (lo, hi) = KERNEL_DELTA_WINDOW;
    if !(delta > lo && delta < hi) {
        let msg = format!("δ = {delta} outside ]{lo}, {hi}[");
        if opts.strict {
            return Err(Error::WindowViolation(msg));
        }
        rep.warnings.push(msg);
    }
    if ladder.is_empty() {
        return Err(Error::InsufficientData("kernel probe needs at least one resolution".into()));
    }
    let w = -delta;
    let mut levels = Vec::with_capacity(ladder.len());
    for &n in ladder {
        levels.push(kernel_level(point, rf, w, n, opts)?);
    }
    let sig: Vec<f64> = levels.iter().map(|l| l.sigma_min).collect();
    let variation = ladder_variation(&sig);
    rep.params.insert("delta".into(), delta);
    rep.params.insert("weight".into(), w);
    rep.params.insert("tau".into(), rf.tau);
    rep.params.insert("r_in".into(), opts.r_in);
    rep.params.insert("r_out".into(), opts.r_out);
    rep.series.insert("resolution".into(), ladder.iter().map(|n| *n as f64).collect());
    rep.series.insert("basis".into(), levels.iter().map(|l| l.basis as f64).collect());
    rep.series.insert("sigma_min".into(), sig.clone());
    rep.series.insert("sigma_dense".into(), levels.iter().map(|l| l.sigma_dense).collect());
    rep.series.insert("iterations".into(), levels.iter().map(|l| l.iterations as f64).collect());
    if opts.planted {
        rep.series.insert("planted_quotient".into(), levels.iter().filter_map(|l| l.planted_quotient).collect());
    }
    if !opts.truncation_scan.is_empty() {
        let mut radii = vec![opts.r_out];
        let mut sigmas = vec![levels[0].sigma_min];
        for &r_out in &opts.truncation_scan {
            let o = KernelOptions { r_out, planted: false, ..opts.clone() };
            radii.push(r_out);
            sigmas.push(kernel_level(point, rf, w, ladder[0], &o)?.sigma_min);
        }
        rep.outcomes.insert("truncation_ratio".into(), sigmas.last().unwrap() / sigmas[0]);
        rep.series.insert("truncation_r_out".into(), radii);
        rep.series.insert("truncation_sigma".into(), sigmas);
    }
    rep.outcomes.insert("constant_lapse_sup".into(), constant_lapse_sup(point, rf, opts)?);
    rep.outcomes.insert("sigma_min".into(), *sig.last().unwrap());
    rep.outcomes.insert("ladder_variation".into(), variation);
    rep.labels.insert("status".into(), "consistent-with".into());
    rep.labels.insert("weights".into(), "‖P*ξ‖_{2,w} / ‖ξ‖_{2,2,w} with w = −δ".into());
    rep.pass = sig.iter().all(|s| *s > 0.0) && variation <= opts.max_variation;
    Ok((rep, levels))
}

/// sup over a coarse chart of |P*(1, 0)| in frame components. It vanishes
/// identically at the background when τ² = 1, where the constant lapse lies
/// in ker P* ∩ W^{2,2}_w for every w > 1.
pub fn constant_lapse_sup(point: &PhasePoint, rf: &ReferenceData, opts: &KernelOptions) -> Result<f64> {
    let chart = build_ball_chart(opts.r_in, opts.r_out, 16, 8)?;
    let ctx = Ctx::jet(&chart);
    let mut sup: f64 = 0.0;
    for node in 0..chart.len() {
        let site = chart.site(node);
        let st = state_at(&ctx, point, rf, site)?;
        let (b1, b2) = p_star_at(&st, &Jet::cst(1.0), &[Jet::ZERO; 3]);
        let v = frame_values(&b1, &b2, rho(&site.x));
        sup = sup.max(v.iter().map(|c| c * c).sum::<f64>().sqrt());
    }
    Ok(sup)
}

#[derive(Clone, Debug)]
pub struct LipschitzEstimate {
    pub estimate: ConstantEstimate,
    /// ‖(g − g̃, π − π̃)‖_F.
    pub separation: f64,
    pub zero_separation: bool,
}

fn frame_values(b1: &M3, b2: &T3, p: f64) -> [f64; NP] {
    let mut out = [0.0; NP];
    let mut k = 0;
    for row in b1 {
        for v in row {
            out[k] = v.v;
            k += 1;
        }
    }
    for plane in b2 {
        for row in plane {
            for v in row {
                out[k] = v.v * p;
                k += 1;
            }
        }
    }
    out
}

/// sup over ξ of ‖(P*_{(g,π)} − P*_{(g̃,π̃)})ξ‖_{2,w} / (‖ξ‖_{2,2,w} ‖(g − g̃, π − π̃)‖_F),
/// with F = W^{2,2}_{δ_F} × W^{1,2}_{δ_F}.
pub fn lipschitz_probe(
    ctx: &Ctx,
    points: (&PhasePoint, &PhasePoint),
    rf: &ReferenceData,
    family: &[LapseShift],
    w: f64,
    delta_f: f64,
) -> Result<LipschitzEstimate> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let chart = ctx.chart;
    let (pa, pb) = points;
    let nm = family.len();
    // per member: ‖ΔP*ξ‖², then ‖∇^j ξ‖² for j = 0..2 (N and X separately); then
    // ‖∇^j(g − g̃)‖² for j = 0..2 and ‖∇^j(π − π̃)‖² for j = 0, 1
    let per = 7;
    let width = nm * per + 5;
    let chunks: Vec<std::ops::Range<usize>> =
        (0..chart.len()).step_by(256).map(|a| a..(a + 256).min(chart.len())).collect();
    let parts: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|range| {
            let mut acc = vec![0.0; width];
            for node in range.clone() {
                let site = chart.site(node);
                let sa = state_at(ctx, pa, rf, site)?;
                let sb = state_at(ctx, pb, rf, site)?;
                let gam = crate::tensor::background_christoffel(&Jet::coords(site.x));
                let p = rho(&site.x);
                let wt = chart.bg_weight(node);
                let ww = p.powf(2.0 * w) * wt;
                let wf = p.powf(2.0 * delta_f) * wt;
                for (mi, xi) in family.iter().enumerate() {
                    let n = xi.n.scalar_jet(ctx, site)?;
                    let x = xi.x.form_jets(ctx, site)?;
                    let (a1, a2) = p_star_at(&sa, &n, &x);
                    let (b1, b2) = p_star_at(&sb, &n, &x);
                    let fa = frame_values(&a1, &a2, p);
                    let fb = frame_values(&b1, &b2, p);
                    let diff: f64 = fa.iter().zip(&fb).map(|(u, v)| (u - v) * (u - v)).sum();
                    acc[mi * per] += diff * ww;
                    let mn = jet_magnitudes(&[n], 0, 0, &site.x, &gam, 2);
                    let mx = jet_magnitudes(&x, 0, 1, &site.x, &gam, 2);
                    for j in 0..3 {
                        acc[mi * per + 1 + j] += mn[j] * mn[j] * ww;
                        acc[mi * per + 4 + j] += mx[j] * mx[j] * ww;
                    }
                }
                let dg: Vec<Jet> = flatten_m3(&pa.g.m3_jets(ctx, site)?)
                    .iter()
                    .zip(flatten_m3(&pb.g.m3_jets(ctx, site)?))
                    .map(|(u, v)| *u - v)
                    .collect();
                let dp: Vec<Jet> = flatten_m3(&pa.pi.m3_jets(ctx, site)?)
                    .iter()
                    .zip(flatten_m3(&pb.pi.m3_jets(ctx, site)?))
                    .map(|(u, v)| *u - v)
                    .collect();
                let mg = jet_magnitudes(&dg, 0, 2, &site.x, &gam, 2);
                let mpi = jet_magnitudes(&dp, 2, 0, &site.x, &gam, 1);
                for j in 0..3 {
                    acc[nm * per + j] += mg[j] * mg[j] * wf;
                }
                for j in 0..2 {
                    acc[nm * per + 3 + j] += mpi[j] * mpi[j] * wf;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut sums = vec![0.0; width];
    for part in parts {
        for (s, v) in sums.iter_mut().zip(part?) {
            *s += v;
        }
    }
    let sep: f64 = sums[nm * per..].iter().map(|v| v.sqrt()).sum();
    let zero = sep == 0.0;
    let ratios: Vec<f64> = (0..nm)
        .map(|mi| {
            if zero {
                return 0.0;
            }
            let row = &sums[mi * per..(mi + 1) * per];
            let xi: f64 = row[1..].iter().map(|v| v.sqrt()).sum();
            row[0].sqrt() / (xi * sep)
        })
        .collect();
    let mut region = RegionMask::whole(chart);
    region.big_r = 0.0;
    let specs = vec![WeightSpec::l2(w).negated(), WeightSpec::h(2, w).negated(), WeightSpec::h(2, delta_f)];
    let estimate = ConstantEstimate::from_ratios("LIPSCHITZ", ratios, specs, &region)?;
    Ok(LipschitzEstimate { estimate, separation: sep, zero_separation: zero })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::reference_data;
    use crate::fields::{blob_family, FamilySpec, WindowKind};

    fn coarse() -> KernelOptions {
        KernelOptions { spline_div: 2, ..Default::default() }
    }

    #[test]
    fn kernel_probe_is_deterministic() {
        let rf = reference_data(1.0);
        let pt = PhasePoint::background(&rf);
        let a = kernel_probe(&pt, &rf, -1.5, &[8], &coarse()).unwrap();
        let b = kernel_probe(&pt, &rf, -1.5, &[8], &coarse()).unwrap();
        assert_eq!(a, b);
        assert!(a.0.outcomes["sigma_min"] > 0.0);
        let l = &a.1[0];
        assert!((l.sigma_min - l.sigma_dense).abs() < 1e-6 * l.sigma_dense);
    }

    #[test]
    fn planted_potential_adds_no_small_singular_value() {
        let rf = reference_data(1.0);
        let pt = PhasePoint::background(&rf);
        let plain = kernel_level(&pt, &rf, 1.5, 8, &coarse()).unwrap();
        let planted = kernel_level(&pt, &rf, 1.5, 8, &KernelOptions { planted: true, ..coarse() }).unwrap();
        let q = planted.planted_quotient.unwrap();
        assert!(q > plain.sigma_min, "{q} {}", plain.sigma_min);
        assert!(planted.sigma_min > 0.9 * plain.sigma_min);
    }

    #[test]
    fn perturbed_point_stays_within_factor_two() {
        let rf = reference_data(1.0);
        let bg = PhasePoint::background(&rf);
        let f = blob_family(&FamilySpec::new(3, 2, (0.2, 0.9), 2, WindowKind::Shell).with_sigma(0.3, 1.0));
        let pt = PhasePoint::perturbed(&rf, &f[0].sym2_field((0, 2), -2).scaled(0.05), &f[1].sym2_field((2, 0), 2).scaled(0.05))
            .unwrap();
        let a = kernel_level(&bg, &rf, 1.5, 8, &coarse()).unwrap().sigma_min;
        let b = kernel_level(&pt, &rf, 1.5, 8, &coarse()).unwrap().sigma_min;
        assert!(b > 0.5 * a && b < 2.0 * a, "{a} {b}");
    }

    #[test]
    fn constant_lapse_is_annihilated_only_when_tau_squared_is_one() {
        let opts = KernelOptions::default();
        for (tau, zero) in [(1.0, true), (-1.0, true), (0.0, false), (2.0, false)] {
            let rf = reference_data(tau);
            let sup = constant_lapse_sup(&PhasePoint::background(&rf), &rf, &opts).unwrap();
            assert_eq!(sup < 1e-10, zero, "τ = {tau}: {sup}");
        }
    }

    #[test]
    fn kernel_window_is_enforced_in_strict_mode() {
        let rf = reference_data(1.0);
        let pt = PhasePoint::background(&rf);
        let strict = KernelOptions { strict: true, ..coarse() };
        assert!(matches!(kernel_probe(&pt, &rf, -3.0, &[8], &strict), Err(Error::WindowViolation(_))));
        let (rep, _) = kernel_probe(&pt, &rf, -0.5, &[8], &coarse()).unwrap();
        assert_eq!(rep.warnings.len(), 1);
    }

    fn lipschitz_inputs(tau: f64) -> (ReferenceData, crate::TensorField, crate::TensorField, Vec<LapseShift>) {
        let rf = reference_data(tau);
        let f = blob_family(&FamilySpec::new(7, 2, (0.2, 0.9), 2, WindowKind::Shell).with_sigma(0.3, 1.0));
        let xs = blob_family(&FamilySpec::new(11, 8, (0.1, 0.95), 2, WindowKind::Shell).with_sigma(0.3, 1.0));
        let fam = (0..4).map(|i| LapseShift::new(xs[2 * i].scalar_field(), xs[2 * i + 1].form_field()).unwrap()).collect();
        (rf, f[0].sym2_field((0, 2), -2), f[1].sym2_field((2, 0), 2), fam)
    }

    #[test]
    fn identical_points_give_zero_with_flag() {
        let (rf, _, _, fam) = lipschitz_inputs(1.0);
        let chart = build_ball_chart(0.1, 0.95, 16, 8).unwrap();
        let bg = PhasePoint::background(&rf);
        let e = lipschitz_probe(&Ctx::jet(&chart), (&bg, &bg), &rf, &fam, 1.5, -1.5).unwrap();
        assert!(e.zero_separation && e.estimate.value == 0.0);
        assert!(matches!(lipschitz_probe(&Ctx::jet(&chart), (&bg, &bg), &rf, &[], 1.5, -1.5), Err(Error::EmptyFamily)));
    }

    #[test]
    fn lipschitz_ratios_stabilise_along_a_shrinking_sequence() {
        let chart = build_ball_chart(0.1, 0.95, 16, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        for tau in [1.0, 0.0] {
            let (rf, h, p, fam) = lipschitz_inputs(tau);
            let bg = PhasePoint::background(&rf);
            let vals: Vec<f64> = [1e-1, 1e-2, 1e-3]
                .iter()
                .map(|t| {
                    let q = PhasePoint::perturbed(&rf, &h.scaled(*t), &p.scaled(*t * tau)).unwrap();
                    lipschitz_probe(&ctx, (&bg, &q), &rf, &fam, 1.5, -1.5).unwrap().estimate.value
                })
                .collect();
            assert!(vals.iter().all(|v| *v > 0.0));
            assert!(ladder_variation(&vals) < 0.2, "{vals:?}");
        }
    }

    #[test]
    fn bsplines_partition_unity() {
        for m in [4, 6, 8] {
            for k in 0..=40 {
                let t = m as f64 * k as f64 / 40.0;
                let b = cubic_bsplines(m, t);
                let s: [f64; 3] = [0, 1, 2].map(|d| b.iter().map(|v| v[d]).sum());
                assert!((s[0] - 1.0).abs() < 1e-14 && s[1].abs() < 1e-12 && s[2].abs() < 1e-11, "{m} {t} {s:?}");
            }
            let end = cubic_bsplines(m, m as f64);
            for b in &end[..m] {
                assert!(b.iter().all(|v| v.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn bspline_derivatives_match_differences() {
        let h = 1e-5;
        for t in [0.3, 1.7, 2.5, 3.9] {
            let (a, b, c) = (cubic_bsplines(4, t - h), cubic_bsplines(4, t), cubic_bsplines(4, t + h));
            for i in 0..7 {
                assert!(((c[i][0] - a[i][0]) / (2.0 * h) - b[i][1]).abs() < 1e-8);
                assert!(((c[i][1] - a[i][1]) / (2.0 * h) - b[i][2]).abs() < 1e-6);
            }
        }
    }
}
