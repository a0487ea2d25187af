//! The integration-by-parts oracle for DΦ*:
//! ∫ ⟨DΦ(h, p), ξ⟩ dμ(g̊) = ∫ ⟨(h, p), DΦ*ξ⟩ dμ(g̊) for compactly supported data.

use rayon::prelude::*;

use super::Residual;
use crate::constraint::{dphi_adjoint_at, dphi_at, state_at, LapseShift, PhasePoint, ReferenceData};
use crate::manifold::Boundary;
use crate::tensor::{Ctx, TensorField};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct PairingOutcome {
    /// ∫ DΦ₀ N + DΦ_i X^i.
    pub forward: f64,
    /// ∫ h_ij DΦ*₁^{ij} + p^{ij} DΦ*₂_ij.
    pub adjoint: f64,
    pub residual: Residual,
}

/// Rejects fields that are nonzero on either bounding sphere.
pub fn check_inner_and_outer_support(ctx: &Ctx, fields: &[(&str, &TensorField)]) -> Result<()> {
    for which in [Boundary::Inner, Boundary::Outer] {
        let surf = ctx.chart.surface(which);
        for (name, f) in fields {
            for (site, _) in surf.sites() {
                let v = f.jets(ctx, site)?;
                if v.iter().any(|c| c.v.abs() > 1e-12) {
                    return Err(Error::SupportViolation(format!("{name} is nonzero on the sphere r = {}", surf.r)));
                }
            }
        }
    }
    Ok(())
}

/// Relative pairing defect |forward − adjoint| / max(|forward|, |adjoint|);
/// both sides zero gives 0.
pub fn adjoint_pairing_check(
    ctx: &Ctx,
    point: &PhasePoint,
    rf: &ReferenceData,
    h: &TensorField,
    p: &TensorField,
    xi: &LapseShift,
) -> Result<PairingOutcome> {
    if h.rank != (0, 2) || p.rank != (2, 0) {
        return Err(Error::KindMismatch("variation needs h of rank (0,2) and p of rank (2,0)".into()));
    }
    check_inner_and_outer_support(ctx, &[("h", h), ("p", p), ("N", &xi.n), ("X", &xi.x)])?;
    let chart = ctx.chart;
    let rows: Vec<Result<[f64; 2]>> = (0..chart.len())
        .into_par_iter()
        .map(|n| {
            let site = chart.site(n);
            let st = state_at(ctx, point, rf, site)?;
            let hj = h.m3_jets(ctx, site)?;
            let pj = p.m3_jets(ctx, site)?;
            let nj = xi.n.scalar_jet(ctx, site)?;
            let xj = xi.x.form_jets(ctx, site)?;
            let d = dphi_at(&st, &hj, &pj);
            let xu = st.geo.raise(&xj);
            let fwd = d[0].v * nj.v + (0..3).map(|i| d[i + 1].v * xu[i].v).sum::<f64>();
            let (a1, a2) = dphi_adjoint_at(&st, &nj, &xj);
            let mut adj = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    adj += hj[i][j].v * a1[i][j].v + pj[i][j].v * a2[i][j].v;
                }
            }
            let w = chart.bg_weight(n);
            Ok([fwd * w, adj * w])
        })
        .collect();
    let (mut fwd, mut adj) = (0.0, 0.0);
    for (n, r) in rows.into_iter().enumerate() {
        let [a, b] = r?;
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite(n));
        }
        fwd += a;
        adj += b;
    }
    let scale = fwd.abs().max(adj.abs());
    let rel = if scale == 0.0 { 0.0 } else { (fwd - adj).abs() / scale };
    let residual = Residual::new("ADJOINT_PAIRING", rel, (fwd - adj).abs())
        .with_meta("tau", rf.tau)
        .with_meta("resolution", chart.n_r as f64)
        .with_meta("forward", fwd)
        .with_meta("adjoint", adj);
    Ok(PairingOutcome { forward: fwd, adjoint: adj, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::reference_data;
    use crate::fields::{blob_family, FamilySpec, WindowKind};
    use crate::manifold::build_ball_chart;

    fn inputs(seed: u64) -> (TensorField, TensorField, LapseShift) {
        let spec = FamilySpec::new(seed, 4, (0.2, 0.9), 2, WindowKind::Shell);
        let f = blob_family(&spec);
        let xi = LapseShift::new(f[2].scalar_field(), f[3].form_field()).unwrap();
        (f[0].sym2_field((0, 2), -2), f[1].sym2_field((2, 0), 2), xi)
    }

    #[test]
    fn exact_jets_balance_at_the_background() {
        let chart = build_ball_chart(0.2, 0.9, 48, 24).unwrap();
        let ctx = Ctx::jet(&chart);
        let rf = reference_data(1.0);
        let (h, p, xi) = inputs(5);
        let out = adjoint_pairing_check(&ctx, &PhasePoint::background(&rf), &rf, &h, &p, &xi).unwrap();
        assert!(out.forward.abs() > 1e-3);
        assert!(out.residual.l2 < 1e-6, "{:?}", out.residual);
    }

    #[test]
    fn zero_variation_gives_zero() {
        let chart = build_ball_chart(0.2, 0.9, 12, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let rf = reference_data(1.0);
        let (_, _, xi) = inputs(5);
        let z2 = TensorField::sym2((0, 2), |_| [[crate::Jet::ZERO; 3]; 3]);
        let z0 = TensorField::sym2((2, 0), |_| [[crate::Jet::ZERO; 3]; 3]);
        let out = adjoint_pairing_check(&ctx, &PhasePoint::background(&rf), &rf, &z2, &z0, &xi).unwrap();
        assert_eq!(out.residual.l2, 0.0);
    }

    #[test]
    fn fields_on_the_spheres_are_rejected() {
        let chart = build_ball_chart(0.2, 0.9, 12, 8).unwrap();
        let ctx = Ctx::jet(&chart);
        let rf = reference_data(0.0);
        let (h, p, _) = inputs(5);
        let xi = LapseShift::new(TensorField::scalar(|_| crate::Jet::cst(1.0)), TensorField::form(|_| [crate::Jet::ZERO; 3])).unwrap();
        let err = adjoint_pairing_check(&ctx, &PhasePoint::background(&rf), &rf, &h, &p, &xi).unwrap_err();
        assert!(matches!(err, Error::SupportViolation(_)));
    }
}
