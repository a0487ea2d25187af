use std::sync::Arc;

use proptest::prelude::*;

use hyperkid::constraint::{reference_data, PhasePoint};
use hyperkid::fields::{blob_family, FamilySpec, WindowKind};
use hyperkid::manifold::{build_ball_chart, rho_jet, ChartGrid};
use hyperkid::verify::{estimate_constant, setup, standard_family, EstimateFamily, EstimateId, Setting};
use hyperkid::wspace::{weighted_norm, WeightSpec};
use hyperkid::{Ctx, RegionMask, TensorField};

fn chart() -> ChartGrid {
    build_ball_chart(0.2, 0.9, 12, 8).unwrap()
}

fn form(seed: u64) -> TensorField {
    blob_family(&FamilySpec::new(seed, 1, (0.2, 0.9), 2, WindowKind::Shell).with_sigma(0.3, 1.0))[0].form_field()
}

fn combine(u: &TensorField, a: f64, v: &TensorField, b: f64) -> TensorField {
    let (f, g) = (u.analytic.clone().unwrap(), v.analytic.clone().unwrap());
    TensorField {
        rank: u.rank,
        comps: Vec::new(),
        analytic: Some(Arc::new(move |x| f(x).into_iter().zip(g(x)).map(|(p, q)| p * a + q * b).collect())),
    }
}

fn spec() -> impl Strategy<Value = WeightSpec> {
    (0usize..3, prop_oneof![Just(1.0), Just(2.0), Just(3.5), Just(f64::INFINITY)], -2.0f64..2.0)
        .prop_map(|(k, p, d)| WeightSpec::new(k, p, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn norm_is_absolutely_homogeneous(seed in 0u64..1000, a in -5.0f64..5.0, s in spec()) {
        let c = chart();
        let ctx = Ctx::jet(&c);
        let u = form(seed);
        let whole = RegionMask::whole(&c);
        let n1 = weighted_norm(&ctx, &combine(&u, a, &u, 0.0), &s, &whole).unwrap();
        let n0 = weighted_norm(&ctx, &u, &s, &whole).unwrap();
        prop_assert!((n1 - a.abs() * n0).abs() <= 1e-12 * (1.0 + n1));
    }

    #[test]
    fn norm_satisfies_the_triangle_inequality(s1 in 0u64..1000, s2 in 0u64..1000, b in -3.0f64..3.0, s in spec()) {
        let c = chart();
        let ctx = Ctx::jet(&c);
        let (u, v) = (form(s1), form(s2));
        let whole = RegionMask::whole(&c);
        let sum = weighted_norm(&ctx, &combine(&u, 1.0, &v, b), &s, &whole).unwrap();
        let nu = weighted_norm(&ctx, &u, &s, &whole).unwrap();
        let nv = weighted_norm(&ctx, &combine(&v, b, &v, 0.0), &s, &whole).unwrap();
        prop_assert!(sum <= (nu + nv) * (1.0 + 1e-12));
    }

    #[test]
    fn weight_shift_moves_powers_of_rho(seed in 0u64..1000, a in -2.0f64..2.0, d in -2.0f64..2.0, p in prop_oneof![Just(1.0), Just(2.0), Just(f64::INFINITY)]) {
        let c = chart();
        let ctx = Ctx::jet(&c);
        let u = form(seed);
        let f = u.analytic.clone().unwrap();
        let shifted = TensorField {
            rank: u.rank,
            comps: Vec::new(),
            analytic: Some(Arc::new(move |x| {
                let w = rho_jet(x).powf(a);
                f(x).into_iter().map(|q| q * w).collect()
            })),
        };
        let whole = RegionMask::whole(&c);
        let lhs = weighted_norm(&ctx, &shifted, &WeightSpec::new(0, p, d), &whole).unwrap();
        let rhs = weighted_norm(&ctx, &u, &WeightSpec::new(0, p, d + a), &whole).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn truncating_a_family_never_raises_the_estimate(seed in 0u64..1000, keep in 1usize..6, which in 0usize..4) {
        let id = [EstimateId::PoincareT, EstimateId::KornS, EstimateId::CoerciveU, EstimateId::Adj35cg][which];
        let full = standard_family(id, seed, 6, 1.0);
        let part = EstimateFamily { label: full.label.clone(), members: full.members[..keep].to_vec() };
        let su = setup(id, 1.0);
        let c = build_ball_chart(su.r_in, su.r_out, 10, 8).unwrap();
        let ctx = Ctx::jet(&c);
        let rf = reference_data(1.0);
        let pt = PhasePoint::background(&rf);
        let set = Setting { point: &pt, rf: &rf };
        let a = estimate_constant(&ctx, set, id, &part, 1.5, 1.0, false).unwrap().value;
        let b = estimate_constant(&ctx, set, id, &full, 1.5, 1.0, false).unwrap().value;
        prop_assert!(a <= b);
    }
}
