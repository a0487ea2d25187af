//! Verification harness: identity residuals, the adjoint pairing, empirical
//! coercivity constants, kernel and Lipschitz probes, convergence studies.

use std::collections::BTreeMap;

use crate::{Error, Result};

mod estimates;
mod identities;
mod pairing;
mod probes;

pub use identities::{check_identities, check_identity, check_outer_support, IdentityCheck, IdentityId, InputKind};
pub use estimates::{
    estimate_constant, f_adjoint_at, killing_like, ladder_variation, setup, standard_family, EstimateFamily, EstimateId,
    EstimateSetup, Member, MemberKind, Setting, WeightWindow,
};
pub use pairing::{adjoint_pairing_check, check_inner_and_outer_support, PairingOutcome};
pub use probes::{
    constant_lapse_sup, cubic_bsplines, kernel_level, kernel_probe, lipschitz_probe, KernelLevel, KernelOptions, LipschitzEstimate, ProbeReport,
    KERNEL_DELTA_WINDOW,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub id: String,
    pub l2: f64,
    pub sup: f64,
    pub rate: Option<f64>,
    pub metadata: BTreeMap<String, f64>,
}

impl Residual {
    pub fn new(id: &str, l2: f64, sup: f64) -> Residual {
        Residual { id: id.to_string(), l2, sup, rate: None, metadata: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, v: f64) -> Residual {
        self.metadata.insert(key.to_string(), v);
        self
    }

    pub fn saturated(&self) -> bool {
        self.metadata.get("saturated").is_some_and(|v| *v != 0.0)
    }
}

/// Least-squares slope of log(value) against log(Δ) with Δ = 1/n.
pub fn fit_rate(resolutions: &[usize], values: &[f64]) -> Result<f64> {
    if resolutions.len() < 2 || resolutions.len() != values.len() {
        return Err(Error::InsufficientData(format!("a rate needs ≥ 2 resolutions, got {}", resolutions.len())));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InsufficientData(format!("cannot take the log of residual {v}")));
    }
    let xs: Vec<f64> = resolutions.iter().map(|n| -(*n as f64).ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Runs `run` at each resolution and fits the observed order. When every
/// value sits at or below `floor` (exact-derivative paths) the rate is left
/// empty and the residual is flagged `saturated`.
pub fn convergence_study(
    id: &str,
    resolutions: &[usize],
    floor: f64,
    mut run: impl FnMut(usize) -> Result<f64>,
) -> Result<Residual> {
    if resolutions.len() < 2 {
        return Err(Error::InsufficientData(format!("{id}: convergence needs ≥ 2 resolutions")));
    }
    let mut values = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let v = run(n)?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::NonFinite(n));
        }
        values.push(v);
    }
    let finest = *values.last().unwrap();
    let mut res = Residual::new(id, finest, values.iter().fold(0.0, |a: f64, b| a.max(*b)));
    for (n, v) in resolutions.iter().zip(&values) {
        res = res.with_meta(&format!("n{n:04}"), *v);
    }
    if values.iter().all(|v| *v <= floor) {
        return Ok(res.with_meta("saturated", 1.0));
    }
    res.rate = Some(fit_rate(resolutions, &values)?);
    Ok(res.with_meta("saturated", 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_of_a_power_law() {
        let ns = [16, 32, 64];
        let v: Vec<f64> = ns.iter().map(|n| 3.0 / (*n as f64).powi(2)).collect();
        assert!((fit_rate(&ns, &v).unwrap() - 2.0).abs() < 1e-12);
        let r = convergence_study("x", &ns, 0.0, |n| Ok(1.0 / n as f64)).unwrap();
        assert!((r.rate.unwrap() - 1.0).abs() < 1e-12);
        let s = convergence_study("x", &ns, 1e-12, |_| Ok(1e-15)).unwrap();
        assert!(s.rate.is_none() && s.saturated());
        assert!(matches!(convergence_study("x", &[8], 0.0, |_| Ok(1.0)), Err(Error::InsufficientData(_))));
    }
}
