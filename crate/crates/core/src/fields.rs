//! Test fields: windows, Gaussian-blob superpositions, and the
//! closed-form catalogue (static potential, rotation Killing forms, ρ-powers).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::jet::Jet;
use crate::manifold::rho_jet;
use crate::tensor::{TensorField, M3, V3};

pub fn r_jet(x: &[Jet; 3]) -> Jet {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// exp(−1/t) for t > 0, else 0.
fn flat_exp(t: Jet) -> Jet {
    if t.v <= 0.0 {
        Jet::ZERO
    } else {
        (t.recip() * -1.0).exp()
    }
}

/// C∞ step: 1 for t ≤ 0, 0 for t ≥ 1.
pub fn smooth_step(t: Jet) -> Jet {
    if t.v <= 0.0 {
        return Jet::cst(1.0).with_ord(t.ord);
    }
    if t.v >= 1.0 {
        return Jet::ZERO.with_ord(t.ord);
    }
    let a = flat_exp(1.0 - t);
    let b = flat_exp(t);
    a / (a + b)
}

/// C∞ window on the radial interval (a, b): exp(1 − 1/(1 − s²)) with s the
/// rescaled radius, so the peak value is 1.
pub fn radial_window(x: &[Jet; 3], a: f64, b: f64) -> Jet {
    let r = r_jet(x);
    let s = (r - 0.5 * (a + b)) * (2.0 / (b - a));
    if s.v.abs() >= 1.0 {
        return Jet::ZERO;
    }
    let q = 1.0 - s * s;
    (1.0 - q.recip()).exp()
}

/// Equal to 1 for r ≤ a, vanishing for r ≥ b.
pub fn inner_window(x: &[Jet; 3], a: f64, b: f64) -> Jet {
    let r = r_jet(x);
    smooth_step((r - a) * (1.0 / (b - a)))
}

/// Static potential (1 + r²)/(1 − r²) = (1 − ρ)/ρ: the kernel of T̊.
pub fn cosh_potential(x: &[Jet; 3]) -> Jet {
    let p = rho_jet(x);
    (1.0 - p) / p
}

/// g̊-lowered rotation field about axis `axis` (x ↦ e_axis × x).
pub fn rotation_form(x: &[Jet; 3], axis: usize) -> V3 {
    let p = rho_jet(x);
    let w = (p * p).recip();
    let v = match axis {
        0 => [Jet::ZERO, -x[2], x[1]],
        1 => [x[2], Jet::ZERO, -x[0]],
        _ => [-x[1], x[0], Jet::ZERO],
    };
    [v[0] * w, v[1] * w, v[2] * w]
}

/// Rotation field as a vector (upper index).
pub fn rotation_vector(x: &[Jet; 3], axis: usize) -> V3 {
    match axis {
        0 => [Jet::ZERO, -x[2], x[1]],
        1 => [x[2], Jet::ZERO, -x[0]],
        _ => [-x[1], x[0], Jet::ZERO],
    }
}

#[derive(Clone, Debug)]
pub struct Blob {
    pub centre: [f64; 3],
    pub sigma: f64,
    pub amp: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    /// Two-sided C∞ bump on (a, b).
    Bump(f64, f64),
    /// 1 for r ≤ flat, C∞ step down to 0 at r = end.
    Step { flat: f64, end: f64 },
    /// (1 − r²/c²)^k for r < c: polynomial in x, vanishing to order k at r = c.
    Cap { radius: f64, power: i32 },
    /// ((r² − a²)(b² − r²))^k normalised to peak 1: polynomial in x on the shell.
    Shell { inner: f64, outer: f64, power: i32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Bump,
    Step,
    Cap,
    Shell,
}

/// Σ blobs × radial window.
#[derive(Clone, Debug)]
pub struct BlobField {
    pub blobs: Vec<Blob>,
    pub window: Window,
}

impl Window {
    pub fn eval(&self, x: &[Jet; 3]) -> Jet {
        match *self {
            Window::Bump(a, b) => radial_window(x, a, b),
            Window::Step { flat, end } => inner_window(x, flat, end),
            Window::Cap { radius, power } => {
                let q = 1.0 - (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * (1.0 / (radius * radius));
                if q.v <= 0.0 {
                    Jet::ZERO
                } else {
                    q.powi(power)
                }
            }
            Window::Shell { inner, outer, power } => {
                let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                let (a2, b2) = (inner * inner, outer * outer);
                if r2.v <= a2 || r2.v >= b2 {
                    return Jet::ZERO;
                }
                let peak = 0.25 * (b2 - a2) * (b2 - a2);
                ((r2 - a2) * (b2 - r2) * (1.0 / peak)).powi(power)
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            Window::Bump(a, b) => (a, b),
            Window::Step { end, .. } => (0.0, end),
            Window::Cap { radius, .. } => (0.0, radius),
            Window::Shell { inner, outer, .. } => (inner, outer),
        }
    }
}

impl BlobField {
    pub fn window(&self, x: &[Jet; 3]) -> Jet {
        self.window.eval(x)
    }

    fn blob_sum(&self, x: &[Jet; 3], ncomp: usize) -> Vec<Jet> {
        let mut out = vec![Jet::ZERO; ncomp];
        for b in &self.blobs {
            let d2 = (0..3).map(|i| (x[i] - b.centre[i]) * (x[i] - b.centre[i])).sum::<Jet>();
            let e = (d2 * (-0.5 / (b.sigma * b.sigma))).exp();
            for c in 0..ncomp {
                out[c] += e * b.amp[c];
            }
        }
        out
    }

    pub fn scalar_at(&self, x: &[Jet; 3]) -> Jet {
        let w = self.window(x);
        if w.v == 0.0 && w.g == [0.0; 3] && w.h == [0.0; 6] {
            return Jet::ZERO;
        }
        self.blob_sum(x, 1)[0] * w
    }

    pub fn form_at(&self, x: &[Jet; 3]) -> V3 {
        let w = self.window(x);
        if w.v == 0.0 && w.g == [0.0; 3] && w.h == [0.0; 6] {
            return [Jet::ZERO; 3];
        }
        // components scaled by ρ⁻¹ so that |Y|_g̊ is O(1) across the shell
        let s = self.blob_sum(x, 3);
        let ip = rho_jet(x).recip();
        [s[0] * w * ip, s[1] * w * ip, s[2] * w * ip]
    }

    /// Symmetric 2-tensor built from the blob amplitudes, scaled by ρ^power.
    pub fn sym2_at(&self, x: &[Jet; 3], power: i32) -> M3 {
        let w = self.window(x);
        if w.v == 0.0 && w.g == [0.0; 3] && w.h == [0.0; 6] {
            return [[Jet::ZERO; 3]; 3];
        }
        let s = self.blob_sum(x, 3);
        let c = w * rho_jet(x).powi(power);
        let (a, b, d) = (s[0] * c, s[1] * c, s[2] * c);
        [[a, d * 0.3, b * 0.2], [d * 0.3, b, a * 0.4], [b * 0.2, a * 0.4, d]]
    }

    pub fn sym2_field(&self, rank: (u8, u8), power: i32) -> TensorField {
        let me = self.clone();
        TensorField::sym2(rank, move |x| me.sym2_at(x, power))
    }

    pub fn scalar_field(&self) -> TensorField {
        let me = self.clone();
        TensorField::scalar(move |x| me.scalar_at(x))
    }

    pub fn form_field(&self) -> TensorField {
        let me = self.clone();
        TensorField::form(move |x| me.form_at(x))
    }
}

#[derive(Clone, Debug)]
pub struct FamilySpec {
    pub seed: u64,
    pub size: usize,
    pub support: (f64, f64),
    pub blobs: usize,
    pub window: WindowKind,
    /// Blob widths drawn from this range, in units of the support width.
    pub sigma: (f64, f64),
}

impl FamilySpec {
    pub fn new(seed: u64, size: usize, support: (f64, f64), blobs: usize, window: WindowKind) -> FamilySpec {
        FamilySpec { seed, size, support, blobs, window, sigma: (0.15, 0.5) }
    }

    pub fn with_sigma(mut self, lo: f64, hi: f64) -> FamilySpec {
        self.sigma = (lo, hi);
        self
    }
}

/// Reproducible blob fields whose centres lie in the support shell. `Step`
/// keeps the fields flat near the inner sphere, `Cap` and `Shell` use the
/// polynomial windows on `support`.
pub fn blob_family(spec: &FamilySpec) -> Vec<BlobField> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (a, b) = spec.support;
    let width = b - a;
    let window = match spec.window {
        WindowKind::Bump => Window::Bump(a, b),
        WindowKind::Step => Window::Step { flat: a + 0.25 * width, end: b },
        WindowKind::Cap => Window::Cap { radius: b, power: 4 },
        WindowKind::Shell => Window::Shell { inner: a, outer: b, power: 4 },
    };
    (0..spec.size)
        .map(|_| {
            let blobs = (0..spec.blobs)
                .map(|_| {
                    let r = a + width * rng.gen_range(0.2..0.8);
                    let ct: f64 = rng.gen_range(-1.0..1.0);
                    let ph: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let st = (1.0 - ct * ct).sqrt();
                    Blob {
                        centre: [r * st * ph.cos(), r * st * ph.sin(), r * ct],
                        sigma: width * rng.gen_range(spec.sigma.0..spec.sigma.1),
                        amp: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    }
                })
                .collect();
            BlobField { blobs, window }
        })
        .collect()
}

pub fn scalar_family(spec: &FamilySpec) -> Vec<TensorField> {
    blob_family(spec).iter().map(|b| b.scalar_field()).collect()
}

pub fn form_family(spec: &FamilySpec) -> Vec<TensorField> {
    blob_family(spec).iter().map(|b| b.form_field()).collect()
}

/// ρ^a Y_rot cut to (lo, hi): rotation forms damped towards infinity.
pub fn damped_rotation(axis: usize, a: f64, lo: f64, hi: f64) -> TensorField {
    TensorField::form(move |x| {
        let w = radial_window(x, lo, hi) * rho_jet(x).powf(a);
        let y = rotation_form(x, axis);
        [y[0] * w, y[1] * w, y[2] * w]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_are_smooth_and_supported() {
        let x = Jet::coords([0.5, 0.1, 0.0]);
        let w = radial_window(&x, 0.3, 0.8);
        assert!(w.v > 0.0 && w.v <= 1.0);
        let far = Jet::coords([0.85, 0.0, 0.0]);
        assert_eq!(radial_window(&far, 0.3, 0.8).v, 0.0);
        let near = Jet::coords([0.2, 0.0, 0.0]);
        assert_eq!(inner_window(&near, 0.25, 0.5).v, 1.0);
        let s = smooth_step(Jet::cst(0.5));
        assert!((s.v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn families_are_reproducible() {
        let spec = FamilySpec::new(7, 3, (0.3, 0.8), 2, WindowKind::Bump);
        let a = blob_family(&spec);
        let b = blob_family(&spec);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
