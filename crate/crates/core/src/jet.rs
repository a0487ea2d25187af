//! Second-order Taylor jets in three variables.
//!
//! A [`Jet`] carries a value, its gradient and its (symmetric) Hessian with
//! respect to Cartesian coordinates. `ord` counts how many derivative orders
//! are trustworthy: differentiating with [`Jet::d`] shifts the data down and
//! lowers the order, and binary operations keep the minimum.

use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 3],
    pub h: [f64; 6],
    pub ord: u8,
}

/// Packed index of the symmetric pair (i, j).
#[inline]
pub const fn sym(i: usize, j: usize) -> usize {
    const T: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    T[i][j]
}

impl Default for Jet {
    fn default() -> Self {
        Jet::ZERO
    }
}

impl Jet {
    pub const ZERO: Jet = Jet { v: 0.0, g: [0.0; 3], h: [0.0; 6], ord: 2 };

    #[inline]
    pub const fn cst(v: f64) -> Jet {
        Jet { v, g: [0.0; 3], h: [0.0; 6], ord: 2 }
    }

    /// The coordinate function x_i evaluated at `x`.
    #[inline]
    pub fn var(x: f64, i: usize) -> Jet {
        let mut g = [0.0; 3];
        g[i] = 1.0;
        Jet { v: x, g, h: [0.0; 6], ord: 2 }
    }

    pub fn coords(x: [f64; 3]) -> [Jet; 3] {
        [Jet::var(x[0], 0), Jet::var(x[1], 1), Jet::var(x[2], 2)]
    }

    #[inline]
    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.h[sym(i, j)]
    }

    /// Partial derivative with respect to x_i.
    #[inline]
    pub fn d(&self, i: usize) -> Jet {
        debug_assert!(self.ord >= 1, "derivative of an order-0 jet");
        Jet {
            v: self.g[i],
            g: [self.h[sym(i, 0)], self.h[sym(i, 1)], self.h[sym(i, 2)]],
            h: [0.0; 6],
            ord: self.ord.saturating_sub(1),
        }
    }

    /// Chain rule for a scalar function with value f, slope f1, curvature f2.
    #[inline]
    pub fn compose(&self, f: f64, f1: f64, f2: f64) -> Jet {
        let mut h = [0.0; 6];
        for i in 0..3 {
            for j in i..3 {
                let k = sym(i, j);
                h[k] = f1 * self.h[k] + f2 * self.g[i] * self.g[j];
            }
        }
        Jet {
            v: f,
            g: [f1 * self.g[0], f1 * self.g[1], f1 * self.g[2]],
            h,
            ord: self.ord,
        }
    }

    pub fn recip(&self) -> Jet {
        let r = 1.0 / self.v;
        self.compose(r, -r * r, 2.0 * r * r * r)
    }

    pub fn sqrt(&self) -> Jet {
        let s = self.v.sqrt();
        self.compose(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn exp(&self) -> Jet {
        let e = self.v.exp();
        self.compose(e, e, e)
    }

    pub fn ln(&self) -> Jet {
        let r = 1.0 / self.v;
        self.compose(self.v.ln(), r, -r * r)
    }

    pub fn powf(&self, p: f64) -> Jet {
        let a = self.v.powf(p - 2.0);
        self.compose(a * self.v * self.v, p * a * self.v, p * (p - 1.0) * a)
    }

    pub fn powi(&self, n: i32) -> Jet {
        match n {
            0 => Jet { ord: self.ord, ..Jet::cst(1.0) },
            1 => *self,
            _ => {
                let a = self.v.powi(n - 2);
                let nf = n as f64;
                self.compose(a * self.v * self.v, nf * a * self.v, nf * (nf - 1.0) * a)
            }
        }
    }

    pub fn acos(&self) -> Jet {
        let q = 1.0 - self.v * self.v;
        let s = q.sqrt();
        self.compose(self.v.acos(), -1.0 / s, -self.v / (q * s))
    }

    /// Two-argument arctangent atan2(y, x).
    pub fn atan2(y: &Jet, x: &Jet) -> Jet {
        let q = x.v * x.v + y.v * y.v;
        let fy = x.v / q;
        let fx = -y.v / q;
        let q2 = q * q;
        let fyy = -2.0 * x.v * y.v / q2;
        let fxx = 2.0 * x.v * y.v / q2;
        let fxy = (y.v * y.v - x.v * x.v) / q2;
        let mut h = [0.0; 6];
        for i in 0..3 {
            for j in i..3 {
                let k = sym(i, j);
                h[k] = fy * y.h[k]
                    + fx * x.h[k]
                    + fyy * y.g[i] * y.g[j]
                    + fxx * x.g[i] * x.g[j]
                    + fxy * (x.g[i] * y.g[j] + y.g[i] * x.g[j]);
            }
        }
        Jet {
            v: y.v.atan2(x.v),
            g: [
                fy * y.g[0] + fx * x.g[0],
                fy * y.g[1] + fx * x.g[1],
                fy * y.g[2] + fx * x.g[2],
            ],
            h,
            ord: x.ord.min(y.ord),
        }
    }

    pub fn with_ord(mut self, ord: u8) -> Jet {
        self.ord = ord;
        self
    }

    /// Flatten to the ten Taylor coefficients (value, gradient, packed Hessian).
    pub fn to_array(&self) -> [f64; 10] {
        let mut a = [0.0; 10];
        a[0] = self.v;
        a[1..4].copy_from_slice(&self.g);
        a[4..].copy_from_slice(&self.h);
        a
    }

    pub fn from_array(a: &[f64]) -> Jet {
        Jet {
            v: a[0],
            g: [a[1], a[2], a[3]],
            h: [a[4], a[5], a[6], a[7], a[8], a[9]],
            ord: 2,
        }
    }

    /// Unit jet selecting Taylor coefficient `k` (0..10).
    pub fn unit(k: usize) -> Jet {
        let mut a = [0.0; 10];
        a[k] = 1.0;
        Jet::from_array(&a)
    }
}

impl Add for Jet {
    type Output = Jet;
    #[inline]
    fn add(self, o: Jet) -> Jet {
        let mut r = self;
        r += o;
        r
    }
}

impl AddAssign for Jet {
    #[inline]
    fn add_assign(&mut self, o: Jet) {
        self.v += o.v;
        for i in 0..3 {
            self.g[i] += o.g[i];
        }
        for i in 0..6 {
            self.h[i] += o.h[i];
        }
        self.ord = self.ord.min(o.ord);
    }
}

impl Sub for Jet {
    type Output = Jet;
    #[inline]
    fn sub(self, o: Jet) -> Jet {
        let mut r = self;
        r -= o;
        r
    }
}

impl SubAssign for Jet {
    #[inline]
    fn sub_assign(&mut self, o: Jet) {
        self.v -= o.v;
        for i in 0..3 {
            self.g[i] -= o.g[i];
        }
        for i in 0..6 {
            self.h[i] -= o.h[i];
        }
        self.ord = self.ord.min(o.ord);
    }
}

impl Neg for Jet {
    type Output = Jet;
    #[inline]
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Mul for Jet {
    type Output = Jet;
    #[inline]
    fn mul(self, b: Jet) -> Jet {
        let a = self;
        let mut h = [0.0; 6];
        for i in 0..3 {
            for j in i..3 {
                let k = sym(i, j);
                h[k] = a.h[k] * b.v + a.g[i] * b.g[j] + a.g[j] * b.g[i] + a.v * b.h[k];
            }
        }
        Jet {
            v: a.v * b.v,
            g: [
                a.g[0] * b.v + a.v * b.g[0],
                a.g[1] * b.v + a.v * b.g[1],
                a.g[2] * b.v + a.v * b.g[2],
            ],
            h,
            ord: a.ord.min(b.ord),
        }
    }
}

impl MulAssign for Jet {
    #[inline]
    fn mul_assign(&mut self, o: Jet) {
        *self = *self * o;
    }
}

impl Div for Jet {
    type Output = Jet;
    #[inline]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn add(mut self, c: f64) -> Jet {
        self.v += c;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn sub(mut self, c: f64) -> Jet {
        self.v -= c;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn mul(mut self, c: f64) -> Jet {
        self.v *= c;
        for x in self.g.iter_mut() {
            *x *= c;
        }
        for x in self.h.iter_mut() {
            *x *= c;
        }
        self
    }
}

impl MulAssign<f64> for Jet {
    #[inline]
    fn mul_assign(&mut self, c: f64) {
        *self = *self * c;
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn div(self, c: f64) -> Jet {
        self * (1.0 / c)
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    #[inline]
    fn add(self, j: Jet) -> Jet {
        j + self
    }
}

impl Sub<Jet> for f64 {
    type Output = Jet;
    #[inline]
    fn sub(self, j: Jet) -> Jet {
        -j + self
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    #[inline]
    fn mul(self, j: Jet) -> Jet {
        j * self
    }
}

impl Div<Jet> for f64 {
    type Output = Jet;
    #[inline]
    fn div(self, j: Jet) -> Jet {
        j.recip() * self
    }
}

impl Sum for Jet {
    fn sum<I: Iterator<Item = Jet>>(iter: I) -> Jet {
        iter.fold(Jet::ZERO, |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn([f64; 3]) -> f64, jf: impl Fn(&[Jet; 3]) -> Jet, x: [f64; 3]) {
        let j = jf(&Jet::coords(x));
        assert!((j.v - f(x)).abs() < 1e-12);
        let e = 1e-4;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += e;
            xm[i] -= e;
            let gi = (f(xp) - f(xm)) / (2.0 * e);
            assert!((gi - j.g[i]).abs() < 1e-6, "grad {i}: {gi} vs {}", j.g[i]);
            for k in 0..3 {
                let mut xpp = xp;
                let mut xpm = xp;
                let mut xmp = xm;
                let mut xmm = xm;
                xpp[k] += e;
                xpm[k] -= e;
                xmp[k] += e;
                xmm[k] -= e;
                let hik = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * e * e);
                assert!((hik - j.hess(i, k)).abs() < 1e-4, "hess {i}{k}: {hik} vs {}", j.hess(i, k));
            }
        }
    }

    #[test]
    fn elementary_functions_match_finite_differences() {
        let x = [0.3, -0.2, 0.5];
        fd_check(
            |x| (x[0] * x[1] + 2.0).sqrt() * (x[2] * 0.7).exp() / (1.0 + x[0] * x[0]),
            |j| (j[0] * j[1] + 2.0).sqrt() * (j[2] * 0.7).exp() / (j[0] * j[0] + 1.0),
            x,
        );
        fd_check(
            |x| (x[0] + 2.0).ln() * (x[1] + 1.5).powf(1.7) + (x[2]).acos(),
            |j| (j[0] + 2.0).ln() * (j[1] + 1.5).powf(1.7) + j[2].acos(),
            x,
        );
        fd_check(|x| x[1].atan2(x[0]), |j| Jet::atan2(&j[1], &j[0]), x);
        fd_check(|x| (x[0] - x[2]).powi(3), |j| (j[0] - j[2]).powi(3), x);
    }

    #[test]
    fn derivative_lowers_order() {
        let j = Jet::coords([1.0, 2.0, 3.0]);
        let f = j[0] * j[0] * j[1];
        let fx = f.d(0);
        assert_eq!(fx.ord, 1);
        assert!((fx.v - 4.0).abs() < 1e-15);
        assert!((fx.g[0] - 4.0).abs() < 1e-15);
        assert!((fx.g[1] - 2.0).abs() < 1e-15);
        assert_eq!((fx * f).ord, 1);
    }
}
