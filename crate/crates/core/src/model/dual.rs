//! Forward-mode dual numbers used to propagate exact partial derivatives
//! through the explicit algebraic chain of a single well.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Number of independent variables tracked per well.
pub const NV: usize = 8;

/// Index of each independent variable inside a gradient.
pub mod var {
    pub const M_G: usize = 0;
    pub const M_L: usize = 1;
    pub const W_G: usize = 2;
    pub const THETA_RES: usize = 3;
    pub const THETA_TOP: usize = 4;
    pub const P_PUMP: usize = 5;
    pub const V_O: usize = 6;
    pub const ALPHA: usize = 7;
}

/// Scalar abstraction so the same well equations serve value-only and
/// derivative evaluations.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(&self) -> f64;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; NV],
}

impl Dual {
    pub fn var(v: f64, idx: usize) -> Self {
        let mut d = [0.0; NV];
        d[idx] = 1.0;
        Dual { v, d }
    }

    #[inline]
    fn map(self, v: f64, scale: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= scale;
        }
        Dual { v, d }
    }
}

impl Real for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual { v, d: [0.0; NV] }
    }
    #[inline]
    fn val(&self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.map(r, 0.5 / r)
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Dual { v: self.v + o.v, d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a -= b;
        }
        Dual { v: self.v - o.v, d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        let mut d = [0.0; NV];
        for i in 0..NV {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let q = self.v / o.v;
        let mut d = [0.0; NV];
        for i in 0..NV {
            d[i] = (self.d[i] - q * o.d[i]) / o.v;
        }
        Dual { v: q, d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        self.map(-self.v, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: f64) -> Dual {
        Dual { v: self.v + o, d: self.d }
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: f64) -> Dual {
        Dual { v: self.v - o, d: self.d }
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: f64) -> Dual {
        self.map(self.v * o, o)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: f64) -> Dual {
        self.map(self.v / o, 1.0 / o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotient_and_sqrt_rules() {
        let x = Dual::var(4.0, 0);
        let y = Dual::var(2.0, 1);
        let f = (x / y).sqrt() * x;
        // f = x^{3/2} y^{-1/2}
        let dfx = 1.5 * 4f64.sqrt() / 2f64.sqrt();
        let dfy = -0.5 * 4f64.powf(1.5) * 2f64.powf(-1.5);
        assert!((f.v - 8f64.sqrt() * 2.0).abs() < 1e-14);
        assert!((f.d[0] - dfx).abs() < 1e-14);
        assert!((f.d[1] - dfy).abs() < 1e-14);
    }
}
