//! Forward-mode dual numbers carrying one directional derivative.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// A value paired with its derivative along a single input direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualScalar {
    pub value: f64,
    pub tangent: f64,
}

impl DualScalar {
    pub const fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }

    /// A constant: zero tangent.
    pub const fn constant(value: f64) -> Self {
        Self { value, tangent: 0.0 }
    }

    /// The seeded input variable: unit tangent.
    pub const fn variable(value: f64) -> Self {
        Self { value, tangent: 1.0 }
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        Self::new(t, (1.0 - t * t) * self.tangent)
    }

    pub fn square(self) -> Self {
        Self::new(self.value * self.value, 2.0 * self.value * self.tangent)
    }

    pub fn is_finite(self) -> bool {
        self.value.is_finite() && self.tangent.is_finite()
    }
}

impl From<f64> for DualScalar {
    fn from(value: f64) -> Self {
        Self::constant(value)
    }
}

impl Add for DualScalar {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.value + rhs.value, self.tangent + rhs.tangent)
    }
}

impl Sub for DualScalar {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.value - rhs.value, self.tangent - rhs.tangent)
    }
}

impl Mul for DualScalar {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.value * rhs.value, self.value * rhs.tangent + rhs.value * self.tangent)
    }
}

impl Div for DualScalar {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.value;
        Self::new(self.value * inv, (self.tangent * rhs.value - self.value * rhs.tangent) * inv * inv)
    }
}

impl Neg for DualScalar {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.value, -self.tangent)
    }
}

impl Mul<f64> for DualScalar {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.value * rhs, self.tangent * rhs)
    }
}

impl Add<f64> for DualScalar {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        Self::new(self.value + rhs, self.tangent)
    }
}
