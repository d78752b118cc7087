//! Scalar abstraction and small vector types shared by the geometry kernels.
//!
//! The developability error of one grid point depends on the nine points of
//! its 3x3 stencil only. Evaluating the same kernel with [`Dual9`] (a value
//! plus a 9-slot derivative vector) therefore yields the exact gradient of the
//! per-point term with a single pass, which is then scattered into the global
//! gradient.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar with just enough surface for the geometry kernels.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    /// The underlying value (drops derivative information).
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// Forward-mode dual number carrying derivatives w.r.t. 9 seed variables.
#[derive(Clone, Copy, Debug)]
pub struct Dual9 {
    pub v: f64,
    pub d: [f64; 9],
}

impl Dual9 {
    #[inline]
    pub fn seeded(v: f64, slot: usize) -> Self {
        let mut d = [0.0; 9];
        d[slot] = 1.0;
        Dual9 { v, d }
    }
}

impl Add for Dual9 {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut d = self.d;
        for k in 0..9 {
            d[k] += rhs.d[k];
        }
        Dual9 { v: self.v + rhs.v, d }
    }
}

impl Sub for Dual9 {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut d = self.d;
        for k in 0..9 {
            d[k] -= rhs.d[k];
        }
        Dual9 { v: self.v - rhs.v, d }
    }
}

impl Mul for Dual9 {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; 9];
        for k in 0..9 {
            d[k] = self.d[k] * rhs.v + self.v * rhs.d[k];
        }
        Dual9 { v: self.v * rhs.v, d }
    }
}

impl Div for Dual9 {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.v;
        let mut d = [0.0; 9];
        for k in 0..9 {
            d[k] = (self.d[k] - self.v * inv * rhs.d[k]) * inv;
        }
        Dual9 { v: self.v * inv, d }
    }
}

impl Neg for Dual9 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = self.d;
        for k in 0..9 {
            d[k] = -d[k];
        }
        Dual9 { v: -self.v, d }
    }
}

impl Real for Dual9 {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual9 { v, d: [0.0; 9] }
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let scale = 0.5 / s;
        let mut d = self.d;
        for k in 0..9 {
            d[k] *= scale;
        }
        Dual9 { v: s, d }
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        let scale = 1.0 - t * t;
        let mut d = self.d;
        for k in 0..9 {
            d[k] *= scale;
        }
        Dual9 { v: t, d }
    }
}

/// 3D vector over any [`Real`] scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct V3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Plain f64 3-vector, the common case.
pub type Vec3 = V3<f64>;

impl<T: Real> V3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        V3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        V3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        V3::new(self.x * s, self.y * s, self.z * s)
    }

    #[inline]
    pub fn normalized(self) -> Self {
        let n = self.norm();
        V3::new(self.x / n, self.y / n, self.z / n)
    }
}

impl<T: Real> Add for V3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        V3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for V3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        V3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = V3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub fn lift<T: Real>(self) -> V3<T> {
        V3::new(T::constant(self.x), T::constant(self.y), T::constant(self.z))
    }
}
