//! Planar vectors, 2x2 matrices and `libm` wrappers.

use core::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

#[inline]
pub fn sqrt(a: f64) -> f64 {
    libm::sqrt(a)
}
#[inline]
pub fn exp(a: f64) -> f64 {
    libm::exp(a)
}
#[inline]
pub fn ln(a: f64) -> f64 {
    libm::log(a)
}
#[inline]
pub fn sin(a: f64) -> f64 {
    libm::sin(a)
}
#[inline]
pub fn cos(a: f64) -> f64 {
    libm::cos(a)
}
#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}
#[inline]
pub fn asin(a: f64) -> f64 {
    libm::asin(a)
}

pub const PI: f64 = core::f64::consts::PI;
pub const TAU: f64 = core::f64::consts::TAU;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(from = "[f64; 2]", into = "[f64; 2]")
)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at polar angle `theta`.
    #[inline]
    pub fn polar(theta: f64) -> Self {
        Vec2::new(cos(theta), sin(theta))
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    #[inline]
    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Counter-clockwise rotation by a right angle.
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn angle(self) -> f64 {
        atan2(self.y, self.x)
    }

    /// `self / |self|`, or zero for the zero vector.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    /// Radial projection onto the closed ball of radius `radius` about the origin.
    pub fn clamp_norm(self, radius: f64) -> Vec2 {
        let n = self.norm();
        if n <= radius {
            self
        } else if radius <= 0.0 {
            Vec2::ZERO
        } else {
            let mut k = radius / n;
            let mut p = self * k;
            while p.norm() > radius {
                k *= 1.0 - f64::EPSILON;
                p = self * k;
            }
            p
        }
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    #[inline]
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

/// Row-major 2x2 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")
)]
pub struct Mat2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl From<[[f64; 2]; 2]> for Mat2 {
    fn from(a: [[f64; 2]; 2]) -> Self {
        Mat2::new(a[0][0], a[0][1], a[1][0], a[1][1])
    }
}

impl From<Mat2> for [[f64; 2]; 2] {
    fn from(m: Mat2) -> Self {
        [[m.a11, m.a12], [m.a21, m.a22]]
    }
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 { a11: 0.0, a12: 0.0, a21: 0.0, a22: 0.0 };
    pub const IDENTITY: Mat2 = Mat2 { a11: 1.0, a12: 0.0, a21: 0.0, a22: 1.0 };

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2 { a11, a12, a21, a22 }
    }

    pub fn scaled_identity(k: f64) -> Self {
        Mat2::new(k, 0.0, 0.0, k)
    }

    /// `a bᵀ`.
    pub fn outer(a: Vec2, b: Vec2) -> Self {
        Mat2::new(a.x * b.x, a.x * b.y, a.y * b.x, a.y * b.y)
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.a11 * v.x + self.a12 * v.y, self.a21 * v.x + self.a22 * v.y)
    }

    /// `selfᵀ v`.
    #[inline]
    pub fn tmul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.a11 * v.x + self.a21 * v.y, self.a12 * v.x + self.a22 * v.y)
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }

    pub fn scale(&self, k: f64) -> Mat2 {
        Mat2::new(self.a11 * k, self.a12 * k, self.a21 * k, self.a22 * k)
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        // largest eigenvalue of AᵀA
        let p = self.a11 * self.a11 + self.a21 * self.a21;
        let q = self.a11 * self.a12 + self.a21 * self.a22;
        let r = self.a12 * self.a12 + self.a22 * self.a22;
        let tr = p + r;
        let disc = sqrt(((p - r) * (p - r) + 4.0 * q * q).max(0.0));
        sqrt(((tr + disc) * 0.5).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal_and_rotation() {
        assert!((Mat2::new(3.0, 0.0, 0.0, -2.0).norm() - 3.0).abs() < 1e-14);
        let c = cos(0.3);
        let s = sin(0.3);
        assert!((Mat2::new(c, -s, s, c).norm() - 1.0).abs() < 1e-14);
        assert!((Mat2::new(1.0, 1.0, 0.0, 1.0).norm() - 1.618_033_988_749_895).abs() < 1e-12);
    }

    #[test]
    fn clamp_norm_stays_inside() {
        let p = Vec2::new(3.0, 4.0).clamp_norm(1.0);
        assert!(p.norm() <= 1.0);
        assert!((p.x - 0.6).abs() < 1e-15 && (p.y - 0.8).abs() < 1e-15);
    }
}
