//! Quaternion to rotation-matrix map and its derivative.
//!
//! The map accepts any nonzero quaternion: `R(q) = M(q) / |q|^2` where `M` is
//! the usual quadratic form, which equals the rotation of `q / |q|`.

use std::ops::Mul;

use crate::error::{Error, Result};
use crate::model::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Quaternion<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm_squared(&self) -> T {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn normalized(self) -> Result<Self> {
        let n2 = self.norm_squared();
        if !(n2 > T::zero()) || !n2.is_finite() {
            return Err(Error::Argument(
                "cannot normalize a zero or non-finite quaternion".into(),
            ));
        }
        let s = n2.sqrt().recip();
        Ok(Self::new(self.w * s, self.x * s, self.y * s, self.z * s))
    }

    /// Rotates `v` by the sandwich product `q v q*` of the normalized quaternion.
    pub fn rotate(self, v: [T; 3]) -> Result<[T; 3]> {
        let q = self.normalized()?;
        let p = Quaternion::new(T::zero(), v[0], v[1], v[2]);
        let r = q * p * q.conjugate();
        Ok([r.x, r.y, r.z])
    }
}

impl<T: Scalar> Mul for Quaternion<T> {
    type Output = Self;

    fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

fn quadratic_form<T: Scalar>(q: &Quaternion<T>) -> [[T; 3]; 3] {
    let two = T::lit(2.0);
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [
            w * w + x * x - y * y - z * z,
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            w * w - x * x + y * y - z * z,
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            w * w - x * x - y * y + z * z,
        ],
    ]
}

/// Rotation matrix of `q / |q|`. Errors on the zero quaternion.
pub fn quaternion_to_rotation<T: Scalar>(q: &Quaternion<T>) -> Result<[[T; 3]; 3]> {
    let n2 = q.norm_squared();
    if !(n2 > T::zero()) || !n2.is_finite() {
        return Err(Error::Argument(
            "zero or non-finite quaternion has no rotation".into(),
        ));
    }
    let s = n2.recip();
    let m = quadratic_form(q);
    let mut r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = m[i][j] * s;
        }
    }
    Ok(r)
}

/// Chain rule through [`quaternion_to_rotation`]: given `dL/dR`, returns `dL/dq`
/// with respect to the unnormalized quaternion.
pub fn rotation_backward<T: Scalar>(q: &Quaternion<T>, grad_r: &[[T; 3]; 3]) -> [T; 4] {
    let two = T::lit(2.0);
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let s = q.norm_squared().recip();
    let m = quadratic_form(q);
    // dM/dq_k for k = w, x, y, z
    let dm: [[[T; 3]; 3]; 4] = [
        [[w, -z, y], [z, w, -x], [-y, x, w]],
        [[x, y, z], [y, -x, -w], [z, w, -x]],
        [[-y, x, w], [x, y, z], [-w, z, -y]],
        [[-z, -w, x], [w, -z, y], [x, y, z]],
    ];
    let qs = [w, x, y, z];
    let mut g_m_dot = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            g_m_dot = g_m_dot + grad_r[i][j] * m[i][j];
        }
    }
    let mut out = [T::zero(); 4];
    for k in 0..4 {
        let mut acc = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                acc = acc + grad_r[i][j] * dm[k][i][j];
            }
        }
        // d(s M)/dq_k = s dM/dq_k - 2 q_k s^2 M, with dM entries carrying a factor 2.
        out[k] = two * s * acc - two * qs[k] * s * s * g_m_dot;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> bool {
        (0..3).all(|i| (0..3).all(|j| (a[i][j] - b[i][j]).abs() < 1e-12))
    }

    #[test]
    fn identity_and_half_turn() {
        let i = quaternion_to_rotation(&Quaternion::<f64>::identity()).unwrap();
        assert!(close(
            i,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        ));
        let x = quaternion_to_rotation(&Quaternion::new(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert!(close(
            x,
            [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]
        ));
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(quaternion_to_rotation(&Quaternion::new(0.0f64, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn scale_invariant() {
        let q = Quaternion::new(0.3, -0.2, 0.9, 0.1);
        let q2 = Quaternion::new(0.6, -0.4, 1.8, 0.2);
        assert!(close(
            quaternion_to_rotation(&q).unwrap(),
            quaternion_to_rotation(&q2).unwrap()
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let q = Quaternion::new(0.7, -0.3, 0.4, 1.1);
        let g = [[0.3, -1.0, 0.2], [0.5, 0.1, -0.7], [1.3, 0.4, 0.9]];
        let loss = |q: &Quaternion<f64>| {
            let r = quaternion_to_rotation(q).unwrap();
            (0..3)
                .map(|i| (0..3).map(|j| r[i][j] * g[i][j]).sum::<f64>())
                .sum::<f64>()
        };
        let analytic = rotation_backward(&q, &g);
        let h = 1e-6;
        for k in 0..4 {
            let mut a = q.to_array();
            let mut b = q.to_array();
            a[k] += h;
            b[k] -= h;
            let fd =
                (loss(&Quaternion::from_array(a)) - loss(&Quaternion::from_array(b))) / (2.0 * h);
            assert!(
                (fd - analytic[k]).abs() < 1e-8,
                "k={k}: {fd} vs {}",
                analytic[k]
            );
        }
    }
}
