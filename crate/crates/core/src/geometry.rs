//! Quaternion and rigid-transform algebra, plus the rotation and transform
//! distances shared by the losses and the evaluation metrics.
//!
//! Quaternions are stored as `(w, x, y, z)`. A transform maps a point `p` to
//! `R p + t`, i.e. the rotation is applied first.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const NORM_EPS: f64 = 1e-12;

/// A rotation as a unit quaternion. `q` and `-q` are the same rotation and
/// every distance in this module treats them as equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes a raw `(w, x, y, z)` tuple.
    pub fn normalize(raw: [f64; 4]) -> Result<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < NORM_EPS {
            return Err(Error::DegenerateQuaternion(norm));
        }
        Ok(Self {
            w: raw[0] / norm,
            x: raw[1] / norm,
            y: raw[2] / norm,
            z: raw[3] / norm,
        })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if n < NORM_EPS {
            return Err(Error::DegenerateInput("zero rotation axis".into()));
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self::normalize([c, s * a.x, s * a.y, s * a.z])
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn neg(self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn conjugate(self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs`: rotate by `rhs`, then by `self`.
    pub fn mul(self, rhs: Self) -> Self {
        let [aw, ax, ay, az] = self.to_array();
        let [bw, bx, by, bz] = rhs.to_array();
        let raw = [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ];
        // Renormalize to stop drift over long composition chains.
        Self::normalize(raw).unwrap_or(Self::IDENTITY)
    }

    pub fn to_matrix(self) -> Mat3 {
        let [w, x, y, z] = self.to_array();
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Inverse of [`to_matrix`](Self::to_matrix). Rejects matrices that are
    /// not proper rotations (orthonormal, determinant +1) within 1e-5.
    pub fn from_matrix(m: &Mat3) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Mat3::identity()).amax();
        if ortho > 1e-5 {
            return Err(Error::InvalidRotation(format!(
                "columns not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        Self::normalize([q.w, q.i, q.j, q.k])
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.to_matrix() * v
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.w.abs().min(1.0).acos()
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;

    fn try_from(raw: [f64; 4]) -> Result<Self> {
        Self::normalize(raw)
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

/// Rotation followed by translation: `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    #[serde(rename = "q")]
    pub rotation: UnitQuaternion,
    #[serde(rename = "t", with = "vec3_array")]
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: Self = Self {
        rotation: UnitQuaternion::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: UnitQuaternion) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuaternion::IDENTITY, translation)
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ rhs`: applies `rhs` first.
    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            rotation: self.rotation.mul(rhs.rotation),
            translation: self.rotation.rotate(&rhs.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.conjugate();
        Self {
            rotation: inv,
            translation: -inv.rotate(&self.translation),
        }
    }

    /// The 12 free parameters `[R | t]` in row-major order.
    pub fn to_matrix_3x4(&self) -> [f64; 12] {
        let r = self.rotation.to_matrix();
        let t = self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(x, y, z))
    }
}

/// `min(|q1 - q2|, |q1 + q2|)`, in `[0, sqrt(2)]`.
pub fn dist_q(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let a = q1.to_array();
    let b = q2.to_array();
    let (mut minus, mut plus) = (0.0, 0.0);
    for i in 0..4 {
        minus += (a[i] - b[i]).powi(2);
        plus += (a[i] + b[i]).powi(2);
    }
    minus.min(plus).sqrt()
}

/// Rotation distance on matrices, via their quaternions.
pub fn dist_r(r1: &Mat3, r2: &Mat3) -> Result<f64> {
    Ok(dist_q(
        &UnitQuaternion::from_matrix(r1)?,
        &UnitQuaternion::from_matrix(r2)?,
    ))
}

/// Quaternion distance of the rotations plus the mean squared translation
/// error over the three axes.
pub fn dist_m(m1: &RigidTransform, m2: &RigidTransform) -> f64 {
    let dt = m1.translation - m2.translation;
    dist_q(&m1.rotation, &m2.rotation) + dt.norm_squared() / 3.0
}

/// Angle of the relative rotation `q1^-1 q2` in degrees, in `[0, 180]`.
pub fn angle_deg(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    // The scalar part of conj(q1) * q2 is the 4-D dot product.
    let dot: f64 = q1
        .to_array()
        .iter()
        .zip(q2.to_array())
        .map(|(a, b)| a * b)
        .sum();
    (2.0 * dot.abs().min(1.0).acos()).to_degrees()
}

/// Uniformly distributed rotation (normalized 4-D Gaussian).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let raw: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        if let Ok(q) = UnitQuaternion::normalize(raw) {
            return q;
        }
    }
}

/// Uniform rotation plus a translation with components uniform in
/// `[-bound, bound]`.
pub fn random_transform<R: Rng + ?Sized>(rng: &mut R, translation_bound: f64) -> RigidTransform {
    let rotation = random_rotation(rng);
    let translation = if translation_bound > 0.0 {
        Vec3::from_fn(|_, _| rng.random_range(-translation_bound..=translation_bound))
    } else {
        Vec3::zeros()
    };
    RigidTransform::new(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn rot_z(deg: f64) -> UnitQuaternion {
        UnitQuaternion::from_axis_angle(Vec3::z(), deg.to_radians()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            UnitQuaternion::normalize([2.0, 0.0, 0.0, 0.0]).unwrap().to_array(),
            [1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            UnitQuaternion::normalize([0.0, 3.0, 0.0, 0.0]).unwrap().to_array(),
            [0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            UnitQuaternion::normalize([1.0; 4]).unwrap().to_array(),
            [0.5; 4]
        );
        assert!(matches!(
            UnitQuaternion::normalize([0.0; 4]),
            Err(Error::DegenerateQuaternion(_))
        ));
    }

    #[test]
    fn matrix_examples() {
        assert_eq!(UnitQuaternion::IDENTITY.to_matrix(), Mat3::identity());
        let q = UnitQuaternion::normalize([0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(q.to_matrix(), Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0)));
    }

    #[test]
    fn matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let q = random_rotation(&mut rng);
            let back = UnitQuaternion::from_matrix(&q.to_matrix()).unwrap();
            assert!(dist_q(&q, &back) < 1e-6);
        }
    }

    #[test]
    fn rejects_non_rotations() {
        let shear = Mat3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            UnitQuaternion::from_matrix(&shear),
            Err(Error::InvalidRotation(_))
        ));
        let reflection = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(UnitQuaternion::from_matrix(&reflection).is_err());
    }

    #[test]
    fn compose_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_transform(&mut rng, 1.0);
        let c = t.compose(&RigidTransform::IDENTITY);
        assert!(dist_m(&c, &t) < 1e-12);

        let p = Vec3::new(0.3, -0.2, 0.9);
        let back = t.inverse().apply_point(&t.apply_point(&p));
        assert!((back - p).norm() < 1e-12);

        let m1 = RigidTransform::from_rotation(rot_z(90.0));
        let m2 = RigidTransform::IDENTITY;
        let m21 = m1.compose(&m2.inverse());
        assert!(dist_m(&m21, &m1) < 1e-12);
    }

    #[test]
    fn dist_q_examples() {
        let q = rot_z(33.0);
        assert_eq!(dist_q(&q, &q), 0.0);
        assert_close!(dist_q(&q, &q.neg()), 0.0, 1e-15);
        let i = UnitQuaternion::normalize([0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_close!(dist_q(&UnitQuaternion::IDENTITY, &i), 2f64.sqrt(), 1e-12);
    }

    #[test]
    fn dist_r_examples() {
        let r = rot_z(40.0).to_matrix();
        assert_close!(dist_r(&r, &r).unwrap(), 0.0, 1e-7);
        let half_turn = Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, 1.0));
        assert_close!(
            dist_r(&Mat3::identity(), &half_turn).unwrap(),
            2f64.sqrt(),
            1e-9
        );
    }

    #[test]
    fn dist_m_examples() {
        let q = rot_z(12.0);
        let a = RigidTransform::new(q, Vec3::zeros());
        let b = RigidTransform::new(q, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(dist_m(&a, &a), 0.0);
        assert_close!(dist_m(&a, &b), 1.0 / 3.0, 1e-12);
        let c = RigidTransform::new(q.neg(), Vec3::zeros());
        assert_close!(dist_m(&a, &c), 0.0, 1e-15);
    }

    #[test]
    fn angle_examples() {
        let q = rot_z(71.0);
        assert_close!(angle_deg(&q, &q), 0.0, 1e-6);
        assert_close!(angle_deg(&UnitQuaternion::IDENTITY, &rot_z(90.0)), 90.0, 1e-9);
        assert_close!(angle_deg(&q, &q.neg()), 0.0, 1e-6);
    }

    #[test]
    fn random_rotation_is_seeded() {
        let a = random_rotation(&mut ChaCha8Rng::seed_from_u64(5));
        let b = random_rotation(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn random_rotation_mean_matrix_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut acc = Mat3::zeros();
        for _ in 0..n {
            acc += random_rotation(&mut rng).to_matrix();
        }
        acc /= n as f64;
        assert!(acc.amax() < 0.05, "mean rotation matrix {acc}");
    }

    #[test]
    fn zero_bound_translation_is_exact() {
        let t = random_transform(&mut ChaCha8Rng::seed_from_u64(1), 0.0);
        assert_eq!(t.translation, Vec3::zeros());
        let t = random_transform(&mut ChaCha8Rng::seed_from_u64(1), 0.25);
        assert!(t.translation.amax() <= 0.25);
    }

    #[test]
    fn transform_json_schema() {
        let t = RigidTransform::new(rot_z(90.0), Vec3::new(0.1, 0.2, 0.3));
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("{\"q\":["), "{s}");
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["t"], serde_json::json!([0.1, 0.2, 0.3]));
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
