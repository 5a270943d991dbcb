use nalgebra::{
    Isometry3, Matrix3, Point3, Quaternion, Rotation3, Translation3, Unit, UnitQuaternion, Vector3,
};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::GeometryError;

/// World "up" in the robot base frame.
pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Rigid pose: position in meters, orientation as a unit quaternion.
///
/// Serialized as `{"position": [x, y, z], "orientation": [w, x, y, z]}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose6D {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    /// Local +X, +Y and +Z axes expressed in the parent frame.
    pub fn x_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::x()
    }

    pub fn y_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::y()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * v
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (p - self.position)
    }

    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
            && self.orientation.coords.iter().all(|c| c.is_finite())
    }

    /// Pose at `position` whose +Z axis is `axis`, with roll fixed by
    /// [`approach_frame`].
    pub fn looking_along(
        position: Vector3<f64>,
        axis: &Vector3<f64>,
    ) -> Result<Pose6D, GeometryError> {
        Ok(Pose6D::new(position, approach_frame(axis)?))
    }

    pub fn point(&self) -> Point3<f64> {
        Point3::from(self.position)
    }
}

/// Rotation mapping local +Z onto `axis`.
///
/// Roll is fixed by taking local +X as the normalized projection of
/// [`WORLD_UP`] onto the plane orthogonal to `axis`. Within 1° of world up
/// (or down) the projection of world +X is used instead.
pub fn approach_frame(axis: &Vector3<f64>) -> Result<UnitQuaternion<f64>, GeometryError> {
    let norm = axis.norm();
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(GeometryError::DegenerateOrientation(norm));
    }
    let z = axis / norm;
    let reference = if z.dot(&WORLD_UP).abs() >= 1.0_f64.to_radians().cos() {
        Vector3::x()
    } else {
        WORLD_UP
    };
    let x = (reference - z * z.dot(&reference)).normalize();
    let y = z.cross(&x);
    let rotation = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Ok(UnitQuaternion::from_rotation_matrix(&rotation))
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    orientation: [f64; 4],
}

impl Serialize for Pose6D {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.orientation.quaternion();
        PoseRepr {
            position: [self.position.x, self.position.y, self.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose6D {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let [w, x, y, z] = repr.orientation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(serde::de::Error::custom(format!(
                "orientation quaternion norm {norm} is not 1"
            )));
        }
        Ok(Pose6D::new(
            Vector3::from(repr.position),
            Unit::new_normalize(q),
        ))
    }
}
