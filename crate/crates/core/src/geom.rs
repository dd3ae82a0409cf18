//! Geometric primitives shared by every other module: points, point clouds,
//! pinhole cameras and the ring of viewpoints used to render training views.
//!
//! Cameras follow the usual computer-vision convention: camera-space `x`
//! points right, `y` points down and `z` points forward along the optical
//! axis. A camera stores the world-to-camera rigid transform `p_c = R p + t`.

use std::ops::{Add, Index, Mul, Neg, Sub};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Point3 {
        self * (1.0 / self.norm())
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    pub fn distance_squared(self, other: Point3) -> f64 {
        let d = self - other;
        d.dot(d)
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// An ordered set of points in canonical object coordinates.
///
/// Point order carries no geometric meaning; it only matters for indexing
/// (view-based sampling results, EMD assignments).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from a flat `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(data: &[f64]) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::shape(
                "PointCloud::from_flat",
                format!("length {} is not a multiple of 3", data.len()),
            ));
        }
        Self::new(
            data.chunks_exact(3)
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.to_array()).collect()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len().max(1) as f64;
        let sum = self
            .points
            .iter()
            .fold(Point3::ORIGIN, |acc, &p| acc + p);
        sum * (1.0 / n)
    }

    /// Points at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Concatenates clouds in order.
    pub fn concat<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>) -> PointCloud {
        PointCloud {
            points: clouds
                .into_iter()
                .flat_map(|c| c.points.iter().copied())
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }
}

impl Index<usize> for PointCloud {
    type Output = Point3;
    fn index(&self, i: usize) -> &Point3 {
        &self.points[i]
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(r0: Point3, r1: Point3, r2: Point3) -> Mat3 {
        Mat3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    /// Rotation by `angle` radians about the `z` axis.
    pub fn rotation_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `angle` radians about the `y` axis.
    pub fn rotation_y(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    /// Rotation by `angle` radians about the `x` axis.
    pub fn rotation_x(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let m = &self.0;
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_rotation(&self, tol: f64) -> bool {
        let rrt = self.mul(&self.transpose());
        let orthonormal = (0..3).all(|i| {
            (0..3).all(|j| {
                let expect = if i == j { 1.0 } else { 0.0 };
                (rrt.0[i][j] - expect).abs() <= tol
            })
        });
        orthonormal && (self.determinant() - 1.0).abs() <= tol
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Point3,
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Point3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -rt.apply(self.translation))
    }

    pub fn apply_cloud(&self, pc: &PointCloud) -> PointCloud {
        pc.map(|p| self.apply(p))
    }
}

/// Pinhole camera: world-to-camera extrinsics plus intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    rotation: Mat3,
    translation: Point3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// Tolerance on `R Rᵀ = I` and `det R = 1` for camera rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Camera-space depths below this magnitude cannot be projected.
pub const MIN_DEPTH: f64 = 1e-12;

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Mat3,
        translation: Point3,
        focal: (f64, f64),
        principal: (f64, f64),
        resolution: (usize, usize),
    ) -> Result<Self> {
        if !rotation.is_rotation(ROTATION_TOLERANCE) {
            return Err(Error::InvalidArgument(
                "camera rotation is not a proper orthonormal matrix".into(),
            ));
        }
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(Error::InvalidArgument(format!(
                "camera resolution {}x{} must be at least 1x1",
                resolution.0, resolution.1
            )));
        }
        let finite = [focal.0, focal.1, principal.0, principal.1]
            .iter()
            .all(|v| v.is_finite())
            && translation.is_finite();
        if !finite || focal.0 <= 0.0 || focal.1 <= 0.0 {
            return Err(Error::InvalidArgument(
                "camera intrinsics must be finite with positive focal lengths".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
            fx: focal.0,
            fy: focal.1,
            cx: principal.0,
            cy: principal.1,
            width: resolution.0,
            height: resolution.1,
        })
    }

    /// Camera at `eye` looking at `target`, with world `+y` as the up
    /// direction. The principal point sits at the image center.
    pub fn look_at(
        eye: Point3,
        target: Point3,
        focal: f64,
        resolution: (usize, usize),
    ) -> Result<Self> {
        let forward = (target - eye).normalized();
        let up = Point3::new(0.0, 1.0, 0.0);
        let right = forward.cross(up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidArgument(
                "look_at direction is parallel to the up vector".into(),
            ));
        }
        let right = right.normalized();
        let down = forward.cross(right);
        let rotation = Mat3::from_rows(right, down, forward);
        let translation = -rotation.apply(eye);
        Self::new(
            rotation,
            translation,
            (focal, focal),
            (resolution.0 as f64 / 2.0, resolution.1 as f64 / 2.0),
            resolution,
        )
    }

    pub fn rotation(&self) -> Mat3 {
        self.rotation
    }

    pub fn translation(&self) -> Point3 {
        self.translation
    }

    pub fn extrinsics(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        self.extrinsics().inverse().translation
    }

    pub fn to_camera(&self, p: Point3) -> Point3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn to_world(&self, p: Point3) -> Point3 {
        self.extrinsics().inverse().apply(p)
    }

    /// Same intrinsics with a new resolution; the principal point and focal
    /// length are rescaled so the field of view is preserved.
    pub fn with_resolution(&self, width: usize, height: usize) -> Result<Camera> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera::new(
            self.rotation,
            self.translation,
            (self.fx * sx, self.fy * sy),
            (self.cx * sx, self.cy * sy),
            (width, height),
        )
    }

    /// Re-expresses the camera for a world frame moved by `g`: if world points
    /// are mapped by `g`, the returned camera sees them exactly as `self` saw
    /// the originals.
    pub fn conjugate(&self, g: &RigidTransform) -> Result<Camera> {
        let inv = g.inverse();
        let rotation = self.rotation.mul(&inv.rotation);
        let translation = self.rotation.apply(inv.translation) + self.translation;
        Camera::new(
            rotation,
            translation,
            (self.fx, self.fy),
            (self.cx, self.cy),
            (self.width, self.height),
        )
    }
}

/// Pixel coordinates and camera-space depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Pinhole projection of a world point.
pub fn project(p: Point3, cam: &Camera) -> Result<Projection> {
    let pc = cam.to_camera(p);
    project_camera_space(pc, cam)
}

pub(crate) fn project_camera_space(pc: Point3, cam: &Camera) -> Result<Projection> {
    if pc.z.abs() < MIN_DEPTH {
        return Err(Error::DegenerateDepth(pc.z));
    }
    Ok(Projection {
        u: cam.fx * pc.x / pc.z + cam.cx,
        v: cam.fy * pc.y / pc.z + cam.cy,
        depth: pc.z,
    })
}

/// Maps every point into the camera frame.
pub fn transform_to_camera(pc: &PointCloud, cam: &Camera) -> PointCloud {
    pc.map(|p| cam.to_camera(p))
}

/// Viewpoints on a horizontal circle around the object with a random
/// elevation per view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRing {
    pub view_count: usize,
    /// Elevation range in degrees, `(min, max)`.
    pub longitudinal_range: (f64, f64),
    pub radius: f64,
    pub focal: f64,
    pub resolution: (usize, usize),
    /// Rotate the whole ring by a random azimuth offset in `[0, 360/view_count)`.
    pub random_phase: bool,
    pub seed: u64,
}

impl Default for ViewRing {
    fn default() -> Self {
        Self {
            view_count: 8,
            longitudinal_range: (-20.0, 40.0),
            radius: 3.0,
            focal: 64.0,
            resolution: (64, 64),
            random_phase: true,
            seed: 0,
        }
    }
}

impl ViewRing {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.longitudinal_range;
        if self.view_count == 0 {
            return Err(Error::InvalidArgument("view_count must be >= 1".into()));
        }
        if !(lo <= hi) || lo <= -90.0 || hi >= 90.0 {
            return Err(Error::InvalidArgument(format!(
                "longitudinal range [{lo}, {hi}] must be ordered and inside (-90, 90)"
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidArgument("ring radius must be positive".into()));
        }
        Ok(())
    }

    /// Camera for a given azimuth and elevation, both in degrees.
    pub fn camera_at(&self, azimuth_deg: f64, elevation_deg: f64) -> Result<Camera> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let eye = Point3::new(
            self.radius * el.cos() * az.sin(),
            self.radius * el.sin(),
            self.radius * el.cos() * az.cos(),
        );
        Camera::look_at(eye, Point3::ORIGIN, self.focal, self.resolution)
    }

    /// The canonical viewpoint: azimuth 0, elevation 0 (on the `+z` axis).
    pub fn canonical_camera(&self) -> Result<Camera> {
        self.camera_at(0.0, 0.0)
    }
}

/// Azimuth and elevation (degrees) of each sampled view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewAngles {
    pub azimuth: f64,
    pub elevation: f64,
}

/// Draws the ring's view angles from `rng`.
pub fn sample_view_angles<R: Rng + ?Sized>(ring: &ViewRing, rng: &mut R) -> Result<Vec<ViewAngles>> {
    ring.validate()?;
    let step = 360.0 / ring.view_count as f64;
    let phase = if ring.random_phase {
        rng.gen::<f64>() * step
    } else {
        0.0
    };
    let (lo, hi) = ring.longitudinal_range;
    Ok((0..ring.view_count)
        .map(|k| {
            let elevation = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            ViewAngles {
                azimuth: phase + k as f64 * step,
                elevation,
            }
        })
        .collect())
}

/// Cameras at uniformly spaced azimuths with a random elevation each, all
/// looking at the origin.
pub fn sample_view_ring<R: Rng + ?Sized>(ring: &ViewRing, rng: &mut R) -> Result<Vec<Camera>> {
    sample_view_angles(ring, rng)?
        .into_iter()
        .map(|a| ring.camera_at(a.azimuth, a.elevation))
        .collect()
}
