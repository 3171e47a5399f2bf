//! Pinhole camera geometry: sensor-to-camera transforms, point-cloud to
//! depth-grid projection with a z-buffer, depth-grid unprojection, and
//! analytic synthetic scenes used as projection oracles.

use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DepthGrid;

/// Projected coordinates within this distance below an integer are
/// assigned to that integer's pixel. Absorbs round-off when a point
/// produced by [`unproject_depth`] is projected again.
pub const PIXEL_SNAP: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Unit aspect ratio with the principal point at `(width / 2, height / 2)`.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidIntrinsics(msg));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            ));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be non-zero".into());
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx = {} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy = {} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Continuous pixel coordinates of a camera-frame point, `None` when
    /// the point is not strictly in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Pixel that a camera-frame point falls into, if any.
    pub fn pixel_of(&self, p: &Vector3<f64>) -> Option<(usize, usize)> {
        let (u, v) = self.project(p)?;
        let col = (u + PIXEL_SNAP).floor();
        let row = (v + PIXEL_SNAP).floor();
        if !(col >= 0.0 && row >= 0.0 && col < self.width as f64 && row < self.height as f64) {
            return None;
        }
        Some((col as usize, row as usize))
    }

    /// Camera-frame point at pixel `(x, y)` with depth `z`.
    pub fn unproject(&self, x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) * z / self.fx, (y - self.cy) * z / self.fy, z)
    }
}

/// Sensor-to-camera pose `p_cam = R * p_sensor + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if gram_err > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {gram_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!("det(R) = {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Result<Self> {
        let axis = Unit::try_new(axis, 1e-12).ok_or_else(|| Error::InvalidTransform("zero rotation axis".into()))?;
        let rotation = Rotation3::from_axis_angle(&axis, angle).into_inner();
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ rhs`: applies `rhs` first, then `self`.
    pub fn compose(&self, rhs: &Self) -> Self {
        Self {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Sensor-frame points. Every coordinate is finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinitePoint { index });
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-pixel camera-frame coordinates. Valid pixels have `z > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    width: usize,
    height: usize,
    coords: Vec<Vector3<f64>>,
    mask: Vec<bool>,
}

impl PointMap {
    pub fn new(width: usize, height: usize, coords: Vec<Vector3<f64>>, mask: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if coords.len() != n || mask.len() != n {
            return Err(Error::InvalidGrid(format!(
                "{width}x{height} point map needs {n} entries, got {} coords and {} mask",
                coords.len(),
                mask.len()
            )));
        }
        for (i, (c, &m)) in coords.iter().zip(&mask).enumerate() {
            if m && !(c.iter().all(|v| v.is_finite()) && c.z > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "valid point-map pixel {i} needs finite coordinates with z > 0"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            coords,
            mask,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coords(&self) -> &[Vector3<f64>] {
        &self.coords
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        let i = y * self.width + x;
        self.mask[i].then(|| self.coords[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.coords.iter().map(|c| c * factor).collect(),
            self.mask.clone(),
        )
    }
}

/// Projects a sensor-frame cloud into a depth grid.
///
/// Points behind the camera or outside the image are dropped. When several
/// points land in the same pixel the smallest depth wins; exact depth ties
/// keep the earliest point.
pub fn project_points(cloud: &PointCloud, pose: &RigidTransform, cam: &CameraIntrinsics) -> Result<DepthGrid> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cam.validate()?;
    let n = cam.width * cam.height;
    let mut depth = vec![f64::INFINITY; n];
    let mut mask = vec![false; n];
    for p in cloud.points() {
        let pc = pose.apply(p);
        let Some((x, y)) = cam.pixel_of(&pc) else {
            continue;
        };
        let i = y * cam.width + x;
        if pc.z < depth[i] {
            depth[i] = pc.z;
            mask[i] = true;
        }
    }
    DepthGrid::new(cam.width, cam.height, depth, mask)
}

pub fn unproject_depth(grid: &DepthGrid, cam: &CameraIntrinsics) -> Result<PointMap> {
    cam.validate()?;
    if grid.dims() != cam.dims() {
        return Err(Error::DimensionMismatch {
            expected: cam.dims(),
            actual: grid.dims(),
        });
    }
    let (w, h) = grid.dims();
    let mut coords = vec![Vector3::zeros(); w * h];
    for (x, y, d) in grid.valid_pixels() {
        coords[y * w + x] = cam.unproject(x as f64, y as f64, d);
    }
    PointMap::new(w, h, coords, grid.mask().to_vec())
}

/// Surface families with closed-form per-pixel depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneKind {
    /// Fronto-parallel plane `z = depth`.
    Plane { depth: f64 },
    /// Sphere seen from outside.
    Sphere { center: [f64; 3], radius: f64 },
    /// Camera inside an axis-aligned room `|x| ≤ half_width`,
    /// `|y| ≤ half_height`, back wall at `z = depth`.
    BoxRoom {
        half_width: f64,
        half_height: f64,
        depth: f64,
    },
}

impl FromStr for SceneKind {
    type Err = Error;

    /// Parses `plane:<z>`, `sphere:<cx>,<cy>,<cz>,<r>` or
    /// `box-room:<half_width>,<half_height>,<depth>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .filter(|a| !a.trim().is_empty())
                .map(|a| {
                    a.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidScene(format!("bad number `{a}`: {e}")))
                })
                .collect()
        };
        let arity = |v: &[f64], n: usize| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidScene(format!(
                    "`{name}` takes {n} parameters, got {}",
                    v.len()
                )))
            }
        };
        match name.trim() {
            "plane" => {
                let v = nums()?;
                arity(&v, 1)?;
                Ok(Self::Plane { depth: v[0] })
            }
            "sphere" => {
                let v = nums()?;
                arity(&v, 4)?;
                Ok(Self::Sphere {
                    center: [v[0], v[1], v[2]],
                    radius: v[3],
                })
            }
            "box-room" | "box_room" => {
                let v = nums()?;
                arity(&v, 3)?;
                Ok(Self::BoxRoom {
                    half_width: v[0],
                    half_height: v[1],
                    depth: v[2],
                })
            }
            other => Err(Error::UnknownSceneKind(other.to_string())),
        }
    }
}

impl SceneKind {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Plane { depth } => depth.is_finite() && depth > 0.0,
            Self::Sphere { center, radius } => {
                let c = Vector3::from(center);
                center.iter().all(|v| v.is_finite())
                    && radius.is_finite()
                    && radius > 0.0
                    && c.norm() > radius
                    && center[2] > 0.0
            }
            Self::BoxRoom {
                half_width,
                half_height,
                depth,
            } => [half_width, half_height, depth]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!("{self:?}")))
        }
    }

    /// Depth along the camera ray through continuous pixel `(x, y)`.
    fn depth_along(&self, cam: &CameraIntrinsics, x: f64, y: f64) -> Option<f64> {
        let ray = Vector3::new((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
        match *self {
            Self::Plane { depth } => Some(depth),
            Self::Sphere { center, radius } => {
                let c = Vector3::from(center);
                let b = ray.dot(&c);
                let cc = c.norm_squared() - radius * radius;
                let disc = b * b - ray.norm_squared() * cc;
                if disc < 0.0 || b <= 0.0 {
                    return None;
                }
                // Near root, written to avoid cancellation.
                Some(cc / (b + disc.sqrt()))
            }
            Self::BoxRoom {
                half_width,
                half_height,
                depth,
            } => {
                let mut z = depth;
                if ray.x != 0.0 {
                    z = z.min(half_width / ray.x.abs());
                }
                if ray.y != 0.0 {
                    z = z.min(half_height / ray.y.abs());
                }
                Some(z)
            }
        }
    }
}

/// Synthetic scene descriptor: surface plus a centered pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, width: usize, height: usize, focal: f64) -> Self {
        Self {
            kind,
            width,
            height,
            focal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub pose: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthGrid,
}

/// Builds a sensor-frame cloud whose projection is known in closed form.
///
/// One surface point is placed on the ray through every covered pixel;
/// the seed draws the sensor pose, adds occluded points behind the surface
/// and shuffles the point order. The returned grid is the analytic depth.
pub fn make_synthetic_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.kind.validate()?;
    let cam = CameraIntrinsics::centered(spec.focal, spec.width, spec.height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(0.1..1.0),
    );
    let angle = rng.random_range(-0.5..0.5);
    let t = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let pose = RigidTransform::from_axis_angle(axis, angle, t)?;
    let to_sensor = pose.inverse();

    let (w, h) = (spec.width, spec.height);
    let mut depth = vec![0.0; w * h];
    let mut mask = vec![false; w * h];
    let mut points = Vec::with_capacity(w * h + w * h / 4);
    for y in 0..h {
        for x in 0..w {
            let Some(z) = spec.kind.depth_along(&cam, x as f64, y as f64) else {
                continue;
            };
            let i = y * w + x;
            depth[i] = z;
            mask[i] = true;
            points.push(to_sensor.apply(&cam.unproject(x as f64, y as f64, z)));
            if rng.random_bool(0.25) {
                let behind = z * rng.random_range(1.05..2.0);
                points.push(to_sensor.apply(&cam.unproject(x as f64, y as f64, behind)));
            }
        }
    }
    points.shuffle(&mut rng);

    Ok(SyntheticScene {
        cloud: PointCloud::new(points)?,
        pose,
        intrinsics: cam,
        depth: DepthGrid::new(w, h, depth, mask)?,
    })
}
