//! Meshes, cameras, poses, perspective projection and the signed
//! pixel-to-triangle distance that feeds the rasterizer.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, skew, Mat3, Vec2, Vec3};
use crate::{Error, Result};

/// Triangle mesh with one flat base color per face.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_colors: Vec<[f64; 3]>,
    adjacency: Vec<Vec<usize>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, face_colors: Vec<[f64; 3]>) -> Result<Self> {
        if face_colors.len() != faces.len() {
            return Err(Error::ColorCount {
                expected: faces.len(),
                got: face_colors.len(),
            });
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &index in f {
                if index >= n {
                    return Err(Error::FaceIndexOutOfRange { face: fi, index, count: n });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::RepeatedFaceIndex { face: fi });
            }
        }
        for (fi, c) in face_colors.iter().enumerate() {
            if c.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::ColorOutOfRange { face: fi });
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for f in &faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
            nb.dedup();
        }
        Ok(Self {
            vertices,
            faces,
            face_colors,
            adjacency,
        })
    }

    /// Same mesh with every face painted `color`.
    pub fn with_uniform_color(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, color: [f64; 3]) -> Result<Self> {
        let colors = vec![color; faces.len()];
        Self::new(vertices, faces, colors)
    }

    /// Axis-aligned unit cube centered at the origin with one color per side.
    pub fn cube() -> Self {
        let h = 0.5;
        let vertices = vec![
            Vec3::new(-h, -h, -h),
            Vec3::new(h, -h, -h),
            Vec3::new(h, h, -h),
            Vec3::new(-h, h, -h),
            Vec3::new(-h, -h, h),
            Vec3::new(h, -h, h),
            Vec3::new(h, h, h),
            Vec3::new(-h, h, h),
        ];
        // Counter-clockwise seen from outside, so normals point outward.
        let sides: [([usize; 3], [usize; 3], [f64; 3]); 6] = [
            ([0, 3, 2], [0, 2, 1], CUBE_COLORS[0]),
            ([4, 5, 6], [4, 6, 7], CUBE_COLORS[1]),
            ([0, 1, 5], [0, 5, 4], CUBE_COLORS[2]),
            ([3, 7, 6], [3, 6, 2], CUBE_COLORS[3]),
            ([0, 4, 7], [0, 7, 3], CUBE_COLORS[4]),
            ([1, 2, 6], [1, 6, 5], CUBE_COLORS[5]),
        ];
        let mut faces = Vec::with_capacity(12);
        let mut colors = Vec::with_capacity(12);
        for (a, b, c) in sides {
            faces.push(a);
            faces.push(b);
            colors.push(c);
            colors.push(c);
        }
        Self::new(vertices, faces, colors).expect("builtin cube is valid")
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_colors(&self) -> &[[f64; 3]] {
        &self.face_colors
    }

    /// Sorted neighbor indices of each vertex.
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Unit normals from the face winding; zero for degenerate faces.
    pub fn face_normals(&self) -> Vec<Vec3> {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                let n = (b - a).cross(&(c - a));
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect()
    }

    /// Copy with displaced vertex positions (same topology and colors).
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    pub fn with_face_colors(&self, face_colors: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(self.vertices.clone(), self.faces.clone(), face_colors)
    }
}

/// Side colors of [`Mesh::cube`]: red, green, blue, yellow, magenta, cyan
/// (slightly desaturated so no two faces share a channel value).
pub const CUBE_COLORS: [[f64; 3]; 6] = [
    [0.90, 0.15, 0.10],
    [0.20, 0.80, 0.25],
    [0.15, 0.30, 0.90],
    [0.95, 0.85, 0.20],
    [0.75, 0.20, 0.80],
    [0.10, 0.75, 0.85],
];

/// Pinhole camera looking from `eye` towards `at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Vertical field of view, radians.
    pub fov: f64,
    pub width: usize,
    pub height: usize,
    pub eye: Vec3,
    pub at: Vec3,
    pub up: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            fov: math::PI / 3.0,
            width: 64,
            height: 64,
            eye: Vec3::new(0.0, 0.0, 2.5),
            at: Vec3::zeros(),
            up: Vec3::new(0.0, 1.0, 0.0),
            near: 0.1,
            far: 10.0,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyImage);
        }
        if !(self.fov > 0.0 && self.fov < math::PI) {
            return Err(Error::InvalidCamera("fov must lie in (0, pi)"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidCamera("need 0 < near < far"));
        }
        let forward = self.at - self.eye;
        if forward.norm() == 0.0 || forward.cross(&self.up).norm() == 0.0 {
            return Err(Error::InvalidCamera("eye, at and up are degenerate"));
        }
        Ok(())
    }

    /// World-to-camera rotation; rows are right, up and forward.
    pub fn basis(&self) -> Mat3 {
        let forward = (self.at - self.eye).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        Mat3::from_rows(&[right.transpose(), up.transpose(), forward.transpose()])
    }

    /// `1 / tan(fov / 2)`.
    pub fn focal(&self) -> f64 {
        1.0 / math::tan(0.5 * self.fov)
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Center of pixel `(row, col)` in NDC; row 0 is the top of the image.
    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0,
            1.0 - 2.0 * (row as f64 + 0.5) / self.height as f64,
        )
    }

    /// Background inverse depth `z_min = 1 / far`.
    pub fn background_inv_depth(&self) -> f64 {
        1.0 / self.far
    }
}

/// Rigid transform: axis-angle rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Vec3::zeros(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_rotation(rotation: Vec3) -> Self {
        Self {
            rotation,
            translation: Vec3::zeros(),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rotation_matrix(&self.rotation)
    }
}

/// Coefficients of `R = I + a K + b K^2` and of their derivatives divided by
/// the angle, with series expansions near zero.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-3 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            -1.0 / 3.0 + t2 / 30.0,
            -1.0 / 12.0 + t2 / 180.0,
        )
    } else {
        let (s, c) = (math::sin(theta), math::cos(theta));
        let t3 = t2 * theta;
        (
            s / theta,
            (1.0 - c) / t2,
            (theta * c - s) / t3,
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

/// Rodrigues formula for an axis-angle vector.
pub fn rotation_matrix(omega: &Vec3) -> Mat3 {
    let (a, b, _, _) = rodrigues_coefficients(omega.norm());
    let k = skew(omega);
    Mat3::identity() + k * a + k * k * b
}

/// Partial derivatives `dR/d omega_i`, i = 0, 1, 2.
pub fn rotation_derivatives(omega: &Vec3) -> [Mat3; 3] {
    let (a, b, c, d) = rodrigues_coefficients(omega.norm());
    let k = skew(omega);
    let k2 = k * k;
    core::array::from_fn(|i| {
        let mut e = Vec3::zeros();
        e[i] = 1.0;
        let ei = skew(&e);
        ei * a + (ei * k + k * ei) * b + k * (c * omega[i]) + k2 * (d * omega[i])
    })
}

/// Axis-angle vector of a rotation matrix, angle in `[0, pi]`.
pub fn rotation_log(r: &Mat3) -> Vec3 {
    let (w, v) = matrix_to_quaternion(r);
    let s = v.norm();
    if s < 1e-300 {
        return Vec3::zeros();
    }
    let angle = 2.0 * math::atan2(s, w);
    v * (angle / s)
}

/// Unit quaternion `(w, v)` with `w >= 0`.
fn matrix_to_quaternion(r: &Mat3) -> (f64, Vec3) {
    let tr = r.trace();
    let (w, x, y, z);
    if tr > 0.0 {
        let s = math::sqrt(tr + 1.0) * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = math::sqrt(1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]) * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = math::sqrt(1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]) * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = math::sqrt(1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]) * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let n = math::sqrt(w * w + x * x + y * y + z * z);
    let sign = if w < 0.0 { -1.0 } else { 1.0 };
    (sign * w / n, Vec3::new(x, y, z) * (sign / n))
}

/// Geodesic angle of a rotation matrix, radians.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let (w, v) = matrix_to_quaternion(r);
    2.0 * math::atan2(v.norm(), w)
}

/// One projected face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedFace {
    /// NDC vertex positions.
    pub ndc: [Vec2; 3],
    /// Inverse camera-space depth of the face centroid.
    pub inv_depth: f64,
    /// False when a vertex lies in front of the near plane, the centroid lies
    /// beyond the far plane, or the projected area is zero. Invisible faces
    /// never receive occupancy.
    pub visible: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedScene {
    pub faces: Vec<ProjectedFace>,
    /// Background inverse depth.
    pub z_min: f64,
    /// Camera-space vertex positions, kept for the backward pass.
    pub camera_vertices: Vec<Vec3>,
}

/// Projected area below which a face counts as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-14;

/// Perspective projection of the posed mesh into NDC.
pub fn project(mesh: &Mesh, camera: &Camera, pose: &Pose) -> Result<ProjectedScene> {
    camera.validate()?;
    let rot = pose.rotation_matrix();
    let basis = camera.basis();
    let (fx, fy) = (camera.focal() / camera.aspect(), camera.focal());
    let camera_vertices: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|v| basis * (rot * v + pose.translation - camera.eye))
        .collect();
    let faces = mesh
        .faces()
        .iter()
        .map(|f| {
            let c = f.map(|i| camera_vertices[i]);
            let in_front = c.iter().all(|p| p.z >= camera.near);
            let ndc = c.map(|p| {
                if p.z > 0.0 {
                    Vec2::new(fx * p.x / p.z, fy * p.y / p.z)
                } else {
                    Vec2::zeros()
                }
            });
            let area = cross2(&(ndc[1] - ndc[0]), &(ndc[2] - ndc[0]));
            let degenerate = !(area.abs() > DEGENERATE_AREA);
            let depth = (c[0].z + c[1].z + c[2].z) / 3.0;
            ProjectedFace {
                ndc,
                inv_depth: 1.0 / depth,
                visible: in_front && depth < camera.far && !degenerate,
                degenerate,
            }
        })
        .collect();
    Ok(ProjectedScene {
        faces,
        z_min: camera.background_inv_depth(),
        camera_vertices,
    })
}

#[inline]
pub fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Signed distance and its gradient with respect to the three vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedDistance {
    pub value: f64,
    pub grad: [Vec2; 3],
}

/// Signed distance from `p` to the boundary of `tri`: positive inside,
/// negative outside, `-inf` for a zero-area triangle.
#[inline]
pub fn signed_distance(p: &Vec2, tri: &[Vec2; 3]) -> f64 {
    signed_distance_impl(p, tri, false).value
}

/// [`signed_distance`] with its vertex gradient.
#[inline]
pub fn signed_distance_grad(p: &Vec2, tri: &[Vec2; 3]) -> SignedDistance {
    signed_distance_impl(p, tri, true)
}

fn signed_distance_impl(p: &Vec2, tri: &[Vec2; 3], with_grad: bool) -> SignedDistance {
    let mut grad = [Vec2::zeros(); 3];
    let area = cross2(&(tri[1] - tri[0]), &(tri[2] - tri[0]));
    if !(area.abs() > DEGENERATE_AREA) {
        return SignedDistance {
            value: f64::NEG_INFINITY,
            grad,
        };
    }
    let orient = if area > 0.0 { 1.0 } else { -1.0 };
    let mut inside = true;
    let mut best = f64::INFINITY;
    // (edge start, parameter class): 0 interior, 1 clamped to a, 2 clamped to b
    let mut best_edge = 0;
    let mut best_kind = 0;
    for k in 0..3 {
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        let e = b - a;
        let w = p - a;
        let side = orient * cross2(&e, &w);
        if side < 0.0 {
            inside = false;
        }
        let l2 = e.norm_squared();
        let t = w.dot(&e) / l2;
        let (dist, kind) = if t <= 0.0 {
            (w.norm(), 1)
        } else if t >= 1.0 {
            ((p - b).norm(), 2)
        } else {
            (side.abs() / math::sqrt(l2), 0)
        };
        if dist < best {
            best = dist;
            best_edge = k;
            best_kind = kind;
        }
    }
    let value = if inside { best } else { -best };
    if with_grad {
        let ia = best_edge;
        let ib = (best_edge + 1) % 3;
        let a = tri[ia];
        let b = tri[ib];
        match best_kind {
            0 => {
                // value = orient * cross(e, w) / |e| on either side of the edge.
                let e = b - a;
                let w = p - a;
                let l = e.norm();
                let cr = cross2(&e, &w);
                let d_e = (Vec2::new(w.y, -w.x) / l - e * (cr / (l * l * l))) * orient;
                let d_w = Vec2::new(-e.y, e.x) * (orient / l);
                grad[ib] = d_e;
                grad[ia] = -d_e - d_w;
            }
            kind => {
                // Outside, nearest to a vertex: value = -|p - v|.
                let (iv, v) = if kind == 1 { (ia, a) } else { (ib, b) };
                let r = p - v;
                let n = r.norm();
                if n > 0.0 {
                    grad[iv] = r / n;
                }
            }
        }
    }
    SignedDistance { value, grad }
}

/// Directional light for flat Lambertian shading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalLight {
    /// Direction pointing towards the light.
    pub direction: Vec3,
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for DirectionalLight {
    fn default() -> Self {
        Self {
            direction: Vec3::new(0.3, 0.5, 1.0),
            ambient: 0.6,
            diffuse: 0.4,
        }
    }
}

/// Per-face `base * (ambient + diffuse * max(0, n . l))`, clamped to `[0, 1]`.
///
/// Normals are taken in the mesh frame, so colors do not depend on the pose.
pub fn shade(mesh: &Mesh, light: &DirectionalLight) -> Vec<[f64; 3]> {
    let l = light.direction.normalize();
    mesh.face_normals()
        .iter()
        .zip(mesh.face_colors())
        .map(|(n, base)| {
            let k = light.ambient + light.diffuse * n.dot(&l).max(0.0);
            base.map(|c| (c * k).clamp(0.0, 1.0))
        })
        .collect()
}
