use serde::{Deserialize, Serialize};

use crate::math::{self, Aabb, Vec3};
use crate::{Error, Result};

/// Pinhole camera. The camera frame looks down `+z` with `+x` right and `+y`
/// down in the image; `rotation` (row-major) and `translation` map camera
/// coordinates to world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        math::add(self.origin, math::scale(self.dir, t))
    }

    pub fn is_empty(&self) -> bool {
        !(self.t_far > self.t_near)
    }
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: [[f64; 3]; 3],
        translation: Vec3,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("camera translation must be finite"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if !((rtr - want).abs() <= 1e-9) {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        let det = math::dot(r[0], math::cross(r[1], r[2]));
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("camera rotation must have determinant +1"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let z = math::normalize(math::sub(target, eye));
        let down = math::scale(up, -1.0);
        let xr = math::cross(down, z);
        if math::norm(xr) < 1e-9 {
            return Err(Error::invalid("look_at up vector is parallel to the view direction"));
        }
        let x = math::normalize(xr);
        let y = math::cross(z, x);
        let rotation = [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]];
        Camera::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            eye,
        )
    }

    /// Builds a camera from intrinsics and a row-major 4×4 camera-to-world
    /// matrix.
    pub fn from_c2w(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        c2w: &[[f64; 4]; 4],
    ) -> Result<Self> {
        if c2w[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("camera-to-world last row must be [0, 0, 0, 1]"));
        }
        let mut rotation = [[0.0; 3]; 3];
        for r in 0..3 {
            rotation[r].copy_from_slice(&c2w[r][..3]);
        }
        Camera::new(
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            [c2w[0][3], c2w[1][3], c2w[2][3]],
        )
    }

    pub fn c2w(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// World direction through image coordinates `(u, v)` (continuous
    /// pixel units, pixel centres at `+0.5`).
    pub fn direction_at(&self, u: f64, v: f64) -> Vec3 {
        let d_cam = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        math::normalize(math::mat_vec(&self.rotation, d_cam))
    }

    /// Projects a world point to continuous image coordinates. `None` when
    /// the point is behind the camera.
    pub fn project(&self, p: Vec3) -> Option<[f64; 2]> {
        let pc = math::mat_t_vec(&self.rotation, math::sub(p, self.translation));
        if pc[2] <= 0.0 {
            return None;
        }
        Some([
            self.fx * pc[0] / pc[2] + self.cx,
            self.fy * pc[1] / pc[2] + self.cy,
        ])
    }

    /// Ray through the centre of pixel `(px, py)`, clipped to `bounds`. A
    /// ray that misses has `t_near == t_far`.
    pub fn generate_ray(&self, px: f64, py: f64, bounds: &Aabb) -> Ray {
        let origin = self.translation;
        let dir = self.direction_at(px + 0.5, py + 0.5);
        let (t_near, t_far) = bounds.intersect(origin, dir).unwrap_or((0.0, 0.0));
        Ray {
            origin,
            dir,
            t_near,
            t_far,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cam() -> Camera {
        let r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Camera::new(50.0, 50.0, 32.0, 24.0, 64, 48, r, [0.0, 0.0, -3.0]).unwrap()
    }

    #[test]
    fn principal_point_looks_down_z() {
        let cam = identity_cam();
        let ray = cam.generate_ray(31.5, 23.5, &Aabb::cube(1.0));
        assert!((ray.dir[0]).abs() < 1e-15 && (ray.dir[1]).abs() < 1e-15);
        assert!((ray.dir[2] - 1.0).abs() < 1e-15);
        assert!((ray.t_near - 2.0).abs() < 1e-12 && (ray.t_far - 4.0).abs() < 1e-12);
    }

    #[test]
    fn projection_round_trip() {
        let cam = Camera::look_at([0.7, -0.4, -2.5], [0.1, 0.0, 0.2], [0.0, 1.0, 0.0], 60.0, 64, 64)
            .unwrap();
        for &(px, py) in &[(0.0, 0.0), (10.3, 50.7), (63.0, 63.0), (31.0, 2.0)] {
            let ray = cam.generate_ray(px, py, &Aabb::cube(1.0));
            for t in [0.5, 1.7, 4.0] {
                let uv = cam.project(ray.at(t)).unwrap();
                assert!((uv[0] - (px + 0.5)).abs() < 1e-9, "{uv:?}");
                assert!((uv[1] - (py + 0.5)).abs() < 1e-9, "{uv:?}");
            }
        }
    }

    #[test]
    fn slab_intersection_matches_hand_values() {
        let b = Aabb::new([-0.5; 3], [0.5; 3]).unwrap();
        // Straight along +z from z = -2: enters at 1.5, leaves at 2.5.
        assert_eq!(b.intersect([0.1, 0.2, -2.0], [0.0, 0.0, 1.0]), Some((1.5, 2.5)));
        // Diagonal in the x-z plane from (-1, 0, -1).
        let d = crate::math::normalize([1.0, 0.0, 1.0]);
        let (t0, t1) = b.intersect([-1.0, 0.0, -1.0], d).unwrap();
        let s = 2f64.sqrt();
        assert!((t0 - 0.5 * s).abs() < 1e-12 && (t1 - 1.5 * s).abs() < 1e-12);
        // Parallel miss.
        assert_eq!(b.intersect([0.0, 0.9, -2.0], [0.0, 0.0, 1.0]), None);
        // Origin inside: near clipped to zero.
        assert_eq!(b.intersect([0.0, 0.0, 0.0], [0.0, 0.0, 1.0]), Some((0.0, 0.5)));
    }

    #[test]
    fn c2w_round_trip_and_validation() {
        let cam = Camera::look_at([1.0, 2.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, 32, 32).unwrap();
        let m = cam.c2w();
        let back = Camera::from_c2w(cam.fx, cam.fy, cam.cx, cam.cy, 32, 32, &m).unwrap();
        assert_eq!(back, cam);
        let mut bad = m;
        bad[0][0] *= 2.0;
        assert!(Camera::from_c2w(40.0, 40.0, 16.0, 16.0, 32, 32, &bad).is_err());
        let flip = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 4, 4, flip, [0.0; 3]).is_err());
    }
}
