//! Pinhole camera (CV convention: x right, y down, z forward), the
//! co-located point light, and calibrated capture views.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{vec3, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation (rows are the camera axes in world space).
    pub rotation: Mat3,
    /// World-to-camera translation: x_cam = R * x_world + t.
    pub translation: Vec3,
}

impl Camera {
    /// Place a camera at `eye` looking at `target`. `up` is a world-space
    /// hint; a fallback axis is used when the view direction is parallel
    /// to it.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Camera {
        let forward = (target - eye).normalized();
        let mut right = forward.cross(up);
        if right.length() < 1e-9 {
            right = forward.cross(vec3(1.0, 0.0, 0.0));
            if right.length() < 1e-9 {
                right = forward.cross(vec3(0.0, 0.0, 1.0));
            }
        }
        let right = right.normalized();
        let down = forward.cross(right).normalized(); // y_cam: z x x, image v axis
        let rotation = Mat3::from_rows(right, down, forward);
        let translation = -rotation.mul_vec(eye);
        Camera {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::data("camera focal lengths must be positive"));
        }
        if self.rotation.orthonormality_error() > 1e-6 {
            return Err(Error::data("camera rotation is not orthonormal"));
        }
        Ok(())
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vec3 {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Project a world point; `None` behind the near plane. Returns pixel
    /// coordinates and camera-space depth.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let pc = self.world_to_camera(p);
        if pc.z < 1e-6 {
            return None;
        }
        Some((
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
            pc.z,
        ))
    }

    /// Unit world-space direction through pixel coordinates (u, v).
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        let dir_cam = vec3((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.rotation.transpose().mul_vec(dir_cam).normalized()
    }

    /// 4x4 camera-to-world matrix, row-major.
    pub fn camera_to_world_matrix(&self) -> [f64; 16] {
        let rt = self.rotation.transpose();
        let c = self.center();
        let mut m = [0.0; 16];
        for r in 0..3 {
            for col in 0..3 {
                m[r * 4 + col] = rt.rows[r][col];
            }
        }
        m[3] = c.x;
        m[7] = c.y;
        m[11] = c.z;
        m[15] = 1.0;
        m
    }

    /// Inverse of [`Camera::camera_to_world_matrix`] for manifest loading.
    pub fn from_camera_to_world(
        m: &[f64; 16],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let rt = Mat3 {
            rows: [
                [m[0], m[1], m[2]],
                [m[4], m[5], m[6]],
                [m[8], m[9], m[10]],
            ],
        };
        let center = vec3(m[3], m[7], m[11]);
        let rotation = rt.transpose();
        Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation: -rotation.mul_vec(center),
        }
    }
}

/// Point light co-located with the camera; intensity per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLight {
    pub position: Vec3,
    pub intensity: [f64; 3],
}

pub const DEFAULT_LIGHT_INTENSITY: f64 = 10.0;

impl PointLight {
    pub fn colocated(camera: &Camera, intensity: f64) -> PointLight {
        PointLight {
            position: camera.center(),
            intensity: [intensity; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    Cross,
    Parallel,
}

impl Polarization {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarization::Cross => "cross",
            Polarization::Parallel => "parallel",
        }
    }

    pub fn parse(s: &str) -> Result<Polarization> {
        match s {
            "cross" => Ok(Polarization::Cross),
            "parallel" => Ok(Polarization::Parallel),
            other => Err(Error::data(format!("unknown polarization {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewRole {
    Train,
    Holdout,
}

impl ViewRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewRole::Train => "train",
            ViewRole::Holdout => "holdout",
        }
    }

    pub fn parse(s: &str) -> Result<ViewRole> {
        match s {
            "train" => Ok(ViewRole::Train),
            "holdout" => Ok(ViewRole::Holdout),
            other => Err(Error::data(format!("unknown view role {other:?}"))),
        }
    }
}

/// One calibrated observation. The attenuation map is shared per dataset
/// and must match the camera dimensions (checked at load).
#[derive(Debug, Clone)]
pub struct CaptureView {
    pub image: Image,
    pub camera: Camera,
    pub polarization: Polarization,
    pub role: ViewRole,
    pub light_intensity: f64,
}

impl CaptureView {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.image.width != self.camera.width || self.image.height != self.camera.height {
            return Err(Error::data(format!(
                "image {}x{} does not match camera {}x{}",
                self.image.width, self.image.height, self.camera.width, self.camera.height
            )));
        }
        Ok(())
    }
}
