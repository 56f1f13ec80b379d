//! Constant-curvature forward model of the operative arm and a pinhole
//! camera looking at its bending plane.
//!
//! The arm base sits at the world origin with the straight backbone along
//! `+y`; bending happens in the `x-y` plane. A motor angle `q` maps to a
//! total bend `theta = gain * q`, and the backbone is a circular arc of
//! length `L` and total tangent rotation `theta`.

use std::f64::consts::PI;

/// Largest magnitude of a joint label, in radians.
pub const LABEL_LIMIT: f64 = 3.5 * PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ArmError {
    #[error("{field} must be positive and finite (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("disk_count must be at least 2 (got {0})")]
    TooFewDisks(usize),
    #[error("bend gain {gain} reaches |theta| = {theta} >= pi inside the label range")]
    DegenerateArc { gain: f64, theta: f64 },
    #[error("joint value must be finite")]
    NonFiniteJoint,
    #[error("camera image must be at least 32x32 (got {width}x{height})")]
    ImageTooSmall { width: usize, height: usize },
    #[error("field of view must lie in (0, 180) degrees (got {0})")]
    BadFov(f64),
    #[error("camera position and target coincide")]
    DegenerateView,
    #[error("background shade {0} outside [0, 1]")]
    BadShade(f64),
    #[error("scene point lies behind the camera")]
    BehindCamera,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmConfig {
    pub backbone_length: f64,
    pub backbone_radius: f64,
    /// Radius of the tendon circle around the backbone.
    pub tendon_offset: f64,
    pub disk_count: usize,
    /// Radians of total bend per radian of motor rotation.
    pub motor_to_curvature_gain: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        ArmConfig {
            backbone_length: 0.4,
            backbone_radius: 0.0009,
            tendon_offset: 0.01855,
            disk_count: 10,
            motor_to_curvature_gain: 0.12,
        }
    }
}

impl ArmConfig {
    pub fn validate(&self) -> Result<(), ArmError> {
        for (field, value) in [
            ("backbone_length", self.backbone_length),
            ("backbone_radius", self.backbone_radius),
            ("tendon_offset", self.tendon_offset),
            ("motor_to_curvature_gain", self.motor_to_curvature_gain),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ArmError::NonPositive { field, value });
            }
        }
        if self.disk_count < 2 {
            return Err(ArmError::TooFewDisks(self.disk_count));
        }
        let theta = self.motor_to_curvature_gain * LABEL_LIMIT;
        if theta >= PI {
            return Err(ArmError::DegenerateArc {
                gain: self.motor_to_curvature_gain,
                theta,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraConfig {
    pub image_width: usize,
    pub image_height: usize,
    /// Horizontal field of view in degrees.
    pub horizontal_fov: f64,
    pub camera_position: [f64; 3],
    pub camera_target: [f64; 3],
    pub background_shade: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            image_width: 128,
            image_height: 128,
            horizontal_fov: 78.0,
            camera_position: [0.0, 0.2, 0.32],
            camera_target: [0.0, 0.2, 0.0],
            background_shade: 0.6,
        }
    }
}

impl CameraConfig {
    /// Same view at a different resolution.
    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.image_width = width;
        self.image_height = height;
        self
    }

    pub fn validate(&self) -> Result<(), ArmError> {
        if self.image_width < 32 || self.image_height < 32 {
            return Err(ArmError::ImageTooSmall {
                width: self.image_width,
                height: self.image_height,
            });
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < 180.0) {
            return Err(ArmError::BadFov(self.horizontal_fov));
        }
        let d = sub(self.camera_target, self.camera_position);
        if norm(d) < 1e-12 || norm(cross(d, [0.0, 1.0, 0.0])) < 1e-12 {
            return Err(ArmError::DegenerateView);
        }
        if !(0.0..=1.0).contains(&self.background_shade) {
            return Err(ArmError::BadShade(self.background_shade));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        (self.image_width as f64 / 2.0) / (self.horizontal_fov.to_radians() / 2.0).tan()
    }

    /// Pinhole projection of a world point to continuous pixel coordinates
    /// `(column, row)`; pixel `(r, c)` has its centre at `(c + 0.5, r + 0.5)`.
    pub fn project(&self, p: [f64; 3]) -> Result<[f64; 2], ArmError> {
        let forward = normalize(sub(self.camera_target, self.camera_position));
        let right = normalize(cross(forward, [0.0, 1.0, 0.0]));
        let up = cross(right, forward);
        let d = sub(p, self.camera_position);
        let z = dot(d, forward);
        if z <= 1e-9 {
            return Err(ArmError::BehindCamera);
        }
        let f = self.focal_px();
        Ok([
            self.image_width as f64 / 2.0 + f * dot(d, right) / z,
            self.image_height as f64 / 2.0 - f * dot(d, up) / z,
        ])
    }
}

/// A straight stroke in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub thickness: f64,
}

/// Projected arm and scene context, ready for rasterization.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmShape {
    pub backbone_points: Vec<[f64; 2]>,
    pub disk_segments: Vec<Segment>,
    pub tendon_polylines: Vec<Vec<[f64; 2]>>,
    /// Static scene elements: the supportive arm and the base mount.
    pub context: Vec<Segment>,
}

impl ArmShape {
    pub fn tip(&self) -> [f64; 2] {
        *self.backbone_points.last().expect("backbone is never empty")
    }
}

/// Number of backbone samples along the arc.
pub const BACKBONE_SAMPLES: usize = 65;

pub fn bend_angle(q: f64, cfg: &ArmConfig) -> Result<f64, ArmError> {
    if !q.is_finite() {
        return Err(ArmError::NonFiniteJoint);
    }
    cfg.validate()?;
    Ok(cfg.motor_to_curvature_gain * q)
}

/// `(1 - cos x) / x` and `sin x / x`, continuous through zero.
fn arc_factors(x: f64) -> (f64, f64) {
    if x.abs() < 1e-8 {
        (x / 2.0, 1.0)
    } else {
        let h = (x / 2.0).sin();
        (2.0 * h * h / x, x.sin() / x)
    }
}

/// World-frame backbone point and outward normal at arc length `s` for a
/// total bend `theta`.
pub fn backbone_frame(theta: f64, length: f64, s: f64) -> ([f64; 3], [f64; 2]) {
    let phi = theta * s / length;
    let (fx, fy) = arc_factors(phi);
    ([s * fx, s * fy, 0.0], [phi.cos(), -phi.sin()])
}

/// Backbone sampled at `n` equally spaced arc lengths, in world coordinates.
pub fn backbone_world(theta: f64, length: f64, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| backbone_frame(theta, length, length * i as f64 / (n - 1) as f64).0)
        .collect()
}

/// Closed-form chord between the arc endpoints.
pub fn chord_length(theta: f64, length: f64) -> f64 {
    if theta.abs() < 1e-12 {
        length
    } else {
        (2.0 * length / theta) * (theta / 2.0).sin()
    }
}

pub fn arm_shape(q: f64, arm: &ArmConfig, cam: &CameraConfig) -> Result<ArmShape, ArmError> {
    cam.validate()?;
    let theta = bend_angle(q, arm)?;
    let l = arm.backbone_length;
    let scale = cam.focal_px() / norm(sub(cam.camera_target, cam.camera_position));

    let backbone_points = backbone_world(theta, l, BACKBONE_SAMPLES)
        .into_iter()
        .map(|p| cam.project(p))
        .collect::<Result<Vec<_>, _>>()?;

    let offset_point = |s: f64, k: f64| {
        let (p, n) = backbone_frame(theta, l, s);
        [p[0] + k * n[0], p[1] + k * n[1], p[2]]
    };

    let disk_half = 1.5 * arm.tendon_offset;
    let disk_segments = (0..arm.disk_count)
        .map(|i| {
            let s = l * i as f64 / (arm.disk_count - 1) as f64;
            Ok(Segment {
                a: cam.project(offset_point(s, -disk_half))?,
                b: cam.project(offset_point(s, disk_half))?,
                thickness: 2.0,
            })
        })
        .collect::<Result<Vec<_>, ArmError>>()?;

    let tendon_polylines = [-arm.tendon_offset, arm.tendon_offset]
        .iter()
        .map(|&k| {
            (0..BACKBONE_SAMPLES)
                .map(|i| cam.project(offset_point(l * i as f64 / (BACKBONE_SAMPLES - 1) as f64, k)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    // supportive arm: a vertical bar clear of the operative arm's sweep
    let bar_x = 0.5 * l;
    let context = vec![
        Segment {
            a: cam.project([bar_x, 0.0, 0.0])?,
            b: cam.project([bar_x, 0.35 * l, 0.0])?,
            thickness: (0.02 * scale).max(1.0),
        },
        Segment {
            a: cam.project([-3.0 * arm.tendon_offset, 0.0, 0.0])?,
            b: cam.project([3.0 * arm.tendon_offset, 0.0, 0.0])?,
            thickness: (0.012 * scale).max(1.0),
        },
    ];

    Ok(ArmShape {
        backbone_points,
        disk_segments,
        tendon_polylines,
        context,
    })
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn bend_angle_examples() {
        let cfg = ArmConfig::default();
        assert_eq!(bend_angle(0.0, &cfg).unwrap(), 0.0);
        let theta = bend_angle(2.063, &cfg).unwrap();
        assert!((theta - 0.24756).abs() < 1e-12);
    }

    #[test]
    fn bend_angle_is_odd() {
        let cfg = ArmConfig::default();
        let mut rng = crate::rng::stream(3, &[]);
        for _ in 0..100 {
            let q = rng.random_range(-LABEL_LIMIT..LABEL_LIMIT);
            assert_eq!(bend_angle(-q, &cfg).unwrap(), -bend_angle(q, &cfg).unwrap());
        }
    }

    #[test]
    fn gain_that_folds_the_arc_is_rejected() {
        let cfg = ArmConfig {
            motor_to_curvature_gain: 0.3,
            ..ArmConfig::default()
        };
        assert!(matches!(bend_angle(1.0, &cfg), Err(ArmError::DegenerateArc { .. })));
        assert!(bend_angle(f64::NAN, &ArmConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = ArmConfig {
            disk_count: 1,
            ..ArmConfig::default()
        };
        assert_eq!(bad.validate(), Err(ArmError::TooFewDisks(1)));
        let cam = CameraConfig::default().with_resolution(16, 64);
        assert!(matches!(cam.validate(), Err(ArmError::ImageTooSmall { .. })));
        let cam = CameraConfig {
            horizontal_fov: 180.0,
            ..CameraConfig::default()
        };
        assert!(cam.validate().is_err());
    }

    #[test]
    fn straight_arm_is_collinear() {
        let shape = arm_shape(0.0, &ArmConfig::default(), &CameraConfig::default()).unwrap();
        let pts = &shape.backbone_points;
        let (a, b) = (pts[0], *pts.last().unwrap());
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        for p in pts {
            let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            assert!((cross / len).abs() < 1e-9 * len);
        }
        assert!(pts.len() >= 64);
    }

    #[test]
    fn opposite_joints_mirror_about_base_axis() {
        let (arm, cam) = (ArmConfig::default(), CameraConfig::default());
        let axis = cam.project([0.0, 0.0, 0.0]).unwrap()[0];
        let a = arm_shape(5.3, &arm, &cam).unwrap();
        let b = arm_shape(-5.3, &arm, &cam).unwrap();
        for (p, m) in a.backbone_points.iter().zip(&b.backbone_points) {
            assert!((p[0] - axis + (m[0] - axis)).abs() < 1e-9);
            assert!((p[1] - m[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn quarter_turn_chord() {
        // (0.8 / pi) * 2 * sin(pi / 4)
        let expected = 0.8 / PI * 2.0 * (PI / 4.0).sin();
        assert!((expected - 0.36013).abs() < 1e-5);
        let pts = backbone_world(PI / 2.0, 0.4, BACKBONE_SAMPLES);
        let end = pts.last().unwrap();
        let chord = (end[0].powi(2) + end[1].powi(2)).sqrt();
        assert!((chord - expected).abs() < 1e-12);
        assert!((chord_length(PI / 2.0, 0.4) - expected).abs() < 1e-15);
    }

    #[test]
    fn arm_shape_is_pure() {
        let (arm, cam) = (ArmConfig::default(), CameraConfig::default());
        assert_eq!(arm_shape(1.25, &arm, &cam).unwrap(), arm_shape(1.25, &arm, &cam).unwrap());
    }
}
