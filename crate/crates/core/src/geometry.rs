//! Microphone array layout and far-field propagation.
//!
//! The array family used throughout the toolkit is a three-element uniform
//! circular array (UCA) with one extra microphone at its center. The center
//! microphone sits at the origin and is the reference channel (index 0).
//! Ring microphones are placed at azimuths 0°, 120° and 240°.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in air, m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub mic_positions: Vec<Point3>,
    pub reference_index: usize,
    pub diameter: f64,
}

/// Direction of arrival. Azimuth is measured counter-clockwise from +x in
/// the horizontal plane, elevation upwards from that plane. Both in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doa {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Doa {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Doa { azimuth, elevation }
    }

    /// Horizontal-plane direction, azimuth given in degrees.
    pub fn from_degrees(azimuth_deg: f64) -> Self {
        Doa {
            azimuth: azimuth_deg.to_radians(),
            elevation: 0.0,
        }
    }

    /// Azimuth wrapped to [0, 2π).
    pub fn normalized(self) -> Self {
        Doa {
            azimuth: wrap_angle(self.azimuth),
            elevation: self.elevation,
        }
    }

    pub fn azimuth_deg(&self) -> f64 {
        wrap_angle(self.azimuth).to_degrees()
    }

    /// Direction pointing from `origin` towards `target`.
    pub fn between(origin: Point3, target: Point3) -> Self {
        let d = sub(target, origin);
        let horiz = (d[0] * d[0] + d[1] * d[1]).sqrt();
        Doa {
            azimuth: wrap_angle(d[1].atan2(d[0])),
            elevation: d[2].atan2(horiz),
        }
    }
}

/// Wraps an angle in radians to [0, 2π).
pub fn wrap_angle(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = theta.rem_euclid(tau);
    if w >= tau {
        0.0
    } else {
        w
    }
}

/// Smallest absolute difference between two azimuths, in degrees, in [0, 180].
pub fn angular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl ArrayGeometry {
    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn reference_position(&self) -> Point3 {
        self.mic_positions[self.reference_index]
    }

    /// Microphone positions after translating the array to `center`.
    pub fn placed_at(&self, center: Point3) -> Vec<Point3> {
        self.mic_positions.iter().map(|p| add(*p, center)).collect()
    }

    /// Largest distance between the reference microphone and any ring
    /// microphone. Spatial aliasing starts where this spacing reaches half a
    /// wavelength.
    pub fn max_reference_spacing(&self) -> f64 {
        let r = self.reference_position();
        self.mic_positions.iter().map(|p| norm(sub(*p, r))).fold(0.0, f64::max)
    }
}

/// Builds the UCA-plus-center array for a given ring diameter in meters.
pub fn build_array(diameter: f64) -> Result<ArrayGeometry> {
    if !(diameter > 0.0) || !diameter.is_finite() {
        return Err(Error::invalid(format!(
            "array diameter must be positive, got {diameter}"
        )));
    }
    let radius = diameter / 2.0;
    let mut mic_positions = vec![[0.0, 0.0, 0.0]];
    for k in 0..3 {
        let az = (120.0 * k as f64).to_radians();
        mic_positions.push([radius * az.cos(), radius * az.sin(), 0.0]);
    }
    Ok(ArrayGeometry {
        mic_positions,
        reference_index: 0,
        diameter,
    })
}

pub fn doa_unit_vector(doa: Doa) -> Point3 {
    let (sp, cp) = doa.elevation.sin_cos();
    let (st, ct) = doa.azimuth.sin_cos();
    [cp * ct, cp * st, sp]
}

/// Plane-wave arrival delay at each microphone relative to the reference,
/// in seconds. Negative values mean the wavefront reaches that microphone
/// earlier than the reference.
pub fn far_field_delays(array: &ArrayGeometry, doa: Doa, c: f64) -> Vec<f64> {
    let u = doa_unit_vector(doa);
    let r = array.reference_position();
    array.mic_positions.iter().map(|p| -dot(sub(*p, r), u) / c).collect()
}

/// Frequency in Hz at which the reference-to-ring spacing equals half a
/// wavelength.
pub fn aliasing_frequency(array: &ArrayGeometry, c: f64) -> f64 {
    c / (2.0 * array.max_reference_spacing())
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn three_cm_array_layout() {
        let a = build_array(0.03).unwrap();
        assert_eq!(a.num_mics(), 4);
        assert_eq!(a.reference_index, 0);
        assert_eq!(a.reference_position(), [0.0, 0.0, 0.0]);
        for p in &a.mic_positions[1..] {
            assert_abs_diff_eq!(norm(*p), 0.015, epsilon = 1e-15);
            assert_eq!(p[2], 0.0);
        }
        assert_abs_diff_eq!(a.mic_positions[1][0], 0.015, epsilon = 1e-15);
        assert_abs_diff_eq!(a.mic_positions[1][1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_positive_diameter() {
        assert!(matches!(build_array(0.0), Err(Error::InvalidArgument(_))));
        assert!(build_array(-0.1).is_err());
        assert!(build_array(f64::NAN).is_err());
    }

    #[test]
    fn ring_chord_length() {
        // 120° chord of a circle with radius 0.03 is 0.06 * sin(60°).
        let a = build_array(0.06).unwrap();
        let expected = 0.06 * (PI / 3.0).sin();
        for (i, j) in [(1, 2), (2, 3), (1, 3)] {
            let d = norm(sub(a.mic_positions[i], a.mic_positions[j]));
            assert_abs_diff_eq!(d, expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(expected, 0.05196, epsilon = 1e-5);
    }

    #[test]
    fn ring_is_balanced() {
        let a = build_array(0.09).unwrap();
        let s = a.mic_positions[1..].iter().fold([0.0; 3], |acc, p| add(acc, *p));
        assert_abs_diff_eq!(norm(s), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn unit_vectors() {
        let v = doa_unit_vector(Doa::new(0.0, 0.0));
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let v = doa_unit_vector(Doa::new(PI / 2.0, 0.0));
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-16);
        let v = doa_unit_vector(Doa::new(PI / 4.0, 0.0));
        assert_abs_diff_eq!(v[0], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn delays_for_broadside_and_endfire() {
        let a = build_array(0.03).unwrap();
        let d = far_field_delays(&a, Doa::new(0.0, 0.0), SPEED_OF_SOUND);
        assert_eq!(d[0], 0.0);
        assert_abs_diff_eq!(d[1], -0.015 / 343.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1] * 1e6, -43.73, epsilon = 0.01);
        // Ring mic 1 lies on +x, orthogonal to a DOA along +y.
        let d = far_field_delays(&a, Doa::new(PI / 2.0, 0.0), SPEED_OF_SOUND);
        assert_abs_diff_eq!(d[1], 0.0, epsilon = 1e-18);
    }

    #[test]
    fn aliasing_frequency_scales_with_aperture() {
        let f6 = aliasing_frequency(&build_array(0.06).unwrap(), SPEED_OF_SOUND);
        let f3 = aliasing_frequency(&build_array(0.03).unwrap(), SPEED_OF_SOUND);
        assert_abs_diff_eq!(f6, 343.0 / 0.06, epsilon = 1e-9);
        assert_abs_diff_eq!(f3 / f6, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn doa_between_points() {
        let d = Doa::between([1.0, 1.0, 0.0], [1.0, 3.0, 0.0]);
        assert_abs_diff_eq!(d.azimuth, PI / 2.0, epsilon = 1e-15);
        assert_eq!(d.elevation, 0.0);
        let d = Doa::between([0.0, 0.0, 0.0], [-1.0, -1e-18, 0.0]);
        assert!(d.azimuth >= 0.0 && d.azimuth < 2.0 * PI);
    }

    proptest! {
        #[test]
        fn delays_antisymmetric_under_reversal(
            theta in 0.0..(2.0 * PI),
            phi in -1.5f64..1.5,
            diameter in 0.01f64..0.2,
        ) {
            let a = build_array(diameter).unwrap();
            let fwd = far_field_delays(&a, Doa::new(theta, phi), SPEED_OF_SOUND);
            let rev = far_field_delays(&a, Doa::new(theta + PI, -phi), SPEED_OF_SOUND);
            for (x, y) in fwd.iter().zip(&rev) {
                prop_assert!((x + y).abs() < 1e-15);
            }
        }

        #[test]
        fn unit_vector_has_unit_norm(theta in -10.0f64..10.0, phi in -1.6f64..1.6) {
            let v = doa_unit_vector(Doa::new(theta, phi));
            prop_assert!((norm(v) - 1.0).abs() < 1e-12);
        }
    }
}
