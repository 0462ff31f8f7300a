//! Axis-angle canonicalization.
//!
//! A rotation of angle `θ` about unit axis `u` is stored as the 3-vector `θu`.
//! The encoding is ambiguous up to full turns and axis flips; the canonical
//! form keeps `θ` in `[0, π]`.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Angles within this distance above `π` are already treated as canonical so
/// that canonicalization is idempotent under rounding.
const PI_SLACK: f64 = 1e-12;

/// Scale factor `f` and turn count `k` such that `f·v` is the canonical form
/// of a rotation vector with norm `theta`.
///
/// `f = 1 - 2πk/θ`, which maps an angle `θ > π` to `θ - 2πk ∈ [-π, π]`; a
/// negative result corresponds to the flipped axis.
pub(crate) fn wrap_factor(theta: f64) -> (f64, f64) {
    if theta <= PI + PI_SLACK {
        return (1.0, 0.0);
    }
    let k = ((theta - PI) / TAU).ceil();
    (1.0 - TAU * k / theta, k)
}

/// Canonicalizes one rotation vector so its angle lies in `[0, π]`.
pub fn wrap_axis_angle(v: [f64; 3]) -> Result<[f64; 3]> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation(
            "axis_angle",
            format!("non-finite component in {v:?}"),
        ));
    }
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (f, _) = wrap_factor(theta);
    Ok([v[0] * f, v[1] * f, v[2] * f])
}

/// Canonicalizes every consecutive triple of `values` in place.
pub fn wrap_in_place(values: &mut [f64]) -> Result<()> {
    if values.len() % 3 != 0 {
        return Err(Error::shape("axis-angle buffer", "multiple of 3", values.len()));
    }
    for chunk in values.chunks_exact_mut(3) {
        let w = wrap_axis_angle([chunk[0], chunk[1], chunk[2]])?;
        chunk.copy_from_slice(&w);
    }
    Ok(())
}

/// Rotation matrix of an axis-angle vector (Rodrigues' formula).
pub fn rotation_matrix(v: [f64; 3]) -> [[f64; 3]; 3] {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta < 1e-15 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let (x, y, z) = (v[0] / theta, v[1] / theta, v[2] / theta);
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// Reflects a rotation across the sagittal (y-z) plane, mapping a right-hand
/// joint rotation into the left-hand frame and back.
pub fn mirror_axis_angle(v: [f64; 3]) -> [f64; 3] {
    [v[0], -v[1], -v[2]]
}
