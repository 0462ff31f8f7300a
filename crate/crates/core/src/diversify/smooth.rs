use ndarray::Array2;

use crate::data::HandPoseSequence;
use crate::error::{Error, Result};
use crate::nn::Mat;

pub const DEFAULT_SMOOTH_WINDOW: usize = 5;

/// Index into `0..len` after reflecting about the end frames (the end frame
/// itself is not repeated).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    (if m < len as isize { m } else { period - m }) as usize
}

/// Centered moving average along the frame axis.
pub fn smooth_frames(frames: &Mat, window: usize) -> Result<Mat> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::validation("window", format!("must be odd and positive, got {window}")));
    }
    let (t, c) = frames.dim();
    let half = (window / 2) as isize;
    let mut out = Array2::zeros((t, c));
    for i in 0..t {
        let mut row = out.row_mut(i);
        for k in -half..=half {
            row += &frames.row(reflect(i as isize + k, t));
        }
        row /= window as f64;
    }
    Ok(out)
}

pub fn temporal_smooth(hands: &HandPoseSequence, window: usize) -> Result<HandPoseSequence> {
    HandPoseSequence::new(smooth_frames(hands.frames(), window)?, hands.fps())
}

/// Frobenius norm of the second temporal difference.
pub fn second_difference_norm(frames: &Mat) -> f64 {
    let t = frames.nrows();
    if t < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 1..t - 1 {
        for j in 0..frames.ncols() {
            let d = frames[[i + 1, j]] - 2.0 * frames[[i, j]] + frames[[i - 1, j]];
            sum += d * d;
        }
    }
    sum.sqrt()
}
