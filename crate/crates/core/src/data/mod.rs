//! Body and hand pose sequences, their on-disk format, synthetic data and
//! dataset splits.

pub mod axis_angle;
mod io;
mod split;
mod synth;

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use axis_angle::{mirror_axis_angle, rotation_matrix, wrap_axis_angle};
pub use io::{load_body, load_dataset, load_sequence, save_dataset, save_sequence, MANIFEST_FILE};
pub use split::{split_dataset, SplitRatios};
pub use synth::{generate_synthetic, SYNTHETIC_FPS};

pub const BODY_JOINTS: usize = 8;
pub const BODY_DIM: usize = BODY_JOINTS * 3;
pub const HAND_JOINTS: usize = 30;
pub const HAND_DIM: usize = HAND_JOINTS * 3;
pub const SINGLE_HAND_JOINTS: usize = HAND_JOINTS / 2;
pub const SINGLE_HAND_DIM: usize = SINGLE_HAND_JOINTS * 3;
/// Sequence length used throughout training and evaluation.
pub const CANONICAL_FRAMES: usize = 64;

fn validate_frames(field: &str, frames: &Array2<f64>, width: usize) -> Result<()> {
    if frames.nrows() == 0 {
        return Err(Error::validation(field, "sequence has no frames"));
    }
    if frames.ncols() != width {
        return Err(Error::validation(
            field,
            format!("expected {width} values per frame, got {}", frames.ncols()),
        ));
    }
    if let Some((i, _)) = frames.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(Error::validation(
            field,
            format!("non-finite value at frame {}, channel {}", i / width, i % width),
        ));
    }
    Ok(())
}

fn canonicalize(frames: &mut Array2<f64>) {
    for mut row in frames.rows_mut() {
        let slice = row.as_slice_mut().expect("standard layout");
        axis_angle::wrap_in_place(slice).expect("validated finite frames");
    }
}

/// `T` frames of 8 upper-body joints in axis-angle form (`T × 24`).
#[derive(Clone, Debug, PartialEq)]
pub struct BodyPoseSequence {
    frames: Array2<f64>,
    fps: u32,
}

impl BodyPoseSequence {
    pub fn new(frames: Array2<f64>, fps: u32) -> Result<Self> {
        validate_frames("body", &frames, BODY_DIM)?;
        if fps == 0 {
            return Err(Error::validation("fps", "must be positive"));
        }
        Ok(Self {
            frames: frames.as_standard_layout().into_owned(),
            fps,
        })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn canonicalize(&mut self) {
        canonicalize(&mut self.frames);
    }
}

/// `T` frames of 30 hand joints (left hand first) in axis-angle form (`T × 90`).
#[derive(Clone, Debug, PartialEq)]
pub struct HandPoseSequence {
    frames: Array2<f64>,
    fps: u32,
}

impl HandPoseSequence {
    pub fn new(frames: Array2<f64>, fps: u32) -> Result<Self> {
        validate_frames("hands", &frames, HAND_DIM)?;
        if fps == 0 {
            return Err(Error::validation("fps", "must be positive"));
        }
        Ok(Self {
            frames: frames.as_standard_layout().into_owned(),
            fps,
        })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn canonicalize(&mut self) {
        canonicalize(&mut self.frames);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

impl HandSide {
    pub const BOTH: [HandSide; 2] = [HandSide::Left, HandSide::Right];

    pub fn name(self) -> &'static str {
        match self {
            HandSide::Left => "left",
            HandSide::Right => "right",
        }
    }

    /// First column of this hand inside a 90-wide two-hand frame.
    pub fn column_offset(self) -> usize {
        match self {
            HandSide::Left => 0,
            HandSide::Right => SINGLE_HAND_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleHandPoseSequence {
    frames: Array2<f64>,
    fps: u32,
    side: HandSide,
}

impl SingleHandPoseSequence {
    pub fn new(frames: Array2<f64>, fps: u32, side: HandSide) -> Result<Self> {
        validate_frames(side.name(), &frames, SINGLE_HAND_DIM)?;
        Ok(Self { frames, fps, side })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn side(&self) -> HandSide {
        self.side
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    /// Frames expressed in the left-hand joint frame (right hands mirrored).
    pub fn in_left_frame(&self) -> Array2<f64> {
        match self.side {
            HandSide::Left => self.frames.clone(),
            HandSide::Right => mirror_frames(&self.frames),
        }
    }
}

/// Mirrors every axis-angle triple across the sagittal plane.
pub fn mirror_frames(frames: &Array2<f64>) -> Array2<f64> {
    let mut out = frames.clone();
    for mut row in out.rows_mut() {
        for j in (0..row.len()).step_by(3) {
            let m = mirror_axis_angle([row[j], row[j + 1], row[j + 2]]);
            row[j + 1] = m[1];
            row[j + 2] = m[2];
        }
    }
    out
}

/// Joints 0..15 form the left hand, 15..30 the right.
pub fn split_hands(h: &HandPoseSequence) -> (SingleHandPoseSequence, SingleHandPoseSequence) {
    let left = h.frames.slice(s![.., ..SINGLE_HAND_DIM]).to_owned();
    let right = h.frames.slice(s![.., SINGLE_HAND_DIM..]).to_owned();
    (
        SingleHandPoseSequence {
            frames: left,
            fps: h.fps,
            side: HandSide::Left,
        },
        SingleHandPoseSequence {
            frames: right,
            fps: h.fps,
            side: HandSide::Right,
        },
    )
}

pub fn merge_hands(
    left: &SingleHandPoseSequence,
    right: &SingleHandPoseSequence,
) -> Result<HandPoseSequence> {
    if left.side != HandSide::Left || right.side != HandSide::Right {
        return Err(Error::validation("side", "merge expects (left, right)"));
    }
    if left.len() != right.len() {
        return Err(Error::validation(
            "right",
            format!("frame count {} does not match left hand's {}", right.len(), left.len()),
        ));
    }
    if left.fps != right.fps {
        return Err(Error::validation(
            "fps",
            format!("left {} vs right {}", left.fps, right.fps),
        ));
    }
    let frames = concatenate(Axis(1), &[left.frames.view(), right.frames.view()])
        .expect("equal row counts");
    HandPoseSequence::new(frames, left.fps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    pub speaker_id: String,
    pub body: BodyPoseSequence,
    pub hands: HandPoseSequence,
}

impl SequenceRecord {
    pub fn new(
        id: impl Into<String>,
        speaker_id: impl Into<String>,
        body: BodyPoseSequence,
        hands: HandPoseSequence,
    ) -> Result<Self> {
        if body.len() != hands.len() {
            return Err(Error::validation(
                "hands",
                format!("{} frames but body has {}", hands.len(), body.len()),
            ));
        }
        if body.fps() != hands.fps() {
            return Err(Error::validation(
                "fps",
                format!("body {} vs hands {}", body.fps(), hands.fps()),
            ));
        }
        Ok(Self {
            id: id.into(),
            speaker_id: speaker_id.into(),
            body,
            hands,
        })
    }

    pub fn frames(&self) -> usize {
        self.body.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::validation("split", format!("unknown split `{other}`"))),
        }
    }
}

/// Records plus their split labels. Unsplit datasets carry `None` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SequenceRecord>,
    pub splits: Vec<Option<Split>>,
}

impl DatasetManifest {
    pub fn new(records: Vec<SequenceRecord>) -> Self {
        let splits = vec![None; records.len()];
        Self { records, splits }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records labelled `split`, in manifest order.
    pub fn subset(&self, split: Split) -> Vec<&SequenceRecord> {
        self.records
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == Some(split))
            .map(|(r, _)| r)
            .collect()
    }

    /// Training records, or every record when the dataset is unsplit.
    pub fn training_records(&self) -> Vec<&SequenceRecord> {
        if self.splits.iter().all(Option::is_none) {
            self.records.iter().collect()
        } else {
            self.subset(Split::Train)
        }
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == Some(split)).count()
    }

    /// Stable digest of record ids and split labels.
    pub fn split_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (r, s) in self.records.iter().zip(&self.splits) {
            hasher.update(r.id.as_bytes());
            hasher.update([0u8]);
            let label = match s {
                Some(Split::Train) => "train",
                Some(Split::Val) => "val",
                Some(Split::Test) => "test",
                None => "-",
            };
            hasher.update(label.as_bytes());
            hasher.update([0u8]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
