//! Stage one: body sequence → initial two-hand sequence.

mod discriminator;

pub use discriminator::{MotionDiscriminator, CLAMP as DISCRIMINATOR_CLAMP, DISCRIMINATOR_PREFIX};

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BodyPoseSequence, HandPoseSequence, HandSide, BODY_DIM, CANONICAL_FRAMES, HAND_DIM};
use crate::error::{Error, Result};
use crate::memory::{argmax, cosine, ema_update, random_slots, read_soft_graph, tmm_enhance, MotionEncoder};
use crate::nn::{positional_encoding, AttentionBlock, Graph, Mat, Mlp, MlpSpec, ParameterStore, Var};

pub const STAGE_ONE_PREFIX: &str = "stage1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub heads: usize,
    pub frames: usize,
    pub attention_blocks: usize,
    pub srm_slots: usize,
    pub tmm_slots: usize,
    pub gamma: f64,
    pub disc_channels: usize,
    pub disc_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            heads: 8,
            frames: CANONICAL_FRAMES,
            attention_blocks: 3,
            srm_slots: 512,
            tmm_slots: 512,
            gamma: 0.8,
            disc_channels: 64,
            disc_kernel: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("heads", self.heads),
            ("frames", self.frames),
            ("attention_blocks", self.attention_blocks),
            ("srm_slots", self.srm_slots),
            ("tmm_slots", self.tmm_slots),
            ("disc_channels", self.disc_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.channels ({}) must be divisible by model.heads ({})",
                self.channels, self.heads
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("model.gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.disc_kernel % 2 == 0 {
            return Err(Error::Config("model.disc_kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Graph nodes of one stage-one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct StageOneTrace {
    /// T×90 canonical hand prediction.
    pub hands: Var,
    /// T×C body features including positional encoding.
    pub body_features: Var,
    /// Per-side T×C projections, indexed like [`HandSide::BOTH`].
    pub hand_features: [Var; 2],
    /// T×1 body motion embedding.
    pub body_motion: Var,
}

/// Values a training step feeds to the memory EMA updates.
#[derive(Clone, Debug)]
pub struct MemoryUpdate {
    pub body_features: Mat,
    pub hand_features: [Mat; 2],
    pub body_motion: Mat,
}

impl MemoryUpdate {
    pub fn from_trace(g: &Graph, trace: &StageOneTrace) -> Self {
        Self {
            body_features: g.value(trace.body_features).clone(),
            hand_features: [
                g.value(trace.hand_features[0]).clone(),
                g.value(trace.hand_features[1]).clone(),
            ],
            body_motion: g.value(trace.body_motion).clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Branch {
    projection: Mlp,
    srm: String,
    tmm: String,
    blocks: Vec<AttentionBlock>,
}

#[derive(Clone, Debug)]
pub struct StageOneModel {
    config: ModelConfig,
    body: Mlp,
    motion: MotionEncoder,
    body_transformer: AttentionBlock,
    branches: [Branch; 2],
    merge: Mlp,
    decoder: Vec<AttentionBlock>,
    head: Mlp,
    positions: Mat,
    training: bool,
}

pub fn srm_bank_name(side: HandSide) -> String {
    format!("srm.{}.slots", side.name())
}

pub fn tmm_bank_name(side: HandSide) -> String {
    format!("tmm.{}.slots", side.name())
}

fn side_index(side: HandSide) -> usize {
    match side {
        HandSide::Left => 0,
        HandSide::Right => 1,
    }
}

impl StageOneModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let p = STAGE_ONE_PREFIX;
        let block = |name: String| AttentionBlock::new(&name, c, config.heads, 2 * c);
        let branch = |side: HandSide| -> Result<Branch> {
            Ok(Branch {
                projection: Mlp::new(&format!("{p}.bhd.{}", side.name()), MlpSpec::new(vec![c, c, c])?)?,
                srm: srm_bank_name(side),
                tmm: tmm_bank_name(side),
                blocks: (0..config.attention_blocks)
                    .map(|k| block(format!("{p}.hand_tf.{}.{k}", side.name())))
                    .collect::<Result<_>>()?,
            })
        };
        Ok(Self {
            body: Mlp::new(&format!("{p}.body"), MlpSpec::new(vec![BODY_DIM, c, c])?)?,
            motion: MotionEncoder::new(&format!("{p}.motion"), config.frames)?,
            body_transformer: block(format!("{p}.body_tf"))?,
            branches: [branch(HandSide::Left)?, branch(HandSide::Right)?],
            merge: Mlp::new(&format!("{p}.merge"), MlpSpec::new(vec![2 * c, c, c])?)?,
            decoder: (0..config.attention_blocks)
                .map(|k| block(format!("{p}.dec.{k}")))
                .collect::<Result<_>>()?,
            head: Mlp::new(&format!("{p}.head"), MlpSpec::new(vec![c, c, HAND_DIM])?)?,
            positions: positional_encoding(config.frames, c),
            training: true,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    /// Adds every stage-one parameter and memory bank to `store`.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.body.init(store, rng)?;
        self.motion.init(store, rng)?;
        self.body_transformer.init(store, rng)?;
        for b in &self.branches {
            b.projection.init(store, rng)?;
            store.insert(&b.srm, random_slots(self.config.srm_slots, self.config.channels, rng))?;
            store.insert(&b.tmm, random_slots(self.config.tmm_slots, self.config.frames, rng))?;
            for blk in &b.blocks {
                blk.init(store, rng)?;
            }
        }
        self.merge.init(store, rng)?;
        for blk in &self.decoder {
            blk.init(store, rng)?;
        }
        self.head.init(store, rng)
    }

    /// Names of the memory bank tensors, in a fixed order.
    pub fn bank_names(&self) -> Vec<String> {
        self.branches
            .iter()
            .flat_map(|b| [b.srm.clone(), b.tmm.clone()])
            .collect()
    }

    fn check_body(&self, body: &Mat) -> Result<()> {
        if body.ncols() != BODY_DIM {
            return Err(Error::shape("body frames", BODY_DIM, body.ncols()));
        }
        if body.nrows() != self.config.frames {
            return Err(Error::shape("body sequence length", self.config.frames, body.nrows()));
        }
        Ok(())
    }

    /// Per-frame body MLP plus positional encoding: T×24 → T×C.
    pub fn encode_body(&self, g: &mut Graph, store: &ParameterStore, body: Var) -> Result<Var> {
        self.check_body(g.value(body))?;
        let f = self.body.forward(g, store, body)?;
        let pe = g.constant(self.positions.clone());
        g.add(f, pe)
    }

    /// Side-specific projection of body features into hand features.
    pub fn project_to_hand(&self, g: &mut Graph, store: &ParameterStore, body_features: Var, side: HandSide) -> Result<Var> {
        self.branches[side_index(side)].projection.forward(g, store, body_features)
    }

    /// Spatial-residual memory: each frame's body feature reads the bank,
    /// and the read drives the next frame's hand feature.
    fn spatial_memory(&self, g: &mut Graph, store: &ParameterStore, branch: &Branch, fb: Var, fsh: Var) -> Result<Var> {
        let slots = g.param(store, &branch.srm)?;
        let (delta, _) = read_soft_graph(g, fb, slots)?;
        let mix = g.srm_mix(delta, fsh)?;
        let frames = g.value(fsh).nrows();
        if frames == 1 {
            return Ok(fsh);
        }
        let first = g.slice_rows(fsh, 0, 1)?;
        let prev = g.slice_rows(fsh, 0, frames - 1)?;
        let prev_mix = g.slice_rows(mix, 0, frames - 1)?;
        let next = g.add(prev, prev_mix)?;
        g.concat_rows(&[first, next])
    }

    fn temporal_memory(&self, g: &mut Graph, store: &ParameterStore, branch: &Branch, features: Var, motion: Var) -> Result<Var> {
        let slots = g.param(store, &branch.tmm)?;
        let query = g.transpose(motion);
        let (read, _) = read_soft_graph(g, query, slots)?;
        let hand_motion = g.transpose(read);
        tmm_enhance(g, features, hand_motion)
    }

    /// Full stage-one pass for one T×24 body sequence.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, body: Var) -> Result<StageOneTrace> {
        let fb = self.encode_body(g, store, body)?;
        let motion = self.motion.forward(g, store, fb)?;
        let (query, _) = self.body_transformer.forward(g, store, fb, fb)?;
        let mut hand_features = [fb; 2];
        let mut streams = [fb; 2];
        for (i, branch) in self.branches.iter().enumerate() {
            let fsh = branch.projection.forward(g, store, fb)?;
            hand_features[i] = fsh;
            let spatial = self.spatial_memory(g, store, branch, fb, fsh)?;
            let enhanced = self.temporal_memory(g, store, branch, spatial, motion)?;
            let mut x = query;
            for blk in &branch.blocks {
                x = blk.forward(g, store, x, enhanced)?.0;
            }
            streams[i] = x;
        }
        let joined = g.concat_cols(&streams)?;
        let mut y = self.merge.forward(g, store, joined)?;
        for (k, blk) in self.decoder.iter().enumerate() {
            let context = if k == 0 { y } else { fb };
            y = blk.forward(g, store, y, context)?.0;
        }
        let raw = self.head.forward(g, store, y)?;
        let hands = g.wrap_axis_angle(raw)?;
        Ok(StageOneTrace {
            hands,
            body_features: fb,
            hand_features,
            body_motion: motion,
        })
    }

    /// Inference over a batch of body sequences.
    pub fn predict(&self, store: &ParameterStore, bodies: &[BodyPoseSequence]) -> Result<Vec<HandPoseSequence>> {
        bodies
            .iter()
            .map(|b| {
                let mut g = Graph::inference();
                let x = g.constant(b.frames().clone());
                let trace = self.forward(&mut g, store, x)?;
                HandPoseSequence::new(g.value(trace.hands).clone(), b.fps())
            })
            .collect()
    }

    /// One EMA pass over every frame of the given sequences. SRM slots are
    /// selected by the body feature and move toward the detached hand
    /// feature; TMM slots are selected by and move toward the body motion.
    pub fn update_memories(&self, store: &mut ParameterStore, updates: &[MemoryUpdate]) -> Result<()> {
        if !self.training {
            return Err(Error::FrozenBank("stage-one memories".into()));
        }
        let gamma = self.config.gamma;
        for (i, branch) in self.branches.iter().enumerate() {
            let slots = store.value_mut(&branch.srm)?;
            for u in updates {
                for (q, target) in u.body_features.rows().into_iter().zip(u.hand_features[i].rows()) {
                    let sims: Vec<f64> = slots.rows().into_iter().map(|m| cosine(q, m)).collect();
                    ema_update(slots, argmax(&sims), target, gamma);
                }
            }
            let slots = store.value_mut(&branch.tmm)?;
            for u in updates {
                let q: Array1<f64> = u.body_motion.column(0).to_owned();
                let sims: Vec<f64> = slots.rows().into_iter().map(|m| cosine(q.view(), m)).collect();
                ema_update(slots, argmax(&sims), q.view(), gamma);
            }
        }
        if !store.all_finite() {
            return Err(Error::NonFinite {
                context: "memory update".into(),
            });
        }
        Ok(())
    }
}
