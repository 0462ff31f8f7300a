use rand::Rng;

use crate::data::{HandPoseSequence, HAND_DIM};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParameterStore, TemporalConv, Var};

pub const DISCRIMINATOR_PREFIX: &str = "disc";
/// Scores are clamped to `[CLAMP, 1 − CLAMP]` so log-losses stay finite.
pub const CLAMP: f64 = 1e-7;
const SLOPE: f64 = 0.2;

/// Three temporal convolutions, a global average over time and a sigmoid.
#[derive(Clone, Debug)]
pub struct MotionDiscriminator {
    layers: [TemporalConv; 3],
}

impl MotionDiscriminator {
    pub fn new(channels: usize, kernel: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("discriminator width must be positive".into()));
        }
        let p = DISCRIMINATOR_PREFIX;
        Ok(Self {
            layers: [
                TemporalConv::new(&format!("{p}.c0"), HAND_DIM, channels, kernel)?,
                TemporalConv::new(&format!("{p}.c1"), channels, channels, kernel)?,
                TemporalConv::new(&format!("{p}.c2"), channels, 1, kernel)?,
            ],
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    /// Realism score of a T×90 hand sequence node, as a 1×1 node.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, hands: Var) -> Result<Var> {
        let mut h = hands;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = g.leaky_relu(h, SLOPE);
            }
        }
        let logit = g.mean(h);
        let p = g.sigmoid(logit);
        Ok(g.clamp(p, CLAMP, 1.0 - CLAMP))
    }

    pub fn discriminate(&self, store: &ParameterStore, hands: &HandPoseSequence) -> Result<f64> {
        let mut g = Graph::inference();
        let x = g.constant(hands.frames().clone());
        let p = self.forward(&mut g, store, x)?;
        Ok(g.scalar(p))
    }
}
