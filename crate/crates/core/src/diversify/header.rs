use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Graph, Mat, Mlp, MlpSpec, ParameterStore, Var};

pub const HEADER_PREFIX: &str = "stage2.header";

/// The learnable prior energy `M_α(w) = S_α(w) + ‖w‖²/(2σ_w²)` over
/// perturbations `w`, one per row.
#[derive(Clone, Debug)]
pub struct SamplingHeader {
    mlp: Mlp,
    dim: usize,
    sigma_w: f64,
}

impl SamplingHeader {
    pub fn new(dim: usize, hidden: usize, sigma_w: f64) -> Result<Self> {
        if !(sigma_w > 0.0 && sigma_w.is_finite()) {
            return Err(Error::Config(format!("sigma_w must be positive, got {sigma_w}")));
        }
        Ok(Self {
            mlp: Mlp::new(HEADER_PREFIX, MlpSpec::new(vec![dim, hidden, 1])?)?,
            dim,
            sigma_w,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    /// Same header with a different prior scale.
    pub fn with_sigma_w(&self, sigma_w: f64) -> Result<Self> {
        let hidden = self.mlp.spec.widths[1];
        Self::new(self.dim, hidden, sigma_w)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.mlp.init(store, rng)
    }

    fn check(&self, w: &Mat) -> Result<()> {
        if w.ncols() != self.dim {
            return Err(Error::shape("perturbation width", self.dim, w.ncols()));
        }
        Ok(())
    }

    /// `S_α(w)` for each row, N×1.
    pub fn score(&self, g: &mut Graph, store: &ParameterStore, w: Var) -> Result<Var> {
        self.check(g.value(w))?;
        self.mlp.forward(g, store, w)
    }

    /// `M_α(w)` for each row, N×1.
    pub fn energy(&self, g: &mut Graph, store: &ParameterStore, w: Var) -> Result<Var> {
        let s = self.score(g, store, w)?;
        let sq = g.square(w);
        let ones = g.constant(Array2::ones((self.dim, 1)));
        let norm = g.matmul(sq, ones)?;
        let quad = g.scale(norm, 0.5 / (self.sigma_w * self.sigma_w));
        g.add(s, quad)
    }

    /// `∇_w M_α(w)` for every row, computed directly from the layer weights.
    pub fn energy_grad(&self, store: &ParameterStore, w: &Mat) -> Result<Mat> {
        self.check(w)?;
        let slope = match self.mlp.spec.activation {
            Activation::LeakyRelu { slope } => slope,
            Activation::Identity => 1.0,
        };
        let layers = self.mlp.layers();
        let mut pre = Vec::with_capacity(layers.len());
        let mut h = w.clone();
        for (i, l) in layers.iter().enumerate() {
            let z = h.dot(store.value(&l.weight)?) + store.value(&l.bias)?;
            h = if i + 1 < layers.len() {
                z.mapv(|x| if x > 0.0 { x } else { slope * x })
            } else {
                z.clone()
            };
            pre.push(z);
        }
        let mut d = Array2::<f64>::ones((w.nrows(), 1));
        for (i, l) in layers.iter().enumerate().rev() {
            if i + 1 < layers.len() {
                ndarray::Zip::from(&mut d)
                    .and(&pre[i])
                    .for_each(|d, &z| if z <= 0.0 { *d *= slope });
            }
            d = d.dot(&store.value(&l.weight)?.t());
        }
        d.scaled_add(1.0 / (self.sigma_w * self.sigma_w), w);
        Ok(d)
    }
}

/// Energies `M_α(w)` of each row of `w`, N×1.
pub fn sampling_energy(header: &SamplingHeader, store: &ParameterStore, w: &Mat) -> Result<Mat> {
    let mut g = Graph::inference();
    let wv = g.constant(w.clone());
    let e = header.energy(&mut g, store, wv)?;
    Ok(g.value(e).clone())
}
