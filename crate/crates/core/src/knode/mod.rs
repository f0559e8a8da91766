//! Hybrid downwash model: the physics jet surrogate plus a small neural residual.

mod data;
mod train;
mod weights;

pub use data::{generate_training_data, DataConfig, Segment, TrainingScenario, TrainingSet};
pub use train::{
    evaluate_velocity_rmse, gradient, loss, train_knode, Diverged, TrainConfig, TrainOutcome,
    Windows,
};
pub use weights::{load_weights, parse_weights, save_weights, write_weights};

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::downwash::{pairwise_unchecked, DwParams, Neighbor, NeighborSet};
use crate::error::{Error, Result};
use crate::rigid_body::QuadState;

pub const FEATURE_DIM: usize = 8;

/// Fully connected tanh network with an identity output layer.
///
/// Parameters are stored flat, layer by layer: the weight matrix row-major
/// (`out x in`) followed by the bias. The network output is multiplied by
/// `output_scale` (newtons per unit output).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    pub output_scale: f64,
}

impl Mlp {
    pub fn zeros(sizes: &[usize], output_scale: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Dimension(format!("invalid layer sizes {sizes:?}")));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
            output_scale,
        })
    }

    /// Xavier-uniform hidden layers and a zero output layer, so a fresh
    /// network predicts no residual.
    pub fn init(sizes: &[usize], output_scale: f64, seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, output_scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = mlp.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (mlp.sizes[l], mlp.sizes[l + 1]);
            if l + 1 < layers {
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                for w in &mut mlp.params[offset..offset + n_in * n_out] {
                    *w = rng.gen_range(-limit..limit);
                }
            }
            offset += n_in * n_out + n_out;
        }
        Ok(mlp)
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>, output_scale: f64) -> Result<Self> {
        let expected = Self::zeros(&sizes, output_scale)?.params.len();
        if params.len() != expected {
            return Err(Error::Dimension(format!(
                "{} parameters given for layer sizes {sizes:?}, expected {expected}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) || !output_scale.is_finite() {
            return Err(Error::InvalidState("non-finite network parameter".into()));
        }
        Ok(Self {
            sizes,
            params,
            output_scale,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    /// Raw network output (without `output_scale`).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut act = x.to_vec();
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut next = b.to_vec();
            for (o, out) in next.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *out += row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
                if l + 1 < layers {
                    *out = out.tanh();
                }
            }
            act = next;
            offset += n_in * n_out + n_out;
        }
        act
    }

    /// Forward pass keeping every layer's activation for [`Mlp::backward`].
    pub(crate) fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let prev = &acts[l];
            let mut next = b.to_vec();
            for (o, out) in next.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *out += row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                if l + 1 < layers {
                    *out = out.tanh();
                }
            }
            acts.push(next);
            offset += n_in * n_out + n_out;
        }
        acts
    }

    /// Accumulate `d(out . upstream)/d params` into `grad` and return the
    /// gradient with respect to the input.
    pub(crate) fn backward(
        &self,
        acts: &[Vec<f64>],
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let off = offsets[l];
            let input = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                grad[off + n_in * n_out + o] += d;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wv;
                    }
                }
            }
            delta = prev;
        }
        delta
    }

    /// Index range of each layer's parameters.
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            let len = w[0] * w[1] + w[1];
            out.push(offset..offset + len);
            offset += len;
        }
        out
    }
}

/// Residual-network input for one (ego, above-neighbor) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DwFeatures(pub [f64; FEATURE_DIM]);

impl DwFeatures {
    /// Relative position and velocity of the neighbor, ego vertical speed and
    /// neighbor thrust over hover thrust.
    pub fn new(ego: &QuadState, neighbor: &Neighbor, hover_thrust: f64) -> Self {
        let dp = neighbor.state.p - ego.p;
        let dv = neighbor.state.v - ego.v;
        Self([
            dp.x,
            dp.y,
            dp.z,
            dv.x,
            dv.y,
            dv.z,
            ego.v.z,
            neighbor.thrust / hover_thrust,
        ])
    }

    /// Features of the nearest neighbor strictly above the ego, if any.
    pub fn nearest_above(
        ego: &QuadState,
        neighbors: &NeighborSet,
        hover_thrust: f64,
    ) -> Option<Self> {
        neighbors
            .above(ego)
            .min_by(|a, b| {
                let da = (a.state.p - ego.p).norm();
                let db = (b.state.p - ego.p).norm();
                da.total_cmp(&db).then(a.id.cmp(&b.id))
            })
            .map(|n| Self::new(ego, n, hover_thrust))
    }
}

/// Residual force in newtons; exactly zero when gated off (`None`).
pub fn knode_residual(features: Option<&DwFeatures>, mlp: &Mlp) -> Vector3<f64> {
    match features {
        None => Vector3::zeros(),
        Some(f) => {
            let out = mlp.forward(&f.0);
            Vector3::new(out[0], out[1], out[2]) * mlp.output_scale
        }
    }
}

/// Hybrid interaction force: per above-neighbor pair, the jet model plus the
/// residual evaluated on that pair's features, summed.
pub fn knode_dw_force(
    ego: &QuadState,
    neighbors: &NeighborSet,
    dw: &DwParams,
    mlp: &Mlp,
    hover_thrust: f64,
) -> Vector3<f64> {
    neighbors
        .above(ego)
        .map(|n| {
            let f = DwFeatures::new(ego, n, hover_thrust);
            pairwise_unchecked(&ego.p, &n.state.p, n.thrust, dw) + knode_residual(Some(&f), mlp)
        })
        .sum()
}
