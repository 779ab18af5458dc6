use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;

use crate::env::{State, ACTION_COUNT, STATE_DIM};
use crate::nncore::ops::{relu, relu_backward};
use crate::nncore::{take_tensor, Linear, NamedTensors, Tensor};
use crate::{Error, Result};

/// Area ratios above this are clipped before entering the network; they
/// explode when the LV is barely cut and carry no extra information there.
pub const ALPHA_CLIP: f64 = 4.0;

/// Network input for a state: the state with its area ratios clipped.
pub fn encode_state(s: &State) -> [f64; STATE_DIM] {
    let mut x = s.0;
    for v in &mut x[..5] {
        *v = v.clamp(0.0, ALPHA_CLIP);
    }
    x
}

/// `STATE_DIM → hidden → hidden → ACTION_COUNT` MLP with ReLU activations.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub layers: [Linear; 3],
}

/// Activations kept by [`QNetwork::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct QCache {
    x: Tensor,
    h1_pre: Tensor,
    h1: Tensor,
    h2_pre: Tensor,
    h2: Tensor,
}

impl QNetwork {
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::contract("Q-network hidden width must be positive"));
        }
        Ok(QNetwork {
            layers: [
                Linear::init(STATE_DIM, hidden, rng),
                Linear::init(hidden, hidden, rng),
                Linear::init(hidden, ACTION_COUNT, rng),
            ],
        })
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].outputs()
    }

    /// Q-values for a batch of states given as an `N×STATE_DIM` tensor.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, QCache)> {
        let h1_pre = self.layers[0].forward(x)?;
        let h1 = relu(&h1_pre);
        let h2_pre = self.layers[1].forward(&h1)?;
        let h2 = relu(&h2_pre);
        let q = self.layers[2].forward(&h2)?;
        Ok((
            q,
            QCache {
                x: x.clone(),
                h1_pre,
                h1,
                h2_pre,
                h2,
            },
        ))
    }

    /// Parameter gradients (in [`QNetwork::tensors_mut`] order) for the
    /// upstream gradient `g` on the output.
    pub fn backward(&self, cache: &QCache, g: &Tensor) -> Result<Vec<Tensor>> {
        let g3 = self.layers[2].backward(&cache.h2, g)?;
        let g2 = self.layers[1].backward(&cache.h1, &relu_backward(&cache.h2_pre, &g3.input)?)?;
        let g1 = self.layers[0].backward(&cache.x, &relu_backward(&cache.h1_pre, &g2.input)?)?;
        Ok(vec![
            g1.weight, g1.bias, g2.weight, g2.bias, g3.weight, g3.bias,
        ])
    }

    pub fn q_values(&self, s: &State) -> Result<[f64; ACTION_COUNT]> {
        let q = self.forward(&Tensor::new(&[1, STATE_DIM], encode_state(s).to_vec())?)?;
        let mut out = [0.0; ACTION_COUNT];
        out.copy_from_slice(q.data());
        Ok(out)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn named(&self) -> NamedTensors {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.push((format!("fc{i}.weight"), l.weight.clone()));
            v.push((format!("fc{i}.bias"), l.bias.clone()));
        }
        v
    }

    pub fn from_named(mut set: NamedTensors) -> Result<Self> {
        let hidden = set
            .iter()
            .find(|(n, _)| n == "fc0.weight")
            .map(|(_, t)| t.shape()[0])
            .ok_or_else(|| Error::format("missing tensor fc0.weight"))?;
        let dims = [
            (STATE_DIM, hidden),
            (hidden, hidden),
            (hidden, ACTION_COUNT),
        ];
        let mut layers = Vec::with_capacity(3);
        for (i, (inp, out)) in dims.into_iter().enumerate() {
            let w = take_tensor(&mut set, &format!("fc{i}.weight"), &[out, inp])?;
            let b = take_tensor(&mut set, &format!("fc{i}.bias"), &[out])?;
            layers.push(Linear::new(w, b)?);
        }
        if let Some((extra, _)) = set.first() {
            return Err(Error::format(format!(
                "unexpected Q-network tensor {extra}"
            )));
        }
        let [a, b, c]: [Linear; 3] = layers.try_into().expect("three layers");
        Ok(QNetwork { layers: [a, b, c] })
    }

    /// Hash of the exact parameter bits; equal hashes mean identical weights
    /// for all practical purposes.
    pub fn param_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.layers {
            for t in [&l.weight, &l.bias] {
                t.shape().hash(&mut h);
                for v in t.data() {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}
