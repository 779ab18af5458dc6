//! Spatial-relation graph (SRG) attention block.
//!
//! A `C×H×W` feature map is average-pooled onto an `H'×W'` lattice whose
//! nodes carry polar coordinates relative to the lattice top-center. Node
//! features are globally encoded together with those coordinates, pairwise
//! affinities are scored from feature pairs plus relative geometry, and a
//! shared row-softmax attention matrix aggregates the nodes through several
//! heads. The aggregated map is fused with the pooled input, upsampled, and
//! added to a 1×1 residual projection of the full-resolution input.

mod module;
mod toy;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nncore::{
    grad_check, ops::LEAKY_SLOPE, take_tensor, Conv1x1, GradCheckConfig, GradCheckReport,
    NamedTensors, Tensor,
};
use crate::{Error, Result};

pub use module::{pairwise_offsets, SrgCache, SrgModule};
pub use toy::{toy_fit, toy_fit_module, ToyConfig, ToyReport, ToyTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrgConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pooled_height: usize,
    pub pooled_width: usize,
    pub heads: usize,
    pub leaky_slope: f64,
}

impl Default for SrgConfig {
    fn default() -> Self {
        SrgConfig {
            channels: 8,
            height: 16,
            width: 16,
            pooled_height: 4,
            pooled_width: 4,
            heads: 4,
            leaky_slope: LEAKY_SLOPE,
        }
    }
}

impl SrgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels % 2 != 0 {
            return Err(Error::contract(format!(
                "SRG channels must be even and positive, got {}",
                self.channels
            )));
        }
        if self.pooled_height == 0 || self.pooled_width == 0 {
            return Err(Error::contract("SRG pooled lattice must be non-empty"));
        }
        if self.pooled_height > self.height || self.pooled_width > self.width {
            return Err(Error::contract(format!(
                "SRG lattice {}×{} exceeds input {}×{}",
                self.pooled_height, self.pooled_width, self.height, self.width
            )));
        }
        if self.heads == 0 {
            return Err(Error::contract("SRG needs at least one head"));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::contract("SRG leaky slope must be finite"));
        }
        Ok(())
    }

    /// Number of lattice nodes `N = H'·W'`.
    pub fn nodes(&self) -> usize {
        self.pooled_height * self.pooled_width
    }

    /// Scorer hidden width `d = C/2`.
    pub fn hidden(&self) -> usize {
        self.channels / 2
    }
}

/// Polar coordinates `(r, θ)` of every lattice node, row-major, as an `N×2` tensor.
///
/// The origin is the top row at the horizontal center of the lattice (a
/// node center when `W'` is odd). `θ = atan2(lateral, down)`, positive
/// toward higher columns; `r` is divided by the largest node distance so
/// the farthest node (a bottom corner) has `r = 1`.
pub fn node_polar_map(cfg: &SrgConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (h, w) = (cfg.pooled_height, cfg.pooled_width);
    let cu = (w as f64 - 1.0) / 2.0;
    let coords: Vec<(f64, f64)> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u as f64 - cu, v as f64)))
        .collect();
    let rmax = coords.iter().map(|(x, y)| x.hypot(*y)).fold(0.0, f64::max);
    let mut data = Vec::with_capacity(2 * coords.len());
    for (x, y) in coords {
        let r = if rmax > 0.0 { x.hypot(y) / rmax } else { 0.0 };
        data.push(r);
        data.push(x.atan2(y));
    }
    Tensor::new(&[h * w, 2], data)
}

/// Learnable SRG parameters. Matrices act on row vectors from the right
/// unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct SrgParams {
    /// `(C+2)×C` global encoder applied to `[G ∥ P_g]`.
    pub w_g: Tensor,
    /// `d×(2C+2)` scorer projection of `[x̃_p ∥ x̃_q ∥ Δθ ∥ Δr]`.
    pub w_a: Tensor,
    /// `d` scorer read-out.
    pub w_b: Tensor,
    /// Geometry bias `(β_θ, β_r)` added to the raw score.
    pub bias_map: Tensor,
    /// Per-head `C×C` value projections.
    pub w_h: Vec<Tensor>,
    /// `C×C` output projection.
    pub w_o: Tensor,
    /// `2C → C` fusion of pooled input and aggregated features.
    pub fusion: Conv1x1,
    /// `C → C` full-resolution residual projection.
    pub residual: Conv1x1,
}

impl SrgParams {
    /// Uniform `±1/√fan_in` initialization from a fixed seed.
    pub fn init(cfg: &SrgConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let d = cfg.hidden();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = |n: usize| 1.0 / (n as f64).sqrt();
        Ok(SrgParams {
            w_g: Tensor::uniform(&[c + 2, c], u(c + 2), &mut rng),
            w_a: Tensor::uniform(&[d, 2 * c + 2], u(2 * c + 2), &mut rng),
            w_b: Tensor::uniform(&[d], u(d), &mut rng),
            bias_map: Tensor::uniform(&[2], u(2), &mut rng),
            w_h: (0..cfg.heads)
                .map(|_| Tensor::uniform(&[c, c], u(c), &mut rng))
                .collect(),
            w_o: Tensor::uniform(&[c, c], u(c), &mut rng),
            fusion: Conv1x1::init(2 * c, c, &mut rng),
            residual: Conv1x1::init(c, c, &mut rng),
        })
    }

    /// All-zero parameters of the right shapes.
    pub fn zeros(cfg: &SrgConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let d = cfg.hidden();
        Ok(SrgParams {
            w_g: Tensor::zeros(&[c + 2, c]),
            w_a: Tensor::zeros(&[d, 2 * c + 2]),
            w_b: Tensor::zeros(&[d]),
            bias_map: Tensor::zeros(&[2]),
            w_h: (0..cfg.heads).map(|_| Tensor::zeros(&[c, c])).collect(),
            w_o: Tensor::zeros(&[c, c]),
            fusion: Conv1x1::zeros(2 * c, c),
            residual: Conv1x1::zeros(c, c),
        })
    }

    pub fn check(&self, cfg: &SrgConfig) -> Result<()> {
        let z = Self::zeros(cfg)?;
        if self.w_h.len() != cfg.heads {
            return Err(Error::contract(format!(
                "SRG params have {} heads, config {}",
                self.w_h.len(),
                cfg.heads
            )));
        }
        for ((name, a), (_, b)) in self.named().iter().zip(z.named()) {
            if a.shape() != b.shape() {
                return Err(Error::contract(format!(
                    "SRG param {name}: shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Parameters in a fixed order with stable names.
    pub fn named(&self) -> NamedTensors {
        let mut v = vec![
            ("w_g".to_string(), self.w_g.clone()),
            ("w_a".to_string(), self.w_a.clone()),
            ("w_b".to_string(), self.w_b.clone()),
            ("bias_map".to_string(), self.bias_map.clone()),
        ];
        for (h, w) in self.w_h.iter().enumerate() {
            v.push((format!("w_h.{h}"), w.clone()));
        }
        v.push(("w_o".to_string(), self.w_o.clone()));
        v.push(("fusion.weight".to_string(), self.fusion.weight.clone()));
        v.push(("fusion.bias".to_string(), self.fusion.bias.clone()));
        v.push(("residual.weight".to_string(), self.residual.weight.clone()));
        v.push(("residual.bias".to_string(), self.residual.bias.clone()));
        v
    }

    pub fn from_named(cfg: &SrgConfig, mut set: NamedTensors) -> Result<Self> {
        let z = Self::zeros(cfg)?;
        let mut take = |name: &str, like: &Tensor| take_tensor(&mut set, name, like.shape());
        let w_g = take("w_g", &z.w_g)?;
        let w_a = take("w_a", &z.w_a)?;
        let w_b = take("w_b", &z.w_b)?;
        let bias_map = take("bias_map", &z.bias_map)?;
        let w_h = (0..cfg.heads)
            .map(|h| take(&format!("w_h.{h}"), &z.w_h[h]))
            .collect::<Result<Vec<_>>>()?;
        let w_o = take("w_o", &z.w_o)?;
        let fusion = Conv1x1::new(
            take("fusion.weight", &z.fusion.weight)?,
            take("fusion.bias", &z.fusion.bias)?,
        )?;
        let residual = Conv1x1::new(
            take("residual.weight", &z.residual.weight)?,
            take("residual.bias", &z.residual.bias)?,
        )?;
        if let Some((extra, _)) = set.first() {
            return Err(Error::format(format!("unexpected SRG tensor {extra}")));
        }
        Ok(SrgParams {
            w_g,
            w_a,
            w_b,
            bias_map,
            w_h,
            w_o,
            fusion,
            residual,
        })
    }

    /// Mutable views in the same order as [`SrgParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.w_g,
            &mut self.w_a,
            &mut self.w_b,
            &mut self.bias_map,
        ];
        v.extend(self.w_h.iter_mut());
        v.push(&mut self.w_o);
        v.push(&mut self.fusion.weight);
        v.push(&mut self.fusion.bias);
        v.push(&mut self.residual.weight);
        v.push(&mut self.residual.bias);
        v
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }
}

/// Central-difference check of every parameter and input coordinate of a
/// randomly initialized block against its analytic backward pass, on the
/// scalar loss `⟨upstream, y⟩` with a random upstream gradient.
pub fn gradient_check(cfg: &SrgConfig, seed: u64) -> Result<GradCheckReport> {
    let params = SrgParams::init(cfg, seed)?;
    let shape = [cfg.channels, cfg.height, cfg.width];
    let x = Tensor::uniform(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed + 100));
    let upstream = Tensor::uniform(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed + 200));
    let mut m = SrgModule::new(cfg.clone(), params.clone())?;
    m.forward(&x)?;
    let (g, gx) = m.backward(&upstream)?;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let n_params = names.len();
    let mut inputs = params.tensors();
    inputs.push(x);
    let mut analytic = g.tensors();
    analytic.push(gx);
    grad_check(
        &inputs,
        &analytic,
        |t| {
            let set = names
                .iter()
                .cloned()
                .zip(t[..n_params].iter().cloned())
                .collect();
            let p = SrgParams::from_named(cfg, set)?;
            SrgModule::new(cfg.clone(), p)?
                .infer(&t[n_params])?
                .dot(&upstream)
        },
        &GradCheckConfig {
            seed,
            max_coords: usize::MAX,
            ..Default::default()
        },
    )
}
