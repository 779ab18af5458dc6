use std::f64::consts::PI;

use super::{node_polar_map, SrgConfig, SrgParams};
use crate::nncore::ops::{
    avg_pool_2d, avg_pool_2d_backward, concat_channels, concat_channels_backward, matmul,
    matmul_backward, relu, relu_backward, row_softmax, row_softmax_backward, upsample_nearest_2d,
    upsample_nearest_2d_backward,
};
use crate::nncore::{Conv1x1, Tensor};
use crate::{Error, Result};

/// Pairwise `(Δθ, Δr)` matrices (`N×N`, row-major) for a polar map `N×2`.
///
/// `Δθ_pq` is wrapped into `(-π, π]`; `Δr_pq = r_p − r_q`.
pub fn pairwise_offsets(polar: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, two) = polar.dims2("pairwise_offsets")?;
    if two != 2 {
        return Err(Error::contract("pairwise_offsets: polar map must be N×2"));
    }
    let p = polar.data();
    let mut dth = vec![0.0; n * n];
    let mut dr = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = p[2 * i + 1] - p[2 * j + 1];
            let mut w = d.sin().atan2(d.cos());
            if w == -PI {
                w = PI;
            }
            dth[i * n + j] = w;
            dr[i * n + j] = p[2 * i] - p[2 * j];
        }
    }
    Ok((dth, dr))
}

/// Intermediates from the last forward pass, needed by backward.
#[derive(Debug, Clone)]
pub struct SrgCache {
    x: Tensor,
    encoder_in: Tensor,
    encoder_pre: Tensor,
    encoded: Tensor,
    /// `N×N×d` scorer pre-activations.
    scorer_pre: Vec<f64>,
    attention: Tensor,
    values: Vec<Tensor>,
    head_pre: Vec<Tensor>,
    aggregated: Tensor,
    fusion_in: Tensor,
}

impl SrgCache {
    /// Row-stochastic attention matrix `A` (`N×N`).
    pub fn attention(&self) -> &Tensor {
        &self.attention
    }

    /// Head-summed aggregation `M` (`N×C`).
    pub fn aggregated(&self) -> &Tensor {
        &self.aggregated
    }
}

/// SRG block with its parameters, fixed lattice geometry and forward cache.
#[derive(Debug, Clone)]
pub struct SrgModule {
    cfg: SrgConfig,
    pub params: SrgParams,
    polar: Tensor,
    dtheta: Vec<f64>,
    dr: Vec<f64>,
    cache: Option<SrgCache>,
}

fn nodes_to_rows(t: &Tensor, c: usize, n: usize) -> Result<Tensor> {
    t.reshape(&[c, n])?.transpose()
}

fn rows_to_map(t: &Tensor, c: usize, h: usize, w: usize) -> Result<Tensor> {
    t.transpose()?.reshape(&[c, h, w])
}

impl SrgModule {
    pub fn new(cfg: SrgConfig, params: SrgParams) -> Result<Self> {
        cfg.validate()?;
        params.check(&cfg)?;
        let polar = node_polar_map(&cfg)?;
        let (dtheta, dr) = pairwise_offsets(&polar)?;
        Ok(SrgModule {
            cfg,
            params,
            polar,
            dtheta,
            dr,
            cache: None,
        })
    }

    pub fn config(&self) -> &SrgConfig {
        &self.cfg
    }

    pub fn polar(&self) -> &Tensor {
        &self.polar
    }

    pub fn cache(&self) -> Option<&SrgCache> {
        self.cache.as_ref()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Runs the block on a `C×H×W` map, caching intermediates for [`Self::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, cache) = self.run(x)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Forward pass without touching the cache.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x)?.0)
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, SrgCache)> {
        let cfg = &self.cfg;
        let p = &self.params;
        let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
        let (hp, wp) = (cfg.pooled_height, cfg.pooled_width);
        let n = cfg.nodes();
        let d = cfg.hidden();
        if x.shape() != [c, h, w] {
            return Err(Error::contract(format!(
                "SRG input {:?}, expected [{c}, {h}, {w}]",
                x.shape()
            )));
        }

        let pooled = avg_pool_2d(x, hp, wp)?;
        let g = nodes_to_rows(&pooled, c, n)?;
        let mut enc_in = Vec::with_capacity(n * (c + 2));
        for i in 0..n {
            enc_in.extend_from_slice(&g.data()[i * c..(i + 1) * c]);
            enc_in.extend_from_slice(&self.polar.data()[2 * i..2 * i + 2]);
        }
        let encoder_in = Tensor::new(&[n, c + 2], enc_in)?;
        let encoder_pre = matmul(&encoder_in, &p.w_g)?;
        let encoded = relu(&encoder_pre);

        // z_pq = U·x̃_p + V·x̃_q + a_θ·Δθ_pq + a_r·Δr_pq, with W_a = [U | V | a_θ | a_r].
        let wa = p.w_a.data();
        let row = 2 * c + 2;
        let xt = encoded.data();
        let mut up = vec![0.0; n * d];
        let mut vq = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                let wr = &wa[k * row..(k + 1) * row];
                let xi = &xt[i * c..(i + 1) * c];
                up[i * d + k] = xi.iter().zip(&wr[..c]).map(|(a, b)| a * b).sum();
                vq[i * d + k] = xi.iter().zip(&wr[c..2 * c]).map(|(a, b)| a * b).sum();
            }
        }
        let slope = cfg.leaky_slope;
        let (bt, br) = (p.bias_map.data()[0], p.bias_map.data()[1]);
        let mut scorer_pre = vec![0.0; n * n * d];
        let mut scores = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let e = i * n + j;
                let (dt, dr) = (self.dtheta[e], self.dr[e]);
                let mut s = bt * dt + br * dr;
                for k in 0..d {
                    let z = up[i * d + k]
                        + vq[j * d + k]
                        + wa[k * row + 2 * c] * dt
                        + wa[k * row + 2 * c + 1] * dr;
                    scorer_pre[e * d + k] = z;
                    s += p.w_b.data()[k] * if z > 0.0 { z } else { slope * z };
                }
                scores[e] = s;
            }
        }
        let attention = row_softmax(&Tensor::new(&[n, n], scores)?)?;

        let mut values = Vec::with_capacity(cfg.heads);
        let mut head_pre = Vec::with_capacity(cfg.heads);
        let mut aggregated = Tensor::zeros(&[n, c]);
        for wh in &p.w_h {
            let v = matmul(&encoded, wh)?;
            let pre = matmul(&attention, &v)?;
            aggregated = aggregated.add(&relu(&pre))?;
            values.push(v);
            head_pre.push(pre);
        }
        let y = matmul(&aggregated, &p.w_o)?;
        let y_map = rows_to_map(&y, c, hp, wp)?;
        let fusion_in = concat_channels(&pooled, &y_map)?;
        let fused = p.fusion.forward(&fusion_in)?;
        let up_map = upsample_nearest_2d(&fused, h, w)?;
        let out = up_map.add(&p.residual.forward(x)?)?;

        let cache = SrgCache {
            x: x.clone(),
            encoder_in,
            encoder_pre,
            encoded,
            scorer_pre,
            attention,
            values,
            head_pre,
            aggregated,
            fusion_in,
        };
        Ok((out, cache))
    }

    /// Gradients of `Σ upstream ⊙ output` for the cached forward pass,
    /// returned as `(parameter gradients, input gradient)`.
    pub fn backward(&self, upstream: &Tensor) -> Result<(SrgParams, Tensor)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::contract("SRG backward called without a forward pass"))?;
        let cfg = &self.cfg;
        let p = &self.params;
        let (c, h, w) = (cfg.channels, cfg.height, cfg.width);
        let (hp, wp) = (cfg.pooled_height, cfg.pooled_width);
        let n = cfg.nodes();
        let d = cfg.hidden();
        if upstream.shape() != [c, h, w] {
            return Err(Error::contract(format!(
                "SRG upstream {:?}, expected [{c}, {h}, {w}]",
                upstream.shape()
            )));
        }

        let res = p.residual.backward(&cache.x, upstream)?;
        let g_fused = upsample_nearest_2d_backward(upstream, hp, wp)?;
        let fus = p.fusion.backward(&cache.fusion_in, &g_fused)?;
        let (g_pooled_direct, g_ymap) = concat_channels_backward(&fus.input, c)?;
        let g_y = nodes_to_rows(&g_ymap, c, n)?;

        let (g_agg, g_wo) = matmul_backward(&cache.aggregated, &p.w_o, &g_y)?;
        let mut g_att = Tensor::zeros(&[n, n]);
        let mut g_encoded = Tensor::zeros(&[n, c]);
        let mut g_wh = Vec::with_capacity(cfg.heads);
        for ((wh, v), pre) in p.w_h.iter().zip(&cache.values).zip(&cache.head_pre) {
            let g_pre = relu_backward(pre, &g_agg)?;
            let (ga, gv) = matmul_backward(&cache.attention, v, &g_pre)?;
            g_att = g_att.add(&ga)?;
            let (ge, gw) = matmul_backward(&cache.encoded, wh, &gv)?;
            g_encoded = g_encoded.add(&ge)?;
            g_wh.push(gw);
        }

        let g_scores = row_softmax_backward(&cache.attention, &g_att)?;
        let gs = g_scores.data();
        let wa = p.w_a.data();
        let row = 2 * c + 2;
        let slope = cfg.leaky_slope;
        let mut g_bias = [0.0; 2];
        let mut g_wb = vec![0.0; d];
        let mut g_up = vec![0.0; n * d];
        let mut g_vq = vec![0.0; n * d];
        let mut g_at = vec![0.0; d];
        let mut g_ar = vec![0.0; d];
        for i in 0..n {
            for j in 0..n {
                let e = i * n + j;
                let (dt, dr) = (self.dtheta[e], self.dr[e]);
                g_bias[0] += gs[e] * dt;
                g_bias[1] += gs[e] * dr;
                for k in 0..d {
                    let z = cache.scorer_pre[e * d + k];
                    let (act, dact) = if z > 0.0 {
                        (z, 1.0)
                    } else {
                        (slope * z, slope)
                    };
                    g_wb[k] += gs[e] * act;
                    let gz = gs[e] * p.w_b.data()[k] * dact;
                    g_up[i * d + k] += gz;
                    g_vq[j * d + k] += gz;
                    g_at[k] += gz * dt;
                    g_ar[k] += gz * dr;
                }
            }
        }
        let xt = cache.encoded.data();
        let mut g_wa = vec![0.0; d * row];
        let mut g_enc = g_encoded.into_data();
        for k in 0..d {
            for i in 0..n {
                let (gu, gv) = (g_up[i * d + k], g_vq[i * d + k]);
                for ch in 0..c {
                    g_wa[k * row + ch] += gu * xt[i * c + ch];
                    g_wa[k * row + c + ch] += gv * xt[i * c + ch];
                    g_enc[i * c + ch] += gu * wa[k * row + ch] + gv * wa[k * row + c + ch];
                }
            }
            g_wa[k * row + 2 * c] = g_at[k];
            g_wa[k * row + 2 * c + 1] = g_ar[k];
        }
        let g_encoded = Tensor::new(&[n, c], g_enc)?;

        let g_enc_pre = relu_backward(&cache.encoder_pre, &g_encoded)?;
        let (g_enc_in, g_wg) = matmul_backward(&cache.encoder_in, &p.w_g, &g_enc_pre)?;
        let mut g_g = Vec::with_capacity(n * c);
        for r in g_enc_in.data().chunks(c + 2) {
            g_g.extend_from_slice(&r[..c]);
        }
        let g_pooled =
            rows_to_map(&Tensor::new(&[n, c], g_g)?, c, hp, wp)?.add(&g_pooled_direct)?;
        let g_x = avg_pool_2d_backward(&g_pooled, h, w)?.add(&res.input)?;

        let grads = SrgParams {
            w_g: g_wg,
            w_a: Tensor::new(&[d, row], g_wa)?,
            w_b: Tensor::new(&[d], g_wb)?,
            bias_map: Tensor::new(&[2], g_bias.to_vec())?,
            w_h: g_wh,
            w_o: g_wo,
            fusion: Conv1x1 {
                weight: fus.weight,
                bias: fus.bias,
            },
            residual: Conv1x1 {
                weight: res.weight,
                bias: res.bias,
            },
        };
        Ok((grads, g_x))
    }
}
