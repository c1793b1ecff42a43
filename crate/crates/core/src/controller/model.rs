//! Embedding + gated recurrent cell + one linear head per decision, with hand-derived gradients.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::features::{Decision, Layout};

pub const HIDDEN: usize = 64;
pub const EMBED: usize = 32;
pub const POLICY_MAGIC: &[u8; 8] = b"NISPOL01";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug)]
struct Offsets {
    emb_w: usize,
    emb_b: usize,
    w: usize,
    u: usize,
    b: usize,
    c: usize,
    heads: [(usize, usize); 7],
    total: usize,
}

/// Policy parameters stored flat in declaration order: embedding matrix and bias,
/// input and recurrent gate matrices (reset, update, candidate), gate biases,
/// candidate recurrent bias, then weight and bias of each head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub layout: Layout,
    pub hidden: usize,
    pub embed: usize,
    pub params: Vec<f64>,
}

/// Everything the backward pass needs from one step.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub e: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    pub un: Vec<f64>,
    pub h: Vec<f64>,
    pub logits: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|v| v / s).collect()
}

/// Softmax for categorical heads, element-wise sigmoid for the gamma head.
pub fn head_probs(d: Decision, logits: &[f64]) -> Vec<f64> {
    match d {
        Decision::Gamma => logits.iter().map(|&l| sigmoid(l)).collect(),
        _ => softmax(logits),
    }
}

impl Model {
    pub fn new(layout: Layout, hidden: usize, seed: u64) -> Self {
        let embed = EMBED;
        let off = Self::offsets(&layout, hidden, embed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; off.total];
        let mut fill = |from: usize, len: usize, scale: f64| {
            for p in &mut params[from..from + len] {
                *p = rng.random_range(-scale..scale);
            }
        };
        fill(off.emb_w, layout.input_dim * embed, 0.1);
        fill(off.w, 3 * hidden * embed, 1.0 / (embed as f64).sqrt());
        fill(off.u, 3 * hidden * hidden, 1.0 / (hidden as f64).sqrt());
        for (d, &(w, _)) in Decision::ALL.iter().zip(&off.heads) {
            fill(w, layout.heads[d.index()] * hidden, 0.1);
        }
        Model {
            layout,
            hidden,
            embed,
            params,
        }
    }

    fn offsets(layout: &Layout, h: usize, e: usize) -> Offsets {
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let emb_w = take(layout.input_dim * e);
        let emb_b = take(e);
        let w = take(3 * h * e);
        let u = take(3 * h * h);
        let b = take(3 * h);
        let c = take(h);
        let mut heads = [(0, 0); 7];
        for (i, hd) in heads.iter_mut().enumerate() {
            let k = layout.heads[i];
            let wo = take(k * h);
            let bo = take(k);
            *hd = (wo, bo);
        }
        Offsets {
            emb_w,
            emb_b,
            w,
            u,
            b,
            c,
            heads,
            total: at,
        }
    }

    fn off(&self) -> Offsets {
        Self::offsets(&self.layout, self.hidden, self.embed)
    }

    pub fn head_bias_mut(&mut self, d: Decision) -> &mut [f64] {
        let (_, b) = self.off().heads[d.index()];
        let k = self.layout.heads[d.index()];
        &mut self.params[b..b + k]
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// One recurrent step on sparse input `active`, then the head of decision `d`.
    pub fn step(&self, active: &[u32], h_prev: &[f64], d: Decision) -> StepCache {
        let (h, e_dim) = (self.hidden, self.embed);
        let o = self.off();
        let p = &self.params;
        let mut e = p[o.emb_b..o.emb_b + e_dim].to_vec();
        for &i in active {
            let col = o.emb_w + i as usize * e_dim;
            for (ej, wj) in e.iter_mut().zip(&p[col..col + e_dim]) {
                *ej += wj;
            }
        }
        let mut a = p[o.b..o.b + 3 * h].to_vec();
        for (row, ar) in a.iter_mut().enumerate() {
            let w = &p[o.w + row * e_dim..o.w + (row + 1) * e_dim];
            *ar += w.iter().zip(&e).map(|(x, y)| x * y).sum::<f64>();
        }
        let mut uh = vec![0.0; 3 * h];
        for (row, ur) in uh.iter_mut().enumerate() {
            let u = &p[o.u + row * h..o.u + (row + 1) * h];
            *ur = u.iter().zip(h_prev).map(|(x, y)| x * y).sum::<f64>();
        }
        let r: Vec<f64> = (0..h).map(|i| sigmoid(a[i] + uh[i])).collect();
        let z: Vec<f64> = (0..h).map(|i| sigmoid(a[h + i] + uh[h + i])).collect();
        let un: Vec<f64> = (0..h).map(|i| uh[2 * h + i] + p[o.c + i]).collect();
        let n: Vec<f64> = (0..h).map(|i| (a[2 * h + i] + r[i] * un[i]).tanh()).collect();
        let hn: Vec<f64> = (0..h)
            .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
            .collect();
        let (hw, hb) = o.heads[d.index()];
        let k = self.layout.heads[d.index()];
        let logits = (0..k)
            .map(|j| {
                p[hb + j]
                    + p[hw + j * h..hw + (j + 1) * h]
                        .iter()
                        .zip(&hn)
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
            })
            .collect();
        StepCache {
            e,
            h_prev: h_prev.to_vec(),
            r,
            z,
            n,
            un,
            h: hn,
            logits,
        }
    }

    /// Backpropagates per-step logit gradients through heads, cell and embedding.
    /// `prev[t]` names the step whose hidden state fed step `t`; it must precede `t`.
    pub fn backward(
        &self,
        steps: &[(&[u32], Decision, Option<usize>)],
        caches: &[StepCache],
        dlogits: &[Vec<f64>],
        grad: &mut [f64],
    ) {
        let (h, e_dim) = (self.hidden, self.embed);
        let o = self.off();
        let p = &self.params;
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; h]; steps.len()];
        for t in (0..steps.len()).rev() {
            let (active, d, prev) = steps[t];
            let c = &caches[t];
            let (hw, hb) = o.heads[d.index()];
            let mut dht = std::mem::take(&mut dh[t]);
            for (j, &g) in dlogits[t].iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[hb + j] += g;
                for i in 0..h {
                    grad[hw + j * h + i] += g * c.h[i];
                    dht[i] += g * p[hw + j * h + i];
                }
            }
            if dht.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut da = vec![0.0; 3 * h];
            let mut dun = vec![0.0; h];
            let mut dh_prev = vec![0.0; h];
            for i in 0..h {
                let dn = dht[i] * (1.0 - c.z[i]);
                let dz = dht[i] * (c.h_prev[i] - c.n[i]);
                dh_prev[i] = dht[i] * c.z[i];
                let dan = dn * (1.0 - c.n[i] * c.n[i]);
                let dr = dan * c.un[i];
                dun[i] = dan * c.r[i];
                da[i] = dr * c.r[i] * (1.0 - c.r[i]);
                da[h + i] = dz * c.z[i] * (1.0 - c.z[i]);
                da[2 * h + i] = dan;
            }
            let mut de = vec![0.0; e_dim];
            for row in 0..3 * h {
                let g = da[row];
                grad[o.b + row] += g;
                let w = o.w + row * e_dim;
                for j in 0..e_dim {
                    grad[w + j] += g * c.e[j];
                    de[j] += g * p[w + j];
                }
                let ug = if row < 2 * h { g } else { dun[row - 2 * h] };
                let u = o.u + row * h;
                for j in 0..h {
                    grad[u + j] += ug * c.h_prev[j];
                    dh_prev[j] += ug * p[u + j];
                }
            }
            for i in 0..h {
                grad[o.c + i] += dun[i];
            }
            for j in 0..e_dim {
                grad[o.emb_b + j] += de[j];
            }
            for &a in active {
                let col = o.emb_w + a as usize * e_dim;
                for j in 0..e_dim {
                    grad[col + j] += de[j];
                }
            }
            if let Some(pt) = prev {
                for (x, y) in dh[pt].iter_mut().zip(&dh_prev) {
                    *x += y;
                }
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        envelope(POLICY_MAGIC, self.hidden, &self.params)
    }

    pub fn from_bytes(bytes: &[u8], layout: Layout) -> Result<Self> {
        let (hidden, params) = open_envelope(POLICY_MAGIC, bytes)?;
        let model = Model {
            layout,
            hidden,
            embed: EMBED,
            params,
        };
        if model.off().total != model.params.len() {
            return Err(Error::Malformed(format!(
                "checkpoint holds {} weights, hidden size {hidden} needs {}",
                model.params.len(),
                model.off().total
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, layout: Layout) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, layout)
    }
}

/// Magic, little-endian `u32` version, `u32` hidden size, then little-endian `f64` weights.
pub fn envelope(magic: &[u8; 8], hidden: usize, weights: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * weights.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(hidden as u32).to_le_bytes());
    for w in weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn open_envelope(magic: &[u8; 8], bytes: &[u8]) -> Result<(usize, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Malformed(format!(
            "missing {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Malformed(format!("unsupported checkpoint version {version}")));
    }
    let hidden = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() % 8 != 0 {
        return Err(Error::Malformed("checkpoint body is not whole f64 words".into()));
    }
    let weights = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((hidden, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -3.0, 2.5, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::new(Layout::default(), 8, 3);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], b"NISPOL01");
        assert_eq!(Model::from_bytes(&bytes, Layout::default()).unwrap(), m);
        assert!(Model::from_bytes(&bytes[..bytes.len() - 8], Layout::default()).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad, Layout::default()).is_err());
    }

    #[test]
    fn step_outputs_have_head_width() {
        let m = Model::new(Layout::default(), 16, 1);
        let c = m.step(&[0, 5, 450], &[0.0; 16], Decision::Alpha);
        assert_eq!(c.logits.len(), 6);
        assert_eq!(c.h.len(), 16);
        assert!(c.h.iter().all(|v| v.abs() < 1.0));
    }
}
