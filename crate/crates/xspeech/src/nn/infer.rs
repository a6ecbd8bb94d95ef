//! No-grad forward path for trained models: plain matrix math plus a KV cache
//! for incremental causal decoding. Mirrors the graph ops exactly so sampling
//! and training see the same numbers.

use ndarray::Axis;

use super::graph::{gelu, Mat};
use super::params::ParamStore;
use super::transformer::{AttnParams, BlockParams, LN_EPS, NEG_INF_MASK};

pub fn linear(store: &ParamStore, x: &Mat, w: usize, b: usize) -> Mat {
    let mut y = x.dot(store.get(w));
    y += &store.get(b).row(0);
    y
}

pub fn layer_norm(store: &ParamStore, x: &Mat, g: usize, b: usize) -> Mat {
    let gain = store.get(g);
    let bias = store.get(b);
    let d = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain[(0, j)] + bias[(0, j)];
        }
    }
    out
}

pub fn softmax_rows_inplace(x: &mut Mat) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

fn attention(
    store: &ParamStore,
    p: &AttnParams,
    q_in: &Mat,
    kv_in: &Mat,
    heads: usize,
    mask: Option<&Mat>,
) -> Mat {
    let dim = q_in.ncols();
    let dh = dim / heads;
    let q = linear(store, q_in, p.wq, p.bq);
    let k = linear(store, kv_in, p.wk, p.bk);
    let v = linear(store, kv_in, p.wv, p.bv);
    let out = attend_qkv(&q, &k, &v, heads, dh, mask);
    linear(store, &out, p.wo, p.bo)
}

fn attend_qkv(q: &Mat, k: &Mat, v: &Mat, heads: usize, dh: usize, mask: Option<&Mat>) -> Mat {
    let mut out = Mat::zeros((q.nrows(), heads * dh));
    for h in 0..heads {
        let qh = q.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
        let kh = k.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
        let vh = v.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
        let mut scores = qh.dot(&kh.t());
        scores *= 1.0 / (dh as f64).sqrt();
        if let Some(m) = mask {
            scores += m;
        }
        softmax_rows_inplace(&mut scores);
        let oh = scores.dot(&vh);
        out.slice_mut(ndarray::s![.., h * dh..(h + 1) * dh]).assign(&oh);
    }
    out
}

/// Full-sequence forward through a block stack (no cache). `mask` applies to
/// self-attention; `memory` feeds cross-attention where blocks have it.
pub fn forward_blocks(
    store: &ParamStore,
    blocks: &[BlockParams],
    heads: usize,
    x: Mat,
    mask: Option<&Mat>,
    memory: Option<&Mat>,
) -> Mat {
    let mut x = x;
    for bp in blocks {
        let ln1 = layer_norm(store, &x, bp.ln1_g, bp.ln1_b);
        let sa = attention(store, &bp.attn, &ln1, &ln1, heads, mask);
        x = x + sa;
        if let Some((lng, lnb, xattn)) = &bp.cross {
            let mem = memory.expect("decoder block requires memory");
            let lnx = layer_norm(store, &x, *lng, *lnb);
            let ca = attention(store, xattn, &lnx, mem, heads, None);
            x = x + ca;
        }
        let ln2 = layer_norm(store, &x, bp.ln2_g, bp.ln2_b);
        let mut h = linear(store, &ln2, bp.w1, bp.b1);
        h.mapv_inplace(gelu);
        let h = linear(store, &h, bp.w2, bp.b2);
        x = x + h;
    }
    x
}

/// Per-layer K/V rows accumulated during incremental causal decoding.
pub struct KvCache {
    layers: Vec<(Mat, Mat)>,
}

impl KvCache {
    pub fn new(num_layers: usize, dim: usize) -> Self {
        Self {
            layers: (0..num_layers)
                .map(|_| (Mat::zeros((0, dim)), Mat::zeros((0, dim))))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |(k, _)| k.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&mut self, layer: usize, k: &Mat, v: &Mat) {
        let (ck, cv) = &mut self.layers[layer];
        *ck = ndarray::concatenate(Axis(0), &[ck.view(), k.view()]).unwrap();
        *cv = ndarray::concatenate(Axis(0), &[cv.view(), v.view()]).unwrap();
    }
}

/// Run `rows` new positions through a causal block stack, extending `cache`.
/// New positions attend to everything already cached plus their own prefix.
/// Equivalent to a full causal forward over cached-rows + new-rows.
pub fn forward_causal_cached(
    store: &ParamStore,
    blocks: &[BlockParams],
    heads: usize,
    rows: Mat,
    cache: &mut KvCache,
) -> Mat {
    let t_new = rows.nrows();
    let t_prev = cache.len();
    let dim = rows.ncols();
    let dh = dim / heads;
    // additive mask over (t_new, t_prev + t_new)
    let mut mask = Mat::zeros((t_new, t_prev + t_new));
    for i in 0..t_new {
        for j in (t_prev + i + 1)..(t_prev + t_new) {
            mask[(i, j)] = NEG_INF_MASK;
        }
    }
    let mut x = rows;
    for (li, bp) in blocks.iter().enumerate() {
        let ln1 = layer_norm(store, &x, bp.ln1_g, bp.ln1_b);
        let q = linear(store, &ln1, bp.attn.wq, bp.attn.bq);
        let k = linear(store, &ln1, bp.attn.wk, bp.attn.bk);
        let v = linear(store, &ln1, bp.attn.wv, bp.attn.bv);
        cache.append(li, &k, &v);
        let (ck, cv) = &cache.layers[li];
        let attn_out = attend_qkv(&q, ck, cv, heads, dh, Some(&mask));
        let sa = linear(store, &attn_out, bp.attn.wo, bp.attn.bo);
        x = x + sa;
        assert!(bp.cross.is_none(), "cached decoding has no cross-attention");
        let ln2 = layer_norm(store, &x, bp.ln2_g, bp.ln2_b);
        let mut h = linear(store, &ln2, bp.w1, bp.b1);
        h.mapv_inplace(gelu);
        let h = linear(store, &h, bp.w2, bp.b2);
        x = x + h;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use crate::nn::params::{normal_mat, Bound};
    use crate::nn::transformer::{block_forward, causal_mask_additive, init_block};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infer_matches_graph_forward() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let blocks: Vec<_> = (0..2)
            .map(|i| init_block(&mut store, &mut rng, &format!("b{i}"), 8, 16, false))
            .collect();
        let x = normal_mat(&mut rng, 6, 8, 1.0);
        let mask = causal_mask_additive(6);

        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &store);
        let mut xv = g.constant(x.clone());
        for bp in &blocks {
            xv = block_forward(&mut g, &bound, bp, xv, 2, Some(&mask), None);
        }
        let want = g.value(xv);

        let got = forward_blocks(&store, &blocks, 2, x, Some(&mask), None);
        let diff = (&got - want).iter().map(|d| d.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "max diff {diff}");
    }

    #[test]
    fn cached_decoding_matches_full_forward() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let blocks: Vec<_> = (0..2)
            .map(|i| init_block(&mut store, &mut rng, &format!("b{i}"), 8, 16, false))
            .collect();
        let x = normal_mat(&mut rng, 7, 8, 1.0);
        let mask = causal_mask_additive(7);
        let full = forward_blocks(&store, &blocks, 2, x.clone(), Some(&mask), None);

        // prime with 4 rows, then 3 single-row steps
        let mut cache = KvCache::new(2, 8);
        let head = x.slice(ndarray::s![0..4, ..]).to_owned();
        let mut outs = forward_causal_cached(&store, &blocks, 2, head, &mut cache);
        for i in 4..7 {
            let row = x.slice(ndarray::s![i..i + 1, ..]).to_owned();
            let o = forward_causal_cached(&store, &blocks, 2, row, &mut cache);
            outs = ndarray::concatenate(Axis(0), &[outs.view(), o.view()]).unwrap();
        }
        let diff = (&outs - &full).iter().map(|d| d.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "max diff {diff}");
    }
}
