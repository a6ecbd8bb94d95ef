//! Pre-norm transformer blocks shared by the codec LMs and the
//! recognition/translation model, built on the autodiff graph.

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Mat, Var};
use super::params::{normal_mat, ones_mat, zeros_mat, Bound, ParamStore};

pub const LN_EPS: f64 = 1e-5;
pub const NEG_INF_MASK: f64 = -1e30;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct AttnParams {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub attn: AttnParams,
    /// Cross-attention over encoder memory (decoder blocks only).
    pub cross: Option<(usize, usize, AttnParams)>, // (ln_g, ln_b, attn)
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

fn init_attn(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, dim: usize) -> AttnParams {
    AttnParams {
        wq: store.add(&format!("{prefix}.wq"), normal_mat(rng, dim, dim, INIT_STD)),
        bq: store.add(&format!("{prefix}.bq"), zeros_mat(1, dim)),
        wk: store.add(&format!("{prefix}.wk"), normal_mat(rng, dim, dim, INIT_STD)),
        bk: store.add(&format!("{prefix}.bk"), zeros_mat(1, dim)),
        wv: store.add(&format!("{prefix}.wv"), normal_mat(rng, dim, dim, INIT_STD)),
        bv: store.add(&format!("{prefix}.bv"), zeros_mat(1, dim)),
        wo: store.add(&format!("{prefix}.wo"), normal_mat(rng, dim, dim, INIT_STD)),
        bo: store.add(&format!("{prefix}.bo"), zeros_mat(1, dim)),
    }
}

pub fn init_block(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    dim: usize,
    ffn: usize,
    cross: bool,
) -> BlockParams {
    let ln1_g = store.add(&format!("{prefix}.ln1.g"), ones_mat(1, dim));
    let ln1_b = store.add(&format!("{prefix}.ln1.b"), zeros_mat(1, dim));
    let attn = init_attn(store, rng, &format!("{prefix}.attn"), dim);
    let cross = if cross {
        let g = store.add(&format!("{prefix}.lnx.g"), ones_mat(1, dim));
        let b = store.add(&format!("{prefix}.lnx.b"), zeros_mat(1, dim));
        let a = init_attn(store, rng, &format!("{prefix}.xattn"), dim);
        Some((g, b, a))
    } else {
        None
    };
    let ln2_g = store.add(&format!("{prefix}.ln2.g"), ones_mat(1, dim));
    let ln2_b = store.add(&format!("{prefix}.ln2.b"), zeros_mat(1, dim));
    let w1 = store.add(&format!("{prefix}.ffn.w1"), normal_mat(rng, dim, ffn, INIT_STD));
    let b1 = store.add(&format!("{prefix}.ffn.b1"), zeros_mat(1, ffn));
    let w2 = store.add(&format!("{prefix}.ffn.w2"), normal_mat(rng, ffn, dim, INIT_STD));
    let b2 = store.add(&format!("{prefix}.ffn.b2"), zeros_mat(1, dim));
    BlockParams {
        ln1_g,
        ln1_b,
        attn,
        cross,
        ln2_g,
        ln2_b,
        w1,
        b1,
        w2,
        b2,
    }
}

fn linear(g: &mut Graph, b: &Bound, x: Var, w: usize, bias: usize) -> Var {
    let y = g.matmul(x, b.var(w));
    g.add_row(y, b.var(bias))
}

/// Multi-head attention; queries from `q_in`, keys/values from `kv_in`.
/// `mask` is an additive (Tq, Tk) matrix, 0 where allowed.
pub fn attention(
    g: &mut Graph,
    b: &Bound,
    p: &AttnParams,
    q_in: Var,
    kv_in: Var,
    heads: usize,
    mask: Option<&Mat>,
) -> Var {
    let dim = g.value(q_in).ncols();
    assert_eq!(dim % heads, 0, "attention dim must divide heads");
    let dh = dim / heads;
    let q = linear(g, b, q_in, p.wq, p.bq);
    let k = linear(g, b, kv_in, p.wk, p.bk);
    let v = linear(g, b, kv_in, p.wv, p.bv);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, scale);
        let scores = match mask {
            Some(m) => g.add_const(scores, m),
            None => scores,
        };
        let attn = g.softmax_rows(scores);
        outs.push(g.matmul(attn, vh));
    }
    let cat = g.concat_cols(&outs);
    linear(g, b, cat, p.wo, p.bo)
}

/// One pre-norm block: self-attention, optional cross-attention, FFN.
pub fn block_forward(
    g: &mut Graph,
    b: &Bound,
    bp: &BlockParams,
    x: Var,
    heads: usize,
    self_mask: Option<&Mat>,
    memory: Option<Var>,
) -> Var {
    let ln1 = g.layer_norm(x, b.var(bp.ln1_g), b.var(bp.ln1_b), LN_EPS);
    let sa = attention(g, b, &bp.attn, ln1, ln1, heads, self_mask);
    let mut x = g.add(x, sa);
    if let Some((lng, lnb, xattn)) = &bp.cross {
        let mem = memory.expect("decoder block requires encoder memory");
        let lnx = g.layer_norm(x, b.var(*lng), b.var(*lnb), LN_EPS);
        let ca = attention(g, b, xattn, lnx, mem, heads, None);
        x = g.add(x, ca);
    }
    let ln2 = g.layer_norm(x, b.var(bp.ln2_g), b.var(bp.ln2_b), LN_EPS);
    let h = linear(g, b, ln2, bp.w1, bp.b1);
    let h = g.gelu(h);
    let h = linear(g, b, h, bp.w2, bp.b2);
    g.add(x, h)
}

/// Additive causal mask: row i may attend to columns j <= i.
pub fn causal_mask_additive(n: usize) -> Mat {
    let mut m = Mat::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = NEG_INF_MASK;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn block_output_shape_and_finiteness() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bp = init_block(&mut store, &mut rng, "blk", 8, 16, false);
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &store);
        let x = g.constant(normal_mat(&mut rng, 5, 8, 1.0));
        let y = block_forward(&mut g, &b, &bp, x, 2, None, None);
        let v = g.value(y);
        assert_eq!(v.dim(), (5, 8));
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn causal_mask_blocks_future() {
        let m = causal_mask_additive(3);
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(0, 1)], NEG_INF_MASK);
        assert_eq!(m[(1, 2)], NEG_INF_MASK);
        assert_eq!(m[(2, 2)], 0.0);
    }

    #[test]
    fn cross_attention_uses_memory() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bp = init_block(&mut store, &mut rng, "dec", 8, 16, true);
        let mut g = Graph::new();
        let b = Bound::new(&mut g, &store);
        let x = g.constant(normal_mat(&mut rng, 3, 8, 1.0));
        let mem1 = g.constant(normal_mat(&mut rng, 4, 8, 1.0));
        let mem2 = g.constant(normal_mat(&mut rng, 4, 8, 1.0));
        let y1 = block_forward(&mut g, &b, &bp, x, 2, None, Some(mem1));
        let y2 = block_forward(&mut g, &b, &bp, x, 2, None, Some(mem2));
        assert_ne!(g.value(y1), g.value(y2));
    }
}
