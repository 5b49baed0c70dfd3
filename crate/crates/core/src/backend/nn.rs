//! Layer building blocks expressed as graph operations over bound parameters.

use super::graph::{Graph, Var};
use super::params::Bound;
use super::tensor::Tensor;

pub fn linear(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let w = p.get(&format!("{name}.w"));
    let b = p.get(&format!("{name}.b"));
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

pub fn layer_norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let gain = p.get(&format!("{name}.g"));
    let bias = p.get(&format!("{name}.b"));
    let n = g.layer_norm_rows(x);
    let s = g.mul_row(n, gain);
    g.add_row(s, bias)
}

/// Two-layer GELU MLP: `{name}.fc1`, `{name}.fc2`.
pub fn mlp(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Var {
    let h = linear(g, p, &format!("{name}.fc1"), x);
    let h = g.gelu(h);
    linear(g, p, &format!("{name}.fc2"), h)
}

/// Multi-head attention from `xq` to `xkv` with projections `{name}.q`,
/// `{name}.k`, `{name}.v`, `{name}.o`. `mask` is added to the scores
/// (`0` allowed, `-inf` blocked) and must be `rows(xq) × rows(xkv)`.
pub fn attention(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    xq: Var,
    xkv: Var,
    heads: usize,
    mask: Option<&Tensor>,
) -> Var {
    let q = linear(g, p, &format!("{name}.q"), xq);
    let k = linear(g, p, &format!("{name}.k"), xkv);
    let v = linear(g, p, &format!("{name}.v"), xkv);
    let width = g.value(q).cols();
    assert_eq!(width % heads, 0, "width {width} not divisible by {heads} heads");
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, (h + 1) * dh),
                g.slice_cols(k, h * dh, (h + 1) * dh),
                g.slice_cols(v, h * dh, (h + 1) * dh),
            )
        };
        let s = g.matmul_t(qh, kh);
        let s = g.scale(s, scale);
        let s = match mask {
            Some(m) => g.add_const(s, m),
            None => s,
        };
        let a = g.softmax_rows(s);
        outs.push(g.matmul(a, vh));
    }
    let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    linear(g, p, &format!("{name}.o"), o)
}

/// Parameters for [`attention`] with query width `dq`, key/value input width
/// `dkv` and inner width `width`.
pub fn init_attention(
    store: &mut super::params::ParamStore,
    name: &str,
    dq: usize,
    dkv: usize,
    width: usize,
    out: usize,
    rng: &mut super::rng::Rng,
) {
    store.linear(&format!("{name}.q"), dq, width, 1.0, rng);
    store.linear(&format!("{name}.k"), dkv, width, 1.0, rng);
    store.linear(&format!("{name}.v"), dkv, width, 1.0, rng);
    store.linear(&format!("{name}.o"), width, out, 1.0, rng);
}

pub fn init_mlp(
    store: &mut super::params::ParamStore,
    name: &str,
    dim_in: usize,
    hidden: usize,
    dim_out: usize,
    rng: &mut super::rng::Rng,
) {
    store.linear(&format!("{name}.fc1"), dim_in, hidden, 1.0, rng);
    store.linear(&format!("{name}.fc2"), hidden, dim_out, 1.0, rng);
}

/// Sinusoidal embedding of a scalar in `[0, 1]`, width `dim` (even).
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (1000.0f64).powf(-(i as f64) / half.max(1) as f64);
        let arg = t * 1000.0 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}
