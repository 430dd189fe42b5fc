use super::graph::{Graph, Var};
use super::params::{Init, ParamBuilder};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn build(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let std = 1.0 / (in_dim as f64).sqrt();
        Linear {
            weight: pb.add(&format!("{name}.weight"), in_dim, out_dim, Init::TruncNormal(std)),
            bias: Some(pb.add(&format!("{name}.bias"), 1, out_dim, Init::Zeros)),
            in_dim,
            out_dim,
        }
    }

    /// A linear layer whose weight and bias start at zero.
    pub fn build_zeroed(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: pb.add(&format!("{name}.weight"), in_dim, out_dim, Init::Zeros),
            bias: Some(pb.add(&format!("{name}.bias"), 1, out_dim, Init::Zeros)),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn build(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: pb.add(&format!("{name}.gamma"), 1, dim, Init::Ones),
            beta: pb.add(&format!("{name}.beta"), 1, dim, Init::Zeros),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm_rows(x);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let y = g.mul_row(n, gamma);
        g.add_row(y, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn build(pb: &mut ParamBuilder, name: &str, dim: usize, hidden: usize, out: usize) -> Self {
        Mlp {
            fc1: Linear::build(pb, &format!("{name}.fc1"), dim, hidden),
            fc2: Linear::build(pb, &format!("{name}.fc2"), hidden, out),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Multi-head scaled dot-product attention with separate query/key/value inputs.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl Attention {
    pub fn build(pb: &mut ParamBuilder, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "attention width {dim} not divisible by {heads} heads");
        Attention {
            q: Linear::build(pb, &format!("{name}.q"), dim, dim),
            k: Linear::build(pb, &format!("{name}.k"), dim, dim),
            v: Linear::build(pb, &format!("{name}.v"), dim, dim),
            out: Linear::build(pb, &format!("{name}.out"), dim, dim),
            heads,
            head_dim: dim / heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, q_in: Var, k_in: Var, v_in: Var) -> Var {
        let q = self.q.forward(g, q_in);
        let k = self.k.forward(g, k_in);
        let v = self.v.forward(g, v_in);
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                let start = h * self.head_dim;
                (
                    g.slice_cols(q, start, self.head_dim),
                    g.slice_cols(k, start, self.head_dim),
                    g.slice_cols(v, start, self.head_dim),
                )
            };
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.out.forward(g, merged)
    }
}

/// Bottleneck residual adapter. The up-projection starts at zero so a fresh adapter is the identity.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub down: Linear,
    pub up: Linear,
}

impl Adapter {
    pub fn build(pb: &mut ParamBuilder, name: &str, dim: usize, bottleneck: usize) -> Self {
        Adapter {
            down: Linear::build(pb, &format!("{name}.down"), dim, bottleneck),
            up: Linear::build_zeroed(pb, &format!("{name}.up"), bottleneck, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.down.forward(g, x);
        let h = g.gelu(h);
        let h = self.up.forward(g, h);
        g.add(x, h)
    }
}
