//! GRU encoder-decoder with additive attention, forward and backward.
//!
//! Parameter layout (one flat `f64` vector, row-major blocks in this order):
//!
//! | block        | shape            | role                                        |
//! |--------------|------------------|---------------------------------------------|
//! | `embedding`  | V × E            | shared input embedding                      |
//! | `enc_w`      | 3H × E           | encoder input weights, rows `[z; r; n]`     |
//! | `enc_u`      | 3H × H           | encoder recurrent weights, rows `[z; r; n]` |
//! | `enc_b`      | 3H               | encoder biases                              |
//! | `dec_w`      | 3H × E           | decoder input weights                       |
//! | `dec_u`      | 3H × H           | decoder recurrent weights                   |
//! | `dec_b`      | 3H               | decoder biases                              |
//! | `att_mem`    | A × M            | attention projection of memory slots        |
//! | `att_query`  | A × H            | attention projection of the decoder state   |
//! | `att_b`      | A                | attention bias                              |
//! | `att_v`      | A                | attention scoring vector                    |
//! | `out_w`      | V × (H + M)      | output projection of `[s_t; c_t]`           |
//! | `out_b`      | V                | output bias                                 |
//! | `copy_w`     | H + M            | copy gate weights over `[s_t; c_t]`         |
//! | `copy_b`     | 1                | copy gate bias                              |
//!
//! with `M = H + E`: every memory slot is `[h_i; emb(x_i)]`, the encoder state
//! next to the raw token embedding, so attention can read token identity directly.
//!
//! The next-token distribution mixes generation and copying:
//! `p_t(w) = (1 − m_t) · softmax(W_o [s_t; c_t] + b_o)(w) + m_t · Σ_{i: x_i = w} α_ti`
//! with gate `m_t = σ(w_c · [s_t; c_t] + b_c)`. With the gate closed the output
//! is the plain softmax.
//!
//! GRU cell: `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
//! `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = (1 − z) ⊙ n + z ⊙ h`.
//! The decoder starts from the last encoder state and is fed the previous token.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::BOS;
use crate::linalg::{axpy, dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
}

impl Architecture {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            attn_dim: 64,
            max_input_len: 512,
            max_output_len: 64,
        }
    }

    pub fn memory_dim(&self) -> usize {
        self.hidden_dim + self.embed_dim
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embedding: Range<usize>,
    pub enc_w: Range<usize>,
    pub enc_u: Range<usize>,
    pub enc_b: Range<usize>,
    pub dec_w: Range<usize>,
    pub dec_u: Range<usize>,
    pub dec_b: Range<usize>,
    pub att_mem: Range<usize>,
    pub att_query: Range<usize>,
    pub att_b: Range<usize>,
    pub att_v: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub copy_w: Range<usize>,
    pub copy_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(a: &Architecture) -> Self {
        let (v, e, h, at, m) = (
            a.vocab_size,
            a.embed_dim,
            a.hidden_dim,
            a.attn_dim,
            a.memory_dim(),
        );
        let mut at_ = 0;
        let mut take = |n: usize| {
            let r = at_..at_ + n;
            at_ += n;
            r
        };
        let embedding = take(v * e);
        let enc_w = take(3 * h * e);
        let enc_u = take(3 * h * h);
        let enc_b = take(3 * h);
        let dec_w = take(3 * h * e);
        let dec_u = take(3 * h * h);
        let dec_b = take(3 * h);
        let att_mem = take(at * m);
        let att_query = take(at * h);
        let att_b = take(at);
        let att_v = take(at);
        let out_w = take(v * (h + m));
        let out_b = take(v);
        let copy_w = take(h + m);
        let copy_b = take(1);
        Self {
            embedding,
            enc_w,
            enc_u,
            enc_b,
            dec_w,
            dec_u,
            dec_b,
            att_mem,
            att_query,
            att_b,
            att_v,
            out_w,
            out_b,
            copy_w,
            copy_b,
            total: at_,
        }
    }

    /// Blocks initialized to zero.
    pub fn zero_init_blocks(&self) -> [Range<usize>; 6] {
        [
            self.enc_b.clone(),
            self.dec_b.clone(),
            self.att_b.clone(),
            self.out_b.clone(),
            self.copy_w.clone(),
            self.copy_b.clone(),
        ]
    }
}

/// Per-step activations of one GRU cell application.
#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    token: u32,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

#[derive(Clone, Copy)]
struct GruParams<'a> {
    w: &'a [f64],
    u: &'a [f64],
    b: &'a [f64],
}

/// Encoded input sequence with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Encoding {
    tokens: Vec<u32>,
    /// L × M memory slots `[h_i; emb(x_i)]`.
    mem: Vec<f64>,
    /// L × A projected memory.
    keys: Vec<f64>,
    last: Vec<f64>,
    cells: Vec<GruCache>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Decoder state before the first output token.
    pub fn initial_state(&self) -> Vec<f64> {
        self.last.clone()
    }
}

/// One decoder step: the state `s_t`, attention, and the next-token distribution.
#[derive(Debug, Clone)]
pub struct Step {
    cell: GruCache,
    pub state: Vec<f64>,
    /// L × A attention activations `tanh(K_i + q)`.
    act: Vec<f64>,
    alpha: Vec<f64>,
    ctx: Vec<f64>,
    /// Generation distribution before mixing.
    gen: Vec<f64>,
    /// Copy gate `m_t`.
    gate: f64,
    pub probs: Vec<f64>,
}

/// A full teacher-forced pass over `(input, targets)`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub enc: Encoding,
    pub steps: Vec<Step>,
    pub targets: Vec<u32>,
}

impl Trace {
    pub fn target_probs(&self) -> Vec<f64> {
        self.steps
            .iter()
            .zip(&self.targets)
            .map(|(s, &y)| s.probs[y as usize])
            .collect()
    }
}

/// Borrowed view of a parameter vector under an architecture.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub arch: &'a Architecture,
    layout: &'a Layout,
    p: &'a [f64],
}

impl<'a> Model<'a> {
    pub fn new(arch: &'a Architecture, layout: &'a Layout, params: &'a [f64]) -> Self {
        assert_eq!(params.len(), layout.total, "parameter vector does not match layout");
        Self {
            arch,
            layout,
            p: params,
        }
    }

    fn block(&self, r: &Range<usize>) -> &'a [f64] {
        &self.p[r.clone()]
    }

    fn embedding(&self, token: u32) -> &'a [f64] {
        let e = self.arch.embed_dim;
        let start = self.layout.embedding.start + token as usize * e;
        &self.p[start..start + e]
    }

    fn enc_params(&self) -> GruParams<'a> {
        GruParams {
            w: self.block(&self.layout.enc_w),
            u: self.block(&self.layout.enc_u),
            b: self.block(&self.layout.enc_b),
        }
    }

    fn dec_params(&self) -> GruParams<'a> {
        GruParams {
            w: self.block(&self.layout.dec_w),
            u: self.block(&self.layout.dec_u),
            b: self.block(&self.layout.dec_b),
        }
    }

    fn gru_forward(&self, g: GruParams<'_>, token: u32, h: &[f64]) -> (Vec<f64>, GruCache) {
        let hd = self.arch.hidden_dim;
        let x = self.embedding(token);
        let mut a = g.b.to_vec();
        matvec_acc(g.w, x, &mut a);
        matvec_acc(&g.u[..2 * hd * hd], h, &mut a[..2 * hd]);
        let z: Vec<f64> = a[..hd].iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = a[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
        matvec_acc(&g.u[2 * hd * hd..], &rh, &mut a[2 * hd..]);
        let n: Vec<f64> = a[2 * hd..].iter().map(|v| v.tanh()).collect();
        let out = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
        (
            out,
            GruCache {
                token,
                h_prev: h.to_vec(),
                z,
                r,
                n,
                rh,
            },
        )
    }

    /// Backprop one cell. Accumulates into the three parameter blocks and the
    /// embedding gradient; returns the gradient flowing into `h_prev`.
    #[allow(clippy::too_many_arguments)]
    fn gru_backward(
        &self,
        g: GruParams<'_>,
        c: &GruCache,
        dh_out: &[f64],
        grad: &mut [f64],
        w_range: &Range<usize>,
        u_range: &Range<usize>,
        b_range: &Range<usize>,
    ) -> Vec<f64> {
        let hd = self.arch.hidden_dim;
        let e = self.arch.embed_dim;
        let mut da = vec![0.0; 3 * hd];
        let mut dh: Vec<f64> = dh_out.iter().zip(&c.z).map(|(d, z)| d * z).collect();
        for i in 0..hd {
            let dn = dh_out[i] * (1.0 - c.z[i]);
            let dz = dh_out[i] * (c.h_prev[i] - c.n[i]);
            da[2 * hd + i] = dn * (1.0 - c.n[i] * c.n[i]);
            da[i] = dz * c.z[i] * (1.0 - c.z[i]);
        }
        let un = &g.u[2 * hd * hd..];
        let mut drh = vec![0.0; hd];
        matvec_t_acc(un, &da[2 * hd..], &mut drh);
        outer_acc(
            &mut grad[u_range.start + 2 * hd * hd..u_range.end],
            &da[2 * hd..],
            &c.rh,
        );
        for i in 0..hd {
            let dr = drh[i] * c.h_prev[i];
            dh[i] += drh[i] * c.r[i];
            da[hd + i] = dr * c.r[i] * (1.0 - c.r[i]);
        }
        let x = self.embedding(c.token);
        outer_acc(&mut grad[w_range.clone()], &da, x);
        axpy(1.0, &da, &mut grad[b_range.clone()]);
        let emb_start = self.layout.embedding.start + c.token as usize * e;
        matvec_t_acc(g.w, &da, &mut grad[emb_start..emb_start + e]);
        outer_acc(
            &mut grad[u_range.start..u_range.start + 2 * hd * hd],
            &da[..2 * hd],
            &c.h_prev,
        );
        matvec_t_acc(&g.u[..2 * hd * hd], &da[..2 * hd], &mut dh);
        dh
    }

    /// Run the encoder over `tokens` (must be non-empty).
    pub fn encode(&self, tokens: &[u32]) -> Encoding {
        assert!(!tokens.is_empty(), "cannot encode an empty input");
        let (hd, e, m, at) = (
            self.arch.hidden_dim,
            self.arch.embed_dim,
            self.arch.memory_dim(),
            self.arch.attn_dim,
        );
        let g = self.enc_params();
        let att_mem = self.block(&self.layout.att_mem);
        let mut h = vec![0.0; hd];
        let mut mem = Vec::with_capacity(tokens.len() * m);
        let mut keys = vec![0.0; tokens.len() * at];
        let mut cells = Vec::with_capacity(tokens.len());
        for (i, &tok) in tokens.iter().enumerate() {
            let (next, cache) = self.gru_forward(g, tok, &h);
            h = next;
            cells.push(cache);
            let slot_start = mem.len();
            mem.extend_from_slice(&h);
            mem.extend_from_slice(self.embedding(tok));
            debug_assert_eq!(mem.len() - slot_start, hd + e);
            matvec_acc(att_mem, &mem[slot_start..], &mut keys[i * at..(i + 1) * at]);
        }
        Encoding {
            tokens: tokens.to_vec(),
            mem,
            keys,
            last: h,
            cells,
        }
    }

    /// Advance the decoder by feeding `prev` from state `s_prev`.
    pub fn step(&self, enc: &Encoding, prev: u32, s_prev: &[f64]) -> Step {
        let (hd, m, at) = (
            self.arch.hidden_dim,
            self.arch.memory_dim(),
            self.arch.attn_dim,
        );
        let (state, cell) = self.gru_forward(self.dec_params(), prev, s_prev);
        let mut q = self.block(&self.layout.att_b).to_vec();
        matvec_acc(self.block(&self.layout.att_query), &state, &mut q);
        let v = self.block(&self.layout.att_v);
        let len = enc.len();
        let mut act = vec![0.0; len * at];
        let mut alpha = vec![0.0; len];
        for i in 0..len {
            let k = &enc.keys[i * at..(i + 1) * at];
            let a = &mut act[i * at..(i + 1) * at];
            for j in 0..at {
                a[j] = (k[j] + q[j]).tanh();
            }
            alpha[i] = dot(v, a);
        }
        softmax_in_place(&mut alpha);
        let mut ctx = vec![0.0; m];
        for (i, &w) in alpha.iter().enumerate() {
            axpy(w, &enc.mem[i * m..(i + 1) * m], &mut ctx);
        }
        let mut o = Vec::with_capacity(hd + m);
        o.extend_from_slice(&state);
        o.extend_from_slice(&ctx);
        let mut gen = self.block(&self.layout.out_b).to_vec();
        matvec_acc(self.block(&self.layout.out_w), &o, &mut gen);
        softmax_in_place(&mut gen);
        let gate = sigmoid(dot(self.block(&self.layout.copy_w), &o) + self.p[self.layout.copy_b.start]);
        let mut probs: Vec<f64> = gen.iter().map(|g| (1.0 - gate) * g).collect();
        if gate > 0.0 {
            for (&tok, &a) in enc.tokens.iter().zip(&alpha) {
                probs[tok as usize] += gate * a;
            }
        }
        Step {
            cell,
            state,
            act,
            alpha,
            ctx,
            gen,
            gate,
            probs,
        }
    }

    /// Teacher-forced pass: step `t` is fed `BOS` or `targets[t-1]` and predicts `targets[t]`.
    pub fn teacher_forced(&self, input: &[u32], targets: &[u32]) -> Trace {
        let enc = self.encode(input);
        let mut s = enc.initial_state();
        let mut steps = Vec::with_capacity(targets.len());
        let mut prev = BOS;
        for &y in targets {
            let st = self.step(&enc, prev, &s);
            s = st.state.clone();
            steps.push(st);
            prev = y;
        }
        Trace {
            enc,
            steps,
            targets: targets.to_vec(),
        }
    }

    /// Accumulate into `grad` the gradient of `Σ_t weights[t] · ln p_t(targets[t])`.
    pub fn backward(&self, trace: &Trace, weights: &[f64], grad: &mut [f64]) {
        assert_eq!(weights.len(), trace.steps.len());
        assert_eq!(grad.len(), self.layout.total);
        let l = &self.layout;
        let (hd, e, m, at) = (
            self.arch.hidden_dim,
            self.arch.embed_dim,
            self.arch.memory_dim(),
            self.arch.attn_dim,
        );
        let len = trace.enc.len();
        let out_w = self.block(&l.out_w);
        let att_query = self.block(&l.att_query);
        let v = self.block(&l.att_v);
        let copy_w = self.block(&l.copy_w);
        let dec = self.dec_params();

        let mut dmem = vec![0.0; len * m];
        let mut dkeys = vec![0.0; len * at];
        let mut ds_next = vec![0.0; hd];
        let mut o = vec![0.0; hd + m];
        for t in (0..trace.steps.len()).rev() {
            let st = &trace.steps[t];
            let w = weights[t];
            let mut ds = std::mem::take(&mut ds_next);
            if w != 0.0 {
                let y = trace.targets[t] as usize;
                let (p_y, gen_y, gate) = (st.probs[y], st.gen[y], st.gate);
                let copied_y: f64 = trace
                    .enc
                    .tokens
                    .iter()
                    .zip(&st.alpha)
                    .filter(|(&x, _)| x as usize == y)
                    .map(|(_, a)| a)
                    .sum();
                // d/dlogits of w·ln p_y through the generation branch.
                let scale = w * (1.0 - gate) * gen_y / p_y;
                let mut g: Vec<f64> = st.gen.iter().map(|p| -scale * p).collect();
                g[y] += scale;
                o[..hd].copy_from_slice(&st.state);
                o[hd..].copy_from_slice(&st.ctx);
                outer_acc(&mut grad[l.out_w.clone()], &g, &o);
                axpy(1.0, &g, &mut grad[l.out_b.clone()]);
                let dgate = w * (copied_y - gen_y) / p_y * gate * (1.0 - gate);
                axpy(dgate, &o, &mut grad[l.copy_w.clone()]);
                grad[l.copy_b.start] += dgate;
                let mut d_o = vec![0.0; hd + m];
                matvec_t_acc(out_w, &g, &mut d_o);
                axpy(dgate, copy_w, &mut d_o);
                axpy(1.0, &d_o[..hd], &mut ds);
                let dctx = &d_o[hd..];

                let dcopy = w * gate / p_y;
                let mut dalpha = vec![0.0; len];
                for i in 0..len {
                    let slot = &trace.enc.mem[i * m..(i + 1) * m];
                    dalpha[i] = dot(dctx, slot);
                    if trace.enc.tokens[i] as usize == y {
                        dalpha[i] += dcopy;
                    }
                    axpy(st.alpha[i], dctx, &mut dmem[i * m..(i + 1) * m]);
                }
                let mean = dot(&st.alpha, &dalpha);
                let mut dq = vec![0.0; at];
                for i in 0..len {
                    let dscore = st.alpha[i] * (dalpha[i] - mean);
                    if dscore == 0.0 {
                        continue;
                    }
                    let a = &st.act[i * at..(i + 1) * at];
                    axpy(dscore, a, &mut grad[l.att_v.clone()]);
                    let dk = &mut dkeys[i * at..(i + 1) * at];
                    for j in 0..at {
                        let dpre = dscore * v[j] * (1.0 - a[j] * a[j]);
                        dk[j] += dpre;
                        dq[j] += dpre;
                    }
                }
                outer_acc(&mut grad[l.att_query.clone()], &dq, &st.state);
                axpy(1.0, &dq, &mut grad[l.att_b.clone()]);
                matvec_t_acc(att_query, &dq, &mut ds);
            }
            ds_next = self.gru_backward(dec, &st.cell, &ds, grad, &l.dec_w, &l.dec_u, &l.dec_b);
        }

        let att_mem = self.block(&l.att_mem);
        for i in 0..len {
            let dk = &dkeys[i * at..(i + 1) * at];
            let slot = &trace.enc.mem[i * m..(i + 1) * m];
            outer_acc(&mut grad[l.att_mem.clone()], dk, slot);
            matvec_t_acc(att_mem, dk, &mut dmem[i * m..(i + 1) * m]);
        }

        let enc = self.enc_params();
        let mut dh = ds_next;
        for i in (0..len).rev() {
            let slot = &dmem[i * m..(i + 1) * m];
            axpy(1.0, &slot[..hd], &mut dh);
            let tok = trace.enc.tokens[i] as usize;
            let emb = l.embedding.start + tok * e;
            axpy(1.0, &slot[hd..], &mut grad[emb..emb + e]);
            dh = self.gru_backward(enc, &trace.enc.cells[i], &dh, grad, &l.enc_w, &l.enc_u, &l.enc_b);
        }
    }
}
