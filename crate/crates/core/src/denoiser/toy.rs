//! Small pre-norm temporal transformer predicting ε for a window of latents.
//!
//! Tokens are frames. Each block is `x += attn(ln(x)); x += mlp(ln(x))` with
//! full (non-causal) multi-head self-attention whose queries and keys carry
//! rotary embeddings at the window positions. The diffusion step enters as a
//! projected sinusoidal embedding and the condition as a learned embedding,
//! both added to every token.
//!
//! Gradients are hand-derived; `loss_and_grads` is checked against central
//! finite differences in the tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ConditionId, Denoiser, WindowContext};
use crate::error::{Error, Result};
use crate::rope::{rotate_back_in_place, rotate_in_place, RopeConfig};
use crate::scalar::Scalar;
use crate::tensor::Mat;

const LN_EPS: f64 = 1e-5;
const TIME_BASE: f64 = 10000.0;

/// Architecture integers; stored in the checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyArch {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub latent_dim: usize,
    pub mlp_ratio: usize,
    pub max_context: usize,
    pub classes: usize,
}

impl Default for ToyArch {
    fn default() -> Self {
        Self {
            layers: 2,
            width: 64,
            heads: 2,
            latent_dim: 8,
            mlp_ratio: 2,
            max_context: 8,
            classes: 4,
        }
    }
}

impl ToyArch {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads.max(1)
    }

    pub fn hidden(&self) -> usize {
        self.width * self.mlp_ratio
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("width", self.width),
            ("heads", self.heads),
            ("latent_dim", self.latent_dim),
            ("mlp_ratio", self.mlp_ratio),
            ("max_context", self.max_context),
            ("classes", self.classes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("architecture field {name} must be positive")));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::config("width must be divisible by heads"));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::config("head dim must be even for rotary embeddings"));
        }
        if !self.width.is_multiple_of(2) {
            return Err(Error::config("width must be even for the timestep embedding"));
        }
        Ok(())
    }

    pub fn to_header(&self) -> [usize; 7] {
        [
            self.layers,
            self.width,
            self.heads,
            self.latent_dim,
            self.mlp_ratio,
            self.max_context,
            self.classes,
        ]
    }

    pub fn from_header(h: &[usize]) -> Result<Self> {
        if h.len() < 7 {
            return Err(Error::format("architecture header needs 7 integers"));
        }
        let arch = Self {
            layers: h[0],
            width: h[1],
            heads: h[2],
            latent_dim: h[3],
            mlp_ratio: h[4],
            max_context: h[5],
            classes: h[6],
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, Copy)]
struct Span {
    off: usize,
    len: usize,
}

impl Span {
    fn of<'a, T>(&self, data: &'a [T]) -> &'a [T] {
        &data[self.off..self.off + self.len]
    }

    fn of_mut<'a, T>(&self, data: &'a mut [T]) -> &'a mut [T] {
        &mut data[self.off..self.off + self.len]
    }
}

#[derive(Debug, Clone)]
struct BlockSpans {
    ln1_g: Span,
    ln1_b: Span,
    wq: Span,
    wk: Span,
    wv: Span,
    wo: Span,
    bo: Span,
    ln2_g: Span,
    ln2_b: Span,
    w1: Span,
    b1: Span,
    w2: Span,
    b2: Span,
}

/// Offsets of every named tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    w_in: Span,
    b_in: Span,
    w_time: Span,
    b_time: Span,
    cond: Span,
    blocks: Vec<BlockSpans>,
    lnf_g: Span,
    lnf_b: Span,
    w_out: Span,
    b_out: Span,
    named: Vec<(String, Vec<usize>, Span)>,
    total: usize,
}

impl Layout {
    fn new(arch: &ToyArch) -> Self {
        let (w, d, h) = (arch.width, arch.latent_dim, arch.hidden());
        let mut named = Vec::new();
        let mut off = 0;
        let mut take = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            let s = Span { off, len };
            off += len;
            named.push((name, shape, s));
            s
        };
        let w_in = take("w_in".into(), vec![d, w]);
        let b_in = take("b_in".into(), vec![w]);
        let w_time = take("w_time".into(), vec![w, w]);
        let b_time = take("b_time".into(), vec![w]);
        let cond = take("cond_emb".into(), vec![arch.classes, w]);
        let blocks = (0..arch.layers)
            .map(|l| {
                let mut t = |n: &str, shape: Vec<usize>| take(format!("blocks.{l}.{n}"), shape);
                BlockSpans {
                    ln1_g: t("ln1_g", vec![w]),
                    ln1_b: t("ln1_b", vec![w]),
                    wq: t("wq", vec![w, w]),
                    wk: t("wk", vec![w, w]),
                    wv: t("wv", vec![w, w]),
                    wo: t("wo", vec![w, w]),
                    bo: t("bo", vec![w]),
                    ln2_g: t("ln2_g", vec![w]),
                    ln2_b: t("ln2_b", vec![w]),
                    w1: t("w1", vec![w, h]),
                    b1: t("b1", vec![h]),
                    w2: t("w2", vec![h, w]),
                    b2: t("b2", vec![w]),
                }
            })
            .collect();
        let lnf_g = take("lnf_g".into(), vec![w]);
        let lnf_b = take("lnf_b".into(), vec![w]);
        let w_out = take("w_out".into(), vec![w, d]);
        let b_out = take("b_out".into(), vec![d]);
        Self {
            w_in,
            b_in,
            w_time,
            b_time,
            cond,
            blocks,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            named,
            total: off,
        }
    }
}

/// All weights of the toy transformer in one flat vector.
#[derive(Debug, Clone)]
pub struct ToyTransformerParams<T> {
    arch: ToyArch,
    layout: Layout,
    data: Vec<T>,
}

/// Gradient with the same layout as [`ToyTransformerParams`].
#[derive(Debug, Clone)]
pub struct ToyGrads<T> {
    pub data: Vec<T>,
}

/// Convenience alias: the parameters are the model.
pub type ToyTransformer<T> = ToyTransformerParams<T>;

/// One window to run through the network.
#[derive(Debug, Clone, Copy)]
pub struct ToyInput<'a, T> {
    pub window: &'a Mat<T>,
    pub t: usize,
    pub positions: &'a [i64],
    pub rope: &'a RopeConfig<T>,
    pub condition: ConditionId,
}

impl<T: Scalar> ToyTransformerParams<T> {
    pub fn zeros(arch: ToyArch) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        Ok(Self {
            data: vec![T::zero(); layout.total],
            arch,
            layout,
        })
    }

    /// Seeded initialization: scaled normal weights, unit layer-norm gains,
    /// zero biases, and a small output projection.
    pub fn init(arch: ToyArch, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, d, h, l) = (
            arch.width as f64,
            arch.latent_dim as f64,
            arch.hidden() as f64,
            arch.layers as f64,
        );
        let mut fill = |data: &mut [T], span: Span, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in span.of_mut(data) {
                *x = T::lit(normal.sample(&mut rng));
            }
        };
        let lay = p.layout.clone();
        fill(&mut p.data, lay.w_in, 1.0 / d.sqrt());
        fill(&mut p.data, lay.w_time, 1.0 / w.sqrt());
        fill(&mut p.data, lay.cond, 0.5);
        let resid = 1.0 / (2.0 * l).sqrt();
        for b in &lay.blocks {
            fill(&mut p.data, b.wq, 1.0 / w.sqrt());
            fill(&mut p.data, b.wk, 1.0 / w.sqrt());
            fill(&mut p.data, b.wv, 1.0 / w.sqrt());
            fill(&mut p.data, b.wo, resid / w.sqrt());
            fill(&mut p.data, b.w1, 1.0 / w.sqrt());
            fill(&mut p.data, b.w2, resid / h.sqrt());
        }
        fill(&mut p.data, lay.w_out, 0.1 / w.sqrt());
        let gains: Vec<Span> = lay
            .blocks
            .iter()
            .flat_map(|b| [b.ln1_g, b.ln2_g])
            .chain([lay.lnf_g])
            .collect();
        for g in gains {
            g.of_mut(&mut p.data).fill(T::one());
        }
        Ok(p)
    }

    pub fn arch(&self) -> &ToyArch {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `(name, shape, values)` for every tensor, in layout order.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &[usize], &[T])> {
        self.layout
            .named
            .iter()
            .map(|(n, s, span)| (n.as_str(), s.as_slice(), span.of(&self.data)))
    }

    /// Same as [`named_tensors`](Self::named_tensors) over an arbitrary flat
    /// vector with this layout (gradients, optimizer moments).
    pub fn split_named<'a>(&'a self, flat: &'a [T]) -> impl Iterator<Item = (&'a str, &'a [usize], &'a [T])> {
        self.layout
            .named
            .iter()
            .map(move |(n, s, span)| (n.as_str(), s.as_slice(), span.of(flat)))
    }

    /// Overwrites one named tensor; shape must match the layout.
    pub fn set_tensor(&mut self, name: &str, shape: &[usize], values: &[T]) -> Result<()> {
        let (_, want, span) = self
            .layout
            .named
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::format(format!("unknown tensor '{name}'")))?;
        if want.as_slice() != shape || values.len() != span.len {
            return Err(Error::format(format!(
                "tensor '{name}' has shape {shape:?}, expected {want:?}"
            )));
        }
        span.of_mut(&mut self.data).copy_from_slice(values);
        Ok(())
    }

    /// Writes a tensor of the same layout into `flat`.
    pub fn set_in_flat(&self, flat: &mut [T], name: &str, values: &[T]) -> Result<()> {
        let (_, _, span) = self
            .layout
            .named
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::format(format!("unknown tensor '{name}'")))?;
        if values.len() != span.len {
            return Err(Error::format(format!("tensor '{name}' has wrong length")));
        }
        span.of_mut(flat).copy_from_slice(values);
        Ok(())
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.layout.named.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn zero_grads(&self) -> ToyGrads<T> {
        ToyGrads {
            data: vec![T::zero(); self.data.len()],
        }
    }

    /// ε-prediction for one window.
    pub fn toy_forward(
        &self,
        window: &Mat<T>,
        t: usize,
        positions: &[i64],
        rope: &RopeConfig<T>,
        condition: ConditionId,
    ) -> Result<Mat<T>> {
        let input = ToyInput {
            window,
            t,
            positions,
            rope,
            condition,
        };
        Ok(self.run(&[input], false)?.0.pop().expect("one output"))
    }

    /// Mean squared error against `targets` and its gradient.
    pub fn loss_and_grads(&self, inputs: &[ToyInput<'_, T>], targets: &[Mat<T>]) -> Result<(T, ToyGrads<T>)> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape("one target per input required".into()));
        }
        let (outs, cache) = self.run(inputs, true)?;
        let cache = cache.expect("cache requested");
        let numel: usize = targets.iter().map(|t| t.as_slice().len()).sum();
        let scale = T::lit(2.0) / T::from_usize_lossy(numel);
        let d = self.arch.latent_dim;
        let mut loss = T::zero();
        let mut d_out = Mat::zeros(cache.tokens, d);
        let mut row = 0;
        for (o, y) in outs.iter().zip(targets) {
            o.check_same_shape(y)?;
            for i in 0..o.rows() {
                for c in 0..d {
                    let diff = o.get(i, c) - y.get(i, c);
                    loss += diff * diff;
                    d_out.set(row, c, scale * diff);
                }
                row += 1;
            }
        }
        loss /= T::from_usize_lossy(numel);
        let grads = self.backward(&cache, d_out);
        Ok((loss, grads))
    }

    pub fn loss(&self, inputs: &[ToyInput<'_, T>], targets: &[Mat<T>]) -> Result<T> {
        let (outs, _) = self.run(inputs, false)?;
        let mut se = T::zero();
        let mut n = 0;
        for (o, y) in outs.iter().zip(targets) {
            o.check_same_shape(y)?;
            for (a, b) in o.as_slice().iter().zip(y.as_slice()) {
                se += (*a - *b) * (*a - *b);
                n += 1;
            }
        }
        Ok(se / T::from_usize_lossy(n.max(1)))
    }

    fn check_inputs(&self, inputs: &[ToyInput<'_, T>]) -> Result<usize> {
        let f = inputs
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?
            .window
            .rows();
        for inp in inputs {
            let (rows, cols) = inp.window.shape();
            if rows != f {
                return Err(Error::Shape("all windows in a batch must share a length".into()));
            }
            if rows == 0 || rows > self.arch.max_context {
                return Err(Error::config(format!(
                    "window of {rows} latents outside 1..={}",
                    self.arch.max_context
                )));
            }
            if cols != self.arch.latent_dim {
                return Err(Error::Shape(format!(
                    "latent dim {cols} does not match model dim {}",
                    self.arch.latent_dim
                )));
            }
            if inp.positions.len() != rows {
                return Err(Error::Shape(format!(
                    "{} positions for a window of {rows}",
                    inp.positions.len()
                )));
            }
            if inp.condition.0 >= self.arch.classes {
                return Err(Error::config(format!(
                    "unknown condition {} (model has {} classes)",
                    inp.condition.0, self.arch.classes
                )));
            }
            if inp.rope.head_dim != self.arch.head_dim() {
                return Err(Error::config(format!(
                    "rope head dim {} does not match model head dim {}",
                    inp.rope.head_dim,
                    self.arch.head_dim()
                )));
            }
            inp.rope.validate()?;
        }
        Ok(f)
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, inputs: &[ToyInput<'_, T>], keep: bool) -> Result<(Vec<Mat<T>>, Option<Cache<T>>)> {
        let f = self.check_inputs(inputs)?;
        let a = &self.arch;
        let lay = &self.layout;
        let p = &self.data;
        let (b, w, d, hid) = (inputs.len(), a.width, a.latent_dim, a.hidden());
        let m = b * f;

        let mut x0 = Vec::with_capacity(m * d);
        for inp in inputs {
            x0.extend_from_slice(inp.window.as_slice());
        }
        let mut temb = vec![T::zero(); b * w];
        for (s, inp) in inputs.iter().enumerate() {
            time_embedding(inp.t, &mut temb[s * w..(s + 1) * w]);
        }
        // per-sample additive vector: temb W_t + b_t + cond
        let mut add = vec![T::zero(); b * w];
        for s in 0..b {
            add[s * w..(s + 1) * w].copy_from_slice(lay.b_time.of(p));
        }
        gemm_acc(b, w, w, &temb, false, lay.w_time.of(p), false, &mut add);
        for (s, inp) in inputs.iter().enumerate() {
            let c = inp.condition.0;
            let e = &lay.cond.of(p)[c * w..(c + 1) * w];
            for (dst, &v) in add[s * w..(s + 1) * w].iter_mut().zip(e) {
                *dst += v;
            }
        }
        let mut h = vec![T::zero(); m * w];
        for r in 0..m {
            let s = r / f;
            for c in 0..w {
                h[r * w + c] = lay.b_in.of(p)[c] + add[s * w + c];
            }
        }
        gemm_acc(m, d, w, &x0, false, lay.w_in.of(p), false, &mut h);

        let thetas: Vec<Vec<T>> = inputs.iter().map(|i| i.rope.thetas()).collect();
        let positions: Vec<Vec<T>> = inputs
            .iter()
            .map(|i| i.positions.iter().map(|&q| T::from_i64(q).unwrap_or_else(T::nan)).collect())
            .collect();

        let mut blocks = Vec::with_capacity(a.layers);
        for bl in &lay.blocks {
            let h_in = h.clone();
            let ln1 = layer_norm(&h, m, w, bl.ln1_g.of(p), bl.ln1_b.of(p));
            let mut q = vec![T::zero(); m * w];
            let mut k = vec![T::zero(); m * w];
            let mut v = vec![T::zero(); m * w];
            gemm_acc(m, w, w, &ln1.y, false, bl.wq.of(p), false, &mut q);
            gemm_acc(m, w, w, &ln1.y, false, bl.wk.of(p), false, &mut k);
            gemm_acc(m, w, w, &ln1.y, false, bl.wv.of(p), false, &mut v);
            let hd = a.head_dim();
            for r in 0..m {
                let (s, i) = (r / f, r % f);
                for head in 0..a.heads {
                    let sl = r * w + head * hd..r * w + (head + 1) * hd;
                    rotate_in_place(&mut q[sl.clone()], positions[s][i], &thetas[s]);
                    rotate_in_place(&mut k[sl], positions[s][i], &thetas[s]);
                }
            }
            let (o, probs) = attention(&q, &k, &v, b, f, a.heads, hd);
            let mut h_mid = h;
            for r in 0..m {
                for (c, &bo) in bl.bo.of(p).iter().enumerate() {
                    h_mid[r * w + c] += bo;
                }
            }
            gemm_acc(m, w, w, &o, false, bl.wo.of(p), false, &mut h_mid);

            let ln2 = layer_norm(&h_mid, m, w, bl.ln2_g.of(p), bl.ln2_b.of(p));
            let mut u = vec![T::zero(); m * hid];
            for r in 0..m {
                u[r * hid..(r + 1) * hid].copy_from_slice(bl.b1.of(p));
            }
            gemm_acc(m, w, hid, &ln2.y, false, bl.w1.of(p), false, &mut u);
            let g: Vec<T> = u.iter().map(|&x| gelu(x)).collect();
            let mut h_out = h_mid.clone();
            for r in 0..m {
                for (c, &b2) in bl.b2.of(p).iter().enumerate() {
                    h_out[r * w + c] += b2;
                }
            }
            gemm_acc(m, hid, w, &g, false, bl.w2.of(p), false, &mut h_out);
            h = h_out;
            if keep {
                blocks.push(BlockCache {
                    _h_in: h_in,
                    ln1,
                    q,
                    k,
                    v,
                    probs,
                    o,
                    ln2,
                    u,
                    g,
                });
            }
        }

        let lnf = layer_norm(&h, m, w, lay.lnf_g.of(p), lay.lnf_b.of(p));
        let mut out = vec![T::zero(); m * d];
        for r in 0..m {
            out[r * d..(r + 1) * d].copy_from_slice(lay.b_out.of(p));
        }
        gemm_acc(m, w, d, &lnf.y, false, lay.w_out.of(p), false, &mut out);

        let outs = out
            .chunks_exact(f * d)
            .map(|c| Mat::from_vec(f, d, c.to_vec()).expect("chunk shape"))
            .collect();
        let cache = keep.then(|| Cache {
            batch: b,
            ctx: f,
            tokens: m,
            x0,
            temb,
            conditions: inputs.iter().map(|i| i.condition.0).collect(),
            positions,
            thetas,
            blocks,
            lnf,
        });
        Ok((outs, cache))
    }

    fn backward(&self, cache: &Cache<T>, d_out: Mat<T>) -> ToyGrads<T> {
        let a = &self.arch;
        let lay = &self.layout;
        let p = &self.data;
        let mut gr = self.zero_grads();
        let g = &mut gr.data;
        let (b, f, m) = (cache.batch, cache.ctx, cache.tokens);
        let (w, d, hid, hd) = (a.width, a.latent_dim, a.hidden(), a.head_dim());
        let dy = d_out.as_slice();

        // output projection
        gemm_acc(w, m, d, &cache.lnf.y, true, dy, false, lay.w_out.of_mut(g));
        col_sum_acc(dy, m, d, lay.b_out.of_mut(g));
        let mut d_lnf = vec![T::zero(); m * w];
        gemm_acc(m, d, w, dy, false, lay.w_out.of(p), true, &mut d_lnf);
        let mut dh = layer_norm_backward(
            &cache.lnf,
            &d_lnf,
            m,
            w,
            lay.lnf_g.of(p),
            g,
            lay.lnf_g,
            lay.lnf_b,
        );

        for (bl, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch
            gemm_acc(hid, m, w, &bc.g, true, &dh, false, bl.w2.of_mut(g));
            col_sum_acc(&dh, m, w, bl.b2.of_mut(g));
            let mut du = vec![T::zero(); m * hid];
            gemm_acc(m, w, hid, &dh, false, bl.w2.of(p), true, &mut du);
            for (x, &u) in du.iter_mut().zip(&bc.u) {
                *x *= gelu_grad(u);
            }
            gemm_acc(w, m, hid, &bc.ln2.y, true, &du, false, bl.w1.of_mut(g));
            col_sum_acc(&du, m, hid, bl.b1.of_mut(g));
            let mut d_ln2 = vec![T::zero(); m * w];
            gemm_acc(m, hid, w, &du, false, bl.w1.of(p), true, &mut d_ln2);
            let dx = layer_norm_backward(
                &bc.ln2,
                &d_ln2,
                m,
                w,
                bl.ln2_g.of(p),
                g,
                bl.ln2_g,
                bl.ln2_b,
            );
            for (a, b) in dh.iter_mut().zip(&dx) {
                *a += *b;
            }

            // attention branch
            gemm_acc(w, m, w, &bc.o, true, &dh, false, bl.wo.of_mut(g));
            col_sum_acc(&dh, m, w, bl.bo.of_mut(g));
            let mut d_o = vec![T::zero(); m * w];
            gemm_acc(m, w, w, &dh, false, bl.wo.of(p), true, &mut d_o);
            let (mut dq, mut dk, dv) =
                attention_backward(&bc.q, &bc.k, &bc.v, &bc.probs, &d_o, b, f, a.heads, hd);
            for r in 0..m {
                let (s, i) = (r / f, r % f);
                for head in 0..a.heads {
                    let sl = r * w + head * hd..r * w + (head + 1) * hd;
                    rotate_back_in_place(&mut dq[sl.clone()], cache.positions[s][i], &cache.thetas[s]);
                    rotate_back_in_place(&mut dk[sl], cache.positions[s][i], &cache.thetas[s]);
                }
            }
            let x = &bc.ln1.y;
            gemm_acc(w, m, w, x, true, &dq, false, bl.wq.of_mut(g));
            gemm_acc(w, m, w, x, true, &dk, false, bl.wk.of_mut(g));
            gemm_acc(w, m, w, x, true, &dv, false, bl.wv.of_mut(g));
            let mut d_ln1 = vec![T::zero(); m * w];
            gemm_acc(m, w, w, &dq, false, bl.wq.of(p), true, &mut d_ln1);
            gemm_acc(m, w, w, &dk, false, bl.wk.of(p), true, &mut d_ln1);
            gemm_acc(m, w, w, &dv, false, bl.wv.of(p), true, &mut d_ln1);
            let dx = layer_norm_backward(
                &bc.ln1,
                &d_ln1,
                m,
                w,
                bl.ln1_g.of(p),
                g,
                bl.ln1_g,
                bl.ln1_b,
            );
            for (a, b) in dh.iter_mut().zip(&dx) {
                *a += *b;
            }
        }

        // embeddings
        gemm_acc(d, m, w, &cache.x0, true, &dh, false, lay.w_in.of_mut(g));
        col_sum_acc(&dh, m, w, lay.b_in.of_mut(g));
        let mut d_add = vec![T::zero(); b * w];
        for r in 0..m {
            let s = r / f;
            for c in 0..w {
                d_add[s * w + c] += dh[r * w + c];
            }
        }
        gemm_acc(w, b, w, &cache.temb, true, &d_add, false, lay.w_time.of_mut(g));
        col_sum_acc(&d_add, b, w, lay.b_time.of_mut(g));
        let cond = lay.cond.of_mut(g);
        for (s, &c) in cache.conditions.iter().enumerate() {
            for k in 0..w {
                cond[c * w + k] += d_add[s * w + k];
            }
        }
        gr
    }
}

impl<T: Scalar> Denoiser<T> for ToyTransformerParams<T> {
    fn predict_eps(&self, window: &Mat<T>, t: usize, ctx: &WindowContext<T>) -> Result<Mat<T>> {
        self.toy_forward(window, t, &ctx.positions.positions, &ctx.positions.rope, ctx.condition)
    }
}

struct LnCache<T> {
    y: Vec<T>,
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct BlockCache<T> {
    _h_in: Vec<T>,
    ln1: LnCache<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    o: Vec<T>,
    ln2: LnCache<T>,
    u: Vec<T>,
    g: Vec<T>,
}

struct Cache<T> {
    batch: usize,
    ctx: usize,
    tokens: usize,
    x0: Vec<T>,
    temb: Vec<T>,
    conditions: Vec<usize>,
    positions: Vec<Vec<T>>,
    thetas: Vec<Vec<T>>,
    blocks: Vec<BlockCache<T>>,
    lnf: LnCache<T>,
}

/// `c += op(a) * op(b)` with `op(a)` of shape `m x k` and `op(b)` of
/// `k x n`; `ta`/`tb` mark row-major operands stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, c: &mut [T]) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, T::one(), c, n as isize, 1);
}

fn col_sum_acc<T: Scalar>(x: &[T], rows: usize, cols: usize, out: &mut [T]) {
    for r in 0..rows {
        for (o, &v) in out.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

/// Sinusoidal embedding of the diffusion step: `[sin(t w_i), cos(t w_i)]`.
fn time_embedding<T: Scalar>(t: usize, out: &mut [T]) {
    let half = out.len() / 2;
    let tt = t as f64;
    for i in 0..half {
        let freq = (-(TIME_BASE.ln()) * i as f64 / half as f64).exp();
        out[i] = T::lit((tt * freq).sin());
        out[half + i] = T::lit((tt * freq).cos());
    }
}

fn layer_norm<T: Scalar>(x: &[T], rows: usize, cols: usize, gain: &[T], bias: &[T]) -> LnCache<T> {
    let n = T::from_usize_lossy(cols);
    let eps = T::lit(LN_EPS);
    let mut y = vec![T::zero(); rows * cols];
    let mut xhat = vec![T::zero(); rows * cols];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = (var + eps).sqrt().recip();
        rstd[r] = rs;
        for c in 0..cols {
            let xh = (row[c] - mean) * rs;
            xhat[r * cols + c] = xh;
            y[r * cols + c] = xh * gain[c] + bias[c];
        }
    }
    LnCache { y, xhat, rstd }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Scalar>(
    cache: &LnCache<T>,
    dy: &[T],
    rows: usize,
    cols: usize,
    gain: &[T],
    grads: &mut [T],
    gain_span: Span,
    bias_span: Span,
) -> Vec<T> {
    let n = T::from_usize_lossy(cols);
    let mut dx = vec![T::zero(); rows * cols];
    let mut dxhat = vec![T::zero(); cols];
    for r in 0..rows {
        let o = r * cols;
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for c in 0..cols {
            let g = dy[o + c];
            grads[gain_span.off + c] += g * cache.xhat[o + c];
            grads[bias_span.off + c] += g;
            dxhat[c] = g * gain[c];
            s1 += dxhat[c];
            s2 += dxhat[c] * cache.xhat[o + c];
        }
        let (m1, m2) = (s1 / n, s2 / n);
        for c in 0..cols {
            dx[o + c] = cache.rstd[r] * (dxhat[c] - m1 - cache.xhat[o + c] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    let th = inner.tanh();
    let dinner = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_K) * x * x);
    T::lit(0.5) * (T::one() + th) + T::lit(0.5) * x * (T::one() - th * th) * dinner
}

/// Full self-attention per (sample, head). Returns the concatenated head
/// outputs and the softmax probabilities laid out `[sample][head][i][j]`.
#[allow(clippy::too_many_arguments)]
fn attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    batch: usize,
    f: usize,
    heads: usize,
    hd: usize,
) -> (Vec<T>, Vec<T>) {
    let w = heads * hd;
    let scale = T::from_usize_lossy(hd).sqrt().recip();
    let mut out = vec![T::zero(); batch * f * w];
    let mut probs = vec![T::zero(); batch * heads * f * f];
    let mut row = vec![T::zero(); f];
    for s in 0..batch {
        for h in 0..heads {
            let pbase = (s * heads + h) * f * f;
            for i in 0..f {
                let qi = &q[(s * f + i) * w + h * hd..][..hd];
                let mut max = T::neg_infinity();
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[(s * f + j) * w + h * hd..][..hd];
                    *r = crate::tensor::dot(qi, kj) * scale;
                    max = max.max(*r);
                }
                let mut z = T::zero();
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    z += *r;
                }
                let oi = (s * f + i) * w + h * hd;
                for j in 0..f {
                    let pij = row[j] / z;
                    probs[pbase + i * f + j] = pij;
                    let vj = &v[(s * f + j) * w + h * hd..][..hd];
                    for c in 0..hd {
                        out[oi + c] += pij * vj[c];
                    }
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    d_o: &[T],
    batch: usize,
    f: usize,
    heads: usize,
    hd: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let w = heads * hd;
    let scale = T::from_usize_lossy(hd).sqrt().recip();
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); f];
    for s in 0..batch {
        for h in 0..heads {
            let pbase = (s * heads + h) * f * f;
            for i in 0..f {
                let doi = &d_o[(s * f + i) * w + h * hd..][..hd];
                let mut acc = T::zero();
                for j in 0..f {
                    let vj = &v[(s * f + j) * w + h * hd..][..hd];
                    dp[j] = crate::tensor::dot(doi, vj);
                    acc += dp[j] * probs[pbase + i * f + j];
                }
                let qi_off = (s * f + i) * w + h * hd;
                for j in 0..f {
                    let pij = probs[pbase + i * f + j];
                    let dv_off = (s * f + j) * w + h * hd;
                    for c in 0..hd {
                        dv[dv_off + c] += pij * doi[c];
                    }
                    let ds = pij * (dp[j] - acc) * scale;
                    for c in 0..hd {
                        dq[qi_off + c] += ds * k[dv_off + c];
                        dk[dv_off + c] += ds * q[qi_off + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::RopeMode;
    use rand::Rng;

    fn small_arch() -> ToyArch {
        ToyArch {
            layers: 2,
            width: 16,
            heads: 2,
            latent_dim: 4,
            mlp_ratio: 2,
            max_context: 6,
            classes: 3,
        }
    }

    fn random_window(rng: &mut ChaCha8Rng, f: usize, d: usize) -> Mat<f64> {
        Mat::from_fn(f, d, |_, _| rng.gen_range(-1.5..1.5))
    }

    #[test]
    fn default_arch_matches_toy_scale() {
        let a = ToyArch::default();
        assert_eq!(a.head_dim(), 32);
        let p = ToyTransformerParams::<f32>::init(a, 0).unwrap();
        // in 576 + time 4160 + cond 256 + 2 blocks x 33280 + final 648
        assert_eq!(p.param_count(), 72_200);
        assert!(p.all_finite());
    }

    #[test]
    fn zero_network_outputs_bias() {
        let arch = small_arch();
        let mut p = ToyTransformerParams::<f64>::zeros(arch).unwrap();
        let bias = [0.5, -1.0, 2.0, 0.25];
        p.set_tensor("b_out", &[4], &bias).unwrap();
        let rope = RopeConfig::standard(arch.head_dim()).unwrap();
        let x = Mat::from_fn(5, 4, |i, j| (i + j) as f64);
        let out = p.toy_forward(&x, 17, &[0, 1, 2, 3, 4], &rope, ConditionId(2)).unwrap();
        for i in 0..5 {
            assert_eq!(out.row(i), &bias);
        }
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let arch = small_arch();
        let p = ToyTransformerParams::<f64>::init(arch, 4).unwrap();
        let rope = RopeConfig::standard(arch.head_dim()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_window(&mut rng, 6, 4);
        let pos = [0i64, 1, 2, 3, 4, 5];
        let perm = [3usize, 0, 5, 1, 4, 2];
        let xp = x.select_rows(&perm);
        let pos_p: Vec<i64> = perm.iter().map(|&i| pos[i]).collect();
        let y = p.toy_forward(&x, 300, &pos, &rope, ConditionId(1)).unwrap();
        let yp = p.toy_forward(&xp, 300, &pos_p, &rope, ConditionId(1)).unwrap();
        assert!(yp.max_abs_diff(&y.select_rows(&perm)) < 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let arch = small_arch();
        let p = ToyTransformerParams::<f32>::init(arch, 4).unwrap();
        let rope = RopeConfig::standard(arch.head_dim()).unwrap();
        let x = Mat::from_fn(4, 4, |i, j| (i as f32 * 0.3 - j as f32).sin());
        let a = p.toy_forward(&x, 9, &[0, 1, 2, 3], &rope, ConditionId(0)).unwrap();
        let b = p.toy_forward(&x, 9, &[0, 1, 2, 3], &rope, ConditionId(0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_errors() {
        let arch = small_arch();
        let p = ToyTransformerParams::<f64>::init(arch, 0).unwrap();
        let rope = RopeConfig::standard(arch.head_dim()).unwrap();
        let x = Mat::zeros(3, 4);
        assert!(p.toy_forward(&x, 1, &[0, 1, 2], &rope, ConditionId(3)).is_err());
        assert!(p.toy_forward(&Mat::zeros(7, 4), 1, &[0; 7], &rope, ConditionId(0)).is_err());
        assert!(p.toy_forward(&x, 1, &[0, 1], &rope, ConditionId(0)).is_err());
        assert!(p.toy_forward(&Mat::zeros(3, 5), 1, &[0, 1, 2], &rope, ConditionId(0)).is_err());
        let wrong = RopeConfig::standard(4).unwrap();
        assert!(p.toy_forward(&x, 1, &[0, 1, 2], &wrong, ConditionId(0)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = small_arch();
        let mut p = ToyTransformerParams::<f64>::init(arch, 21).unwrap();
        // move the layer-norm gains and biases off their initial 1 and 0
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for x in p.data_mut().iter_mut() {
            *x += rng.gen_range(-0.05..0.05);
        }
        let rope = RopeConfig::new(arch.head_dim(), 10000.0, 2.0, RopeMode::Shifted).unwrap();
        let windows: Vec<Mat<f64>> = (0..3).map(|_| random_window(&mut rng, 5, 4)).collect();
        let targets: Vec<Mat<f64>> = (0..3).map(|_| random_window(&mut rng, 5, 4)).collect();
        let positions = [vec![0i64, 1, 2, 3, 4], vec![7, 8, 9, 0, 1], vec![3, 4, 5, 6, 7]];
        let inputs: Vec<ToyInput<f64>> = (0..3)
            .map(|s| ToyInput {
                window: &windows[s],
                t: 100 + 300 * s,
                positions: &positions[s],
                rope: &rope,
                condition: ConditionId(s % 3),
            })
            .collect();
        let (_, grads) = p.loss_and_grads(&inputs, &targets).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for idx in 0..p.param_count() {
            let orig = p.data()[idx];
            p.data_mut()[idx] = orig + h;
            let lp = p.loss(&inputs, &targets).unwrap();
            p.data_mut()[idx] = orig - h;
            let lm = p.loss(&inputs, &targets).unwrap();
            p.data_mut()[idx] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.data[idx];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom < 1e-3,
                "param {idx}: analytic {analytic} numeric {numeric}"
            );
            checked += 1;
        }
        assert_eq!(checked, p.param_count());
    }
}
