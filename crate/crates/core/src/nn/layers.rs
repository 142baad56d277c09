//! Layer definitions over the autodiff graph.
//!
//! Parameters live in a [`ParamStore`] (the flat named list the
//! optimizer and checkpoints operate on); layer structs hold parameter
//! handles plus dimensions and wire themselves into a [`Graph`] at
//! forward time.

use rand_chacha::ChaCha8Rng;

use super::tensor::{Graph, TensorId};
use crate::rng;
use crate::scalar::{fr, Scalar};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Flat named parameter table.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    pub entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push(ParamEntry { name: name.into(), shape, data });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_fan_in(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let limit = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product::<usize>();
        let data: Vec<T> =
            (0..n).map(|_| rng::uniform(rng, fr(-limit), fr(limit))).collect();
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product::<usize>();
        self.add(name, shape, vec![T::zero(); n])
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Pushes every parameter into a graph; index by [`ParamId`].
    pub fn push_all(&self, g: &mut Graph<T>, trainable: bool) -> Vec<TensorId> {
        self.entries
            .iter()
            .map(|e| g.leaf(e.data.clone(), e.shape.clone(), trainable))
            .collect()
    }
}

/// Causal dilated 1-D convolution.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel;
        let w = store.add_fan_in(format!("{name}.w"), vec![c_out, c_in, kernel], fan_in, rng);
        let b = store.add_zeros(format!("{name}.b"), vec![c_out]);
        Self { w, b, dilation }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[TensorId], x: TensorId) -> TensorId {
        g.conv1d(x, p[self.w.0], p[self.b.0], self.dilation)
    }
}

/// Layer normalization over the channel axis with learned gain/bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), vec![channels], vec![T::one(); channels]);
        let bias = store.add_zeros(format!("{name}.bias"), vec![channels]);
        Self { gain, bias }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[TensorId], x: TensorId) -> TensorId {
        g.layer_norm(x, p[self.gain.0], p[self.bias.0])
    }
}

/// Parametric rectifier with one learned slope, initialized at 0.25.
#[derive(Debug, Clone)]
pub struct Prelu {
    pub alpha: ParamId,
}

impl Prelu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str) -> Self {
        let alpha = store.add(format!("{name}.alpha"), vec![1], vec![fr(0.25)]);
        Self { alpha }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[TensorId], x: TensorId) -> TensorId {
        g.prelu(x, p[self.alpha.0])
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add_fan_in(format!("{name}.w"), vec![in_features, out_features], in_features, rng);
        let b = store.add_zeros(format!("{name}.b"), vec![out_features]);
        Self { w, b }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[TensorId], x: TensorId) -> TensorId {
        let xw = g.matmul(x, p[self.w.0]);
        g.add_row(xw, p[self.b.0])
    }
}

/// Complex fully connected layer on paired real tensors:
/// out = (Fr W_r - Fi W_i + b_r) + j (Fr W_i + Fi W_r + b_i).
#[derive(Debug, Clone)]
pub struct ComplexLinear {
    pub w_re: ParamId,
    pub w_im: ParamId,
    pub b_re: ParamId,
    pub b_im: ParamId,
}

impl ComplexLinear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w_re =
            store.add_fan_in(format!("{name}.w_re"), vec![in_features, out_features], in_features, rng);
        let w_im =
            store.add_fan_in(format!("{name}.w_im"), vec![in_features, out_features], in_features, rng);
        let b_re = store.add_zeros(format!("{name}.b_re"), vec![out_features]);
        let b_im = store.add_zeros(format!("{name}.b_im"), vec![out_features]);
        Self { w_re, w_im, b_re, b_im }
    }

    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &[TensorId],
        x_re: TensorId,
        x_im: TensorId,
    ) -> (TensorId, TensorId) {
        let rr = g.matmul(x_re, p[self.w_re.0]);
        let ii = g.matmul(x_im, p[self.w_im.0]);
        let ri = g.matmul(x_re, p[self.w_im.0]);
        let ir = g.matmul(x_im, p[self.w_re.0]);
        let re = g.sub(rr, ii);
        let re = g.add_row(re, p[self.b_re.0]);
        let im = g.add(ri, ir);
        let im = g.add_row(im, p[self.b_im.0]);
        (re, im)
    }
}

/// GRU layer parameters; recursion runs as one fused graph op.
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub wz: ParamId,
    pub wr: ParamId,
    pub wh: ParamId,
    pub uz: ParamId,
    pub ur: ParamId,
    pub uh: ParamId,
    pub bz: ParamId,
    pub br: ParamId,
    pub bh: ParamId,
}

impl GruLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(hidden >= 1, "gru hidden units must be >= 1");
        let mut input_w = |gate: &str| {
            store.add_fan_in(format!("{name}.w{gate}"), vec![in_features, hidden], in_features, rng)
        };
        let wz = input_w("z");
        let wr = input_w("r");
        let wh = input_w("h");
        let mut hidden_w = |gate: &str| {
            store.add_fan_in(format!("{name}.u{gate}"), vec![hidden, hidden], hidden, rng)
        };
        let uz = hidden_w("z");
        let ur = hidden_w("r");
        let uh = hidden_w("h");
        let bz = store.add_zeros(format!("{name}.bz"), vec![hidden]);
        let br = store.add_zeros(format!("{name}.br"), vec![hidden]);
        let bh = store.add_zeros(format!("{name}.bh"), vec![hidden]);
        Self { wz, wr, wh, uz, ur, uh, bz, br, bh }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[TensorId], x: TensorId) -> TensorId {
        g.gru(
            x,
            p[self.wz.0],
            p[self.wr.0],
            p[self.wh.0],
            p[self.uz.0],
            p[self.ur.0],
            p[self.uh.0],
            p[self.bz.0],
            p[self.br.0],
            p[self.bh.0],
        )
    }
}

/// Complex GRU: two real GRUs combined by complex-multiplication
/// algebra, F_out = (F_rr - F_ii) + j (F_ri + F_ir) with
/// F_rr = GRU_r(x_re), F_ir = GRU_r(x_im),
/// F_ri = GRU_i(x_re), F_ii = GRU_i(x_im).
#[derive(Debug, Clone)]
pub struct ComplexGru {
    pub gru_re: GruLayer,
    pub gru_im: GruLayer,
}

impl ComplexGru {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            gru_re: GruLayer::new(store, &format!("{name}.re"), in_features, hidden, rng),
            gru_im: GruLayer::new(store, &format!("{name}.im"), in_features, hidden, rng),
        }
    }

    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &[TensorId],
        x_re: TensorId,
        x_im: TensorId,
    ) -> (TensorId, TensorId) {
        let f_rr = self.gru_re.apply(g, p, x_re);
        let f_ir = self.gru_re.apply(g, p, x_im);
        let f_ri = self.gru_im.apply(g, p, x_re);
        let f_ii = self.gru_im.apply(g, p, x_im);
        let re = g.sub(f_rr, f_ii);
        let im = g.add(f_ri, f_ir);
        (re, im)
    }
}

/// Residual TCN block: dilated conv -> parametric rectifier -> layer
/// norm, added back onto the input (through a 1x1 projection when the
/// channel counts differ).
#[derive(Debug, Clone)]
pub struct TcnBlock {
    pub conv: Conv1d,
    pub act: Prelu,
    pub norm: LayerNorm,
    pub residual_proj: Option<Conv1d>,
}

impl TcnBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let conv = Conv1d::new(store, &format!("{name}.conv"), c_in, c_out, kernel, dilation, rng);
        let act = Prelu::new(store, &format!("{name}.act"));
        let norm = LayerNorm::new(store, &format!("{name}.norm"), c_out);
        let residual_proj = (c_in != c_out)
            .then(|| Conv1d::new(store, &format!("{name}.proj"), c_in, c_out, 1, 1, rng));
        Self { conv, act, norm, residual_proj }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[TensorId], x: TensorId) -> TensorId {
        let y = self.conv.apply(g, p, x);
        let y = self.act.apply(g, p, y);
        let y = self.norm.apply(g, p, y);
        let skip = match &self.residual_proj {
            Some(proj) => proj.apply(g, p, x),
            None => x,
        };
        g.add(skip, y)
    }
}

/// Stack of TCN blocks with dilations 1, 2, 4, ... (doubling per block).
#[derive(Debug, Clone)]
pub struct TcnStack {
    pub blocks: Vec<TcnBlock>,
}

impl TcnStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        hidden: usize,
        kernel: usize,
        num_blocks: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut blocks = Vec::with_capacity(num_blocks);
        for i in 0..num_blocks {
            let block_in = if i == 0 { c_in } else { hidden };
            blocks.push(TcnBlock::new(
                store,
                &format!("{name}.{i}"),
                block_in,
                hidden,
                kernel,
                1 << i,
                rng,
            ));
        }
        Self { blocks }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, p: &[TensorId], x: TensorId) -> TensorId {
        let mut cur = x;
        for b in &self.blocks {
            cur = b.apply(g, p, cur);
        }
        cur
    }
}
