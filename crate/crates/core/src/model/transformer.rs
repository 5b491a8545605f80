//! Pre-LayerNorm transformer encoder with a linear token-classification head,
//! forward and backward written out by hand over a flat parameter vector.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ClassifierConfig;
use crate::error::{Error, Result};
use crate::tokenize::ProbTable;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Slot {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn view<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.offset..self.offset + self.len()])
            .expect("slot shape")
    }

    fn view_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.offset..self.offset + self.len()])
            .expect("slot shape")
    }

    fn row<'a>(&self, data: &'a [f64]) -> ndarray::ArrayView1<'a, f64> {
        debug_assert_eq!(self.rows, 1);
        ndarray::ArrayView1::from(&data[self.offset..self.offset + self.cols])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct LayerSlots {
    ln1_g: Slot,
    ln1_b: Slot,
    wq: Slot,
    bq: Slot,
    wk: Slot,
    bk: Slot,
    wv: Slot,
    bv: Slot,
    wo: Slot,
    bo: Slot,
    ln2_g: Slot,
    ln2_b: Slot,
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
}

/// Where each named tensor lives inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    tok_emb: Slot,
    pos_emb: Slot,
    layers: Vec<LayerSlots>,
    lnf_g: Slot,
    lnf_b: Slot,
    head_w: Slot,
    head_b: Slot,
    total: usize,
}

impl Layout {
    fn new(c: &ClassifierConfig) -> Self {
        let mut offset = 0;
        let mut slot = |rows, cols| {
            let s = Slot { offset, rows, cols };
            offset += rows * cols;
            s
        };
        let d = c.n_hidden;
        let tok_emb = slot(c.vocab_size, d);
        let pos_emb = slot(c.max_len, d);
        let layers = (0..c.encoder_layers)
            .map(|_| LayerSlots {
                ln1_g: slot(1, d),
                ln1_b: slot(1, d),
                wq: slot(d, d),
                bq: slot(1, d),
                wk: slot(d, d),
                bk: slot(1, d),
                wv: slot(d, d),
                bv: slot(1, d),
                wo: slot(d, d),
                bo: slot(1, d),
                ln2_g: slot(1, d),
                ln2_b: slot(1, d),
                w1: slot(d, c.ff_width),
                b1: slot(1, c.ff_width),
                w2: slot(c.ff_width, d),
                b2: slot(1, d),
            })
            .collect();
        let lnf_g = slot(1, d);
        let lnf_b = slot(1, d);
        let head_w = slot(d, c.num_classes);
        let head_b = slot(1, c.num_classes);
        Layout {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            total: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Offsets of the head weight matrix W (n_hidden × num_classes) and bias b.
    pub fn head_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let w = self.head_w;
        let b = self.head_b;
        (w.offset..w.offset + w.len(), b.offset..b.offset + b.len())
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * &g + &b;
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates dg and db.
fn layer_norm_back(dy: &Array2<f64>, cache: &LnCache, g: ndarray::ArrayView1<f64>, dg: &mut [f64], db: &mut [f64]) -> Array2<f64> {
    let d = dy.ncols() as f64;
    for (k, (dgk, dbk)) in dg.iter_mut().zip(db.iter_mut()).enumerate() {
        *dgk += (&dy.column(k) * &cache.xhat.column(k)).sum();
        *dbk += dy.column(k).sum();
    }
    let dxhat = dy * &g;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_dxhat.view().insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dxhat_xhat.view().insert_axis(Axis(1)));
    dx * &cache.rstd.view().insert_axis(Axis(1))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    m
}

fn dropout_mask(rng: &mut impl Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    drop_attn: Option<Array2<f64>>,
    ln2: LnCache,
    c: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
    drop_ff: Option<Array2<f64>>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct Trace {
    ids: Vec<u32>,
    drop_emb: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Array2<f64>,
    pub probs: Array2<f64>,
}

/// Token classifier: embeddings + encoder stack + `Y = W·X + b` + softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Transformer {
    pub config: ClassifierConfig,
    layout: Layout,
    pub params: Vec<f64>,
}

impl Transformer {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut fill = |s: Slot, params: &mut [f64]| {
            for v in &mut params[s.offset..s.offset + s.len()] {
                *v = normal.sample(&mut rng);
            }
        };
        fill(layout.tok_emb, &mut params);
        fill(layout.pos_emb, &mut params);
        for l in &layout.layers {
            for s in [l.wq, l.wk, l.wv, l.wo, l.w1, l.w2] {
                fill(s, &mut params);
            }
        }
        fill(layout.head_w, &mut params);
        for g in layout
            .layers
            .iter()
            .flat_map(|l| [l.ln1_g, l.ln2_g])
            .chain([layout.lnf_g])
        {
            params[g.offset..g.offset + g.len()].fill(1.0);
        }
        Ok(Transformer { config, layout, params })
    }

    pub fn from_params(config: ClassifierConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len() {
            return Err(Error::Schema(format!(
                "expected {} parameters, found {}",
                layout.len(),
                params.len()
            )));
        }
        Ok(Transformer { config, layout, params })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn zero_head(&mut self) {
        let (w, b) = self.layout.head_ranges();
        self.params[w].fill(0.0);
        self.params[b].fill(0.0);
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.max_len {
            return Err(Error::Input(format!(
                "{} tokens exceed max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token id {id} ≥ vocab size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Probabilities for a full padded sequence. Only the unpadded prefix
    /// passes through the encoder; pad rows are returned as uniform.
    pub fn forward(&self, token_ids: &[u32], pad_mask: &[bool]) -> Result<ProbTable> {
        if token_ids.len() != self.config.max_len || pad_mask.len() != token_ids.len() {
            return Err(Error::Input(format!(
                "expected {} token ids and mask entries, got {} and {}",
                self.config.max_len,
                token_ids.len(),
                pad_mask.len()
            )));
        }
        let real = pad_mask.iter().take_while(|&&m| m).count();
        if pad_mask[real..].iter().any(|&m| m) {
            return Err(Error::Input("pad mask is not a contiguous prefix".into()));
        }
        self.check_ids(token_ids)?;
        let c = self.config.num_classes;
        let mut rows = Array2::from_elem((self.config.max_len, c), 1.0 / c as f64);
        if real > 0 {
            let trace = self.run(&token_ids[..real], None);
            rows.slice_mut(s![..real, ..]).assign(&trace.probs);
        }
        Ok(ProbTable::new(rows))
    }

    /// Forward over an unpadded sequence, keeping activations. With `rng`,
    /// dropout is applied.
    pub fn trace(&self, ids: &[u32], rng: Option<&mut ChaCha8Rng>) -> Result<Trace> {
        self.check_ids(ids)?;
        Ok(self.run(ids, rng))
    }

    fn run(&self, ids: &[u32], mut rng: Option<&mut ChaCha8Rng>) -> Trace {
        let p = &self.params;
        let cfg = &self.config;
        let n = ids.len();
        let d = cfg.n_hidden;
        let heads = cfg.attention_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let drop = cfg.dropout;
        let mut mask = |shape| match rng.as_deref_mut() {
            Some(r) if drop > 0.0 => Some(dropout_mask(r, shape, drop)),
            _ => None,
        };

        let tok = self.layout.tok_emb.view(p);
        let pos = self.layout.pos_emb.view(p);
        let mut x = Array2::from_shape_fn((n, d), |(i, k)| tok[[ids[i] as usize, k]] + pos[[i, k]]);
        let drop_emb = mask((n, d));
        if let Some(m) = &drop_emb {
            x *= m;
        }

        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for l in &self.layout.layers {
            let (a, ln1) = layer_norm(&x, l.ln1_g.row(p), l.ln1_b.row(p));
            let q = a.dot(&l.wq.view(p)) + &l.bq.row(p);
            let k = a.dot(&l.wk.view(p)) + &l.bk.row(p);
            let v = a.dot(&l.wv.view(p)) + &l.bv.row(p);
            let mut o = Array2::zeros((n, d));
            let mut attn = Vec::with_capacity(heads);
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                let att = softmax_rows(scores);
                o.slice_mut(cols).assign(&att.dot(&v.slice(cols)));
                attn.push(att);
            }
            let mut u = o.dot(&l.wo.view(p)) + &l.bo.row(p);
            let drop_attn = mask((n, d));
            if let Some(m) = &drop_attn {
                u *= m;
            }
            x += &u;

            let (c, ln2) = layer_norm(&x, l.ln2_g.row(p), l.ln2_b.row(p));
            let z = c.dot(&l.w1.view(p)) + &l.b1.row(p);
            let g = z.mapv(gelu);
            let mut y = g.dot(&l.w2.view(p)) + &l.b2.row(p);
            let drop_ff = mask((n, d));
            if let Some(m) = &drop_ff {
                y *= m;
            }
            x += &y;
            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                attn,
                o,
                drop_attn,
                ln2,
                c,
                z,
                g,
                drop_ff,
            });
        }
        let (hf, lnf) = layer_norm(&x, self.layout.lnf_g.row(p), self.layout.lnf_b.row(p));
        let logits = hf.dot(&self.layout.head_w.view(p)) + &self.layout.head_b.row(p);
        Trace {
            ids: ids.to_vec(),
            drop_emb,
            layers,
            lnf,
            hf,
            probs: softmax_rows(logits),
        }
    }

    /// Backpropagate `dlogits` (n × num_classes) through a trace, adding the
    /// parameter gradient into `grad`.
    pub fn backward(&self, trace: &Trace, dlogits: &Array2<f64>, grad: &mut [f64]) {
        let p = &self.params;
        let cfg = &self.config;
        let n = trace.ids.len();
        let d = cfg.n_hidden;
        let heads = cfg.attention_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let lay = &self.layout;

        lay.head_w.view_mut(grad).scaled_add(1.0, &trace.hf.t().dot(dlogits));
        add_row(lay.head_b, grad, &dlogits.sum_axis(Axis(0)));
        let dhf = dlogits.dot(&lay.head_w.view(p).t());
        let mut dx = {
            let (dg, db) = two_rows(grad, lay.lnf_g, lay.lnf_b);
            layer_norm_back(&dhf, &trace.lnf, lay.lnf_g.row(p), dg, db)
        };

        for (l, cache) in lay.layers.iter().zip(&trace.layers).rev() {
            // feed-forward block
            let mut dy = dx.clone();
            if let Some(m) = &cache.drop_ff {
                dy *= m;
            }
            l.w2.view_mut(grad).scaled_add(1.0, &cache.g.t().dot(&dy));
            add_row(l.b2, grad, &dy.sum_axis(Axis(0)));
            let dg = dy.dot(&l.w2.view(p).t());
            let dz = &dg * &cache.z.mapv(gelu_grad);
            l.w1.view_mut(grad).scaled_add(1.0, &cache.c.t().dot(&dz));
            add_row(l.b1, grad, &dz.sum_axis(Axis(0)));
            let dc = dz.dot(&l.w1.view(p).t());
            {
                let (dgam, dbet) = two_rows(grad, l.ln2_g, l.ln2_b);
                dx += &layer_norm_back(&dc, &cache.ln2, l.ln2_g.row(p), dgam, dbet);
            }

            // attention block
            let mut du = dx.clone();
            if let Some(m) = &cache.drop_attn {
                du *= m;
            }
            l.wo.view_mut(grad).scaled_add(1.0, &cache.o.t().dot(&du));
            add_row(l.bo, grad, &du.sum_axis(Axis(0)));
            let dout = du.dot(&l.wo.view(p).t());
            let mut dq = Array2::zeros((n, d));
            let mut dk = Array2::zeros((n, d));
            let mut dv = Array2::zeros((n, d));
            for (h, att) in cache.attn.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let doh = dout.slice(cols);
                let datt = doh.dot(&cache.v.slice(cols).t());
                dv.slice_mut(cols).assign(&att.t().dot(&doh));
                let row_dot = (&datt * att).sum_axis(Axis(1));
                let dscores = (datt - &row_dot.view().insert_axis(Axis(1))) * att * scale;
                dq.slice_mut(cols).assign(&dscores.dot(&cache.k.slice(cols)));
                dk.slice_mut(cols).assign(&dscores.t().dot(&cache.q.slice(cols)));
            }
            let at = cache.a.t();
            l.wq.view_mut(grad).scaled_add(1.0, &at.dot(&dq));
            l.wk.view_mut(grad).scaled_add(1.0, &at.dot(&dk));
            l.wv.view_mut(grad).scaled_add(1.0, &at.dot(&dv));
            add_row(l.bq, grad, &dq.sum_axis(Axis(0)));
            add_row(l.bk, grad, &dk.sum_axis(Axis(0)));
            add_row(l.bv, grad, &dv.sum_axis(Axis(0)));
            let da = dq.dot(&l.wq.view(p).t()) + dk.dot(&l.wk.view(p).t()) + dv.dot(&l.wv.view(p).t());
            {
                let (dgam, dbet) = two_rows(grad, l.ln1_g, l.ln1_b);
                dx += &layer_norm_back(&da, &cache.ln1, l.ln1_g.row(p), dgam, dbet);
            }
        }

        if let Some(m) = &trace.drop_emb {
            dx *= m;
        }
        let mut dtok = lay.tok_emb.view_mut(grad);
        for (i, &id) in trace.ids.iter().enumerate() {
            let mut row = dtok.row_mut(id as usize);
            row += &dx.row(i);
        }
        lay.pos_emb.view_mut(grad).slice_mut(s![..n, ..]).scaled_add(1.0, &dx);
    }
}

fn add_row(slot: Slot, grad: &mut [f64], v: &Array1<f64>) {
    for (g, x) in grad[slot.offset..slot.offset + slot.cols].iter_mut().zip(v) {
        *g += x;
    }
}

/// Mutable gradient slices for a (gamma, beta) pair laid out back to back.
fn two_rows(grad: &mut [f64], a: Slot, b: Slot) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(a.offset + a.len(), b.offset);
    let (left, right) = grad[a.offset..b.offset + b.len()].split_at_mut(a.len());
    (left, right)
}
