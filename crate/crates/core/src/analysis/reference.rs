//! A plain LSTM written directly over buffers, with hand-derived
//! backpropagation through time.
//!
//! It shares only the GEMM kernel and the scalar sigmoid with the tape, and
//! performs the same floating-point operations in the same order, so a
//! dynamic-skip model with `K = 1, λ = 0` must agree with it bit for bit.

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::model::{ModelParams, ParamId};
use crate::tensor::Tensor;

/// How per-example losses are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    g: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
}

pub struct ReferenceForward {
    rows: usize,
    steps: Vec<Step>,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ReferenceForward {
    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].h
    }

    pub fn cell(&self, t: usize) -> &[f64] {
        &self.steps[t].c
    }

    /// Per-example cross-entropy.
    pub fn losses(&self, labels: &[usize]) -> Vec<f64> {
        let classes = self.logits.len() / self.rows;
        labels
            .iter()
            .enumerate()
            .map(|(r, l)| -self.log_probs[r * classes + l])
            .collect()
    }
}

pub struct ReferenceBackward {
    /// In parameter order; the agent arrays are zero.
    pub grads: Vec<Tensor>,
    /// `∂L/∂h_t` and `∂L/∂c_t` for every step.
    pub dh: Vec<Vec<f64>>,
    pub dc: Vec<Vec<f64>>,
}

pub struct PlainLstm<'a> {
    params: &'a ModelParams,
    hidden: usize,
    inputs: usize,
    classes: usize,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn columns(src: &[f64], rows: usize, width: usize, start: usize, len: usize) -> Vec<f64> {
    (0..rows)
        .flat_map(|r| src[r * width + start..r * width + start + len].iter().copied())
        .collect()
}

impl<'a> PlainLstm<'a> {
    /// Reads the recurrent and output arrays; the agent arrays are ignored.
    pub fn new(params: &'a ModelParams) -> Self {
        let cfg = params.config();
        PlainLstm {
            params,
            hidden: cfg.hidden_size,
            inputs: cfg.input_size,
            classes: cfg.num_classes,
        }
    }

    fn w(&self, id: ParamId) -> &[f64] {
        &self.params.get(id).data
    }

    pub fn forward(&self, inputs: &[Tensor]) -> Result<ReferenceForward> {
        let rows = inputs
            .first()
            .ok_or_else(|| Error::contract("reference LSTM needs a non-empty sequence"))?
            .as_matrix()
            .0;
        let (hd, nx) = (self.hidden, self.inputs);
        let mut h = vec![0.0; rows * hd];
        let mut c = vec![0.0; rows * hd];
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            if x.as_matrix() != (rows, nx) {
                return Err(Error::contract("reference LSTM input has the wrong shape"));
            }
            let mut from_x = vec![0.0; rows * 4 * hd];
            gemm(rows, nx, 4 * hd, &x.data, false, self.w(ParamId::LstmWx), true, 0.0, &mut from_x);
            let mut from_h = vec![0.0; rows * 4 * hd];
            gemm(rows, hd, 4 * hd, &h, false, self.w(ParamId::LstmWh), true, 0.0, &mut from_h);
            let mut pre: Vec<f64> = from_x.iter().zip(&from_h).map(|(a, b)| a + b).collect();
            for r in 0..rows {
                add_into(&mut pre[r * 4 * hd..(r + 1) * 4 * hd], self.w(ParamId::LstmB));
            }
            let gate = |k: usize| columns(&pre, rows, 4 * hd, k * hd, hd);
            let g: Vec<f64> = gate(0).iter().map(|v| v.tanh()).collect();
            let i: Vec<f64> = gate(1).iter().map(|v| sigmoid(*v)).collect();
            let f: Vec<f64> = gate(2).iter().map(|v| sigmoid(*v)).collect();
            let o: Vec<f64> = gate(3).iter().map(|v| sigmoid(*v)).collect();
            let c_new: Vec<f64> = (0..rows * hd).map(|j| g[j] * i[j] + c[j] * f[j]).collect();
            let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..rows * hd).map(|j| o[j] * tanh_c[j]).collect();
            steps.push(Step {
                x: x.data.clone(),
                h_prev: std::mem::replace(&mut h, h_new.clone()),
                c_prev: std::mem::replace(&mut c, c_new.clone()),
                g,
                i,
                f,
                o,
                tanh_c,
                h: h_new,
                c: c_new,
            });
        }
        let k = self.classes;
        let mut logits = vec![0.0; rows * k];
        gemm(rows, hd, k, &h, false, self.w(ParamId::OutW), true, 0.0, &mut logits);
        for r in 0..rows {
            add_into(&mut logits[r * k..(r + 1) * k], self.w(ParamId::OutB));
        }
        let mut log_probs = vec![0.0; rows * k];
        for r in 0..rows {
            let row = &logits[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in log_probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *o = v - max - lse;
            }
        }
        Ok(ReferenceForward {
            rows,
            steps,
            logits,
            log_probs,
        })
    }

    /// Gradients of the summed or averaged cross-entropy.
    pub fn backward(&self, fwd: &ReferenceForward, labels: &[usize], reduction: Reduction) -> ReferenceBackward {
        let (rows, hd, nx, k) = (fwd.rows, self.hidden, self.inputs, self.classes);
        let seed = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / rows as f64,
        };
        // d(-log p[label]) through log-softmax
        let mut dlogits = vec![0.0; rows * k];
        for (r, &l) in labels.iter().enumerate() {
            let mut g = vec![0.0; k];
            g[l] -= seed;
            let total: f64 = g.iter().sum();
            for j in 0..k {
                dlogits[r * k + j] += g[j] - fwd.log_probs[r * k + j].exp() * total;
            }
        }
        let mut d_out_w = vec![0.0; k * hd];
        let mut d_out_b = vec![0.0; k];
        for r in 0..rows {
            add_into(&mut d_out_b, &dlogits[r * k..(r + 1) * k]);
        }
        let last = &fwd.steps[fwd.steps.len() - 1];
        let mut dh = vec![0.0; rows * hd];
        gemm(rows, k, hd, &dlogits, false, self.w(ParamId::OutW), false, 1.0, &mut dh);
        gemm(k, rows, hd, &dlogits, true, &last.h, false, 1.0, &mut d_out_w);

        let mut d_wx = vec![0.0; 4 * hd * nx];
        let mut d_wh = vec![0.0; 4 * hd * hd];
        let mut d_b = vec![0.0; 4 * hd];
        let mut dc = vec![0.0; rows * hd];
        let mut all_dh = vec![Vec::new(); fwd.steps.len()];
        let mut all_dc = vec![Vec::new(); fwd.steps.len()];
        for (t, s) in fwd.steps.iter().enumerate().rev() {
            let n = rows * hd;
            let mut d_o = vec![0.0; n];
            let mut d_tanh_c = vec![0.0; n];
            for j in 0..n {
                d_o[j] += dh[j] * s.tanh_c[j];
                d_tanh_c[j] += dh[j] * s.o[j];
            }
            for j in 0..n {
                dc[j] += d_tanh_c[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
            }
            all_dh[t] = dh.clone();
            all_dc[t] = dc.clone();
            // c = write + keep, write = g·i, keep = c̃·f
            let (mut d_g, mut d_i, mut d_f, mut dc_prev) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for j in 0..n {
                dc_prev[j] += dc[j] * s.f[j];
                d_f[j] += dc[j] * s.c_prev[j];
                d_g[j] += dc[j] * s.i[j];
                d_i[j] += dc[j] * s.g[j];
            }
            let mut d_pre = vec![0.0; rows * 4 * hd];
            for r in 0..rows {
                for j in 0..hd {
                    let q = r * hd + j;
                    let base = r * 4 * hd + j;
                    d_pre[base] += d_g[q] * (1.0 - s.g[q] * s.g[q]);
                    d_pre[base + hd] += d_i[q] * (s.i[q] * (1.0 - s.i[q]));
                    d_pre[base + 2 * hd] += d_f[q] * (s.f[q] * (1.0 - s.f[q]));
                    d_pre[base + 3 * hd] += d_o[q] * (s.o[q] * (1.0 - s.o[q]));
                }
            }
            for r in 0..rows {
                add_into(&mut d_b, &d_pre[r * 4 * hd..(r + 1) * 4 * hd]);
            }
            let mut dh_prev = vec![0.0; n];
            gemm(rows, 4 * hd, hd, &d_pre, false, self.w(ParamId::LstmWh), false, 1.0, &mut dh_prev);
            gemm(4 * hd, rows, hd, &d_pre, true, &s.h_prev, false, 1.0, &mut d_wh);
            gemm(4 * hd, rows, nx, &d_pre, true, &s.x, false, 1.0, &mut d_wx);
            dh = dh_prev;
            dc = dc_prev;
        }
        let cfg = self.params.config();
        let grads = ParamId::ALL
            .iter()
            .map(|id| {
                let data = match id {
                    ParamId::LstmWx => d_wx.clone(),
                    ParamId::LstmWh => d_wh.clone(),
                    ParamId::LstmB => d_b.clone(),
                    ParamId::OutW => d_out_w.clone(),
                    ParamId::OutB => d_out_b.clone(),
                    _ => return Tensor::zeros(&id.shape(cfg)),
                };
                Tensor {
                    shape: id.shape(cfg),
                    data,
                }
            })
            .collect();
        ReferenceBackward {
            grads,
            dh: all_dh,
            dc: all_dc,
        }
    }
}

/// Outcome of comparing a `K = 1, λ = 0` dynamic-skip model with the reference.
#[derive(Clone, Debug, serde::Serialize)]
pub struct EquivalenceReport {
    pub steps: usize,
    pub rows: usize,
    /// Number of compared values that differ in any way.
    pub mismatches: usize,
    pub compared: usize,
}

impl EquivalenceReport {
    pub fn identical(&self) -> bool {
        self.mismatches == 0
    }
}

fn count_mismatches(a: &[f64], b: &[f64]) -> usize {
    // `==` rather than bit patterns: the two sides may disagree on the sign
    // of an exact zero, which no later operation can observe
    a.len().abs_diff(b.len()) + a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Runs random inputs through both implementations and compares every
/// state, the logits, the loss, the parameter gradients, and the
/// per-step state gradients for exact equality.
pub fn plain_equivalence(seed: u64, steps: usize, rows: usize, hidden: usize) -> Result<EquivalenceReport> {
    use crate::autodiff::Tape;
    use crate::model::{forward_sequence, ActionMode, SkipConfig};
    use crate::train::per_example_ce;
    use rand::Rng;

    let cfg = SkipConfig::plain_lstm(hidden, 10, 10);
    let mut params = ModelParams::init(cfg, seed)?;
    let mut r = crate::rng::stream(seed, "equivalence");
    for id in ParamId::ALL {
        for w in params.get_mut(id).data.iter_mut() {
            *w = r.gen_range(-0.6..0.6);
        }
    }
    let inputs: Vec<Tensor> = (0..steps)
        .map(|_| Tensor {
            shape: vec![rows, 10],
            data: (0..rows * 10).map(|_| r.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let labels: Vec<usize> = (0..rows).map(|_| r.gen_range(0..10)).collect();

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let pass = forward_sequence(&mut tape, &bound, &cfg, &inputs, ActionMode::Greedy)?;
    let ce = per_example_ce(&mut tape, pass.logits, &labels)?;
    let loss = tape.sum(ce);
    tape.backward(loss)?;

    let reference = PlainLstm::new(&params);
    let fwd = reference.forward(&inputs)?;
    let bwd = reference.backward(&fwd, &labels, Reduction::Sum);

    let mut mismatches = 0;
    let mut compared = 0;
    let mut cmp = |a: &[f64], b: &[f64]| {
        compared += a.len().max(b.len());
        mismatches += count_mismatches(a, b);
    };
    for (t, s) in pass.states.iter().enumerate() {
        cmp(&tape.value(s.h).data, fwd.hidden(t));
        cmp(&tape.value(s.c).data, fwd.cell(t));
        cmp(&tape.grad_or_zeros(s.h).data, &bwd.dh[t]);
        cmp(&tape.grad_or_zeros(s.c).data, &bwd.dc[t]);
    }
    cmp(&tape.value(pass.logits).data, &fwd.logits);
    cmp(&tape.value(ce).data, &fwd.losses(&labels));
    for (g, want) in bound.grads(&tape).0.iter().zip(&bwd.grads) {
        cmp(&g.data, &want.data);
    }
    Ok(EquivalenceReport {
        steps,
        rows,
        mismatches,
        compared,
    })
}
