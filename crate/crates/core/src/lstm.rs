//! Single LSTM layer with full backpropagation through time.
//!
//! Gate layout in the stacked weight matrix is input, forget, cell, output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{dot, Parameterized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub inputs: usize,
    pub hidden: usize,
    /// `4 * hidden` rows over the concatenation `[x; h_prev]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Everything one time step needs for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Lstm {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Lstm {
            inputs,
            hidden,
            w: vec![0.0; 4 * hidden * (inputs + hidden)],
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform in +-1/sqrt(hidden); forget-gate bias starts at 1.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut l = Lstm::zeros(inputs, hidden);
        for w in l.w.iter_mut() {
            *w = rng.random_range(-k..=k);
        }
        for b in &mut l.b[hidden..2 * hidden] {
            *b = 1.0;
        }
        l
    }

    fn width(&self) -> usize {
        self.inputs + self.hidden
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hsz = self.hidden;
        let wd = self.width();
        let mut xh = Vec::with_capacity(wd);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h_prev);
        let z: Vec<f64> = (0..4 * hsz)
            .map(|r| self.b[r] + dot(&self.w[r * wd..(r + 1) * wd], &xh))
            .collect();
        let i: Vec<f64> = z[..hsz].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[hsz..2 * hsz].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * hsz..3 * hsz].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * hsz..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hsz).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = (0..hsz).map(|k| o[k] * tanh_c[k]).collect();
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
            h,
        }
    }

    /// Runs from a zero state over `xs`.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Vec<LstmStep> {
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let s = self.step(x, &h, &c);
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            steps.push(s);
        }
        steps
    }

    /// Backpropagation through time. `dh_out[t]` is the loss gradient with
    /// respect to the output `h` of step `t` coming from above. Accumulates
    /// into `grad`; returns per-step input gradients when `want_dx`.
    pub fn backward(&self, steps: &[LstmStep], dh_out: &[Vec<f64>], grad: &mut Lstm, want_dx: bool) -> Vec<Vec<f64>> {
        let hsz = self.hidden;
        let wd = self.width();
        let mut dh_next = vec![0.0; hsz];
        let mut dc_next = vec![0.0; hsz];
        let mut dxs = vec![Vec::new(); if want_dx { steps.len() } else { 0 }];
        let mut dz = vec![0.0; 4 * hsz];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            for k in 0..hsz {
                let dh = dh_out[t][k] + dh_next[k];
                let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                dz[k] = dc * s.g[k] * s.i[k] * (1.0 - s.i[k]);
                dz[hsz + k] = dc * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
                dz[2 * hsz + k] = dc * s.i[k] * (1.0 - s.g[k] * s.g[k]);
                dz[3 * hsz + k] = dh * s.tanh_c[k] * s.o[k] * (1.0 - s.o[k]);
                dc_next[k] = dc * s.f[k];
            }
            let mut dxh = vec![0.0; wd];
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.b[r] += d;
                let grow = &mut grad.w[r * wd..(r + 1) * wd];
                for (gw, v) in grow[..self.inputs].iter_mut().zip(&s.x) {
                    *gw += d * v;
                }
                for (gw, v) in grow[self.inputs..].iter_mut().zip(&s.h_prev) {
                    *gw += d * v;
                }
                let wrow = &self.w[r * wd..(r + 1) * wd];
                for (dv, wv) in dxh.iter_mut().zip(wrow) {
                    *dv += d * wv;
                }
            }
            dh_next.copy_from_slice(&dxh[self.inputs..]);
            if want_dx {
                dxh.truncate(self.inputs);
                dxs[t] = dxh;
            }
        }
        dxs
    }
}

impl Parameterized for Lstm {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}
