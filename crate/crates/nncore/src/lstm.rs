use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::param::{Param, Parameters};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden and cell vectors carried between steps of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Single LSTM cell; gate blocks are stacked in the order input, forget,
/// candidate, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    /// `4n × m`
    pub w_input: Param,
    /// `4n × n`
    pub w_hidden: Param,
    /// `4n`
    pub bias: Param,
}

#[derive(Clone, Debug)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_input: Param::glorot(&[4 * hidden, inputs], inputs, 4 * hidden, rng),
            w_hidden: Param::glorot(&[4 * hidden, hidden], hidden, 4 * hidden, rng),
            bias: Param::zeros(&[4 * hidden]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_input.value.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.value.shape()[1]
    }

    /// One step from `state`; returns the new state and what backward needs.
    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<(LstmState, LstmStepCache)> {
        let (m, n) = (self.inputs(), self.hidden());
        check_len(m, x.len())?;
        check_len(n, state.h.len())?;
        let wx = self.w_input.value.data();
        let wh = self.w_hidden.value.data();
        let b = self.bias.value.data();
        let mut z = b.to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let rx = &wx[r * m..(r + 1) * m];
            let rh = &wh[r * n..(r + 1) * n];
            *zr += rx.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
                + rh.iter().zip(&state.h).map(|(a, c)| a * c).sum::<f64>();
        }
        let i: Vec<f64> = z[..n].iter().map(|v| sigmoid(*v)).collect();
        let f: Vec<f64> = z[n..2 * n].iter().map(|v| sigmoid(*v)).collect();
        let g: Vec<f64> = z[2 * n..3 * n].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * n..].iter().map(|v| sigmoid(*v)).collect();
        let c: Vec<f64> = (0..n).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..n).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        Ok((LstmState { h, c }, cache))
    }

    /// Backward through one step given gradients flowing into the step's
    /// outputs `h` and `c`. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(&mut self, cache: &LstmStepCache, dh: &[f64], dc: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (m, n) = (self.inputs(), self.hidden());
        let mut dz = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dct * g * i * (1.0 - i);
            dz[n + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * n + k] = dct * i * (1.0 - g * g);
            dz[3 * n + k] = d_o * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
        let mut dx = vec![0.0; m];
        let mut dh_prev = vec![0.0; n];
        let wx = self.w_input.value.data();
        let wh = self.w_hidden.value.data();
        for (r, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.bias.grad[r] += d;
            let gx = &mut self.w_input.grad[r * m..(r + 1) * m];
            for (j, gj) in gx.iter_mut().enumerate() {
                *gj += d * cache.x[j];
                dx[j] += d * wx[r * m + j];
            }
            let gh = &mut self.w_hidden.grad[r * n..(r + 1) * n];
            for (j, gj) in gh.iter_mut().enumerate() {
                *gj += d * cache.h_prev[j];
                dh_prev[j] += d * wh[r * n + j];
            }
        }
        (dx, dh_prev, dc_prev)
    }
}

impl Parameters for LstmCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}
