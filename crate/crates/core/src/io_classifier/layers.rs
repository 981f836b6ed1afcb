//! Dense and LSTM building blocks with hand-written backward passes.
//!
//! Matrices are row-major `Vec<f64>`; a weight of shape `out x in` maps an
//! `in`-vector to an `out`-vector.

#![allow(clippy::needless_range_loop)]

use rand::Rng;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `out += w * x`
pub(crate) fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += w^T * dy`
pub(crate) fn matvec_t_add(w: &[f64], dy: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, &d) in w.chunks_exact(cols).zip(dy) {
        if d == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * d;
        }
    }
}

/// `dw += dy x^T`
pub(crate) fn outer_add(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &d) in dw.chunks_exact_mut(cols).zip(dy) {
        if d == 0.0 {
            continue;
        }
        for (g, a) in row.iter_mut().zip(x) {
            *g += d * a;
        }
    }
}

/// Uniform Glorot initialization.
pub(crate) fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// Per-step values kept for backpropagation through time.
#[derive(Debug, Clone)]
pub(crate) struct LstmStep {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Weights of one LSTM layer, gates stacked as input, forget, candidate, output.
pub(crate) struct LstmWeights<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
    pub hidden: usize,
}

impl LstmWeights<'_> {
    /// Runs the layer over a sequence from zero state, returning every hidden
    /// state and, when `keep` is set, the per-step cache.
    pub(crate) fn forward(&self, xs: &[Vec<f64>], keep: bool) -> (Vec<Vec<f64>>, Vec<LstmStep>) {
        let h_n = self.hidden;
        let mut h = vec![0.0; h_n];
        let mut c = vec![0.0; h_n];
        let mut hs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(if keep { xs.len() } else { 0 });
        let mut z = vec![0.0; 4 * h_n];
        for x in xs {
            z.copy_from_slice(self.b);
            matvec_add(self.w, x, &mut z);
            matvec_add(self.u, &h, &mut z);
            let i: Vec<f64> = z[..h_n].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[h_n..2 * h_n].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[2 * h_n..3 * h_n].iter().map(|&v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * h_n..].iter().map(|&v| sigmoid(v)).collect();
            let c_new: Vec<f64> = (0..h_n).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<f64> = c_new.iter().map(|v| v.tanh()).collect();
            let h_new: Vec<f64> = (0..h_n).map(|k| o[k] * tanh_c[k]).collect();
            if keep {
                steps.push(LstmStep {
                    x: x.clone(),
                    h_prev: h.clone(),
                    c_prev: c.clone(),
                    i,
                    f,
                    g,
                    o,
                    tanh_c,
                });
            }
            h = h_new;
            c = c_new;
            hs.push(h.clone());
        }
        (hs, steps)
    }

    /// Backpropagates `dh` (gradient w.r.t. each emitted hidden state) through
    /// time, accumulating weight gradients and returning input gradients.
    pub(crate) fn backward(
        &self,
        steps: &[LstmStep],
        dh: &[Vec<f64>],
        dw: &mut [f64],
        du: &mut [f64],
        db: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let h_n = self.hidden;
        let in_n = steps.first().map_or(0, |s| s.x.len());
        let mut dxs = vec![vec![0.0; in_n]; steps.len()];
        let mut dh_next = vec![0.0; h_n];
        let mut dc_next = vec![0.0; h_n];
        let mut dz = vec![0.0; 4 * h_n];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            for k in 0..h_n {
                let dh_t = dh[t][k] + dh_next[k];
                let d_o = dh_t * s.tanh_c[k];
                let dc = dh_t * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
                let di = dc * s.g[k];
                let dg = dc * s.i[k];
                let df = dc * s.c_prev[k];
                dc_next[k] = dc * s.f[k];
                dz[k] = di * s.i[k] * (1.0 - s.i[k]);
                dz[h_n + k] = df * s.f[k] * (1.0 - s.f[k]);
                dz[2 * h_n + k] = dg * (1.0 - s.g[k] * s.g[k]);
                dz[3 * h_n + k] = d_o * s.o[k] * (1.0 - s.o[k]);
            }
            outer_add(dw, &dz, &s.x);
            outer_add(du, &dz, &s.h_prev);
            for (a, b) in db.iter_mut().zip(&dz) {
                *a += b;
            }
            matvec_t_add(self.w, &dz, &mut dxs[t]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(self.u, &dz, &mut dh_next);
        }
        dxs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn matvec_helpers() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        matvec_add(&w, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        let mut back = [0.0; 3];
        matvec_t_add(&w, &[1.0, 1.0], &mut back);
        assert_eq!(back, [5.0, 7.0, 9.0]);
        let mut dw = [0.0; 6];
        outer_add(&mut dw, &[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(dw, [1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }
}
