//! Parameter storage plus forward and backward passes for the three classifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{matvec_add, matvec_t_add, outer_add, sigmoid, xavier, LstmStep, LstmWeights};
use super::{ModelKind, ModelSpec};
use crate::sensor_data::FEATURE_COUNT;

/// Named parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn new(name: String, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { name, shape, data }
    }
}

/// Expected `(name, shape)` of every parameter for a spec, in storage order.
pub(crate) fn layout(spec: &ModelSpec) -> Vec<(String, Vec<usize>)> {
    let flat = spec.window * FEATURE_COUNT;
    let mut out = Vec::new();
    match spec.kind {
        ModelKind::Logistic => {
            out.push(("out.w".to_string(), vec![1, flat]));
            out.push(("out.b".to_string(), vec![1]));
        }
        ModelKind::Feedforward => {
            let mut fan_in = flat;
            for (l, &h) in spec.layer_sizes.iter().enumerate() {
                out.push((format!("dense{l}.w"), vec![h, fan_in]));
                out.push((format!("dense{l}.b"), vec![h]));
                fan_in = h;
            }
            out.push(("out.w".to_string(), vec![1, fan_in]));
            out.push(("out.b".to_string(), vec![1]));
        }
        ModelKind::Recurrent => {
            let mut fan_in = FEATURE_COUNT;
            for (l, &h) in spec.layer_sizes.iter().enumerate() {
                out.push((format!("lstm{l}.w"), vec![4 * h, fan_in]));
                out.push((format!("lstm{l}.u"), vec![4 * h, h]));
                out.push((format!("lstm{l}.b"), vec![4 * h]));
                fan_in = h;
            }
            out.push(("out.w".to_string(), vec![1, fan_in]));
            out.push(("out.b".to_string(), vec![1]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Network {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
}

/// Inverted dropout: keeps with probability `1 - rate`, scaling kept units.
fn dropout_mask<R: Rng>(rng: &mut R, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect()
}

impl Network {
    pub fn init<R: Rng>(spec: &ModelSpec, rng: &mut R) -> Self {
        let params = layout(spec)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 1 {
                    let mut b = vec![0.0; n];
                    if name.starts_with("lstm") {
                        let h = n / 4;
                        b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                    }
                    b
                } else if name.starts_with("lstm") {
                    // Gates share the fan of one hidden block.
                    let h = shape[0] / 4;
                    xavier(rng, shape[1], h, n)
                } else {
                    xavier(rng, shape[1], shape[0], n)
                };
                Tensor::new(name, shape, data)
            })
            .collect();
        Self {
            spec: spec.clone(),
            params,
        }
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    /// Pre-sigmoid output for a flattened, scaled window, without dropout.
    pub fn logit(&self, x: &[f64]) -> f64 {
        match self.spec.kind {
            ModelKind::Logistic | ModelKind::Feedforward => {
                let mut a = x.to_vec();
                let n_hidden = self.params.len() / 2 - 1;
                for l in 0..n_hidden {
                    let (w, b) = (&self.params[2 * l].data, &self.params[2 * l + 1].data);
                    let mut z = b.clone();
                    matvec_add(w, &a, &mut z);
                    a = z.into_iter().map(f64::tanh).collect();
                }
                let (w, b) = (
                    &self.params[2 * n_hidden].data,
                    &self.params[2 * n_hidden + 1].data,
                );
                let mut z = b.clone();
                matvec_add(w, &a, &mut z);
                z[0]
            }
            ModelKind::Recurrent => {
                let mut seq: Vec<Vec<f64>> = x.chunks(FEATURE_COUNT).map(<[f64]>::to_vec).collect();
                for l in 0..self.spec.layer_sizes.len() {
                    seq = self.lstm(l).forward(&seq, false).0;
                }
                let last = seq.last().expect("non-empty sequence");
                let n = self.params.len();
                let mut z = self.params[n - 1].data.clone();
                matvec_add(&self.params[n - 2].data, last, &mut z);
                z[0]
            }
        }
    }

    fn lstm(&self, l: usize) -> LstmWeights<'_> {
        LstmWeights {
            w: &self.params[3 * l].data,
            u: &self.params[3 * l + 1].data,
            b: &self.params[3 * l + 2].data,
            hidden: self.spec.layer_sizes[l],
        }
    }

    /// Adds the gradient of the BCE loss of one sample to `grads` and returns
    /// the predicted probability. Dropout is applied when `rng` is given.
    pub fn accumulate<R: Rng>(
        &self,
        x: &[f64],
        y: f64,
        rng: Option<&mut R>,
        grads: &mut [Vec<f64>],
    ) -> f64 {
        match self.spec.kind {
            ModelKind::Logistic | ModelKind::Feedforward => self.accumulate_dense(x, y, rng, grads),
            ModelKind::Recurrent => self.accumulate_recurrent(x, y, rng, grads),
        }
    }

    fn accumulate_dense<R: Rng>(
        &self,
        x: &[f64],
        y: f64,
        mut rng: Option<&mut R>,
        grads: &mut [Vec<f64>],
    ) -> f64 {
        let n_hidden = self.params.len() / 2 - 1;
        let rate = self.spec.dropout;
        // inputs[l] feeds layer l; acts[l] is tanh output of hidden layer l.
        let mut inputs: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_hidden);
        let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(n_hidden);
        for l in 0..n_hidden {
            let mut z = self.params[2 * l + 1].data.clone();
            matvec_add(&self.params[2 * l].data, &inputs[l], &mut z);
            let a: Vec<f64> = z.into_iter().map(f64::tanh).collect();
            let mask = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => Some(dropout_mask(r, a.len(), rate)),
                _ => None,
            };
            let next = match &mask {
                Some(m) => a.iter().zip(m).map(|(v, k)| v * k).collect(),
                None => a.clone(),
            };
            acts.push(a);
            masks.push(mask);
            inputs.push(next);
        }
        let o = 2 * n_hidden;
        let mut z = self.params[o + 1].data.clone();
        matvec_add(&self.params[o].data, &inputs[n_hidden], &mut z);
        let p = sigmoid(z[0]);

        let dz = [p - y];
        outer_add(&mut grads[o], &dz, &inputs[n_hidden]);
        grads[o + 1][0] += dz[0];
        let mut d_in = vec![0.0; inputs[n_hidden].len()];
        matvec_t_add(&self.params[o].data, &dz, &mut d_in);
        for l in (0..n_hidden).rev() {
            let mut dz: Vec<f64> = d_in;
            if let Some(m) = &masks[l] {
                dz.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            dz.iter_mut()
                .zip(&acts[l])
                .for_each(|(d, a)| *d *= 1.0 - a * a);
            outer_add(&mut grads[2 * l], &dz, &inputs[l]);
            grads[2 * l + 1]
                .iter_mut()
                .zip(&dz)
                .for_each(|(g, d)| *g += d);
            d_in = vec![0.0; inputs[l].len()];
            if l > 0 {
                matvec_t_add(&self.params[2 * l].data, &dz, &mut d_in);
            }
        }
        p
    }

    fn accumulate_recurrent<R: Rng>(
        &self,
        x: &[f64],
        y: f64,
        mut rng: Option<&mut R>,
        grads: &mut [Vec<f64>],
    ) -> f64 {
        let layers = self.spec.layer_sizes.len();
        let rate = self.spec.dropout;
        let mut seq: Vec<Vec<f64>> = x.chunks(FEATURE_COUNT).map(<[f64]>::to_vec).collect();
        let t_len = seq.len();
        let mut caches: Vec<Vec<LstmStep>> = Vec::with_capacity(layers);
        let mut masks: Vec<Option<Vec<Vec<f64>>>> = Vec::with_capacity(layers);
        for l in 0..layers {
            let (hs, steps) = self.lstm(l).forward(&seq, true);
            caches.push(steps);
            // Dropout between stacked layers only.
            let mask = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 && l + 1 < layers => Some(
                    (0..t_len)
                        .map(|_| dropout_mask(r, hs[0].len(), rate))
                        .collect::<Vec<_>>(),
                ),
                _ => None,
            };
            seq = match &mask {
                Some(m) => hs
                    .iter()
                    .zip(m)
                    .map(|(h, k)| h.iter().zip(k).map(|(a, b)| a * b).collect())
                    .collect(),
                None => hs,
            };
            masks.push(mask);
        }
        let n = self.params.len();
        let last = &seq[t_len - 1];
        let mut z = self.params[n - 1].data.clone();
        matvec_add(&self.params[n - 2].data, last, &mut z);
        let p = sigmoid(z[0]);

        let dz = [p - y];
        outer_add(&mut grads[n - 2], &dz, last);
        grads[n - 1][0] += dz[0];
        let h_last = self.spec.layer_sizes[layers - 1];
        let mut dh = vec![vec![0.0; h_last]; t_len];
        matvec_t_add(&self.params[n - 2].data, &dz, &mut dh[t_len - 1]);

        for l in (0..layers).rev() {
            let (head, tail) = grads.split_at_mut(3 * l + 1);
            let dw = &mut head[3 * l];
            let (du, db) = tail.split_at_mut(1);
            let dx = self
                .lstm(l)
                .backward(&caches[l], &dh, dw, &mut du[0], &mut db[0]);
            if l == 0 {
                break;
            }
            dh = dx;
            if let Some(m) = &masks[l - 1] {
                for (d, k) in dh.iter_mut().zip(m) {
                    d.iter_mut().zip(k).for_each(|(a, b)| *a *= b);
                }
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_layouts() {
        let ff = layout(&ModelSpec::feedforward());
        let shapes: Vec<_> = ff.iter().map(|(_, s)| s.clone()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![30, 18],
                vec![30],
                vec![18, 30],
                vec![18],
                vec![2, 18],
                vec![2],
                vec![1, 2],
                vec![1]
            ]
        );

        let rnn = layout(&ModelSpec::recurrent());
        assert_eq!(rnn.len(), 11);
        assert_eq!(rnn[0].1, vec![200, 6]);
        assert_eq!(rnn[6].1, vec![8, 50]);
        assert_eq!(rnn[7].1, vec![8, 2]);
        assert_eq!(rnn[9].1, vec![1, 2]);

        assert_eq!(
            layout(&ModelSpec::logistic()),
            vec![("out.w".into(), vec![1, 18]), ("out.b".into(), vec![1])]
        );
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let net = Network::init(&ModelSpec::recurrent(), &mut ChaCha8Rng::seed_from_u64(0));
        let b = &net.params[2].data;
        assert!(b[..50].iter().all(|&v| v == 0.0));
        assert!(b[50..100].iter().all(|&v| v == 1.0));
        assert!(b[100..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulate_matches_logit_without_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in [
            ModelSpec::logistic(),
            ModelSpec::feedforward(),
            ModelSpec::recurrent(),
        ] {
            let net = Network::init(&spec, &mut rng);
            let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut g = net.zeros_like();
            let p = net.accumulate::<ChaCha8Rng>(&x, 1.0, None, &mut g);
            assert!((p - sigmoid(net.logit(&x))).abs() < 1e-14);
            assert_eq!(g.len(), net.params.len());
        }
    }
}
