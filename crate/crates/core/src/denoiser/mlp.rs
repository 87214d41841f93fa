//! Small conditional MLP noise predictor.
//!
//! Input is the flattened sample concatenated with a time embedding of
//! `t / T`; an optional label embedding is added to the first hidden
//! pre-activation. Sized for 28x28 and 8x8 data.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::denoiser::{Denoiser, TimeEmbedKind, TrainingConfig};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, Linear};
use crate::rng;

#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    pub(crate) input_dim: usize,
    pub(crate) sample_shape: Vec<usize>,
    pub(crate) t_max: usize,
    pub(crate) time_embed: TimeEmbedKind,
    pub(crate) time_embed_dim: usize,
    pub(crate) num_labels: Option<u16>,
    pub(crate) hidden: Vec<usize>,
    pub(crate) layers: Vec<Linear>,
    pub(crate) label_table: Option<Array2<f64>>,
    pub(crate) time_table: Option<Array2<f64>>,
}

impl MlpDenoiser {
    pub fn new(
        config: &TrainingConfig,
        input_dim: usize,
        t_max: usize,
        num_labels: Option<u16>,
    ) -> Result<Self> {
        Self::with_shape(config, vec![input_dim], t_max, num_labels)
    }

    pub fn with_shape(
        config: &TrainingConfig,
        sample_shape: Vec<usize>,
        t_max: usize,
        num_labels: Option<u16>,
    ) -> Result<Self> {
        config.validate()?;
        if t_max == 0 {
            return Err(Error::Config("t_max must be positive".into()));
        }
        if let Some(0) = num_labels {
            return Err(Error::Config("num_labels must be positive".into()));
        }
        let input_dim: usize = sample_shape.iter().product();
        let te = config.time_embed_dim;
        let mut init = rng::stream(config.seed, "mlp/init");
        let mut layers = Vec::new();
        let mut in_dim = input_dim + te;
        for &h in &config.hidden {
            layers.push(Linear::init(h, in_dim, &mut init));
            in_dim = h;
        }
        layers.push(Linear::init(input_dim, in_dim, &mut init));
        let label_table = match (config.label_conditioning, num_labels) {
            (true, Some(n)) => {
                let h0 = config.hidden[0];
                Some(Array2::from_shape_simple_fn((n as usize, h0), || {
                    init.gen_range(-0.05..0.05)
                }))
            }
            (true, None) => return Err(Error::Config("label_conditioning requires num_labels".into())),
            _ => None,
        };
        let time_table = match config.time_embed {
            TimeEmbedKind::Learned => Some(Array2::from_shape_simple_fn((t_max, te), || {
                init.gen_range(-0.05..0.05)
            })),
            TimeEmbedKind::Sinusoidal => None,
        };
        Ok(Self {
            input_dim,
            sample_shape,
            t_max,
            time_embed: config.time_embed,
            time_embed_dim: te,
            num_labels: if config.label_conditioning { num_labels } else { None },
            hidden: config.hidden.clone(),
            layers,
            label_table,
            time_table,
        })
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn num_labels(&self) -> Option<u16> {
        self.num_labels
    }

    fn sinusoidal_row(&self, t: usize) -> Vec<f64> {
        let te = self.time_embed_dim;
        let half = te.div_ceil(2);
        let u = t as f64 / self.t_max as f64;
        let mut row = vec![0.0; te];
        for j in 0..half {
            let freq = if half > 1 {
                std::f64::consts::PI * (self.t_max as f64).powf(j as f64 / (half - 1) as f64)
            } else {
                std::f64::consts::PI
            };
            row[2 * j] = (freq * u).sin();
            if 2 * j + 1 < te {
                row[2 * j + 1] = (freq * u).cos();
            }
        }
        row
    }

    fn time_rows(&self, ts: &[usize]) -> Array2<f64> {
        let te = self.time_embed_dim;
        let mut rows = Array2::zeros((ts.len(), te));
        for (i, &t) in ts.iter().enumerate() {
            assert!(t >= 1 && t <= self.t_max, "step {t} outside 1..={}", self.t_max);
            match (&self.time_embed, &self.time_table) {
                (TimeEmbedKind::Learned, Some(table)) => {
                    rows.row_mut(i).assign(&table.row(t - 1));
                }
                _ => {
                    let r = self.sinusoidal_row(t);
                    for (j, v) in r.iter().enumerate() {
                        rows[[i, j]] = *v;
                    }
                }
            }
        }
        rows
    }

    /// Forward pass keeping the per-layer caches the backward pass needs.
    fn forward_cached(
        &self,
        x_t: &Array2<f32>,
        ts: &[usize],
        labels: Option<&[u16]>,
    ) -> ForwardCache {
        let n = x_t.nrows();
        assert_eq!(ts.len(), n, "one step index per row");
        assert_eq!(x_t.ncols(), self.input_dim, "input dimension mismatch");
        let temb = self.time_rows(ts);
        let mut input = Array2::zeros((n, self.input_dim + self.time_embed_dim));
        for (i, row) in x_t.rows().into_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                input[[i, j]] = v as f64;
            }
        }
        input.slice_mut(ndarray::s![.., self.input_dim..]).assign(&temb);

        let mut pre_acts = Vec::with_capacity(self.layers.len());
        let mut layer_inputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.forward(&cur);
            if li == 0 {
                if let (Some(table), Some(l)) = (&self.label_table, labels) {
                    assert_eq!(l.len(), n, "one label per row");
                    for (i, &lab) in l.iter().enumerate() {
                        let lab = lab as usize;
                        assert!(lab < table.nrows(), "label {lab} out of range");
                        let emb = table.row(lab);
                        pre.row_mut(i).zip_mut_with(&emb, |p, &e| *p += e);
                    }
                }
            }
            let last = li == self.layers.len() - 1;
            let out = if last { pre.clone() } else { relu(&pre) };
            pre_acts.push(pre);
            layer_inputs.push(cur);
            cur = out;
        }
        ForwardCache { pre_acts, layer_inputs, output: cur }
    }

    fn param_layout(&self) -> usize {
        let mut total: usize = self.layers.iter().map(|l| l.param_count()).sum();
        if let Some(t) = &self.label_table {
            total += t.len();
        }
        if let Some(t) = &self.time_table {
            total += t.len();
        }
        total
    }
}

struct ForwardCache {
    pre_acts: Vec<Array2<f64>>,
    layer_inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Denoiser for MlpDenoiser {
    fn predict(&self, x_t: &Array2<f32>, ts: &[usize], labels: Option<&[u16]>) -> Array2<f32> {
        self.forward_cached(x_t, ts, labels).output.mapv(|v| v as f32)
    }

    fn sample_shape(&self) -> Vec<usize> {
        self.sample_shape.clone()
    }

    fn trainable(&self) -> bool {
        true
    }

    fn param_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_layout());
        for layer in &self.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        if let Some(t) = &self.label_table {
            out.extend(t.iter());
        }
        if let Some(t) = &self.time_table {
            out.extend(t.iter());
        }
        out
    }

    fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_layout() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, expected {}",
                params.len(),
                self.param_layout()
            )));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            for v in layer.w.iter_mut() {
                *v = it.next().unwrap();
            }
            for v in layer.b.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        if let Some(t) = &mut self.label_table {
            for v in t.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        if let Some(t) = &mut self.time_table {
            for v in t.iter_mut() {
                *v = it.next().unwrap();
            }
        }
        Ok(())
    }

    fn loss_grad(
        &self,
        x_t: &Array2<f32>,
        ts: &[usize],
        labels: Option<&[u16]>,
        z: &Array2<f32>,
    ) -> Option<(f64, Vec<f64>)> {
        let n = x_t.nrows();
        let cache = self.forward_cached(x_t, ts, labels);
        let mut loss = 0.0f64;
        for (p, zv) in cache.output.iter().zip(z.iter()) {
            let d = *zv as f64 - *p;
            loss += d * d;
        }
        loss /= n as f64;

        // d loss / d output = 2 (output - z) / n
        let scale = 2.0 / n as f64;
        let mut dy = cache.output.clone();
        dy.zip_mut_with(z, |d, &zv| *d = scale * (*d - zv as f64));

        let mut grads_w: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut grads_b: Vec<Array1<f64>> = Vec::with_capacity(self.layers.len());
        let mut d_label: Option<Array2<f64>> = None;
        let mut d_input: Option<Array2<f64>> = None;

        for (li, layer) in self.layers.iter().enumerate().rev() {
            let last = li == self.layers.len() - 1;
            let d_pre = if last { dy.clone() } else { relu_backward(&cache.pre_acts[li], &dy) };
            if li == 0 {
                if let (Some(table), Some(l)) = (&self.label_table, labels) {
                    let mut dt = Array2::zeros(table.raw_dim());
                    for (i, &lab) in l.iter().enumerate() {
                        dt.row_mut(lab as usize).zip_mut_with(&d_pre.row(i), |a, &b| *a += b);
                    }
                    d_label = Some(dt);
                }
            }
            let (dx, dw, db) = layer.backward(&cache.layer_inputs[li], &d_pre);
            grads_w.push(dw);
            grads_b.push(db);
            if li == 0 {
                d_input = Some(dx);
            } else {
                dy = dx;
            }
        }
        grads_w.reverse();
        grads_b.reverse();

        let mut flat = Vec::with_capacity(self.param_layout());
        for (dw, db) in grads_w.iter().zip(&grads_b) {
            flat.extend(dw.iter());
            flat.extend(db.iter());
        }
        if let Some(table) = &self.label_table {
            match d_label {
                Some(dt) => flat.extend(dt.iter()),
                None => flat.extend(std::iter::repeat(0.0).take(table.len())),
            }
        }
        if let Some(table) = &self.time_table {
            // gradient of the learned time rows arrives through the input columns
            let d_in = d_input.expect("first layer visited");
            let mut dt = Array2::zeros(table.raw_dim());
            for (i, &t) in ts.iter().enumerate() {
                let src = d_in.slice(ndarray::s![i, self.input_dim..]);
                dt.row_mut(t - 1).zip_mut_with(&src, |a, &b| *a += b);
            }
            flat.extend(dt.iter());
        }
        Some((loss, flat))
    }

    fn clone_box(&self) -> Box<dyn Denoiser> {
        Box::new(self.clone())
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
