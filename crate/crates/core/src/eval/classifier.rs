//! Small CNN classifier: two conv layers, one max pool, two fully
//! connected layers. Used both as the downstream-task model and as the
//! reference model for per-class agreement scoring.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::nn::{maxpool2, maxpool2_backward, relu, relu_backward, Conv2d, Linear};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub conv_channels: (usize, usize),
    pub fc_hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            conv_channels: (8, 16),
            fc_hidden: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            seed: 0,
        }
    }
}

/// conv -> relu -> conv -> relu -> maxpool -> fc -> relu -> fc.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub(crate) side: usize,
    pub(crate) num_classes: usize,
    pub(crate) conv1: Conv2d,
    pub(crate) conv2: Conv2d,
    pub(crate) fc1: Linear,
    pub(crate) fc2: Linear,
}

impl Classifier {
    pub fn new(side: usize, num_classes: usize, config: &ClassifierConfig) -> Result<Self> {
        if side < 6 {
            return Err(Error::Config("classifier needs side >= 6".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let (c1, c2) = config.conv_channels;
        let after_convs = side - 4; // two valid 3x3 convs
        let pooled = after_convs / 2;
        if pooled == 0 {
            return Err(Error::Config("input too small after pooling".into()));
        }
        let mut init = rng::stream(config.seed, "classifier/init");
        Ok(Self {
            side,
            num_classes,
            conv1: Conv2d::init(c1, 1, 3, &mut init),
            conv2: Conv2d::init(c2, c1, 3, &mut init),
            fc1: Linear::init(config.fc_hidden, c2 * pooled * pooled, &mut init),
            fc2: Linear::init(num_classes, config.fc_hidden, &mut init),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn side(&self) -> usize {
        self.side
    }

    fn to_images(&self, batch: ndarray::ArrayView2<f32>) -> Array4<f64> {
        let (n, dim) = batch.dim();
        assert_eq!(dim, self.side * self.side, "flat dimension mismatch");
        let mut x = Array4::zeros((n, 1, self.side, self.side));
        for i in 0..n {
            for r in 0..self.side {
                for c in 0..self.side {
                    x[[i, 0, r, c]] = batch[[i, r * self.side + c]] as f64;
                }
            }
        }
        x
    }

    /// Class log-odds for each sample.
    pub fn logits(&self, batch: &SampleBatch) -> Array2<f64> {
        let x = self.to_images(batch.data());
        let h1 = self.conv1.forward(&x).mapv(|v| v.max(0.0));
        let h2 = self.conv2.forward(&h1).mapv(|v| v.max(0.0));
        let (pooled, _) = maxpool2(&h2);
        let flat = flatten(&pooled);
        let f1 = relu(&self.fc1.forward(&flat));
        self.fc2.forward(&f1)
    }

    pub fn predict_labels(&self, batch: &SampleBatch) -> Vec<u16> {
        let logits = self.logits(batch);
        logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0 as u16
            })
            .collect()
    }

    pub fn accuracy(&self, batch: &SampleBatch) -> Result<f64> {
        let labels = batch.labels().ok_or_else(|| Error::Metric("test set has no labels".into()))?;
        let pred = self.predict_labels(batch);
        let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// One SGD-with-momentum step on softmax cross-entropy; returns the loss.
    fn train_step(
        &mut self,
        x: &Array4<f64>,
        labels: &[u16],
        lr: f64,
        momentum: f64,
        vel: &mut Velocity,
    ) -> f64 {
        let n = x.dim().0;
        let pre1 = self.conv1.forward(x);
        let h1 = pre1.mapv(|v| v.max(0.0));
        let pre2 = self.conv2.forward(&h1);
        let h2 = pre2.mapv(|v| v.max(0.0));
        let (pooled, mask) = maxpool2(&h2);
        let flat = flatten(&pooled);
        let pre_f1 = self.fc1.forward(&flat);
        let f1 = relu(&pre_f1);
        let logits = self.fc2.forward(&f1);

        // softmax cross-entropy
        let mut probs = logits.clone();
        let mut loss = 0.0f64;
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
            loss -= row[labels[i] as usize].max(1e-300).ln();
        }
        loss /= n as f64;

        let mut dlogits = probs;
        for (i, mut row) in dlogits.rows_mut().into_iter().enumerate() {
            row[labels[i] as usize] -= 1.0;
            row.mapv_inplace(|v| v / n as f64);
        }

        let (df1, dw_fc2, db_fc2) = self.fc2.backward(&f1, &dlogits);
        let dpre_f1 = relu_backward(&pre_f1, &df1);
        let (dflat, dw_fc1, db_fc1) = self.fc1.backward(&flat, &dpre_f1);
        let dpooled = unflatten(&dflat, pooled.dim());
        let dh2 = maxpool2_backward(&dpooled, &mask, pre2.dim());
        let dpre2 = relu4_backward(&pre2, &dh2);
        let (dh1, dw_c2, db_c2) = self.conv2.backward(&h1, &dpre2);
        let dpre1 = relu4_backward(&pre1, &dh1);
        let (_, dw_c1, db_c1) = self.conv1.backward(x, &dpre1);

        // momentum updates
        update4(&mut self.conv1.w, &mut vel.c1w, &dw_c1, lr, momentum);
        update1(&mut self.conv1.b, &mut vel.c1b, &db_c1, lr, momentum);
        update4(&mut self.conv2.w, &mut vel.c2w, &dw_c2, lr, momentum);
        update1(&mut self.conv2.b, &mut vel.c2b, &db_c2, lr, momentum);
        update2(&mut self.fc1.w, &mut vel.f1w, &dw_fc1, lr, momentum);
        update1(&mut self.fc1.b, &mut vel.f1b, &db_fc1, lr, momentum);
        update2(&mut self.fc2.w, &mut vel.f2w, &dw_fc2, lr, momentum);
        update1(&mut self.fc2.b, &mut vel.f2b, &db_fc2, lr, momentum);
        loss
    }
}

fn flatten(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::zeros((n, c * h * w));
    for i in 0..n {
        let mut j = 0;
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    out[[i, j]] = x[[i, ch, r, col]];
                    j += 1;
                }
            }
        }
    }
    out
}

fn unflatten(x: &Array2<f64>, dim: (usize, usize, usize, usize)) -> Array4<f64> {
    let (n, c, h, w) = dim;
    let mut out = Array4::zeros(dim);
    for i in 0..n {
        let mut j = 0;
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    out[[i, ch, r, col]] = x[[i, j]];
                    j += 1;
                }
            }
        }
    }
    out
}

fn relu4_backward(pre: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

struct Velocity {
    c1w: Array4<f64>,
    c1b: ndarray::Array1<f64>,
    c2w: Array4<f64>,
    c2b: ndarray::Array1<f64>,
    f1w: Array2<f64>,
    f1b: ndarray::Array1<f64>,
    f2w: Array2<f64>,
    f2b: ndarray::Array1<f64>,
}

impl Velocity {
    fn zeros_like(c: &Classifier) -> Self {
        Self {
            c1w: Array4::zeros(c.conv1.w.raw_dim()),
            c1b: ndarray::Array1::zeros(c.conv1.b.len()),
            c2w: Array4::zeros(c.conv2.w.raw_dim()),
            c2b: ndarray::Array1::zeros(c.conv2.b.len()),
            f1w: Array2::zeros(c.fc1.w.raw_dim()),
            f1b: ndarray::Array1::zeros(c.fc1.b.len()),
            f2w: Array2::zeros(c.fc2.w.raw_dim()),
            f2b: ndarray::Array1::zeros(c.fc2.b.len()),
        }
    }
}

fn update4(p: &mut Array4<f64>, v: &mut Array4<f64>, g: &Array4<f64>, lr: f64, m: f64) {
    azip(p, v, g, lr, m);
}

fn update2(p: &mut Array2<f64>, v: &mut Array2<f64>, g: &Array2<f64>, lr: f64, m: f64) {
    for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
        *vv = m * *vv + gv;
        *pv -= lr * *vv;
    }
}

fn update1(p: &mut ndarray::Array1<f64>, v: &mut ndarray::Array1<f64>, g: &ndarray::Array1<f64>, lr: f64, m: f64) {
    for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
        *vv = m * *vv + gv;
        *pv -= lr * *vv;
    }
}

fn azip(p: &mut Array4<f64>, v: &mut Array4<f64>, g: &Array4<f64>, lr: f64, m: f64) {
    for ((pv, vv), gv) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
        *vv = m * *vv + gv;
        *pv -= lr * *vv;
    }
}

/// Train a classifier on a labeled batch of square grayscale images.
pub fn train_classifier(
    train: &SampleBatch,
    num_classes: usize,
    config: &ClassifierConfig,
) -> Result<Classifier> {
    let labels = train.labels().ok_or_else(|| Error::Metric("training set has no labels".into()))?;
    if labels.iter().any(|&l| l as usize >= num_classes) {
        return Err(Error::Metric("label out of range for classifier".into()));
    }
    let side = match train.shape() {
        [1, r, c] if r == c => *r,
        [r, c] if r == c => *r,
        other => return Err(Error::Config(format!("classifier expects square images, got {other:?}"))),
    };
    let mut model = Classifier::new(side, num_classes, config)?;
    let mut vel = Velocity::zeros_like(&model);
    let n = train.count();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::stream(config.seed, "classifier/shuffle");
    for _epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let data = train.data().select(Axis(0), chunk);
            let batch_labels: Vec<u16> = chunk.iter().map(|&i| labels[i]).collect();
            let x = model.to_images(data.view());
            let loss = model.train_step(&x, &batch_labels, config.learning_rate, config.momentum, &mut vel);
            if !loss.is_finite() {
                return Err(Error::NonFinite("classifier loss".into()));
            }
        }
    }
    Ok(model)
}

/// Train on synthetic data, evaluate on held-out real data, one run per
/// seed; reports mean accuracy with the per-seed values in `per_class`
/// keyed by seed index.
pub fn downstream_accuracy(
    synthetic_train: &SampleBatch,
    real_test: &SampleBatch,
    num_classes: usize,
    config: &ClassifierConfig,
    seeds: &[u64],
) -> Result<MetricReport> {
    let train_labels = synthetic_train
        .labels()
        .ok_or_else(|| Error::Metric("synthetic training set has no labels".into()))?;
    let test_labels =
        real_test.labels().ok_or_else(|| Error::Metric("test set has no labels".into()))?;
    // every class evaluated must be covered by the training set
    for c in 0..num_classes as u16 {
        if test_labels.contains(&c) && !train_labels.contains(&c) {
            return Err(Error::Metric(format!("class {c} missing from the training set")));
        }
    }
    if seeds.is_empty() {
        return Err(Error::Metric("need at least one seed".into()));
    }
    let mut accs = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let cfg = ClassifierConfig { seed, ..config.clone() };
        let model = train_classifier(synthetic_train, num_classes, &cfg)?;
        let acc = model.accuracy(real_test)?;
        accs.push((i as u16, acc, real_test.count()));
    }
    let mean = accs.iter().map(|(_, a, _)| a).sum::<f64>() / accs.len() as f64;
    Ok(MetricReport {
        metric: "downstream_accuracy".into(),
        per_class: accs,
        aggregate: mean,
        count: real_test.count(),
        seed: seeds[0],
        config_hash: String::new(),
    })
}

/// Fraction of samples a reference classifier assigns to their requested
/// class, reported per class.
pub fn per_class_report(samples: &SampleBatch, reference: &Classifier) -> Result<MetricReport> {
    let requested =
        samples.labels().ok_or_else(|| Error::Metric("samples carry no requested labels".into()))?;
    let predicted = reference.predict_labels(samples);
    let mut per_class: std::collections::BTreeMap<u16, (usize, usize)> = Default::default();
    for (&want, &got) in requested.iter().zip(&predicted) {
        let e = per_class.entry(want).or_insert((0, 0));
        e.1 += 1;
        if want == got {
            e.0 += 1;
        }
    }
    let rows: Vec<(u16, f64, usize)> = per_class
        .iter()
        .map(|(&c, &(hits, total))| (c, hits as f64 / total as f64, total))
        .collect();
    let total: usize = rows.iter().map(|r| r.2).sum();
    let aggregate = rows.iter().map(|r| r.1 * r.2 as f64).sum::<f64>() / total as f64;
    Ok(MetricReport {
        metric: "per_class_agreement".into(),
        per_class: rows,
        aggregate,
        count: total,
        seed: 0,
        config_hash: String::new(),
    })
}

/// Serialize classifier weights (f32 tensor records, same container as
/// denoiser checkpoints).
pub fn write_classifier(c: &Classifier) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"PFCC");
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&(c.side as u32).to_le_bytes());
    buf.extend_from_slice(&(c.num_classes as u32).to_le_bytes());
    let mut tensor = |dims: &[usize], values: &mut dyn Iterator<Item = f64>| {
        buf.push(dims.len() as u8);
        for &d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    let (o1, i1, k1, _) = c.conv1.w.dim();
    tensor(&[o1, i1, k1, k1], &mut c.conv1.w.iter().copied());
    tensor(&[c.conv1.b.len()], &mut c.conv1.b.iter().copied());
    let (o2, i2, k2, _) = c.conv2.w.dim();
    tensor(&[o2, i2, k2, k2], &mut c.conv2.w.iter().copied());
    tensor(&[c.conv2.b.len()], &mut c.conv2.b.iter().copied());
    tensor(&[c.fc1.w.nrows(), c.fc1.w.ncols()], &mut c.fc1.w.iter().copied());
    tensor(&[c.fc1.b.len()], &mut c.fc1.b.iter().copied());
    tensor(&[c.fc2.w.nrows(), c.fc2.w.ncols()], &mut c.fc2.w.iter().copied());
    tensor(&[c.fc2.b.len()], &mut c.fc2.b.iter().copied());
    buf
}

pub fn read_classifier(bytes: &[u8]) -> Result<Classifier> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Protocol("classifier blob truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != b"PFCC" {
        return Err(Error::Protocol("not a classifier blob".into()));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != 1 {
        return Err(Error::Protocol(format!("unsupported classifier version {version}")));
    }
    let side = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let num_classes = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let tensor = |pos: &mut usize| -> Result<(Vec<usize>, Vec<f64>)> {
        let rank = take(pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize);
        }
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as f64);
        }
        Ok((dims, values))
    };
    let (d, c1w) = tensor(&mut pos)?;
    let conv1_w = Array4::from_shape_vec((d[0], d[1], d[2], d[3]), c1w)
        .map_err(|e| Error::Protocol(e.to_string()))?;
    let (_, c1b) = tensor(&mut pos)?;
    let (d, c2w) = tensor(&mut pos)?;
    let conv2_w = Array4::from_shape_vec((d[0], d[1], d[2], d[3]), c2w)
        .map_err(|e| Error::Protocol(e.to_string()))?;
    let (_, c2b) = tensor(&mut pos)?;
    let (d, f1w) = tensor(&mut pos)?;
    let fc1_w =
        Array2::from_shape_vec((d[0], d[1]), f1w).map_err(|e| Error::Protocol(e.to_string()))?;
    let (_, f1b) = tensor(&mut pos)?;
    let (d, f2w) = tensor(&mut pos)?;
    let fc2_w =
        Array2::from_shape_vec((d[0], d[1]), f2w).map_err(|e| Error::Protocol(e.to_string()))?;
    let (_, f2b) = tensor(&mut pos)?;
    if pos != bytes.len() {
        return Err(Error::Protocol("trailing bytes in classifier blob".into()));
    }
    Ok(Classifier {
        side,
        num_classes,
        conv1: Conv2d { w: conv1_w, b: ndarray::Array1::from_vec(c1b) },
        conv2: Conv2d { w: conv2_w, b: ndarray::Array1::from_vec(c2b) },
        fc1: Linear { w: fc1_w, b: ndarray::Array1::from_vec(f1b) },
        fc2: Linear { w: fc2_w, b: ndarray::Array1::from_vec(f2b) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_digits;

    fn small_config(seed: u64) -> ClassifierConfig {
        ClassifierConfig {
            conv_channels: (4, 8),
            fc_hidden: 32,
            epochs: 6,
            batch_size: 32,
            seed,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn learns_synthetic_digits_well_above_chance() {
        let train = synthetic_digits(60, 8, 100).unwrap();
        let test = synthetic_digits(20, 8, 101).unwrap();
        let model = train_classifier(&train, 10, &small_config(1)).unwrap();
        let acc = model.accuracy(&test).unwrap();
        // sanity floor: 3x chance
        assert!(acc > 0.3, "accuracy {acc}");
    }

    #[test]
    fn shuffled_labels_give_chance_accuracy() {
        let train = synthetic_digits(30, 8, 102).unwrap();
        // shuffle labels deterministically
        let labels: Vec<u16> = {
            let mut l = train.labels().unwrap().to_vec();
            use rand::seq::SliceRandom;
            l.shuffle(&mut rng::stream(7, "shuffle-labels"));
            l
        };
        let shuffled =
            SampleBatch::new(train.data().to_owned(), train.shape().to_vec(), Some(labels), None)
                .unwrap();
        let test = synthetic_digits(30, 8, 103).unwrap();
        let model = train_classifier(&shuffled, 10, &small_config(2)).unwrap();
        let acc = model.accuracy(&test).unwrap();
        // chance is 0.1; allow 3 sigma of 300 Bernoulli trials plus slack
        assert!(acc < 0.1 + 3.0 * (0.1f64 * 0.9 / 300.0).sqrt() + 0.05, "accuracy {acc}");
    }

    #[test]
    fn downstream_requires_class_coverage() {
        let train = synthetic_digits(10, 8, 104).unwrap();
        // drop class 0 from training
        let keep: Vec<usize> = train
            .labels()
            .unwrap()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, _)| i)
            .collect();
        let partial = train.select(&keep).unwrap();
        let test = synthetic_digits(5, 8, 105).unwrap();
        let err = downstream_accuracy(&partial, &test, 10, &small_config(3), &[1]);
        assert!(err.is_err());
    }

    #[test]
    fn downstream_reports_mean_over_seeds() {
        let train = synthetic_digits(30, 8, 106).unwrap();
        let test = synthetic_digits(10, 8, 107).unwrap();
        let r = downstream_accuracy(&train, &test, 10, &small_config(4), &[1, 2]).unwrap();
        assert_eq!(r.per_class.len(), 2);
        let mean = (r.per_class[0].1 + r.per_class[1].1) / 2.0;
        assert!((r.aggregate - mean).abs() < 1e-12);
    }

    #[test]
    fn per_class_agreement_self_consistency() {
        let train = synthetic_digits(60, 8, 108).unwrap();
        let model = train_classifier(&train, 10, &small_config(5)).unwrap();
        let test = synthetic_digits(25, 8, 109).unwrap();
        let report = per_class_report(&test, &model).unwrap();
        // rows sum to the input count
        let total: usize = report.per_class.iter().map(|r| r.2).sum();
        assert_eq!(total, test.count());
        // real images with real labels track overall accuracy
        let acc = model.accuracy(&test).unwrap();
        assert!((report.aggregate - acc).abs() < 1e-12);

        // uniform noise scores near chance
        let mut r = rng::stream(11, "noise-imgs");
        use rand::Rng;
        let noise = Array2::from_shape_simple_fn((400, 64), || r.gen_range(0.0f32..1.0));
        let labels: Vec<u16> = (0..400).map(|i| (i % 10) as u16).collect();
        let noise_batch = SampleBatch::new(noise, vec![1, 8, 8], Some(labels), None).unwrap();
        let noise_report = per_class_report(&noise_batch, &model).unwrap();
        assert!(noise_report.aggregate < 0.35, "noise agreement {}", noise_report.aggregate);
    }

    #[test]
    fn classifier_round_trips_through_blob() {
        let train = synthetic_digits(10, 8, 110).unwrap();
        let model = train_classifier(&train, 10, &small_config(6)).unwrap();
        let blob = write_classifier(&model);
        let back = read_classifier(&blob).unwrap();
        let test = synthetic_digits(4, 8, 111).unwrap();
        let a = model.predict_labels(&test);
        let b = back.predict_labels(&test);
        // f32 quantization can flip near-ties on at most a few samples
        let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        assert!(agree as f64 / a.len() as f64 > 0.95);
        assert!(read_classifier(&blob[..10]).is_err());
    }
}
