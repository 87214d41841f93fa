//! Forward diffusion, the simplified noise-prediction objective, and the
//! reverse sampler.
//!
//! Noise is an explicit argument at the single-step level; randomness enters
//! only at loop level through named seed streams, so every formula here is
//! directly unit-testable.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::batch::SampleBatch;
use crate::denoiser::{Denoiser, OptimizerKind, TrainingConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;

fn check_noise_shape(data: &ArrayView2<f32>, z: &Array2<f32>) -> Result<()> {
    if data.dim() != z.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![data.nrows(), data.ncols()],
            got: vec![z.nrows(), z.ncols()],
        });
    }
    Ok(())
}

/// Per-row forward diffusion with one step index per row:
/// `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) z`.
pub(crate) fn diffuse_rows(
    x0: &ArrayView2<f32>,
    ts: &[usize],
    z: &ArrayView2<f32>,
    schedule: &NoiseSchedule,
) -> Array2<f32> {
    let mut out = Array2::zeros(x0.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let a = schedule.alpha_bar(t);
        let (sa, sn) = (a.sqrt() as f32, (1.0 - a).sqrt() as f32);
        let (x_row, z_row) = (x0.row(i), z.row(i));
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = sa * x_row[j] + sn * z_row[j];
        }
    }
    out
}

/// Closed-form forward diffusion of a whole batch to step `t`.
///
/// Labels and client id pass through unchanged.
pub fn diffuse(
    x0: &SampleBatch,
    t: usize,
    z: &Array2<f32>,
    schedule: &NoiseSchedule,
) -> Result<SampleBatch> {
    if t == 0 || t > schedule.len() {
        return Err(Error::StepOutOfRange { t, t_max: schedule.len() });
    }
    check_noise_shape(&x0.data(), z)?;
    let ts = vec![t; x0.count()];
    let data = diffuse_rows(&x0.data(), &ts, &z.view(), schedule);
    x0.with_data(data)
}

/// Mean over the batch of `||z - z_hat(x_t, t)||^2` (summed over coordinates).
pub(crate) fn loss_rows(
    denoiser: &dyn Denoiser,
    x0: &ArrayView2<f32>,
    ts: &[usize],
    labels: Option<&[u16]>,
    z: &ArrayView2<f32>,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let x_t = diffuse_rows(x0, ts, z, schedule);
    let pred = denoiser.predict(&x_t, ts, labels);
    let n = x0.nrows() as f64;
    let mut total = 0.0f64;
    for (p, zv) in pred.iter().zip(z.iter()) {
        let d = (*zv - *p) as f64;
        total += d * d;
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("denoiser loss".into()));
    }
    Ok(loss)
}

/// The simplified training objective at a fixed step `t` with explicit noise.
pub fn ddpm_loss(
    denoiser: &dyn Denoiser,
    x0: &SampleBatch,
    t: usize,
    z: &Array2<f32>,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    if t == 0 || t > schedule.len() {
        return Err(Error::StepOutOfRange { t, t_max: schedule.len() });
    }
    check_noise_shape(&x0.data(), z)?;
    let ts = vec![t; x0.count()];
    loss_rows(denoiser, &x0.data(), &ts, x0.labels(), &z.view(), schedule)
}

/// Leading coefficient of the reverse update. `SqrtOneMinusBeta` is the
/// standard form; `InverseAlpha` reads the coefficient as `1/(1-beta_t)`
/// and exists for fidelity experiments only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReverseCoeff {
    #[default]
    SqrtOneMinusBeta,
    InverseAlpha,
}

pub(crate) fn reverse_rows(
    x_t: &ArrayView2<f32>,
    t: usize,
    denoiser: &dyn Denoiser,
    labels: Option<&[u16]>,
    schedule: &NoiseSchedule,
    z: Option<&ArrayView2<f32>>,
    coeff: ReverseCoeff,
) -> Array2<f32> {
    let beta = schedule.beta(t);
    let scale = match coeff {
        ReverseCoeff::SqrtOneMinusBeta => (1.0 - beta).sqrt().recip(),
        ReverseCoeff::InverseAlpha => (1.0 - beta).recip(),
    } as f32;
    let noise_coeff = (beta / (1.0 - schedule.alpha_bar(t)).sqrt()) as f32;
    let sigma = if t == 1 { 0.0 } else { schedule.sigma(t) as f32 };
    let ts = vec![t; x_t.nrows()];
    let pred = denoiser.predict(&x_t.to_owned(), &ts, labels);
    let mut out = Array2::zeros(x_t.raw_dim());
    for ((o, x), p) in out.iter_mut().zip(x_t.iter()).zip(pred.iter()) {
        *o = scale * (x - noise_coeff * p);
    }
    if let Some(z) = z {
        out.zip_mut_with(z, |o, &zv| *o += sigma * zv);
    }
    out
}

/// One reverse step `x_t -> x_{t-1}`:
/// `(1/sqrt(1-beta_t)) (x_t - beta_t/sqrt(1-alpha_bar_t) z_hat) + sigma_t z`.
///
/// `z` must be absent or all-zero at `t = 1`.
pub fn reverse_step(
    x_t: &SampleBatch,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    z: Option<&Array2<f32>>,
) -> Result<SampleBatch> {
    reverse_step_with(x_t, t, denoiser, schedule, z, ReverseCoeff::default())
}

pub fn reverse_step_with(
    x_t: &SampleBatch,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    z: Option<&Array2<f32>>,
    coeff: ReverseCoeff,
) -> Result<SampleBatch> {
    if t == 0 || t > schedule.len() {
        return Err(Error::StepOutOfRange { t, t_max: schedule.len() });
    }
    if let Some(z) = z {
        check_noise_shape(&x_t.data(), z)?;
        if t == 1 && z.iter().any(|&v| v != 0.0) {
            return Err(Error::Batch("noise must be zero at the final reverse step".into()));
        }
    }
    let data = reverse_rows(
        &x_t.data(),
        t,
        denoiser,
        x_t.labels(),
        schedule,
        z.map(|z| z.view()).as_ref(),
        coeff,
    );
    x_t.with_data(data)
}

/// Run the full reverse sampler from `x_{t_start} ~ N(0, I)` down to `x_0`.
///
/// Deterministic given `seed`; all chains in the batch advance together.
pub fn sample_ddpm(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    t_start: usize,
    count: usize,
    label: Option<u16>,
    seed: u64,
) -> Result<SampleBatch> {
    sample_ddpm_from(denoiser, schedule, t_start, None, count, label, seed)
}

/// As [`sample_ddpm`], but optionally starting from a provided `x_{t_start}`
/// instead of a standard-normal draw. Used by the split sampling procedure.
pub fn sample_ddpm_from(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    t_start: usize,
    init: Option<&SampleBatch>,
    count: usize,
    label: Option<u16>,
    seed: u64,
) -> Result<SampleBatch> {
    sample_loop(denoiser, schedule, t_start, init, count, label, seed, ReverseCoeff::default(), &mut None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_loop(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    t_start: usize,
    init: Option<&SampleBatch>,
    count: usize,
    label: Option<u16>,
    seed: u64,
    coeff: ReverseCoeff,
    trace: &mut Option<Vec<Array2<f32>>>,
) -> Result<SampleBatch> {
    if t_start == 0 || t_start > schedule.len() {
        return Err(Error::StepOutOfRange { t: t_start, t_max: schedule.len() });
    }
    if count == 0 {
        return Err(Error::Batch("sample count must be positive".into()));
    }
    let (mut x, shape, labels) = match init {
        Some(b) => {
            if b.count() != count {
                return Err(Error::Batch(format!(
                    "init batch has {} rows, expected {count}",
                    b.count()
                )));
            }
            (b.data().to_owned(), b.shape().to_vec(), b.labels().map(|l| l.to_vec()))
        }
        None => {
            let shape = denoiser.sample_shape();
            let dim = shape.iter().product();
            let mut init_rng = rng::stream(seed, "sample/init");
            (
                rng::standard_normal(&mut init_rng, count, dim),
                shape,
                label.map(|l| vec![l; count]),
            )
        }
    };
    let labels_for_predict = match (labels.as_deref(), label) {
        (Some(l), _) => Some(l.to_vec()),
        (None, Some(l)) => Some(vec![l; count]),
        (None, None) => None,
    };
    let mut step_rng = rng::stream(seed, "sample/steps");
    if let Some(tr) = trace.as_mut() {
        tr.push(x.clone());
    }
    for t in (1..=t_start).rev() {
        let z = if t > 1 {
            Some(rng::standard_normal(&mut step_rng, count, x.ncols()))
        } else {
            None
        };
        x = reverse_rows(
            &x.view(),
            t,
            denoiser,
            labels_for_predict.as_deref(),
            schedule,
            z.as_ref().map(|z| z.view()).as_ref(),
            coeff,
        );
        if let Some(tr) = trace.as_mut() {
            tr.push(x.clone());
        }
    }
    SampleBatch::new(x, shape, labels_for_predict, init.and_then(|b| b.client_id()))
}

/// Result of a training run: the (possibly updated) denoiser, the per-step
/// loss trace, and a histogram of the steps that were drawn.
pub struct TrainOutcome {
    pub denoiser: Box<dyn Denoiser>,
    pub loss_trace: Vec<f64>,
    pub t_counts: Vec<usize>,
}

/// Training loop: draw a mini-batch, draw per-sample `t ~ U{1..t_max}` and
/// noise, take one gradient-descent step on the simplified objective.
///
/// A non-trainable denoiser passes through unchanged with an
/// evaluation-only loss trace.
pub fn train_ddpm(
    dataset: &SampleBatch,
    t_max: usize,
    schedule: &NoiseSchedule,
    mut denoiser: Box<dyn Denoiser>,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if t_max == 0 || t_max > schedule.len() {
        return Err(Error::StepOutOfRange { t: t_max, t_max: schedule.len() });
    }
    let n = dataset.count();
    let dim = dataset.flat_dim();
    let batch = config.batch_size.min(n);
    let mut idx_rng = rng::stream(config.seed, "train/batch");
    let mut t_rng = rng::stream(config.seed, "train/t");
    let mut z_rng = rng::stream(config.seed, "train/z");

    let trainable = denoiser.trainable();
    let mut velocity = vec![0.0f64; if trainable { denoiser.param_vector().len() } else { 0 }];
    let mut loss_trace = Vec::with_capacity(config.steps);
    let mut t_counts = vec![0usize; t_max + 1];

    for step in 0..config.steps {
        let indices: Vec<usize> = (0..batch).map(|_| idx_rng.gen_range(0..n)).collect();
        let x0 = dataset.data().select(Axis(0), &indices);
        let labels: Option<Vec<u16>> =
            dataset.labels().map(|l| indices.iter().map(|&i| l[i]).collect());
        let ts: Vec<usize> = (0..batch).map(|_| t_rng.gen_range(1..=t_max)).collect();
        for &t in &ts {
            t_counts[t] += 1;
        }
        let z = rng::standard_normal(&mut z_rng, batch, dim);

        let loss = if trainable {
            let x_t = diffuse_rows(&x0.view(), &ts, &z.view(), schedule);
            let (loss, grad) = denoiser
                .loss_grad(&x_t, &ts, labels.as_deref(), &z)
                .expect("trainable denoiser must provide gradients");
            let mut params = denoiser.param_vector();
            let lr = config.learning_rate;
            match config.optimizer {
                OptimizerKind::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Momentum { momentum } => {
                    for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                        *v = momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            denoiser.set_param_vector(&params)?;
            loss
        } else {
            loss_rows(denoiser.as_ref(), &x0.view(), &ts, labels.as_deref(), &z.view(), schedule)?
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        loss_trace.push(loss);
    }
    Ok(TrainOutcome { denoiser, loss_trace, t_counts })
}
