//! Synthetic objectives with closed-form gradients.
//!
//! Every task owns a per-worker training split and a held-out validation
//! split generated from the task seed. Model arithmetic runs in `f64`; weights
//! and gradients cross the API as `f32`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{stream, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// `f(w) = ‖w‖²` on `w ∈ R²` with gradient `(4 w₁, 0)` or `(0, 4 w₂)`,
    /// each with probability ½.
    CounterexampleLs,
    /// Squared loss of a linear model without bias.
    LinearRegression,
    /// One tanh hidden layer, scalar output, squared loss.
    TinyMlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub workers: usize,
    pub samples_per_worker: usize,
    pub val_samples: usize,
    /// Per-worker minibatch; at or above `samples_per_worker` the full local
    /// split is used every step.
    pub batch_size: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub noise_std: f32,
    /// Every `heavy_every`-th input feature is scaled by `heavy_scale`
    /// (0 disables). Heavy features produce outlier gradient entries.
    pub heavy_every: usize,
    pub heavy_scale: f32,
    /// Standard deviation of each worker's fixed input mean offset.
    pub worker_shift: f32,
    pub seed: u64,
}

impl TaskSpec {
    pub fn counterexample(seed: u64) -> Self {
        Self {
            kind: TaskKind::CounterexampleLs,
            workers: 1,
            samples_per_worker: 0,
            val_samples: 0,
            batch_size: 1,
            input_dim: 2,
            hidden: 0,
            noise_std: 0.0,
            heavy_every: 0,
            heavy_scale: 1.0,
            worker_shift: 0.0,
            seed,
        }
    }

    pub fn linear_regression(workers: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::LinearRegression,
            workers,
            samples_per_worker: 128,
            val_samples: 1024,
            batch_size: 16,
            input_dim: 256,
            hidden: 0,
            noise_std: 0.5,
            heavy_every: 32,
            heavy_scale: 4.0,
            worker_shift: 0.5,
            seed,
        }
    }

    pub fn tiny_mlp(workers: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::TinyMlp,
            workers,
            samples_per_worker: 128,
            val_samples: 1024,
            batch_size: 16,
            input_dim: 32,
            hidden: 60,
            noise_std: 0.3,
            heavy_every: 32,
            heavy_scale: 16.0,
            worker_shift: 0.5,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            TaskKind::CounterexampleLs => 2,
            TaskKind::LinearRegression => self.input_dim,
            TaskKind::TinyMlp => self.hidden * self.input_dim + 2 * self.hidden + 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("task needs at least one worker"));
        }
        if self.kind == TaskKind::CounterexampleLs {
            return Ok(());
        }
        if self.samples_per_worker == 0 || self.batch_size == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "task needs samples, a batch size and an input dimension",
            ));
        }
        if self.kind == TaskKind::TinyMlp && self.hidden == 0 {
            return Err(Error::Config("tiny_mlp needs hidden units"));
        }
        if !(self.noise_std >= 0.0 && self.heavy_scale > 0.0 && self.worker_shift >= 0.0) {
            return Err(Error::Config(
                "noise, heavy scale and worker shift must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Row-major inputs and scalar targets.
#[derive(Debug, Clone, PartialEq)]
struct Split {
    x: Vec<f32>,
    y: Vec<f32>,
}

impl Split {
    fn len(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    spec: TaskSpec,
    train: Vec<Split>,
    val: Split,
}

impl Task {
    /// Generates the data and checks the analytic gradient against central
    /// finite differences at 10 random points.
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        let task = match spec.kind {
            TaskKind::CounterexampleLs => Task {
                spec,
                train: Vec::new(),
                val: Split {
                    x: Vec::new(),
                    y: Vec::new(),
                },
            },
            _ => generate(spec),
        };
        task.check_gradient()?;
        Ok(task)
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn workers(&self) -> usize {
        self.spec.workers
    }

    /// Starting point shared by every strategy for a given seed.
    pub fn initial_weights(&self) -> Vec<f32> {
        let mut rng = SeededRng::new(self.spec.seed).derive(stream::INIT);
        match self.spec.kind {
            TaskKind::CounterexampleLs => alloc::vec![1.0, -1.0],
            TaskKind::LinearRegression => (0..self.dim())
                .map(|_| (0.1 * rng.normal()) as f32)
                .collect(),
            TaskKind::TinyMlp => {
                let (i, h) = (self.spec.input_dim, self.spec.hidden);
                let w1 = 1.0 / libm::sqrt(i as f64);
                let w2 = 1.0 / libm::sqrt(h as f64);
                let mut w = Vec::with_capacity(self.dim());
                w.extend((0..h * i).map(|_| (w1 * rng.normal()) as f32));
                w.extend(core::iter::repeat_n(0.0, h));
                w.extend((0..h).map(|_| (w2 * rng.normal()) as f32));
                w.push(0.0);
                w
            }
        }
    }

    /// Minibatch loss and gradient of `worker` at step `t`. `grad` must have
    /// length at least `dim()`; only the first `dim()` entries are written.
    ///
    /// The batch is a pure function of `(seed, t, worker)`.
    pub fn local_grad(&self, w: &[f32], worker: usize, t: u64, grad: &mut [f32]) -> f64 {
        let d = self.dim();
        let mut rng = SeededRng::new(self.spec.seed)
            .derive(stream::BATCH)
            .derive(t)
            .derive(worker as u64);
        let w64: Vec<f64> = w[..d].iter().map(|&v| f64::from(v)).collect();
        let mut g = alloc::vec![0.0f64; d];
        let loss = match self.spec.kind {
            TaskKind::CounterexampleLs => {
                let branch = (rng.next_u64() >> 63) as usize;
                g[branch] = 4.0 * w64[branch];
                w64[0] * w64[0] + w64[1] * w64[1]
            }
            _ => {
                let split = &self.train[worker % self.train.len()];
                let n = split.len();
                if self.spec.batch_size >= n {
                    self.batch_loss_grad(&w64, split, 0..n, Some(&mut g))
                } else {
                    let idx: Vec<usize> = (0..self.spec.batch_size).map(|_| rng.below(n)).collect();
                    self.batch_loss_grad(&w64, split, idx, Some(&mut g))
                }
            }
        };
        for (o, v) in grad[..d].iter_mut().zip(g) {
            *o = v as f32;
        }
        loss
    }

    /// Mean loss over the held-out split (`‖w‖²` for the counterexample).
    pub fn val_loss(&self, w: &[f32]) -> f64 {
        let w64: Vec<f64> = w[..self.dim()].iter().map(|&v| f64::from(v)).collect();
        match self.spec.kind {
            TaskKind::CounterexampleLs => w64[0] * w64[0] + w64[1] * w64[1],
            _ => self.batch_loss_grad(&w64, &self.val, 0..self.val.len(), None),
        }
    }

    /// Mean loss over every worker's training split.
    pub fn train_loss(&self, w: &[f32]) -> f64 {
        let w64: Vec<f64> = w[..self.dim()].iter().map(|&v| f64::from(v)).collect();
        match self.spec.kind {
            TaskKind::CounterexampleLs => w64[0] * w64[0] + w64[1] * w64[1],
            _ => {
                let total: f64 = self
                    .train
                    .iter()
                    .map(|s| self.batch_loss_grad(&w64, s, 0..s.len(), None))
                    .sum();
                total / self.train.len() as f64
            }
        }
    }

    fn batch_loss_grad(
        &self,
        w: &[f64],
        split: &Split,
        rows: impl IntoIterator<Item = usize>,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let i_dim = self.spec.input_dim;
        let h_dim = self.spec.hidden;
        let mut loss = 0.0;
        let mut count = 0usize;
        let mut hidden = alloc::vec![0.0f64; h_dim];
        for row in rows {
            let x = &split.x[row * i_dim..(row + 1) * i_dim];
            let y = f64::from(split.y[row]);
            count += 1;
            match self.spec.kind {
                TaskKind::LinearRegression => {
                    let pred: f64 = w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum();
                    let r = pred - y;
                    loss += 0.5 * r * r;
                    if let Some(g) = grad.as_deref_mut() {
                        for (gj, &xj) in g.iter_mut().zip(x) {
                            *gj += r * f64::from(xj);
                        }
                    }
                }
                TaskKind::TinyMlp => {
                    let (w1, rest) = w.split_at(h_dim * i_dim);
                    let (b1, rest) = rest.split_at(h_dim);
                    let (w2, b2) = rest.split_at(h_dim);
                    let mut pred = b2[0];
                    for k in 0..h_dim {
                        let row_w = &w1[k * i_dim..(k + 1) * i_dim];
                        let pre: f64 = b1[k]
                            + row_w
                                .iter()
                                .zip(x)
                                .map(|(a, &b)| a * f64::from(b))
                                .sum::<f64>();
                        hidden[k] = libm::tanh(pre);
                        pred += w2[k] * hidden[k];
                    }
                    let r = pred - y;
                    loss += 0.5 * r * r;
                    if let Some(g) = grad.as_deref_mut() {
                        let (g1, rest) = g.split_at_mut(h_dim * i_dim);
                        let (gb1, rest) = rest.split_at_mut(h_dim);
                        let (gw2, gb2) = rest.split_at_mut(h_dim);
                        gb2[0] += r;
                        for k in 0..h_dim {
                            gw2[k] += r * hidden[k];
                            let delta = r * w2[k] * (1.0 - hidden[k] * hidden[k]);
                            gb1[k] += delta;
                            for (gj, &xj) in g1[k * i_dim..(k + 1) * i_dim].iter_mut().zip(x) {
                                *gj += delta * f64::from(xj);
                            }
                        }
                    }
                }
                TaskKind::CounterexampleLs => unreachable!("counterexample has no dataset"),
            }
        }
        let inv = 1.0 / count.max(1) as f64;
        if let Some(g) = grad {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }
        loss * inv
    }

    /// Loss and expected gradient at `w` in full `f64`, on a fixed subset.
    fn reference(&self, w: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match self.spec.kind {
            TaskKind::CounterexampleLs => {
                if let Some(g) = grad {
                    g[0] = 2.0 * w[0];
                    g[1] = 2.0 * w[1];
                }
                w[0] * w[0] + w[1] * w[1]
            }
            _ => {
                let split = &self.train[0];
                self.batch_loss_grad(w, split, 0..split.len().min(16), grad)
            }
        }
    }

    fn check_gradient(&self) -> Result<()> {
        let d = self.dim();
        let base: Vec<f64> = self.initial_weights().into_iter().map(f64::from).collect();
        let mut rng = SeededRng::new(self.spec.seed).derive(stream::VALIDATION);
        for _ in 0..10 {
            let w: Vec<f64> = base.iter().map(|&v| v + 0.3 * rng.normal()).collect();
            let mut g = alloc::vec![0.0; d];
            self.reference(&w, Some(&mut g));
            let g_norm = libm::sqrt(g.iter().map(|v| v * v).sum::<f64>());
            let mut u: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let u_norm = libm::sqrt(u.iter().map(|v| v * v).sum::<f64>());
            u.iter_mut().for_each(|v| *v /= u_norm);
            let h = 1e-4;
            let shifted = |sign: f64| -> Vec<f64> {
                w.iter().zip(&u).map(|(a, b)| a + sign * h * b).collect()
            };
            let fd = (self.reference(&shifted(1.0), None) - self.reference(&shifted(-1.0), None))
                / (2.0 * h);
            let analytic: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
            if (fd - analytic).abs() > 1e-4 * g_norm.max(1e-12) {
                return Err(Error::Config(
                    "analytic gradient disagrees with finite differences",
                ));
            }
        }
        Ok(())
    }
}

fn generate(spec: TaskSpec) -> Task {
    let root = SeededRng::new(spec.seed).derive(stream::DATA);
    let i_dim = spec.input_dim;
    let feature_scale: Vec<f64> = (0..i_dim)
        .map(|j| {
            if spec.heavy_every > 0 && j % spec.heavy_every == 0 {
                f64::from(spec.heavy_scale)
            } else {
                1.0
            }
        })
        .collect();

    let mut teacher_rng = root.derive(0);
    let teacher: Vec<f64> = match spec.kind {
        TaskKind::LinearRegression => (0..i_dim)
            .map(|_| teacher_rng.normal() / libm::sqrt(i_dim as f64))
            .collect(),
        _ => {
            let h = spec.hidden;
            let mut t = Vec::with_capacity(spec.dim());
            t.extend((0..h * i_dim).map(|_| teacher_rng.normal() / libm::sqrt(i_dim as f64)));
            t.extend((0..h).map(|_| 0.1 * teacher_rng.normal()));
            t.extend((0..h).map(|_| teacher_rng.normal() / libm::sqrt(h as f64)));
            t.push(0.0);
            t
        }
    };
    let shifts: Vec<Vec<f64>> = (0..spec.workers)
        .map(|p| {
            let mut r = root.derive(1).derive(p as u64);
            (0..i_dim)
                .map(|_| f64::from(spec.worker_shift) * r.normal())
                .collect()
        })
        .collect();

    let mut shell = Task {
        spec: spec.clone(),
        train: Vec::new(),
        val: Split {
            x: Vec::new(),
            y: Vec::new(),
        },
    };
    let draw = |rng: &mut SeededRng, shift: &[f64], n: usize| -> Split {
        let mut x = Vec::with_capacity(n * i_dim);
        for _ in 0..n {
            x.extend((0..i_dim).map(|j| (shift[j] + feature_scale[j] * rng.normal()) as f32));
        }
        // Clean targets from the teacher, then additive noise.
        let clean = Split {
            x,
            y: alloc::vec![0.0; n],
        };
        let y = (0..n)
            .map(|row| {
                let mut g = None;
                let pred = predict(
                    &spec,
                    &teacher,
                    &clean.x[row * i_dim..(row + 1) * i_dim],
                    &mut g,
                );
                (pred + f64::from(spec.noise_std) * rng.normal()) as f32
            })
            .collect();
        Split { x: clean.x, y }
    };
    let train = (0..spec.workers)
        .map(|p| {
            draw(
                &mut root.derive(2).derive(p as u64),
                &shifts[p],
                spec.samples_per_worker,
            )
        })
        .collect();
    // Validation rows come from a uniformly chosen worker's distribution.
    let mut val_rng = root.derive(3);
    let mut val = Split {
        x: Vec::new(),
        y: Vec::new(),
    };
    for _ in 0..spec.val_samples {
        let p = val_rng.below(spec.workers);
        let one = draw(&mut val_rng, &shifts[p], 1);
        val.x.extend(one.x);
        val.y.extend(one.y);
    }
    shell.train = train;
    shell.val = val;
    shell
}

fn predict(spec: &TaskSpec, w: &[f64], x: &[f32], _scratch: &mut Option<()>) -> f64 {
    let i_dim = spec.input_dim;
    match spec.kind {
        TaskKind::LinearRegression => w.iter().zip(x).map(|(a, &b)| a * f64::from(b)).sum(),
        _ => {
            let h = spec.hidden;
            let (w1, rest) = w.split_at(h * i_dim);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h);
            let mut out = b2[0];
            for k in 0..h {
                let pre: f64 = b1[k]
                    + w1[k * i_dim..(k + 1) * i_dim]
                        .iter()
                        .zip(x)
                        .map(|(a, &b)| a * f64::from(b))
                        .sum::<f64>();
                out += w2[k] * libm::tanh(pre);
            }
            out
        }
    }
}
