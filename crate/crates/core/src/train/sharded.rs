use alloc::vec::Vec;

use super::task::Task;
use crate::collectives::{
    all_gather, all_gather_raw, exact_reduce_scatter, pad_to, reduce_scatter, ClusterTopology,
    ReduceConfig,
};
use crate::costmodel::ByteLedger;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::quant::{dequantize, quantize, Bits};
use crate::tensor::FlatTensor;

/// How updated main-weight shards reach every replica.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSync {
    /// Raw shards, charged at `wire_bits` per element (16 for BF16).
    Lossless { wire_bits: u32 },
    /// Group-wise nearest quantization of the shards themselves.
    Quantized { bits: Bits, group_size: usize },
    /// Group-wise nearest quantization of `w_main − w_model`, added back.
    Diff { bits: Bits, group_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball: `v ← βv + g`, `w ← w − ηv`.
    Momentum {
        beta: f32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardedConfig {
    pub reduce: ReduceConfig,
    pub weights: WeightSync,
    pub optimizer: Optimizer,
    pub eta: f32,
    /// Scale width charged for quantized weight messages.
    pub weight_scale_bits: u32,
    /// Quantizer used for the relq_diff / relq_weight monitors.
    pub monitor_bits: Bits,
    pub monitor_group: usize,
}

impl ShardedConfig {
    pub fn validate(&self) -> Result<()> {
        self.reduce.validate()?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("learning rate must be positive and finite"));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config("momentum must lie in [0, 1)"));
            }
        }
        match self.weights {
            WeightSync::Quantized { group_size: 0, .. }
            | WeightSync::Diff { group_size: 0, .. } => return Err(Error::ZeroGroupSize),
            WeightSync::Lossless { wire_bits: 0 } => {
                return Err(Error::Config("weight wire bits must be positive"))
            }
            _ => {}
        }
        if self.monitor_group == 0 {
            return Err(Error::ZeroGroupSize);
        }
        Ok(())
    }
}

/// Rank `p` owns shard `p` of the main weights (and its momentum); every rank
/// holds a full model-weight replica. Vectors are zero-padded to a length
/// the reduction can shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedState {
    pub w_main: Vec<FlatTensor>,
    pub replicas: Vec<FlatTensor>,
    momentum: Vec<Vec<f32>>,
    pub t: u64,
    dim: usize,
}

impl ShardedState {
    pub fn new(topo: &ClusterTopology, task: &Task, cfg: &ShardedConfig) -> Result<Self> {
        cfg.validate()?;
        let w0 = pad_to(&task.initial_weights(), cfg.reduce.alignment(topo));
        let s = w0.len() / topo.workers();
        let w_main: Vec<FlatTensor> = w0
            .chunks(s)
            .map(FlatTensor::from_slice)
            .collect::<Result<_>>()?;
        Ok(Self {
            momentum: alloc::vec![alloc::vec![0.0; s]; topo.workers()],
            replicas: alloc::vec![w0; topo.workers()],
            w_main,
            t: 0,
            dim: task.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shard_len(&self) -> usize {
        self.w_main[0].len()
    }

    /// Concatenated main weights, unpadded.
    pub fn main_weights(&self) -> Vec<f32> {
        self.w_main
            .iter()
            .flat_map(|s| s.iter().copied())
            .take(self.dim)
            .collect()
    }

    /// Rank 0's replica, unpadded.
    pub fn model_weights(&self) -> &[f32] {
        &self.replicas[0][..self.dim]
    }

    /// True when every rank's replica is bit-identical.
    pub fn replicas_agree(&self) -> bool {
        let bits = |t: &FlatTensor| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let first = bits(&self.replicas[0]);
        self.replicas[1..].iter().all(|r| bits(r) == first)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    /// Mean minibatch loss across ranks, at the model weights.
    pub train_loss: f64,
    /// Squared norm of the exact rank-averaged gradient.
    pub grad_norm_sq: f64,
    /// `‖q(δw) − δw‖ / ‖w‖` with `δw = w_main − w_model` after the update.
    pub relq_diff: f64,
    /// `‖q(w) − w‖ / ‖w‖` of the updated main weights.
    pub relq_weight: f64,
    /// `‖w_main − w_model‖` after synchronization.
    pub e_norm: f64,
    pub ledger: ByteLedger,
}

/// One data-parallel iteration: local gradients, reduce-scatter, optimizer
/// step on owned shards, weight synchronization.
pub fn sharded_iteration<E: Executor>(
    topo: &ClusterTopology,
    state: &mut ShardedState,
    task: &Task,
    cfg: &ShardedConfig,
    exec: &E,
) -> Result<IterationMetrics> {
    let p_count = topo.workers();
    if state.w_main.len() != p_count || state.replicas.len() != p_count {
        return Err(Error::LengthMismatch {
            expected: p_count,
            got: state.w_main.len(),
        });
    }
    let s = state.shard_len();
    let padded = s * p_count;
    if !padded.is_multiple_of(cfg.reduce.alignment(topo)) {
        return Err(Error::Misaligned {
            len: padded,
            multiple: cfg.reduce.alignment(topo),
        });
    }
    let t = state.t;
    let dim = state.dim;

    let local: Vec<(f64, Vec<f32>)> = exec.map_ranks(p_count, |p| {
        let mut g = alloc::vec![0.0f32; padded];
        let loss = task.local_grad(&state.replicas[p], p, t, &mut g[..dim]);
        (loss, g)
    });
    let mut grads = Vec::with_capacity(p_count);
    let mut train_loss = 0.0;
    for (loss, g) in local {
        if !loss.is_finite() {
            return Err(Error::Diverged { iter: t });
        }
        train_loss += loss;
        grads.push(FlatTensor::new(g).map_err(|_| Error::Diverged { iter: t })?);
    }
    let train_loss = train_loss / p_count as f64;

    let exact = exact_reduce_scatter(topo, &grads)?;
    let grad_norm_sq: f64 = exact
        .iter()
        .map(|g| g.iter().map(|&v| sq(f64::from(v))).sum::<f64>())
        .sum();

    let mut ledger = ByteLedger::new();
    let reduced = reduce_scatter(topo, &grads, &cfg.reduce, &mut ledger)?;
    drop(grads);

    // Optimizer step on each owned shard.
    for p in 0..p_count {
        let g = &reduced[p];
        let mut w = core::mem::take(&mut state.w_main[p]).into_vec();
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, g) in w.iter_mut().zip(g.iter()) {
                    *w -= cfg.eta * g;
                }
            }
            Optimizer::Momentum { beta } => {
                for ((w, v), g) in w.iter_mut().zip(state.momentum[p].iter_mut()).zip(g.iter()) {
                    *v = beta * *v + g;
                    *w -= cfg.eta * *v;
                }
            }
        }
        state.w_main[p] = FlatTensor::new(w).map_err(|_| Error::Diverged { iter: t })?;
    }

    // Each rank's difference against its own replica slice.
    let diffs: Vec<Vec<f32>> = (0..p_count)
        .map(|p| {
            let own = &state.replicas[p][p * s..(p + 1) * s];
            state.w_main[p]
                .iter()
                .zip(own)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();

    let monitor = |x: &[f32]| -> Result<f64> {
        let q = dequantize(&quantize(x, cfg.monitor_bits, cfg.monitor_group)?)?;
        Ok(q.iter().zip(x).map(|(a, b)| sq(f64::from(a - b))).sum())
    };
    let mut w_sq = 0.0;
    let mut diff_err = 0.0;
    let mut weight_err = 0.0;
    for p in 0..p_count {
        w_sq += state.w_main[p]
            .iter()
            .map(|&v| sq(f64::from(v)))
            .sum::<f64>();
        diff_err += monitor(&diffs[p])?;
        weight_err += monitor(&state.w_main[p])?;
    }
    let w_norm = libm::sqrt(w_sq);
    let rel = |e: f64| {
        if w_norm > 0.0 {
            libm::sqrt(e) / w_norm
        } else {
            0.0
        }
    };
    let (relq_diff, relq_weight) = (rel(diff_err), rel(weight_err));

    match cfg.weights {
        WeightSync::Lossless { wire_bits } => {
            state.replicas = all_gather_raw(topo, &state.w_main, wire_bits, &mut ledger)?;
        }
        WeightSync::Quantized { bits, group_size } => {
            let chunks = exec
                .map_ranks(p_count, |p| quantize(&state.w_main[p], bits, group_size))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            state.replicas = all_gather(topo, &chunks, cfg.weight_scale_bits, &mut ledger)?;
        }
        WeightSync::Diff { bits, group_size } => {
            let chunks = exec
                .map_ranks(p_count, |p| quantize(&diffs[p], bits, group_size))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let deltas = all_gather(topo, &chunks, cfg.weight_scale_bits, &mut ledger)?;
            for (replica, delta) in state.replicas.iter_mut().zip(deltas) {
                let next = replica
                    .iter()
                    .zip(delta.iter())
                    .map(|(w, d)| w + d)
                    .collect();
                *replica = FlatTensor::new(next)?;
            }
        }
    }

    let e_sq: f64 = (0..p_count)
        .map(|p| {
            let own = &state.replicas[0][p * s..(p + 1) * s];
            state.w_main[p]
                .iter()
                .zip(own)
                .map(|(a, b)| sq(f64::from(a - b)))
                .sum::<f64>()
        })
        .sum();
    state.t += 1;
    Ok(IterationMetrics {
        train_loss,
        grad_norm_sq,
        relq_diff,
        relq_weight,
        e_norm: libm::sqrt(e_sq),
        ledger,
    })
}

fn sq(v: f64) -> f64 {
    v * v
}
