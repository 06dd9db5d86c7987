use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::sharded::{sharded_iteration, Optimizer, ShardedConfig, ShardedState, WeightSync};
use super::task::{Task, TaskSpec};
use crate::collectives::{ClusterTopology, ReduceConfig};
use crate::costmodel::ByteLedger;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::quant::Bits;

/// Named compression strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Raw 32-bit gradients, raw 16-bit weights.
    Baseline,
    /// Quantized weights, raw gradients.
    QW,
    /// Quantized weight differences, raw gradients.
    QWD,
    /// 4-bit gradients on both all-to-all passes, raw weights.
    ULq,
    /// 8-bit intra-node, 4-bit inter-node gradients, raw weights.
    TLq,
    /// TLq with Hadamard smoothing, raw weights.
    TLqHs,
    /// Quantized weight differences plus TLq-HS gradients.
    Sdp4Bit,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Baseline,
        Strategy::QW,
        Strategy::QWD,
        Strategy::ULq,
        Strategy::TLq,
        Strategy::TLqHs,
        Strategy::Sdp4Bit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::QW => "qW",
            Strategy::QWD => "qWD",
            Strategy::ULq => "ULq",
            Strategy::TLq => "TLq",
            Strategy::TLqHs => "TLq-HS",
            Strategy::Sdp4Bit => "SDP4Bit",
        }
    }

    pub fn config(self, params: &StrategyParams) -> Result<ShardedConfig> {
        let g = params.grad_group;
        let raw_grads = ReduceConfig {
            raw_bits: params.grad_wire_bits,
            ..ReduceConfig::lossless_two_level()
        };
        let reduce = match self {
            Strategy::Baseline | Strategy::QW | Strategy::QWD => raw_grads,
            Strategy::ULq => ReduceConfig::ulq(g),
            Strategy::TLq => ReduceConfig::tlq(g),
            Strategy::TLqHs | Strategy::Sdp4Bit => ReduceConfig::tlq_hs(g, params.hadamard_block)?,
        }
        .with_scale_bits(params.scale_bits);
        let quantized = (Bits::Four, params.weight_group);
        let weights = match self {
            Strategy::QW => WeightSync::Quantized {
                bits: quantized.0,
                group_size: quantized.1,
            },
            Strategy::QWD | Strategy::Sdp4Bit => WeightSync::Diff {
                bits: quantized.0,
                group_size: quantized.1,
            },
            _ => WeightSync::Lossless {
                wire_bits: params.weight_wire_bits,
            },
        };
        let cfg = ShardedConfig {
            reduce,
            weights,
            optimizer: params.optimizer,
            eta: params.eta,
            weight_scale_bits: params.scale_bits,
            monitor_bits: Bits::Four,
            monitor_group: params.weight_group,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or(Error::Config("unknown strategy"))
    }
}

/// Knobs shared by every preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyParams {
    pub eta: f32,
    pub optimizer: Optimizer,
    pub grad_group: usize,
    pub weight_group: usize,
    pub hadamard_block: usize,
    pub scale_bits: u32,
    pub grad_wire_bits: u32,
    pub weight_wire_bits: u32,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self {
            eta: 0.05,
            optimizer: Optimizer::Sgd,
            grad_group: 128,
            weight_group: 2048,
            hadamard_block: 32,
            scale_bits: 32,
            grad_wire_bits: 32,
            weight_wire_bits: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `task.workers` is the number of ranks.
    pub task: TaskSpec,
    pub per_node: usize,
    pub iters: usize,
    /// Held-out loss is evaluated every `eval_interval` iterations and after
    /// the last one.
    pub eval_interval: usize,
    pub sharded: ShardedConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based iteration number.
    pub iter: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub grad_norm_sq: f64,
    pub relq_diff: f64,
    pub relq_weight: f64,
    pub e_norm: f64,
    pub intra_bytes: u64,
    pub inter_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    /// Held-out loss at the final model weights; NaN when diverged.
    pub final_val_loss: f64,
    /// Full training objective at the final model weights; NaN when diverged.
    pub final_train_loss: f64,
    /// Iteration (0-based) at which the run was stopped for divergence.
    pub diverged_at: Option<u64>,
    /// Totals over the run.
    pub ledger: ByteLedger,
}

const DIVERGENCE_LOSS: f64 = 1e6;

/// Runs `iters` sharded iterations. A single rank uses the same path on a
/// one-worker topology. Divergence (loss above 1e6 or non-finite) ends the
/// run with a flagged trace rather than an error.
pub fn train_run<E: Executor>(config: &TrainConfig, exec: &E) -> Result<TrainTrace> {
    if config.eval_interval == 0 {
        return Err(Error::Config("eval interval must be at least 1"));
    }
    let topo = ClusterTopology::new(config.task.workers, config.per_node)?;
    let task = Task::new(config.task.clone())?;
    let mut state = ShardedState::new(&topo, &task, &config.sharded)?;
    let mut rows = Vec::with_capacity(config.iters);
    let mut ledger = ByteLedger::new();
    let mut diverged_at = None;
    for i in 0..config.iters {
        let m = match sharded_iteration(&topo, &mut state, &task, &config.sharded, exec) {
            Ok(m) => m,
            Err(Error::Diverged { iter }) => {
                diverged_at = Some(iter);
                break;
            }
            Err(e) => return Err(e),
        };
        ledger.absorb(&m.ledger);
        let last = i + 1 == config.iters;
        let val_loss = ((i + 1) % config.eval_interval == 0 || last)
            .then(|| task.val_loss(state.model_weights()));
        let bad = |v: f64| !v.is_finite() || v > DIVERGENCE_LOSS;
        let diverged = bad(m.train_loss) || val_loss.is_some_and(bad);
        rows.push(TraceRow {
            iter: i as u64 + 1,
            train_loss: m.train_loss,
            val_loss,
            grad_norm_sq: m.grad_norm_sq,
            relq_diff: m.relq_diff,
            relq_weight: m.relq_weight,
            e_norm: m.e_norm,
            intra_bytes: m.ledger.intra_bytes,
            inter_bytes: m.ledger.inter_bytes,
        });
        if diverged {
            diverged_at = Some(i as u64);
            break;
        }
    }
    let (final_val_loss, final_train_loss) = match diverged_at {
        Some(_) => (f64::NAN, f64::NAN),
        None => (
            task.val_loss(state.model_weights()),
            task.train_loss(state.model_weights()),
        ),
    };
    Ok(TrainTrace {
        rows,
        final_val_loss,
        final_train_loss,
        diverged_at,
        ledger,
    })
}
