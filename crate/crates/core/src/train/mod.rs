//! Compressed SGD: the single-worker step with gradient and weight-difference
//! compressors, the sharded data-parallel iteration, and full training runs
//! with per-iteration traces.

mod run;
mod sharded;
mod step;
mod task;

pub use run::{train_run, Strategy, StrategyParams, TraceRow, TrainConfig, TrainTrace};
pub use sharded::{
    sharded_iteration, IterationMetrics, Optimizer, ShardedConfig, ShardedState, WeightSync,
};
pub use step::{
    run_counterexample, sgd_sdp4bit_step, CounterexampleMode, CounterexampleRun, TrainState,
};
pub use task::{Task, TaskKind, TaskSpec};
