use alloc::vec::Vec;

use super::task::{Task, TaskKind, TaskSpec};
use crate::compressors::Compressor;
use crate::error::{Error, Result};
use crate::rng::{stream, SeededRng};
use crate::tensor::FlatTensor;

/// Main weights `w_main`, the replicated model weights `w_model` that
/// gradients are evaluated at, the step counter and the learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub w_main: FlatTensor,
    pub w_model: FlatTensor,
    pub t: u64,
    pub eta: f32,
}

impl TrainState {
    /// `w_model` starts equal to `w_main`.
    pub fn new(w0: FlatTensor, eta: f32) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config("learning rate must be positive and finite"));
        }
        Ok(Self {
            w_model: w0.clone(),
            w_main: w0,
            t: 0,
            eta,
        })
    }

    /// `‖w_main − w_model‖₂`.
    pub fn error_norm(&self) -> f64 {
        self.w_main.distance(&self.w_model)
    }
}

/// One step of SGD with a gradient compressor and a weight-difference
/// compressor. The minibatch is worker 0's batch for step `state.t`.
///
/// An identity `wdiff_c` copies `w_main` into `w_model` instead of adding the
/// difference back, since `a + (b − a)` need not equal `b` in floating point.
pub fn sgd_sdp4bit_step(
    state: &mut TrainState,
    task: &Task,
    grad_c: &Compressor,
    wdiff_c: &Compressor,
    rng: &mut SeededRng,
) -> Result<()> {
    let d = task.dim();
    if state.w_main.len() != d || state.w_model.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: state.w_main.len(),
        });
    }
    let mut g = alloc::vec![0.0f32; d];
    task.local_grad(&state.w_model, 0, state.t, &mut g);
    let g = grad_c.compress(&g, rng)?;
    let eta = state.eta;
    let w_main: Vec<f32> = state
        .w_main
        .iter()
        .zip(g.iter())
        .map(|(w, g)| w - eta * g)
        .collect();
    state.w_main = FlatTensor::new(w_main).map_err(|_| Error::Diverged { iter: state.t })?;
    if wdiff_c.is_identity() {
        state.w_model = state.w_main.clone();
    } else {
        let diff: Vec<f32> = state
            .w_main
            .iter()
            .zip(state.w_model.iter())
            .map(|(a, b)| a - b)
            .collect();
        let diff = wdiff_c.compress(&diff, rng)?;
        let w_model = state
            .w_model
            .iter()
            .zip(diff.iter())
            .map(|(m, d)| m + d)
            .collect();
        state.w_model = FlatTensor::new(w_model)?;
    }
    state.t += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterexampleMode {
    /// Plain SGD.
    None,
    /// SGD followed by ternary quantization of the weights themselves.
    QW,
    /// Compressed SGD with a ternary weight-difference compressor.
    QWD,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleRun {
    pub mode: CounterexampleMode,
    /// Model weights after each step.
    pub trajectory: Vec<[f32; 2]>,
    pub w_main: [f32; 2],
    pub w_model: [f32; 2],
    /// True when the model weights never left the initial point.
    pub stuck: bool,
}

/// Runs `f(w) = ‖w‖²` from `(1, −1)` for `iters` steps.
pub fn run_counterexample(
    mode: CounterexampleMode,
    eta: f32,
    iters: usize,
    seed: u64,
) -> Result<CounterexampleRun> {
    if !(eta > 0.0 && eta < 0.125) {
        return Err(Error::Config("counterexample needs 0 < eta < 0.125"));
    }
    if iters == 0 {
        return Err(Error::Config("counterexample needs at least one step"));
    }
    let task = Task::new(TaskSpec::counterexample(seed))?;
    debug_assert_eq!(task.spec().kind, TaskKind::CounterexampleLs);
    let w0 = FlatTensor::new(task.initial_weights())?;
    let mut state = TrainState::new(w0.clone(), eta)?;
    let mut rng = SeededRng::new(seed).derive(stream::WDIFF_COMPRESS);
    let mut trajectory = Vec::with_capacity(iters);
    for _ in 0..iters {
        match mode {
            CounterexampleMode::None => sgd_sdp4bit_step(
                &mut state,
                &task,
                &Compressor::Identity,
                &Compressor::Identity,
                &mut rng,
            )?,
            CounterexampleMode::QWD => sgd_sdp4bit_step(
                &mut state,
                &task,
                &Compressor::Identity,
                &Compressor::TernaryNearest,
                &mut rng,
            )?,
            CounterexampleMode::QW => {
                sgd_sdp4bit_step(
                    &mut state,
                    &task,
                    &Compressor::Identity,
                    &Compressor::Identity,
                    &mut rng,
                )?;
                state.w_main = Compressor::TernaryNearest.compress(&state.w_main, &mut rng)?;
                state.w_model = state.w_main.clone();
            }
        }
        trajectory.push([state.w_model[0], state.w_model[1]]);
    }
    let stuck = trajectory.iter().all(|w| w[..] == w0[..]);
    Ok(CounterexampleRun {
        mode,
        trajectory,
        w_main: [state.w_main[0], state.w_main[1]],
        w_model: [state.w_model[0], state.w_model[1]],
        stuck,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counterexample_task() -> Task {
        Task::new(TaskSpec::counterexample(0)).unwrap()
    }

    /// First step index at which the counterexample gradient hits coordinate 0.
    fn first_branch0(task: &Task) -> u64 {
        (0..)
            .find(|&t| {
                let mut g = [0.0f32; 2];
                task.local_grad(&[1.0, -1.0], 0, t, &mut g);
                g[1] == 0.0
            })
            .unwrap()
    }

    #[test]
    fn ternary_wdiff_hand_example() {
        let task = counterexample_task();
        let t = first_branch0(&task);
        let mut state =
            TrainState::new(FlatTensor::new(alloc::vec![1.0, -1.0]).unwrap(), 0.1).unwrap();
        state.t = t;
        let mut rng = SeededRng::new(0);
        sgd_sdp4bit_step(
            &mut state,
            &task,
            &Compressor::Identity,
            &Compressor::TernaryNearest,
            &mut rng,
        )
        .unwrap();
        assert_eq!(state.w_main[..], [0.6, -1.0]);
        assert_eq!(state.w_model[..], [0.6, -1.0]);
    }

    #[test]
    fn identity_compressors_are_plain_sgd() {
        let task = Task::new(TaskSpec::linear_regression(1, 5)).unwrap();
        let w0 = task.initial_weights();
        let mut state = TrainState::new(FlatTensor::new(w0.clone()).unwrap(), 0.01).unwrap();
        let mut rng = SeededRng::new(1);
        let mut reference = w0;
        let mut g = alloc::vec![0.0f32; task.dim()];
        for t in 0..50 {
            task.local_grad(&reference, 0, t, &mut g);
            for (w, g) in reference.iter_mut().zip(&g) {
                *w -= 0.01 * g;
            }
            sgd_sdp4bit_step(
                &mut state,
                &task,
                &Compressor::Identity,
                &Compressor::Identity,
                &mut rng,
            )
            .unwrap();
            assert_eq!(state.w_main[..], reference[..]);
            assert_eq!(state.error_norm(), 0.0);
        }
    }

    #[test]
    fn counterexample_modes() {
        let qw = run_counterexample(CounterexampleMode::QW, 0.1, 1000, 7).unwrap();
        assert!(qw.stuck);
        assert_eq!(qw.w_model, [1.0, -1.0]);
        let none = run_counterexample(CounterexampleMode::None, 0.1, 1000, 7).unwrap();
        assert!(libm::hypotf(none.w_model[0], none.w_model[1]) < 1e-3);
        let qwd = run_counterexample(CounterexampleMode::QWD, 0.1, 1000, 7).unwrap();
        assert!(libm::hypotf(qwd.w_model[0], qwd.w_model[1]) < 1e-2);
        assert!(!qwd.stuck);
    }

    #[test]
    fn counterexample_rejects_large_eta() {
        assert!(run_counterexample(CounterexampleMode::None, 0.125, 10, 0).is_err());
        assert!(run_counterexample(CounterexampleMode::None, 0.1, 0, 0).is_err());
    }
}
