//! Prediction-inverse event stream, continuous-time recurrent intensity
//! model, Monte Carlo integral estimators and the stopping policy.
//!
//! The detector's label flips ("prediction inverses") form an event stream
//! in continuous time. A continuous-time LSTM consumes the cumulative flip
//! count at each interval timestamp; between events its cell decays
//! exponentially from an event-indexed start value toward a learned
//! asymptotic target, so the flip intensity can be read at any time t. The
//! expected number of future flips is the integral of that intensity, and
//! detection stops at the first interval where the (rounded) expectation
//! hits zero.

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HeardError, Result};
use crate::math::{sigmoid, softplus, softplus_scaled, softplus_scaled_dbeta, softplus_scaled_dx};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_STOP_THRESHOLD: f64 = 0.5;
pub const DEFAULT_HORIZON_MULTIPLIER: f64 = 2.0;

/// One observation of the cumulative prediction-inverse count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiEvent {
    pub count: u32,
    pub t: f64,
}

/// Cumulative prediction-inverse counts with their timestamps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PiHistory {
    pub events: Vec<PiEvent>,
}

impl PiHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record the observation at time `t`: the count increments when the
    /// current prediction differs from the previous one. The first
    /// observation always records a count of zero.
    pub fn update(&mut self, y_prev: u8, y_cur: u8, t: f64) -> Result<u32> {
        let count = match self.events.last() {
            None => 0,
            Some(last) => {
                if t < last.t {
                    return Err(HeardError::Validation(format!(
                        "event time regressed from {} to {}",
                        last.t, t
                    )));
                }
                last.count + u32::from(y_prev != y_cur)
            }
        };
        self.events.push(PiEvent { count, t });
        Ok(count)
    }

    /// Build the whole history from a prediction label sequence.
    pub fn from_labels(labels: &[u8], times: &[f64]) -> Result<PiHistory> {
        let mut history = PiHistory::new();
        for (i, (&y, &t)) in labels.iter().zip(times).enumerate() {
            let y_prev = if i == 0 { y } else { labels[i - 1] };
            history.update(y_prev, y, t)?;
        }
        Ok(history)
    }
}

/// Weights of the continuous-time LSTM and its two read-out heads.
///
/// The seven stacked gate blocks are ordered: input, forget, candidate,
/// output, target-input, target-forget, decay. The intensity scale is kept
/// as `log_beta` so that beta stays positive under gradient updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityParams {
    pub emb_w: Array1<f64>,
    pub emb_b: Array1<f64>,
    pub w_gates: Array2<f64>,
    pub b_gates: Array1<f64>,
    pub intensity_w: Array1<f64>,
    pub log_beta: f64,
    pub next_w: Array2<f64>,
    pub next_b: Array1<f64>,
    pub hidden: usize,
}

impl StabilityParams {
    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn initial_state(&self) -> StabilityState {
        StabilityState {
            cell: Array1::zeros(self.hidden),
            cell_target: Array1::zeros(self.hidden),
            decay_rate: Array1::ones(self.hidden),
            output_gate: Array1::zeros(self.hidden),
            t_last: 0.0,
        }
    }
}

/// Draw stability weights from uniform(-1/sqrt(hidden), 1/sqrt(hidden));
/// beta starts at 1.
pub fn init_stability(hidden: usize, seed: u64) -> Result<StabilityParams> {
    if hidden == 0 {
        return Err(HeardError::Validation("stability hidden size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (hidden as f64).sqrt();
    fn vec(n: usize, rng: &mut ChaCha8Rng, bound: f64) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| rng.gen_range(-bound..bound))
    }
    let emb_w = vec(hidden, &mut rng, bound);
    let emb_b = vec(hidden, &mut rng, bound);
    let w_gates =
        Array2::from_shape_fn((7 * hidden, 2 * hidden), |_| rng.gen_range(-bound..bound));
    let b_gates = vec(7 * hidden, &mut rng, bound);
    let intensity_w = vec(hidden, &mut rng, bound);
    let next_w = Array2::from_shape_fn((2, hidden), |_| rng.gen_range(-bound..bound));
    let next_b = vec(2, &mut rng, bound);
    Ok(StabilityParams {
        emb_w,
        emb_b,
        w_gates,
        b_gates,
        intensity_w,
        log_beta: 0.0,
        next_w,
        next_b,
        hidden,
    })
}

/// Continuous-time recurrent state between two events.
///
/// For t >= t_last the cell interpolates as
/// `cell_target + (cell - cell_target) * exp(-decay_rate * (t - t_last))`,
/// so it converges to `cell_target` as t grows.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityState {
    pub cell: Array1<f64>,
    pub cell_target: Array1<f64>,
    pub decay_rate: Array1<f64>,
    pub output_gate: Array1<f64>,
    pub t_last: f64,
}

impl StabilityState {
    /// Cell decayed to time `t`.
    pub fn cell_at(&self, t: f64) -> Array1<f64> {
        let dt = t - self.t_last;
        let decay = self.decay_rate.mapv(|d| (-d * dt).exp());
        &self.cell_target + &((&self.cell - &self.cell_target) * decay)
    }

    /// Hidden read-out at time `t`.
    pub fn hidden_at(&self, t: f64) -> Array1<f64> {
        &self.output_gate * &self.cell_at(t).mapv(f64::tanh)
    }
}

/// Stopping decision at one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub stop: bool,
    pub expected_future_inverses: f64,
    pub step: usize,
}

/// True iff the expected number of future prediction inverses rounds to
/// zero, i.e. the predicted final count equals the current count.
pub fn should_stop(expected_future_inverses: f64, stop_threshold: f64) -> bool {
    expected_future_inverses < stop_threshold
}

/// Everything the backward pass needs about one event update.
pub struct EventCache {
    pub count: f64,
    pub dt: f64,
    pub decay: Array1<f64>,
    pub c_decayed: Array1<f64>,
    pub tanh_c_decayed: Array1<f64>,
    pub h_in: Array1<f64>,
    pub x: Array1<f64>,
    pub gate_i: Array1<f64>,
    pub gate_f: Array1<f64>,
    pub gate_z: Array1<f64>,
    pub gate_o: Array1<f64>,
    pub gate_ti: Array1<f64>,
    pub gate_tf: Array1<f64>,
    pub decay_pre: Array1<f64>,
    pub prev_cell: Array1<f64>,
    pub prev_cell_target: Array1<f64>,
    pub prev_decay_rate: Array1<f64>,
    pub prev_output_gate: Array1<f64>,
    pub tanh_cell: Array1<f64>,
    pub h_event: Array1<f64>,
}

fn ctlstm_step_inner(
    params: &StabilityParams,
    state: &StabilityState,
    count: u32,
    t: f64,
) -> Result<(StabilityState, EventCache)> {
    if t < state.t_last {
        return Err(HeardError::Validation(format!(
            "event time regressed from {} to {}",
            state.t_last, t
        )));
    }
    let hidden = params.hidden;
    let dt = t - state.t_last;

    // Decay the previous cell to the event time and read the hidden state.
    let decay = state.decay_rate.mapv(|d| (-d * dt).exp());
    let c_decayed = &state.cell_target + &((&state.cell - &state.cell_target) * &decay);
    let tanh_c_decayed = c_decayed.mapv(f64::tanh);
    let h_in = &state.output_gate * &tanh_c_decayed;

    // Embed the scalar count and run the seven-gate update.
    let count_f = f64::from(count);
    let x = &params.emb_w * count_f + &params.emb_b;
    let joint = concatenate![Axis(0), x.view(), h_in.view()];
    let pre = params.w_gates.dot(&joint) + &params.b_gates;
    let slice = |k: usize| pre.slice(ndarray::s![k * hidden..(k + 1) * hidden]);
    let gate_i = slice(0).mapv(sigmoid);
    let gate_f = slice(1).mapv(sigmoid);
    let gate_z = slice(2).mapv(f64::tanh);
    let gate_o = slice(3).mapv(sigmoid);
    let gate_ti = slice(4).mapv(sigmoid);
    let gate_tf = slice(5).mapv(sigmoid);
    let decay_pre = slice(6).to_owned();
    let decay_rate = decay_pre.mapv(softplus);

    let cell = &gate_f * &c_decayed + &gate_i * &gate_z;
    let cell_target = &gate_tf * &state.cell_target + &gate_ti * &gate_z;
    let tanh_cell = cell.mapv(f64::tanh);
    let h_event = &gate_o * &tanh_cell;

    let next = StabilityState {
        cell: cell.clone(),
        cell_target,
        decay_rate,
        output_gate: gate_o.clone(),
        t_last: t,
    };
    let cache = EventCache {
        count: count_f,
        dt,
        decay,
        c_decayed,
        tanh_c_decayed,
        h_in,
        x,
        gate_i,
        gate_f,
        gate_z,
        gate_o,
        gate_ti,
        gate_tf,
        decay_pre,
        prev_cell: state.cell.clone(),
        prev_cell_target: state.cell_target.clone(),
        prev_decay_rate: state.decay_rate.clone(),
        prev_output_gate: state.output_gate.clone(),
        tanh_cell,
        h_event,
    };
    Ok((next, cache))
}

/// Consume one observation `(count, t)`: decay the cell to `t`, then update
/// the event-indexed start value, asymptotic target, decay rate and output
/// gate from the embedded count and the decayed hidden state.
pub fn ctlstm_step(
    params: &StabilityParams,
    state: &StabilityState,
    count: u32,
    t: f64,
) -> Result<StabilityState> {
    ctlstm_step_inner(params, state, count, t).map(|(next, _)| next)
}

/// Like [`ctlstm_step`] but keeps the activations for backprop.
pub fn ctlstm_step_cached(
    params: &StabilityParams,
    state: &StabilityState,
    count: u32,
    t: f64,
) -> Result<(StabilityState, EventCache)> {
    ctlstm_step_inner(params, state, count, t)
}

/// Instantaneous prediction-inverse intensity at time `t >= t_last`.
pub fn intensity_at(params: &StabilityParams, state: &StabilityState, t: f64) -> Result<f64> {
    if t < state.t_last {
        return Err(HeardError::Validation(format!(
            "intensity queried at {} before state time {}",
            t, state.t_last
        )));
    }
    let s = params.intensity_w.dot(&state.hidden_at(t));
    Ok(softplus_scaled(s, params.beta()))
}

/// Uniform sample points in `(a, b]`, deterministic given the seed.
pub fn mc_samples(a: f64, b: f64, n_samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples).map(|_| b - rng.gen::<f64>() * (b - a)).collect()
}

/// One uniform draw per equal-width stratum of `(a, b]`, in ascending
/// order. Serves as both the Monte Carlo sample set and the accumulation
/// grid of the next-event-time estimator.
pub fn mc_grid(a: f64, b: f64, n_samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (b - a) / n_samples as f64;
    (0..n_samples)
        .map(|j| {
            let u = a + (j as f64 + 1.0 - rng.gen::<f64>()) * width;
            u.min(b)
        })
        .collect()
}

/// Monte Carlo estimate of the integral of `f` over `(a, b]`.
pub fn mc_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, n_samples: usize, seed: u64) -> f64 {
    let samples = mc_samples(a, b, n_samples, seed);
    let mean = samples.iter().map(|&u| f(u)).sum::<f64>() / n_samples as f64;
    (b - a) * mean
}

/// Expected number of prediction inverses in `(t_i, horizon]`: the Monte
/// Carlo estimate of the intensity integral, with the sample points treated
/// as fixed so gradients flow only through the intensity evaluations.
pub fn expected_future_inverses(
    params: &StabilityParams,
    state: &StabilityState,
    t_i: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    expected_future_inverses_cached(params, state, t_i, horizon, n_samples, seed)
        .map(|(value, _)| value)
}

pub fn expected_future_inverses_cached(
    params: &StabilityParams,
    state: &StabilityState,
    t_i: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if !(horizon > t_i) {
        return Err(HeardError::Validation("horizon must exceed the query time".into()));
    }
    if n_samples == 0 {
        return Err(HeardError::Validation("need at least one Monte Carlo sample".into()));
    }
    let samples = mc_samples(t_i, horizon, n_samples, seed);
    let mut sum = 0.0;
    for &u in &samples {
        sum += intensity_at(params, state, u)?;
    }
    Ok(((horizon - t_i) * (sum / n_samples as f64), samples))
}

/// Probability pair for "next observation carries a flip", read from the
/// hidden state at `t` through the second fully-connected head.
pub fn next_inverse_prob(params: &StabilityParams, state: &StabilityState, t: f64) -> [f64; 2] {
    let h = state.hidden_at(t);
    let z = params.next_w.dot(&h) + &params.next_b;
    [sigmoid(z[0]), sigmoid(z[1])]
}

/// Cached quantities of one next-event-time estimate.
pub struct TimeEstimate {
    /// Sorted sample points in (t_i, horizon].
    pub grid: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub lambda_start: f64,
    /// Trapezoid prefix integrals of the intensity up to each grid point.
    pub prefix: Vec<f64>,
    pub raw: f64,
    pub value: f64,
    pub clamped: bool,
    pub t_i: f64,
    pub weight: f64,
}

/// Minimum-Bayes-risk estimate of the next event time: the mean of the
/// density `intensity(t) * exp(-integral of intensity from t_i to t)` over
/// `(t_i, horizon]`. One point is sampled per stratum of the window; the
/// sorted points double as the trapezoid accumulation grid for the inner
/// integral. The result is clamped to `(t_i, horizon]`.
pub fn predict_next_time(
    params: &StabilityParams,
    state: &StabilityState,
    t_i: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    predict_next_time_cached(params, state, t_i, horizon, n_samples, seed).map(|e| e.value)
}

pub fn predict_next_time_cached(
    params: &StabilityParams,
    state: &StabilityState,
    t_i: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<TimeEstimate> {
    if !(horizon > t_i) {
        return Err(HeardError::Validation("horizon must exceed the query time".into()));
    }
    if n_samples == 0 {
        return Err(HeardError::Validation("need at least one Monte Carlo sample".into()));
    }
    let grid = mc_grid(t_i, horizon, n_samples, seed);
    let lambda_start = intensity_at(params, state, t_i)?;
    let mut lambdas = Vec::with_capacity(n_samples);
    for &u in &grid {
        lambdas.push(intensity_at(params, state, u)?);
    }
    let mut prefix = Vec::with_capacity(n_samples);
    let mut acc = 0.0;
    let mut prev_t = t_i;
    let mut prev_l = lambda_start;
    for (&u, &l) in grid.iter().zip(&lambdas) {
        acc += 0.5 * (prev_l + l) * (u - prev_t);
        prefix.push(acc);
        prev_t = u;
        prev_l = l;
    }
    let weight = (horizon - t_i) / n_samples as f64;
    let raw: f64 = grid
        .iter()
        .zip(&lambdas)
        .zip(&prefix)
        .map(|((&u, &l), &cum)| l * (-cum).exp() * u * weight)
        .sum();
    let (value, clamped) = if raw <= t_i {
        (t_i + f64::EPSILON * t_i.abs().max(1.0), true)
    } else if raw > horizon {
        (horizon, true)
    } else {
        (raw, false)
    };
    Ok(TimeEstimate {
        grid,
        lambdas,
        lambda_start,
        prefix,
        raw,
        value,
        clamped,
        t_i,
        weight,
    })
}

// ---------------------------------------------------------------------------
// Backward passes
// ---------------------------------------------------------------------------

/// Gradient accumulator mirroring [`StabilityParams`].
#[derive(Debug, Clone)]
pub struct StabilityGrads {
    pub emb_w: Array1<f64>,
    pub emb_b: Array1<f64>,
    pub w_gates: Array2<f64>,
    pub b_gates: Array1<f64>,
    pub intensity_w: Array1<f64>,
    pub log_beta: f64,
    pub next_w: Array2<f64>,
    pub next_b: Array1<f64>,
}

impl StabilityGrads {
    pub fn zeros(params: &StabilityParams) -> Self {
        Self {
            emb_w: Array1::zeros(params.emb_w.len()),
            emb_b: Array1::zeros(params.emb_b.len()),
            w_gates: Array2::zeros(params.w_gates.raw_dim()),
            b_gates: Array1::zeros(params.b_gates.len()),
            intensity_w: Array1::zeros(params.intensity_w.len()),
            log_beta: 0.0,
            next_w: Array2::zeros(params.next_w.raw_dim()),
            next_b: Array1::zeros(params.next_b.len()),
        }
    }
}

/// Loss gradient flowing into one event's state outputs.
#[derive(Debug, Clone)]
pub struct StateGrad {
    pub cell: Array1<f64>,
    pub cell_target: Array1<f64>,
    pub decay_rate: Array1<f64>,
    pub output_gate: Array1<f64>,
}

impl StateGrad {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            cell: Array1::zeros(hidden),
            cell_target: Array1::zeros(hidden),
            decay_rate: Array1::zeros(hidden),
            output_gate: Array1::zeros(hidden),
        }
    }
}

/// Backpropagate `d_lambda` through one intensity evaluation at time `u`
/// into the state outputs that produced it and into the intensity head.
pub fn backprop_intensity(
    params: &StabilityParams,
    state: &StabilityState,
    u: f64,
    d_lambda: f64,
    state_grad: &mut StateGrad,
    grads: &mut StabilityGrads,
) {
    let dt = u - state.t_last;
    let decay = state.decay_rate.mapv(|d| (-d * dt).exp());
    let c_u = &state.cell_target + &((&state.cell - &state.cell_target) * &decay);
    let tanh_c = c_u.mapv(f64::tanh);
    let h = &state.output_gate * &tanh_c;
    let s = params.intensity_w.dot(&h);
    let beta = params.beta();

    let ds = d_lambda * softplus_scaled_dx(s, beta);
    grads.log_beta += d_lambda * softplus_scaled_dbeta(s, beta) * beta;
    grads.intensity_w = &grads.intensity_w + &(&h * ds);
    let dh = params.intensity_w.mapv(|w| w * ds);

    state_grad.output_gate += &(&dh * &tanh_c);
    let dc_u = &dh * &state.output_gate * &tanh_c.mapv(|v| 1.0 - v * v);
    state_grad.cell += &(&dc_u * &decay);
    state_grad.cell_target += &(&dc_u * &decay.mapv(|d| 1.0 - d));
    state_grad.decay_rate +=
        &(&dc_u * &(&state.cell - &state.cell_target) * &decay.mapv(|d| -dt * d));
}

/// Backpropagate `d_value` through a Monte Carlo intensity integral.
pub fn backprop_integral(
    params: &StabilityParams,
    state: &StabilityState,
    samples: &[f64],
    width: f64,
    d_value: f64,
    state_grad: &mut StateGrad,
    grads: &mut StabilityGrads,
) {
    let per_sample = d_value * width / samples.len() as f64;
    for &u in samples {
        backprop_intensity(params, state, u, per_sample, state_grad, grads);
    }
}

/// Backpropagate `d_value` through a next-event-time estimate. Clamped
/// estimates carry no gradient.
pub fn backprop_time_estimate(
    params: &StabilityParams,
    state: &StabilityState,
    estimate: &TimeEstimate,
    d_value: f64,
    state_grad: &mut StateGrad,
    grads: &mut StabilityGrads,
) {
    if estimate.clamped || d_value == 0.0 {
        return;
    }
    let n = estimate.grid.len();
    // Suffix sums of the integrand terms: suffix[m] = sum over k >= m of
    // lambda_k * exp(-prefix_k) * u_k * weight.
    let mut suffix = vec![0.0; n + 1];
    for m in (0..n).rev() {
        let term =
            estimate.lambdas[m] * (-estimate.prefix[m]).exp() * estimate.grid[m] * estimate.weight;
        suffix[m] = suffix[m + 1] + term;
    }
    for m in 0..n {
        let u_prev = if m == 0 { estimate.t_i } else { estimate.grid[m - 1] };
        let direct = estimate.weight * (-estimate.prefix[m]).exp() * estimate.grid[m];
        let mut via_prefix = 0.5 * (estimate.grid[m] - u_prev) * suffix[m];
        if m + 1 < n {
            via_prefix += 0.5 * (estimate.grid[m + 1] - estimate.grid[m]) * suffix[m + 1];
        }
        let d_lambda = d_value * (direct - via_prefix);
        backprop_intensity(params, state, estimate.grid[m], d_lambda, state_grad, grads);
    }
    if n > 0 {
        let d_lambda_start = d_value * (-0.5 * (estimate.grid[0] - estimate.t_i) * suffix[0]);
        backprop_intensity(params, state, estimate.t_i, d_lambda_start, state_grad, grads);
    }
}

/// Backpropagate the flip-head cross entropy gradient (on the logits) at
/// one event, adding the hidden-state contribution to `d_h_event`.
pub fn backprop_next_head(
    params: &StabilityParams,
    h_event: &Array1<f64>,
    d_logits: [f64; 2],
    d_h_event: &mut Array1<f64>,
    grads: &mut StabilityGrads,
) {
    let dz = Array1::from(vec![d_logits[0], d_logits[1]]);
    grads.next_w = &grads.next_w
        + &dz
            .view()
            .insert_axis(Axis(1))
            .dot(&h_event.view().insert_axis(Axis(0)));
    grads.next_b += &dz;
    *d_h_event += &params.next_w.t().dot(&dz);
}

/// Backpropagate one event update. `state_grad` holds the loss gradient on
/// this event's outputs (including any window contributions accumulated
/// after it); `d_h_event` is the gradient on the post-event hidden read.
/// Returns the gradient on the previous event's outputs.
pub fn backward_event(
    params: &StabilityParams,
    cache: &EventCache,
    state_grad: &StateGrad,
    d_h_event: &Array1<f64>,
    grads: &mut StabilityGrads,
) -> StateGrad {
    let hidden = params.hidden;

    let mut d_o = state_grad.output_gate.clone();
    let mut d_cell = state_grad.cell.clone();
    d_o += &(d_h_event * &cache.tanh_cell);
    d_cell += &(d_h_event * &cache.gate_o * &cache.tanh_cell.mapv(|v| 1.0 - v * v));

    let d_cell_target = state_grad.cell_target.clone();
    let d_decay_rate = state_grad.decay_rate.clone();

    let mut d_c_decayed = &d_cell * &cache.gate_f;
    let d_gate_f = &d_cell * &cache.c_decayed;
    let d_gate_i = &d_cell * &cache.gate_z;
    let d_gate_z = &d_cell * &cache.gate_i + &d_cell_target * &cache.gate_ti;
    let d_gate_ti = &d_cell_target * &cache.gate_z;
    let d_gate_tf = &d_cell_target * &cache.prev_cell_target;
    let mut d_prev_cell_target = &d_cell_target * &cache.gate_tf;

    let mut d_pre = Array1::zeros(7 * hidden);
    for j in 0..hidden {
        d_pre[j] = d_gate_i[j] * cache.gate_i[j] * (1.0 - cache.gate_i[j]);
        d_pre[hidden + j] = d_gate_f[j] * cache.gate_f[j] * (1.0 - cache.gate_f[j]);
        d_pre[2 * hidden + j] = d_gate_z[j] * (1.0 - cache.gate_z[j] * cache.gate_z[j]);
        d_pre[3 * hidden + j] = d_o[j] * cache.gate_o[j] * (1.0 - cache.gate_o[j]);
        d_pre[4 * hidden + j] = d_gate_ti[j] * cache.gate_ti[j] * (1.0 - cache.gate_ti[j]);
        d_pre[5 * hidden + j] = d_gate_tf[j] * cache.gate_tf[j] * (1.0 - cache.gate_tf[j]);
        d_pre[6 * hidden + j] = d_decay_rate[j] * sigmoid(cache.decay_pre[j]);
    }

    let joint = concatenate![Axis(0), cache.x.view(), cache.h_in.view()];
    grads.w_gates = &grads.w_gates
        + &d_pre
            .view()
            .insert_axis(Axis(1))
            .dot(&joint.view().insert_axis(Axis(0)));
    grads.b_gates += &d_pre;

    let d_joint = params.w_gates.t().dot(&d_pre);
    let d_x = d_joint.slice(ndarray::s![..hidden]).to_owned();
    let d_h_in = d_joint.slice(ndarray::s![hidden..]).to_owned();
    grads.emb_w = &grads.emb_w + &(&d_x * cache.count);
    grads.emb_b += &d_x;

    let mut d_prev_output_gate = &d_h_in * &cache.tanh_c_decayed;
    d_c_decayed += &(&d_h_in
        * &cache.prev_output_gate
        * &cache.tanh_c_decayed.mapv(|v| 1.0 - v * v));

    let d_prev_cell = &d_c_decayed * &cache.decay;
    d_prev_cell_target += &(&d_c_decayed * &cache.decay.mapv(|d| 1.0 - d));
    let d_prev_decay_rate = &d_c_decayed
        * &(&cache.prev_cell - &cache.prev_cell_target)
        * &cache.decay.mapv(|d| -cache.dt * d);

    // Reuse the buffers to return the previous event's gradient.
    d_prev_output_gate = d_prev_output_gate.to_owned();
    StateGrad {
        cell: d_prev_cell,
        cell_target: d_prev_cell_target,
        decay_rate: d_prev_decay_rate,
        output_gate: d_prev_output_gate,
    }
}

// ---------------------------------------------------------------------------
// Classical Hawkes simulation oracle
// ---------------------------------------------------------------------------

/// Simulate a classical self-exciting point process with exponential kernel
/// `alpha * exp(-decay * u)` on `[0, t_max]` by Ogata thinning. The
/// branching ratio `alpha / decay` must stay below one.
pub fn simulate_hawkes(
    mu: f64,
    alpha: f64,
    decay: f64,
    t_max: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if mu < 0.0 || alpha < 0.0 || !(decay > 0.0) || !(t_max >= 0.0) {
        return Err(HeardError::Validation("invalid point process parameters".into()));
    }
    if alpha > 0.0 && alpha / decay >= 1.0 {
        return Err(HeardError::Validation(format!(
            "unstable process: branching ratio {} >= 1",
            alpha / decay
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut excitation = 0.0;
    loop {
        // Between events the intensity only decays, so its value just after
        // the current time bounds it from above until the next event.
        let bound = mu + excitation;
        if bound <= 0.0 {
            break;
        }
        let wait = -(1.0 - rng.gen::<f64>()).ln() / bound;
        let t_new = t + wait;
        if t_new > t_max {
            break;
        }
        excitation *= (-decay * (t_new - t)).exp();
        t = t_new;
        if rng.gen::<f64>() * bound <= mu + excitation {
            events.push(t);
            excitation += alpha;
        }
    }
    Ok(events)
}
