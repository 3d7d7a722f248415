//! Per-interval recurrent rumor classifier.
//!
//! A standard LSTM cell consumes one feature vector per interval; a
//! two-logit fully-connected head with elementwise sigmoid produces the
//! class probabilities. The two sigmoid outputs are independent (they need
//! not sum to one) and the predicted label is their argmax, ties resolved
//! to non-rumor.
//!
//! Training runs through [`forward_cached`]/[`backward`], which keep the
//! intermediate activations needed for backpropagation through time.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HeardError, Result};
use crate::features::FeatureVector;
use crate::math::sigmoid;

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// LSTM weights plus the classification head.
///
/// Gate rows are ordered input, forget, candidate, output within the
/// stacked `4H x _` matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorParams {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub bias: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub dropout: f64,
    pub hidden: usize,
    pub feature_dims: usize,
}

/// Value-like recurrent state, independently advanceable per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
    pub step: usize,
}

/// Classifier output at one interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPrediction {
    pub probs: [f64; 2],
    pub label: u8,
    pub t: f64,
}

/// Draw all weights from uniform(-1/sqrt(hidden), 1/sqrt(hidden)).
pub fn init_detector(feature_dims: usize, hidden: usize, seed: u64) -> Result<DetectorParams> {
    if feature_dims == 0 || hidden == 0 {
        return Err(HeardError::Validation(
            "detector dims and hidden size must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (hidden as f64).sqrt();
    let mut draw = |rows: usize, cols: usize| {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
    };
    let w_input = draw(4 * hidden, feature_dims);
    let w_hidden = draw(4 * hidden, hidden);
    let bias_m = draw(4 * hidden, 1);
    let head_w = draw(2, hidden);
    let head_b_m = draw(2, 1);
    Ok(DetectorParams {
        w_input,
        w_hidden,
        bias: bias_m.column(0).to_owned(),
        head_w,
        head_b: head_b_m.column(0).to_owned(),
        dropout: DEFAULT_DROPOUT,
        hidden,
        feature_dims,
    })
}

impl DetectorParams {
    pub fn zero_state(&self) -> DetectorState {
        DetectorState {
            h: Array1::zeros(self.hidden),
            c: Array1::zeros(self.hidden),
            step: 0,
        }
    }
}

/// All activations of one LSTM step kept for the backward pass.
pub struct StepCache {
    pub input: FeatureVector,
    pub gate_i: Array1<f64>,
    pub gate_f: Array1<f64>,
    pub gate_g: Array1<f64>,
    pub gate_o: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub h: Array1<f64>,
    /// Inverted-dropout mask on h before the head (1/(1-p) or 0 entries).
    pub mask: Option<Array1<f64>>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

fn step_inner(
    params: &DetectorParams,
    state: &DetectorState,
    input: &FeatureVector,
    t: f64,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(DetectorState, StepPrediction, StepCache)> {
    let hidden = params.hidden;
    if input.len() != params.feature_dims {
        return Err(HeardError::ShapeMismatch(format!(
            "feature vector has {} dims, detector expects {}",
            input.len(),
            params.feature_dims
        )));
    }
    if input.iter().any(|x| !x.is_finite()) || !t.is_finite() {
        return Err(HeardError::Numeric("non-finite detector input".into()));
    }

    let pre = params.w_input.dot(input) + params.w_hidden.dot(&state.h) + &params.bias;
    let slice = |k: usize| pre.slice(ndarray::s![k * hidden..(k + 1) * hidden]);
    let gate_i = slice(0).mapv(sigmoid);
    let gate_f = slice(1).mapv(sigmoid);
    let gate_g = slice(2).mapv(f64::tanh);
    let gate_o = slice(3).mapv(sigmoid);

    let c = &gate_f * &state.c + &gate_i * &gate_g;
    let tanh_c = c.mapv(f64::tanh);
    let h = &gate_o * &tanh_c;

    let (head_in, mask) = match dropout_rng.as_deref_mut() {
        Some(rng) if params.dropout > 0.0 => {
            let keep = 1.0 - params.dropout;
            let mask = Array1::from_shape_fn(hidden, |_| {
                if rng.gen_bool(keep) {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            (&h * &mask, Some(mask))
        }
        _ => (h.clone(), None),
    };

    let z = params.head_w.dot(&head_in) + &params.head_b;
    let logits = [z[0], z[1]];
    let probs = [sigmoid(logits[0]), sigmoid(logits[1])];
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(HeardError::Numeric("non-finite detector output".into()));
    }
    let label = u8::from(probs[1] > probs[0]);

    let next = DetectorState {
        h: h.clone(),
        c: c.clone(),
        step: state.step + 1,
    };
    let prediction = StepPrediction { probs, label, t };
    let cache = StepCache {
        input: input.clone(),
        gate_i,
        gate_f,
        gate_g,
        gate_o,
        c_prev: state.c.clone(),
        c,
        tanh_c,
        h_prev: state.h.clone(),
        h,
        mask,
        logits,
        probs,
    };
    Ok((next, prediction, cache))
}

/// Advance the detector by one interval. Pass a dropout RNG only in
/// training mode; without it the step is deterministic.
pub fn detect_step(
    params: &DetectorParams,
    state: &DetectorState,
    input: &FeatureVector,
    t: f64,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(DetectorState, StepPrediction)> {
    let (next, prediction, _) = step_inner(params, state, input, t, dropout_rng)?;
    Ok((next, prediction))
}

/// Run a whole interval sequence, keeping per-step caches for backprop.
pub fn forward_cached(
    params: &DetectorParams,
    inputs: &[(FeatureVector, f64)],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<StepPrediction>, Vec<StepCache>)> {
    let mut state = params.zero_state();
    let mut predictions = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    for (input, t) in inputs {
        let (next, pred, cache) = step_inner(params, &state, input, *t, dropout_rng.as_deref_mut())?;
        state = next;
        predictions.push(pred);
        caches.push(cache);
    }
    Ok((predictions, caches))
}

/// Gradient accumulator mirroring [`DetectorParams`].
#[derive(Debug, Clone)]
pub struct DetectorGrads {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub bias: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

impl DetectorGrads {
    pub fn zeros(params: &DetectorParams) -> Self {
        Self {
            w_input: Array2::zeros(params.w_input.raw_dim()),
            w_hidden: Array2::zeros(params.w_hidden.raw_dim()),
            bias: Array1::zeros(params.bias.len()),
            head_w: Array2::zeros(params.head_w.raw_dim()),
            head_b: Array1::zeros(params.head_b.len()),
        }
    }
}

/// Backpropagate through time given the loss gradient on each step's
/// logits. Steps with a zero gradient entry still relay recurrent gradient.
pub fn backward(
    params: &DetectorParams,
    caches: &[StepCache],
    dlogits: &[[f64; 2]],
    grads: &mut DetectorGrads,
) {
    assert_eq!(caches.len(), dlogits.len());
    let hidden = params.hidden;
    let mut dh_next: Array1<f64> = Array1::zeros(hidden);
    let mut dc_next: Array1<f64> = Array1::zeros(hidden);

    for (cache, dz) in caches.iter().zip(dlogits.iter()).rev() {
        let mut dh = dh_next.clone();
        if dz[0] != 0.0 || dz[1] != 0.0 {
            let dz_arr = Array1::from(vec![dz[0], dz[1]]);
            let head_in = match &cache.mask {
                Some(mask) => &cache.h * mask,
                None => cache.h.clone(),
            };
            grads.head_w = &grads.head_w
                + &dz_arr
                    .view()
                    .insert_axis(ndarray::Axis(1))
                    .dot(&head_in.view().insert_axis(ndarray::Axis(0)));
            grads.head_b += &dz_arr;
            let mut dhead_in = params.head_w.t().dot(&dz_arr);
            if let Some(mask) = &cache.mask {
                dhead_in *= mask;
            }
            dh += &dhead_in;
        }

        let dtanh_c = &dh * &cache.gate_o;
        let mut dc = dc_next.clone();
        dc += &(&dtanh_c * &cache.tanh_c.mapv(|v| 1.0 - v * v));
        let do_ = &dh * &cache.tanh_c;

        let di = &dc * &cache.gate_g;
        let df = &dc * &cache.c_prev;
        let dg = &dc * &cache.gate_i;

        let mut dpre = Array1::zeros(4 * hidden);
        for j in 0..hidden {
            dpre[j] = di[j] * cache.gate_i[j] * (1.0 - cache.gate_i[j]);
            dpre[hidden + j] = df[j] * cache.gate_f[j] * (1.0 - cache.gate_f[j]);
            dpre[2 * hidden + j] = dg[j] * (1.0 - cache.gate_g[j] * cache.gate_g[j]);
            dpre[3 * hidden + j] = do_[j] * cache.gate_o[j] * (1.0 - cache.gate_o[j]);
        }

        grads.w_input = &grads.w_input
            + &dpre
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&cache.input.view().insert_axis(ndarray::Axis(0)));
        grads.w_hidden = &grads.w_hidden
            + &dpre
                .view()
                .insert_axis(ndarray::Axis(1))
                .dot(&cache.h_prev.view().insert_axis(ndarray::Axis(0)));
        grads.bias += &dpre;

        dh_next = params.w_hidden.t().dot(&dpre);
        dc_next = &dc * &cache.gate_f;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_input(dims: usize, seed: u64) -> FeatureVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: FeatureVector = Array1::from_shape_fn(dims, |_| rng.gen_range(-1.0..1.0));
        let norm = v.dot(&v).sqrt();
        v /= norm;
        v
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_detector(10, 8, 42).unwrap();
        let b = init_detector(10, 8, 42).unwrap();
        assert_eq!(a.w_input, b.w_input);
        assert_eq!(a.head_b, b.head_b);
        let c = init_detector(10, 8, 43).unwrap();
        assert_ne!(a.w_input, c.w_input);
    }

    #[test]
    fn init_zero_state() {
        let params = init_detector(4, 3, 0).unwrap();
        let state = params.zero_state();
        assert!(state.h.iter().all(|&x| x == 0.0));
        assert!(state.c.iter().all(|&x| x == 0.0));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn zero_weights_predict_half_half_tie_to_zero() {
        let mut params = init_detector(4, 3, 0).unwrap();
        params.w_input.fill(0.0);
        params.w_hidden.fill(0.0);
        params.bias.fill(0.0);
        params.head_w.fill(0.0);
        params.head_b.fill(0.0);
        let state = params.zero_state();
        let (_, pred) = detect_step(&params, &state, &Array1::zeros(4), 1.0, None).unwrap();
        assert_eq!(pred.probs, [0.5, 0.5]);
        assert_eq!(pred.label, 0);
    }

    #[test]
    fn known_logits_map_through_sigmoid() {
        // Head bias carries the logits directly when all weights are zero.
        let mut params = init_detector(2, 2, 0).unwrap();
        params.w_input.fill(0.0);
        params.w_hidden.fill(0.0);
        params.bias.fill(0.0);
        params.head_w.fill(0.0);
        params.head_b = Array1::from(vec![-2.0, 3.0]);
        let state = params.zero_state();
        let (_, pred) = detect_step(&params, &state, &Array1::zeros(2), 0.0, None).unwrap();
        assert_abs_diff_eq!(pred.probs[0], 0.11920292202211755, epsilon = 1e-12);
        assert_abs_diff_eq!(pred.probs[1], 0.9525741268224334, epsilon = 1e-12);
        assert_eq!(pred.label, 1);
    }

    #[test]
    fn inference_is_deterministic() {
        let params = init_detector(6, 5, 9).unwrap();
        let state = params.zero_state();
        let e = unit_input(6, 1);
        let (s1, p1) = detect_step(&params, &state, &e, 2.0, None).unwrap();
        let (s2, p2) = detect_step(&params, &state, &e, 2.0, None).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn probs_stay_in_open_unit_interval() {
        let params = init_detector(6, 5, 3).unwrap();
        let mut state = params.zero_state();
        for i in 0..50 {
            let (next, pred) =
                detect_step(&params, &state, &unit_input(6, i), i as f64, None).unwrap();
            state = next;
            for p in pred.probs {
                assert!(p > 0.0 && p < 1.0);
            }
            assert!(pred.label <= 1);
        }
    }

    #[test]
    fn hidden_norm_stays_finite_over_long_runs() {
        let params = init_detector(8, 16, 5).unwrap();
        let mut state = params.zero_state();
        for i in 0..10_000u64 {
            let (next, _) = detect_step(&params, &state, &unit_input(8, i), i as f64, None).unwrap();
            state = next;
        }
        let norm = state.h.dot(&state.h).sqrt();
        assert!(norm.is_finite());
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let params = init_detector(3, 2, 0).unwrap();
        let state = params.zero_state();
        let mut e = Array1::zeros(3);
        e[0] = f64::NAN;
        assert!(matches!(
            detect_step(&params, &state, &e, 0.0, None),
            Err(HeardError::Numeric(_))
        ));
    }

    #[test]
    fn dropout_changes_head_path_only_in_train_mode() {
        let mut params = init_detector(5, 64, 7).unwrap();
        params.dropout = 0.5;
        let state = params.zero_state();
        let e = unit_input(5, 2);
        let (_, clean) = detect_step(&params, &state, &e, 0.0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s_train, noisy) = detect_step(&params, &state, &e, 0.0, Some(&mut rng)).unwrap();
        // Recurrent state is unaffected by dropout; only the head input is.
        let (s_clean, _) = detect_step(&params, &state, &e, 0.0, None).unwrap();
        assert_eq!(s_train, s_clean);
        assert_ne!(clean.probs, noisy.probs);
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Cross-entropy of the true class against the sigmoid head, summed
        // over steps; checked against central differences on every
        // parameter of a tiny detector.
        let params = init_detector(3, 4, 11).unwrap();
        let inputs: Vec<(FeatureVector, f64)> = (0..5)
            .map(|i| (unit_input(3, 100 + i), i as f64))
            .collect();
        let label = 1usize;

        let loss_of = |p: &DetectorParams| -> f64 {
            let (preds, _) = forward_cached(p, &inputs, None).unwrap();
            preds.iter().map(|pr| -pr.probs[label].ln()).sum()
        };

        let (_, caches) = forward_cached(&params, &inputs, None).unwrap();
        let dlogits: Vec<[f64; 2]> = caches
            .iter()
            .map(|c| {
                let mut d = [0.0, 0.0];
                d[label] = c.probs[label] - 1.0;
                d
            })
            .collect();
        let mut grads = DetectorGrads::zeros(&params);
        backward(&params, &caches, &dlogits, &mut grads);

        let eps = 1e-6;
        let check = |get: &dyn Fn(&DetectorParams) -> f64,
                         set: &dyn Fn(&mut DetectorParams, f64),
                         analytic: f64| {
            let mut p = params.clone();
            let base = get(&params);
            set(&mut p, base + eps);
            let up = loss_of(&p);
            set(&mut p, base - eps);
            let down = loss_of(&p);
            let fd = (up - down) / (2.0 * eps);
            assert_abs_diff_eq!(analytic, fd, epsilon = 1e-6);
        };

        for r in 0..params.w_input.nrows() {
            for c in 0..params.w_input.ncols() {
                check(
                    &|p| p.w_input[[r, c]],
                    &|p, v| p.w_input[[r, c]] = v,
                    grads.w_input[[r, c]],
                );
            }
        }
        for r in 0..params.w_hidden.nrows() {
            for c in 0..params.w_hidden.ncols() {
                check(
                    &|p| p.w_hidden[[r, c]],
                    &|p, v| p.w_hidden[[r, c]] = v,
                    grads.w_hidden[[r, c]],
                );
            }
        }
        for i in 0..params.bias.len() {
            check(&|p| p.bias[i], &|p, v| p.bias[i] = v, grads.bias[i]);
        }
        for r in 0..2 {
            for c in 0..params.head_w.ncols() {
                check(
                    &|p| p.head_w[[r, c]],
                    &|p, v| p.head_w[[r, c]] = v,
                    grads.head_w[[r, c]],
                );
            }
        }
        for i in 0..2 {
            check(&|p| p.head_b[i], &|p, v| p.head_b[i] = v, grads.head_b[i]);
        }
    }
}
