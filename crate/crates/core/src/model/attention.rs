//! The attention imputer: three LAPR encoders, q/k/v projections, a
//! relative time-encoding bias per context cell, and the hand-written
//! backward pass.
//!
//! Encoder convolutions are evaluated against a per-participant full-track
//! convolution. A profile of hour `h` is the window `track[h..h + 145]` with
//! zero padding of its own, so its convolution equals the full-track one
//! except within 24 entries of either end, where the terms that reach past
//! the profile are subtracted again. Hiding the prediction target inside a
//! profile changes one input entry, which shifts the output by a scaled copy
//! of the kernel. Both corrections are exact.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::baselines::fill::prediction_wear;
use crate::error::{Error, Result};
use crate::model::view::{ParticipantView, LAPR_LEN, LAPR_RADIUS};
use crate::nn::{
    affine_backward, affine_forward, avgpool_backward, avgpool_forward, glorot_limit, layernorm_backward,
    layernorm_forward, masked_softmax, masked_softmax_backward, relu_backward, relu_forward, LayerNormCache,
    ParamTensor,
};
use crate::rng;
use crate::series::{clip_rate, MAX_RATE_MULTIPLIER};
use crate::window::WindowShape;

pub const CONV_KERNEL: usize = 49;
const CONV_PAD: usize = (CONV_KERNEL - 1) / 2;
pub const POOL_KERNEL: usize = 7;
pub const POOL_STRIDE: usize = 6;
/// Encoder output width, `floor((145 − 7) / 6) + 1`.
pub const EMBED_DIM: usize = 24;
pub const N_DOW: usize = 7;
pub const N_HOD: usize = 24;
/// Query layout: embedding, day-of-week one-hot, hour-of-day one-hot.
pub const QUERY_FEATURES: usize = EMBED_DIM + N_DOW + N_HOD;
/// Key/value layout: the query layout plus normalized step rate and heart rate.
pub const KEY_FEATURES: usize = QUERY_FEATURES + 2;

/// Which encoder and feature layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Query,
    Key,
    Value,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Query, Role::Key, Role::Value];

    #[inline]
    fn index(self) -> usize {
        match self {
            Role::Query => 0,
            Role::Key => 1,
            Role::Value => 2,
        }
    }

    pub fn n_features(self) -> usize {
        match self {
            Role::Query => QUERY_FEATURES,
            Role::Key | Role::Value => KEY_FEATURES,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Role::Query => "encoder_q",
            Role::Key => "encoder_k",
            Role::Value => "encoder_v",
        }
    }
}

/// Feature vector of hour `t` for `role`, given that role's LAPR embedding.
pub fn assemble_features(
    view: &ParticipantView<'_>,
    t: usize,
    role: Role,
    embed: &[f64],
    out: &mut Vec<f64>,
) -> Result<()> {
    if embed.len() != EMBED_DIM {
        return Err(Error::Shape(alloc::format!(
            "{:?} embedding has length {}, expected {EMBED_DIM}",
            role,
            embed.len()
        )));
    }
    if t >= view.len() {
        return Err(Error::HourOutOfRange { index: t, len: view.len() });
    }
    let b = view.series.block(t);
    out.clear();
    out.extend_from_slice(embed);
    out.extend((0..N_DOW).map(|d| f64::from(u8::from(d == b.day_of_week as usize))));
    out.extend((0..N_HOD).map(|h| f64::from(u8::from(h == b.hour_of_day as usize))));
    if role != Role::Query {
        out.push(view.z_rate(t));
        out.push(view.z_hr(t));
    }
    Ok(())
}

// Canonical parameter order.
const ENC_CONV: usize = 0;
const ENC_GAIN: usize = 1;
const ENC_BIAS: usize = 2;
const P_Q_W: usize = 9;
const P_Q_B: usize = 10;
const P_K_W: usize = 11;
const P_K_B: usize = 12;
const P_V_W: usize = 13;
const P_V_B: usize = 14;
const P_THETA: usize = 15;
pub const N_PARAMS: usize = 16;

#[inline]
fn enc(role: Role, part: usize) -> usize {
    role.index() * 3 + part
}

/// Canonical `(name, shape)` list for a model with `d_k` and `n_context` cells.
pub fn param_layout(d_k: usize, n_context: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::with_capacity(N_PARAMS);
    for role in Role::ALL {
        let p = role.prefix();
        out.push((alloc::format!("{p}.conv.weight"), vec![CONV_KERNEL]));
        out.push((alloc::format!("{p}.norm.gain"), vec![LAPR_LEN]));
        out.push((alloc::format!("{p}.norm.bias"), vec![LAPR_LEN]));
    }
    out.push(("proj_q.weight".into(), vec![d_k, QUERY_FEATURES]));
    out.push(("proj_q.bias".into(), vec![d_k]));
    out.push(("proj_k.weight".into(), vec![d_k, KEY_FEATURES]));
    out.push(("proj_k.bias".into(), vec![d_k]));
    out.push(("proj_v.weight".into(), vec![1, KEY_FEATURES]));
    out.push(("proj_v.bias".into(), vec![1]));
    out.push(("theta".into(), vec![n_context]));
    out
}

/// Single-layer, single-head sparse attention imputer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    shape: WindowShape,
    offsets: Vec<i64>,
    d_k: usize,
    params: Vec<ParamTensor>,
}

impl AttentionModel {
    /// Glorot-uniform weights, zero biases and θ, unit layer-norm gain.
    pub fn new(shape: WindowShape, d_k: usize, seed: u64) -> Result<Self> {
        if d_k == 0 {
            return Err(Error::InvalidConfig("d_k must be positive".into()));
        }
        let mut r = rng::stream(seed, &[0xA77E]);
        let params = param_layout(d_k, shape.n_context())
            .into_iter()
            .enumerate()
            .map(|(i, (name, dims))| match i {
                P_Q_W => ParamTensor::uniform(name, &dims, glorot_limit(QUERY_FEATURES, d_k), &mut r),
                P_K_W => ParamTensor::uniform(name, &dims, glorot_limit(KEY_FEATURES, d_k), &mut r),
                P_V_W => ParamTensor::uniform(name, &dims, glorot_limit(KEY_FEATURES, 1), &mut r),
                _ if i < 9 && i % 3 == ENC_CONV => {
                    ParamTensor::uniform(name, &dims, glorot_limit(CONV_KERNEL, CONV_KERNEL), &mut r)
                }
                _ if i < 9 && i % 3 == ENC_GAIN => ParamTensor::filled(name, &dims, 1.0),
                _ => ParamTensor::zeros(name, &dims),
            })
            .collect();
        Ok(Self {
            offsets: shape.offsets(),
            shape,
            d_k,
            params,
        })
    }

    /// Rebuild from tensors in canonical order; names and shapes must match.
    pub fn from_params(shape: WindowShape, params: Vec<ParamTensor>) -> Result<Self> {
        if params.len() != N_PARAMS {
            return Err(Error::Shape(alloc::format!("expected {N_PARAMS} tensors, got {}", params.len())));
        }
        let d_k = params[P_Q_B].len();
        for (p, (name, dims)) in params.iter().zip(param_layout(d_k, shape.n_context())) {
            if p.name != name || p.shape != dims || p.values.len() != dims.iter().product::<usize>() {
                return Err(Error::Shape(alloc::format!(
                    "tensor `{}` {:?} does not match `{name}` {:?}",
                    p.name,
                    p.shape,
                    dims
                )));
            }
        }
        Ok(Self {
            offsets: shape.offsets(),
            shape,
            d_k,
            params,
        })
    }

    pub fn shape(&self) -> WindowShape {
        self.shape
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    /// Total number of scalar parameters.
    pub fn n_values(&self) -> usize {
        self.params.iter().map(ParamTensor::len).sum()
    }

    /// Offsets of each tensor in the flat parameter/gradient layout.
    pub fn flat_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.params
            .iter()
            .map(|p| {
                let o = acc;
                acc += p.len();
                o
            })
            .collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.values.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_values() {
            return Err(Error::Shape(alloc::format!("{} values for {} parameters", flat.len(), self.n_values())));
        }
        let mut at = 0;
        for p in &mut self.params {
            let n = p.len();
            p.values.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Full-track convolutions of a participant, one per encoder.
    pub fn prepare(&self, view: &ParticipantView<'_>) -> Prepared {
        let track = view.track();
        let conv = Role::ALL.map(|role| full_track_conv(track, &self.params[enc(role, ENC_CONV)].values));
        Prepared { conv }
    }

    fn encode(
        &self,
        role: Role,
        track: &[f64],
        prep: &Prepared,
        hour: usize,
        hidden: Option<(usize, f64)>,
        cache: &mut EncCache,
    ) -> Result<()> {
        let kernel = &self.params[enc(role, ENC_CONV)].values;
        let conv = &mut cache.conv;
        conv.resize(LAPR_LEN, 0.0);
        conv.copy_from_slice(&prep.conv[role.index()][hour..hour + LAPR_LEN]);
        for_each_edge_term(track, hour, |i, j, x| conv[i] -= kernel[j] * x);
        if let Some((m, delta)) = hidden {
            for i in m.saturating_sub(CONV_PAD)..(m + CONV_PAD + 1).min(LAPR_LEN) {
                conv[i] += delta * kernel[m + CONV_PAD - i];
            }
        }
        cache.hour = hour;
        cache.hidden = hidden;
        cache.act.resize(LAPR_LEN, 0.0);
        layernorm_forward(
            conv,
            &self.params[enc(role, ENC_GAIN)].values,
            &self.params[enc(role, ENC_BIAS)].values,
            &mut cache.act,
            &mut cache.norm,
        )?;
        relu_forward(&mut cache.act);
        cache.emb.resize(EMBED_DIM, 0.0);
        avgpool_forward(&cache.act, POOL_KERNEL, POOL_STRIDE, &mut cache.emb)
    }

    #[allow(clippy::too_many_arguments)]
    fn encode_backward(
        &self,
        role: Role,
        track: &[f64],
        cache: &EncCache,
        d_emb: &[f64],
        grads: &mut Gradients,
        scratch: &mut [Vec<f64>; 2],
    ) -> Result<()> {
        let [d_act, d_conv] = scratch;
        d_act.resize(LAPR_LEN, 0.0);
        d_conv.resize(LAPR_LEN, 0.0);
        avgpool_backward(d_emb, POOL_KERNEL, POOL_STRIDE, d_act)?;
        relu_backward(&cache.act, d_act);
        let (gain_at, bias_at) = (grads.offsets[enc(role, ENC_GAIN)], grads.offsets[enc(role, ENC_BIAS)]);
        let (lo, hi) = grads.flat.split_at_mut(bias_at);
        layernorm_backward(
            d_act,
            &self.params[enc(role, ENC_GAIN)].values,
            &cache.norm,
            Some(d_conv),
            &mut lo[gain_at..gain_at + LAPR_LEN],
            &mut hi[..LAPR_LEN],
        )?;
        let full = &mut grads.d_full[role.index()];
        for (d, &g) in full[cache.hour..cache.hour + LAPR_LEN].iter_mut().zip(d_conv.iter()) {
            *d += g;
        }
        let k_at = grads.offsets[enc(role, ENC_CONV)];
        let dk = &mut grads.flat[k_at..k_at + CONV_KERNEL];
        for_each_edge_term(track, cache.hour, |i, j, x| dk[j] -= d_conv[i] * x);
        if let Some((m, delta)) = cache.hidden {
            for i in m.saturating_sub(CONV_PAD)..(m + CONV_PAD + 1).min(LAPR_LEN) {
                dk[m + CONV_PAD - i] += delta * d_conv[i];
            }
        }
        Ok(())
    }

    /// Forward pass for target hour `t`, writing every intermediate into
    /// `trace`. Fails with [`Error::NoObservedContext`] when no context cell
    /// is visible.
    pub fn forward_into(
        &self,
        view: &ParticipantView<'_>,
        prep: &Prepared,
        t: usize,
        trace: &mut Trace,
    ) -> Result<()> {
        if t >= view.len() {
            return Err(Error::HourOutOfRange { index: t, len: view.len() });
        }
        let track = view.track();
        trace.target = t;
        trace.cells.clear();
        for (i, &o) in self.offsets.iter().enumerate() {
            let h = t as i64 + o;
            if (0..view.len() as i64).contains(&h) && view.is_visible(h as usize) {
                trace.cells.push((i, h as usize));
            }
        }
        let n = trace.cells.len();
        if n == 0 {
            return Err(Error::NoObservedContext(t));
        }
        // The target is hidden from every profile that contains it.
        let delta = view.fill_z(t as i64) - track[t + LAPR_RADIUS];
        let hide = |h: usize| -> Option<(usize, f64)> {
            let m = t as i64 - h as i64 + LAPR_RADIUS as i64;
            (delta != 0.0 && (0..LAPR_LEN as i64).contains(&m)).then_some((m as usize, delta))
        };
        let d_k = self.d_k;

        self.encode(Role::Query, track, prep, t, hide(t), &mut trace.q_enc)?;
        assemble_features(view, t, Role::Query, &trace.q_enc.emb, &mut trace.q_feat)?;
        trace.q.resize(d_k, 0.0);
        affine_forward(&trace.q_feat, &self.params[P_Q_W].values, &self.params[P_Q_B].values, &mut trace.q)?;

        if trace.k_enc.len() < n {
            trace.k_enc.resize_with(n, EncCache::default);
            trace.v_enc.resize_with(n, EncCache::default);
        }
        trace.k_feat.resize(n * KEY_FEATURES, 0.0);
        trace.v_feat.resize(n * KEY_FEATURES, 0.0);
        trace.keys.resize(n * d_k, 0.0);
        trace.values.resize(n, 0.0);
        trace.logits.resize(n, 0.0);
        trace.weights.resize(n, 0.0);
        let mut feat = Vec::with_capacity(KEY_FEATURES);
        let theta = &self.params[P_THETA].values;
        for c in 0..n {
            let (rel, h) = trace.cells[c];
            let hidden = hide(h);
            self.encode(Role::Key, track, prep, h, hidden, &mut trace.k_enc[c])?;
            assemble_features(view, h, Role::Key, &trace.k_enc[c].emb, &mut feat)?;
            trace.k_feat[c * KEY_FEATURES..(c + 1) * KEY_FEATURES].copy_from_slice(&feat);
            let key = &mut trace.keys[c * d_k..(c + 1) * d_k];
            affine_forward(&feat, &self.params[P_K_W].values, &self.params[P_K_B].values, key)?;
            trace.logits[c] = trace.q.iter().zip(key.iter()).map(|(a, b)| a * b).sum::<f64>() + theta[rel];

            self.encode(Role::Value, track, prep, h, hidden, &mut trace.v_enc[c])?;
            assemble_features(view, h, Role::Value, &trace.v_enc[c].emb, &mut feat)?;
            trace.v_feat[c * KEY_FEATURES..(c + 1) * KEY_FEATURES].copy_from_slice(&feat);
            let mut v = [0.0];
            affine_forward(&feat, &self.params[P_V_W].values, &self.params[P_V_B].values, &mut v)?;
            trace.values[c] = v[0];
        }
        trace.mask.clear();
        trace.mask.resize(n, true);
        masked_softmax(&trace.logits, &trace.mask, &mut trace.weights)?;
        trace.s = trace.weights.iter().zip(&trace.values).map(|(a, v)| a * v).sum();

        let stats = &view.stats;
        trace.rate = stats.denormalize_rate(trace.s);
        trace.wear = prediction_wear(view.series, t);
        trace.steps = f64::from(trace.wear) * clip_rate(trace.rate, stats.max_train_step_rate);
        Ok(())
    }

    /// Convenience wrapper around [`forward_into`](Self::forward_into).
    pub fn forward(&self, view: &ParticipantView<'_>, prep: &Prepared, t: usize) -> Result<Trace> {
        let mut trace = Trace::default();
        self.forward_into(view, prep, t, &mut trace)?;
        Ok(trace)
    }

    /// Accumulate gradients of a loss with `d_loss / d_steps = d_steps`
    /// into `grads`.
    pub fn backward(
        &self,
        view: &ParticipantView<'_>,
        trace: &Trace,
        d_steps: f64,
        grads: &mut Gradients,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let stats = &view.stats;
        let cap = MAX_RATE_MULTIPLIER * stats.max_train_step_rate;
        if !(trace.rate > 0.0 && trace.rate < cap) || d_steps == 0.0 {
            return Ok(());
        }
        let d_s = d_steps * f64::from(trace.wear) * stats.step_rate_std;
        let n = trace.cells.len();
        let d_k = self.d_k;
        let track = view.track();

        // s = Σ a v
        scratch.d_w.resize(n, 0.0);
        for c in 0..n {
            scratch.d_w[c] = d_s * trace.values[c];
        }
        scratch.d_logits.resize(n, 0.0);
        masked_softmax_backward(&trace.weights, &scratch.d_w, &mut scratch.d_logits);

        let theta_at = grads.offsets[P_THETA];
        scratch.d_q.clear();
        scratch.d_q.resize(d_k, 0.0);
        scratch.d_feat.resize(KEY_FEATURES, 0.0);
        scratch.d_key.resize(d_k, 0.0);
        for c in 0..n {
            let (rel, _) = trace.cells[c];
            let g = scratch.d_logits[c];
            grads.flat[theta_at + rel] += g;
            let key = &trace.keys[c * d_k..(c + 1) * d_k];
            for j in 0..d_k {
                scratch.d_q[j] += g * key[j];
                scratch.d_key[j] = g * trace.q[j];
            }
            let feat = &trace.k_feat[c * KEY_FEATURES..(c + 1) * KEY_FEATURES];
            let (w_at, b_at) = (grads.offsets[P_K_W], grads.offsets[P_K_B]);
            let (lo, hi) = grads.flat.split_at_mut(b_at);
            affine_backward(
                feat,
                &self.params[P_K_W].values,
                &scratch.d_key,
                Some(&mut scratch.d_feat),
                &mut lo[w_at..w_at + d_k * KEY_FEATURES],
                &mut hi[..d_k],
            )?;
            let d_emb: Vec<f64> = scratch.d_feat[..EMBED_DIM].to_vec();
            self.encode_backward(Role::Key, track, &trace.k_enc[c], &d_emb, grads, &mut scratch.enc)?;

            let d_v = [d_s * trace.weights[c]];
            let feat = &trace.v_feat[c * KEY_FEATURES..(c + 1) * KEY_FEATURES];
            let (w_at, b_at) = (grads.offsets[P_V_W], grads.offsets[P_V_B]);
            let (lo, hi) = grads.flat.split_at_mut(b_at);
            affine_backward(
                feat,
                &self.params[P_V_W].values,
                &d_v,
                Some(&mut scratch.d_feat),
                &mut lo[w_at..w_at + KEY_FEATURES],
                &mut hi[..1],
            )?;
            let d_emb: Vec<f64> = scratch.d_feat[..EMBED_DIM].to_vec();
            self.encode_backward(Role::Value, track, &trace.v_enc[c], &d_emb, grads, &mut scratch.enc)?;
        }

        let (w_at, b_at) = (grads.offsets[P_Q_W], grads.offsets[P_Q_B]);
        let (lo, hi) = grads.flat.split_at_mut(b_at);
        scratch.d_feat.resize(QUERY_FEATURES, 0.0);
        affine_backward(
            &trace.q_feat,
            &self.params[P_Q_W].values,
            &scratch.d_q,
            Some(&mut scratch.d_feat[..QUERY_FEATURES]),
            &mut lo[w_at..w_at + d_k * QUERY_FEATURES],
            &mut hi[..d_k],
        )?;
        let d_emb: Vec<f64> = scratch.d_feat[..EMBED_DIM].to_vec();
        self.encode_backward(Role::Query, track, &trace.q_enc, &d_emb, grads, &mut scratch.enc)
    }

    /// Empty gradient accumulator for one participant.
    pub fn gradients(&self, view: &ParticipantView<'_>) -> Gradients {
        Gradients {
            offsets: self.flat_offsets(),
            flat: vec![0.0; self.n_values()],
            d_full: core::array::from_fn(|_| vec![0.0; view.track().len()]),
        }
    }

    /// Fold the full-track convolution gradients of `grads` into its kernel
    /// gradients and return the flat gradient.
    pub fn finish_gradients(&self, view: &ParticipantView<'_>, mut grads: Gradients) -> Vec<f64> {
        let track = view.track();
        for role in Role::ALL {
            let at = grads.offsets[enc(role, ENC_CONV)];
            let d_full = &grads.d_full[role.index()];
            for j in 0..CONV_KERNEL {
                // d C[p] / d k[j] = track[p + j − pad]
                let lo = CONV_PAD.saturating_sub(j);
                let hi = (track.len() + CONV_PAD).saturating_sub(j).min(track.len());
                if lo < hi {
                    grads.flat[at + j] +=
                        d_full[lo..hi].iter().zip(&track[lo + j - CONV_PAD..hi + j - CONV_PAD]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        grads.flat
    }

    /// Predicted step count for hour `t`, falling back to the DW+HD median
    /// fill when no context block is visible.
    pub fn predict_with(&self, view: &ParticipantView<'_>, prep: &Prepared, t: usize, trace: &mut Trace) -> Result<Prediction> {
        match self.forward_into(view, prep, t, trace) {
            Ok(()) => Ok(Prediction {
                steps: trace.steps,
                fallback: false,
            }),
            Err(Error::NoObservedContext(_)) => Ok(Prediction {
                steps: view.fallback().predict(t),
                fallback: true,
            }),
            Err(e) => Err(e),
        }
    }

    pub fn predict(&self, view: &ParticipantView<'_>, t: usize) -> Result<Prediction> {
        let prep = self.prepare(view);
        self.predict_with(view, &prep, t, &mut Trace::default())
    }

    /// Predictions for many hours of one participant.
    pub fn predict_many(&self, view: &ParticipantView<'_>, hours: &[usize]) -> Result<Vec<Prediction>> {
        let prep = self.prepare(view);
        let mut trace = Trace::default();
        hours.iter().map(|&t| self.predict_with(view, &prep, t, &mut trace)).collect()
    }

    /// Attention weights of target `t` laid out by relative index (zero on
    /// hidden or out-of-range cells).
    pub fn attention_weights(&self, view: &ParticipantView<'_>, prep: &Prepared, t: usize) -> Result<Vec<f64>> {
        let trace = self.forward(view, prep, t)?;
        let mut out = vec![0.0; self.shape.n_context()];
        for (c, &(rel, _)) in trace.cells.iter().enumerate() {
            out[rel] = trace.weights[c];
        }
        Ok(out)
    }
}

/// Outcome of one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub steps: f64,
    /// No context block was visible and the DW+HD median fill answered.
    pub fallback: bool,
}

/// Per-participant convolutions of the filled track under current weights.
#[derive(Debug, Clone)]
pub struct Prepared {
    conv: [Vec<f64>; 3],
}

/// `C[p] = Σ_j k[j] · track[p + j − pad]`, zero outside the track.
fn full_track_conv(track: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; track.len()];
    crate::nn::conv1d_forward(track, kernel, &mut out).expect("kernel fits the padded track");
    out
}

/// Visit the convolution terms `(i, j, x)` of the profile of `hour` that
/// fall outside the profile, where `x` is the track value they would read.
#[inline]
fn for_each_edge_term(track: &[f64], hour: usize, mut f: impl FnMut(usize, usize, f64)) {
    let n = track.len() as i64;
    for i in 0..CONV_PAD {
        for j in 0..CONV_PAD - i {
            let p = hour as i64 + i as i64 + j as i64 - CONV_PAD as i64;
            if p >= 0 {
                f(i, j, track[p as usize]);
            }
        }
    }
    for i in LAPR_LEN - CONV_PAD..LAPR_LEN {
        for j in LAPR_LEN + CONV_PAD - i..CONV_KERNEL {
            let p = hour as i64 + i as i64 + j as i64 - CONV_PAD as i64;
            if p < n {
                f(i, j, track[p as usize]);
            }
        }
    }
}

/// Saved activations of one encoder pass.
#[derive(Debug, Clone, Default)]
pub struct EncCache {
    hour: usize,
    hidden: Option<(usize, f64)>,
    conv: Vec<f64>,
    norm: LayerNormCache,
    act: Vec<f64>,
    pub emb: Vec<f64>,
}

/// Everything a forward pass computed for one target.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub target: usize,
    /// `(relative index, hour)` of every visible context cell.
    pub cells: Vec<(usize, usize)>,
    q_enc: EncCache,
    q_feat: Vec<f64>,
    pub q: Vec<f64>,
    k_enc: Vec<EncCache>,
    v_enc: Vec<EncCache>,
    k_feat: Vec<f64>,
    v_feat: Vec<f64>,
    /// Row-major `[cells, d_k]`.
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
    pub logits: Vec<f64>,
    mask: Vec<bool>,
    pub weights: Vec<f64>,
    /// Attention output, a normalized step rate.
    pub s: f64,
    /// Denormalized, unclipped step rate.
    pub rate: f64,
    pub wear: u8,
    pub steps: f64,
}

/// Reusable backward buffers.
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    d_w: Vec<f64>,
    d_logits: Vec<f64>,
    d_q: Vec<f64>,
    d_key: Vec<f64>,
    d_feat: Vec<f64>,
    enc: [Vec<f64>; 2],
}

/// Gradient accumulator bound to one participant's track.
#[derive(Debug, Clone)]
pub struct Gradients {
    offsets: Vec<usize>,
    flat: Vec<f64>,
    d_full: [Vec<f64>; 3],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{conv1d_forward, finite_diff_check};
    use crate::series::{HourMask, HourlyBlock, ParticipantSeries};

    fn cohort_series(weeks: usize, seed: u64) -> ParticipantSeries {
        use rand::Rng;
        let mut r = rng::stream(seed, &[1]);
        let blocks = (0..weeks * 168)
            .map(|t| {
                let (dow, hod) = (((t / 24) % 7) as u8, (t % 24) as u8);
                if r.gen_bool(0.3) {
                    HourlyBlock::missing(dow, hod)
                } else {
                    let rate: f64 = r.gen_range(0.0..30.0);
                    let hr = if r.gen_bool(0.9) { Some(60.0 + rate) } else { None };
                    HourlyBlock::new((rate * 60.0) as u64, 60, hr, dow, hod).unwrap()
                }
            })
            .collect();
        ParticipantSeries::new("m", blocks).unwrap()
    }

    #[test]
    fn fast_encoder_matches_direct_profile_convolution() {
        let s = cohort_series(3, 4);
        let view = ParticipantView::new(&s, HourMask::from_indices(s.len(), [100, 101])).unwrap();
        let model = AttentionModel::new(WindowShape::default(), 4, 9).unwrap();
        let prep = model.prepare(&view);
        let kernel = &model.params[enc(Role::Key, ENC_CONV)].values;
        let mut cache = EncCache::default();
        for &(h, target) in &[(0usize, 30usize), (5, 5), (200, 250), (s.len() - 1, s.len() - 60), (300, 10)] {
            let lapr = view.lapr(h, Some(target));
            let mut direct = vec![0.0; LAPR_LEN];
            conv1d_forward(&lapr.values, kernel, &mut direct).unwrap();
            let m = target as i64 - h as i64 + LAPR_RADIUS as i64;
            let delta = view.fill_z(target as i64) - view.track()[target + LAPR_RADIUS];
            let hidden = (0..LAPR_LEN as i64).contains(&m).then_some((m as usize, delta));
            model.encode(Role::Key, view.track(), &prep, h, hidden, &mut cache).unwrap();
            for i in 0..LAPR_LEN {
                assert!((cache.conv[i] - direct[i]).abs() < 1e-10, "h {h} i {i}");
            }
        }
    }

    #[test]
    fn feature_layouts() {
        let s = cohort_series(1, 2);
        let view = ParticipantView::new(&s, HourMask::empty(s.len())).unwrap();
        let mut f = Vec::new();
        assemble_features(&view, 30, Role::Query, &[0.5; EMBED_DIM], &mut f).unwrap();
        assert_eq!(f.len(), 55);
        assemble_features(&view, 30, Role::Key, &[0.5; EMBED_DIM], &mut f).unwrap();
        assert_eq!(f.len(), 57);
        assert_eq!(f[EMBED_DIM + 1], 1.0); // day 1
        assert_eq!(f[EMBED_DIM + N_DOW + 6], 1.0); // 06:00
        assert!(assemble_features(&view, 30, Role::Value, &[0.5; 3], &mut f).is_err());
    }

    #[test]
    fn weights_are_a_distribution_over_visible_cells() {
        let s = cohort_series(12, 3);
        let view = ParticipantView::new(&s, HourMask::from_indices(s.len(), [1000])).unwrap();
        let model = AttentionModel::new(WindowShape::default(), 8, 1).unwrap();
        let prep = model.prepare(&view);
        for t in [0, 1000, 1005, s.len() - 1] {
            let w = model.attention_weights(&view, &prep, t).unwrap();
            let win = crate::window::ContextWindow::build(model.shape(), t, s.len()).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (i, &a) in w.iter().enumerate() {
                if !win.visible(i, &s, &view.holdout) {
                    assert_eq!(a, 0.0);
                } else {
                    assert!(a > 0.0);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = cohort_series(11, 5);
        let targets = [900usize, 950, 1010, 1300, 20];
        let holdout = HourMask::from_indices(s.len(), [1200, 1201]);
        let view = ParticipantView::new(&s, holdout).unwrap();
        let mut model = AttentionModel::new(WindowShape::default(), 4, 2).unwrap();
        // nudge θ and biases off zero so every path carries gradient
        let mut r = rng::stream(11, &[]);
        for p in model.params_mut() {
            use rand::Rng;
            for v in p.values.iter_mut() {
                *v += r.gen_range(-0.1..0.1);
            }
        }
        let targets: Vec<usize> = targets.into_iter().filter(|&t| s.is_observed(t)).collect();
        let truth: Vec<f64> = targets.iter().map(|&t| s.block(t).steps as f64 + 0.37).collect();
        let loss = |m: &AttentionModel| -> f64 {
            let prep = m.prepare(&view);
            targets
                .iter()
                .zip(&truth)
                .map(|(&t, y)| (m.forward(&view, &prep, t).unwrap().steps - y).abs())
                .sum::<f64>()
                / targets.len() as f64
        };
        let prep = model.prepare(&view);
        let mut grads = model.gradients(&view);
        let mut scratch = Scratch::default();
        for (&t, y) in targets.iter().zip(&truth) {
            let tr = model.forward(&view, &prep, t).unwrap();
            let d = if tr.steps > *y { 1.0 } else { -1.0 } / targets.len() as f64;
            model.backward(&view, &tr, d, &mut grads, &mut scratch).unwrap();
        }
        let analytic = model.finish_gradients(&view, grads);
        let x0 = model.flat_values();
        let mut probe = model.clone();
        let offsets = model.flat_offsets();
        let coords: Vec<usize> = offsets
            .iter()
            .zip(model.params())
            .flat_map(|(&o, p)| (0..p.len()).step_by(p.len().div_ceil(6)).map(move |i| o + i))
            .collect();
        let err = finite_diff_check(
            |x| {
                probe.set_flat_values(x).unwrap();
                loss(&probe)
            },
            &x0,
            &analytic,
            1e-5,
            Some(&coords),
        );
        assert!(err < 1e-4, "max relative error {err}");
    }
}
