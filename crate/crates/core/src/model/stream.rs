//! Frame-by-frame post-net with a fixed lookahead of `D` frames.

use std::collections::VecDeque;

use ndarray::Array2;

use super::{AcousticModel, ModelError};
use crate::nn::layers::Lstm;
use crate::nn::{ParamStore, Real, Tape};

/// Post-net session state. Every pushed frame is either emitted or pending.
#[derive(Debug, Clone)]
pub struct StreamState<F> {
    h: Array2<F>,
    c: Array2<F>,
    /// Coarse frames not yet emitted, oldest first.
    pending: VecDeque<Array2<F>>,
    /// Fully-connected features of the newest pushed frame.
    last_features: Option<Array2<F>>,
    pushed: usize,
    emitted: usize,
    /// Pushes that returned nothing before the first emission.
    initial_wait: usize,
    flushed: bool,
}

impl<F: Real> StreamState<F> {
    pub fn new(model: &AcousticModel) -> Self {
        let w = model.config.postnet_width;
        Self {
            h: Array2::zeros((1, w)),
            c: Array2::zeros((1, w)),
            pending: VecDeque::new(),
            last_features: None,
            pushed: 0,
            emitted: 0,
            initial_wait: 0,
            flushed: false,
        }
    }

    pub fn pushed(&self) -> usize {
        self.pushed
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    pub fn buffered(&self) -> usize {
        self.pending.len()
    }

    pub fn initial_wait(&self) -> usize {
        self.initial_wait
    }

    pub fn is_flushed(&self) -> bool {
        self.flushed
    }
}

impl AcousticModel {
    fn stream_emit<F: Real>(&self, params: &ParamStore<F>, state: &mut StreamState<F>, features: &Array2<F>) -> Array2<F> {
        let (_, lstm, out) = self.postnet_parts();
        let coarse = state.pending.pop_front().expect("emission with an empty buffer");
        let mut tape = Tape::new(params);
        let u = tape.constant(features.clone());
        let st = Lstm::state_from(&mut tape, state.h.clone(), state.c.clone());
        let next = lstm.step(&mut tape, u, st);
        let delta = out.forward(&mut tape, next.h);
        let x = tape.constant(coarse);
        let y = tape.add(x, delta);
        state.h = tape.value(next.h).to_owned();
        state.c = tape.value(next.c).to_owned();
        state.emitted += 1;
        tape.value(y).to_owned()
    }

    /// Buffers one `1 x n_mels` coarse frame and returns whatever became
    /// ready: nothing for the first `D` pushes, then one frame per push.
    pub fn postnet_stream_push<F: Real>(
        &self,
        params: &ParamStore<F>,
        state: &mut StreamState<F>,
        frame: &Array2<F>,
    ) -> Result<Vec<Array2<F>>, ModelError> {
        if state.flushed {
            return Err(ModelError::StreamClosed);
        }
        if frame.dim() != (1, self.config.n_mels) {
            return Err(ModelError::LengthMismatch { what: "stream frame width", expected: self.config.n_mels, got: frame.ncols() });
        }
        let (fc, _, _) = self.postnet_parts();
        let mut tape = Tape::new(params);
        let x = tape.constant(frame.clone());
        let u = fc.forward(&mut tape, x);
        let features = tape.value(u).to_owned();
        drop(tape);
        state.pending.push_back(frame.clone());
        state.pushed += 1;
        state.last_features = Some(features.clone());
        if state.pushed > self.config.postnet_delay {
            Ok(vec![self.stream_emit(params, state, &features)])
        } else {
            state.initial_wait += 1;
            Ok(Vec::new())
        }
    }

    /// Emits the remaining frames, feeding the newest frame's features as
    /// lookahead past the end.
    pub fn postnet_stream_flush<F: Real>(
        &self,
        params: &ParamStore<F>,
        state: &mut StreamState<F>,
    ) -> Result<Vec<Array2<F>>, ModelError> {
        if state.flushed {
            return Err(ModelError::StreamClosed);
        }
        state.flushed = true;
        let Some(features) = state.last_features.clone() else {
            return Ok(Vec::new());
        };
        let mut out = Vec::with_capacity(state.pending.len());
        while !state.pending.is_empty() {
            out.push(self.stream_emit(params, state, &features));
        }
        Ok(out)
    }

    /// Pushes every row of `coarse`, then flushes.
    pub fn postnet_stream_all<F: Real>(
        &self,
        params: &ParamStore<F>,
        coarse: &Array2<F>,
    ) -> Result<(Array2<F>, StreamState<F>), ModelError> {
        let mut state = StreamState::new(self);
        let mut rows = Vec::with_capacity(coarse.nrows());
        for t in 0..coarse.nrows() {
            let frame = coarse.slice(ndarray::s![t..t + 1, ..]).to_owned();
            rows.extend(self.postnet_stream_push(params, &mut state, &frame)?);
        }
        rows.extend(self.postnet_stream_flush(params, &mut state)?);
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let out = if views.is_empty() {
            Array2::zeros((0, self.config.n_mels))
        } else {
            ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
        };
        Ok((out, state))
    }
}
