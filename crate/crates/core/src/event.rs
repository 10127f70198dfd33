//! Event-stream data model and normalization.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of the brightness change that triggered an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn as_f64(self) -> f64 {
        match self {
            Polarity::Negative => -1.0,
            Polarity::Positive => 1.0,
        }
    }

    /// Strict conversion: only exactly `-1.0` and `+1.0` are accepted.
    pub fn from_f64(v: f64) -> Option<Self> {
        if v == 1.0 {
            Some(Polarity::Positive)
        } else if v == -1.0 {
            Some(Polarity::Negative)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: f64, y: f64, t: f64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }

    /// The continuous coordinates `(x, y, t)`.
    #[inline]
    pub fn xyt(&self) -> [f64; 3] {
        [self.x, self.y, self.t]
    }

    /// Victim input features `(x, y, t, p)`.
    #[inline]
    pub fn features(&self) -> [f64; 4] {
        [self.x, self.y, self.t, self.p.as_f64()]
    }
}

/// Sensor resolution in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorDims {
    pub width: f64,
    pub height: f64,
}

impl SensorDims {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }
}

/// Affine parameters mapping raw units onto the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub width: f64,
    pub height: f64,
    pub t_min: f64,
    pub t_span: f64,
}

impl NormParams {
    #[inline]
    pub fn forward(&self, e: &Event) -> Event {
        Event {
            x: e.x / self.width,
            y: e.y / self.height,
            t: (e.t - self.t_min) / self.t_span,
            p: e.p,
        }
    }

    #[inline]
    pub fn inverse(&self, e: &Event) -> Event {
        Event {
            x: e.x * self.width,
            y: e.y * self.height,
            t: e.t * self.t_span + self.t_min,
            p: e.p,
        }
    }
}

/// An ordered sequence of events with optional normalization state.
///
/// When `norm` is `Some`, coordinates live on the unit cube and `norm`
/// holds the affine map back to raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub sensor: SensorDims,
    pub norm: Option<NormParams>,
}

impl EventStream {
    /// Builds a raw stream, sorting events by timestamp (stable).
    pub fn new(mut events: Vec<Event>, sensor: SensorDims) -> Self {
        sort_by_t(&mut events);
        Self {
            events,
            sensor,
            norm: None,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm.is_some()
    }

    pub fn coords(&self) -> Vec<[f64; 3]> {
        self.events.iter().map(Event::xyt).collect()
    }

    pub fn features(&self) -> Vec<[f64; 4]> {
        self.events.iter().map(Event::features).collect()
    }

    pub fn is_sorted_by_t(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t <= w[1].t)
    }

    /// Replaces the continuous coordinates, keeping polarity and metadata.
    ///
    /// The order of `coords` must match `self.events`; no re-sorting happens.
    pub fn with_coords(&self, coords: &[[f64; 3]]) -> Result<Self> {
        if coords.len() != self.events.len() {
            return Err(Error::ShapeMismatch {
                expected: self.events.len(),
                got: coords.len(),
            });
        }
        let events = self
            .events
            .iter()
            .zip(coords)
            .map(|(e, c)| Event::new(c[0], c[1], c[2], e.p))
            .collect();
        Ok(Self {
            events,
            sensor: self.sensor,
            norm: self.norm,
        })
    }
}

pub(crate) fn sort_by_t(events: &mut [Event]) {
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
}

/// A stream together with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub stream: EventStream,
    pub label: usize,
}

/// Maps a raw stream onto the unit cube.
pub fn normalize(stream: &EventStream) -> Result<EventStream> {
    if stream.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let (t_min, t_max) = stream
        .events
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.t), hi.max(e.t))
        });
    if !(t_max > t_min) {
        return Err(Error::ZeroTemporalExtent);
    }
    let params = NormParams {
        width: stream.sensor.width,
        height: stream.sensor.height,
        t_min,
        t_span: t_max - t_min,
    };
    normalize_with(stream, params)
}

/// Normalizes with externally supplied affine parameters, e.g. those of the
/// clean stream an adversarial stream was derived from.
pub fn normalize_with(stream: &EventStream, params: NormParams) -> Result<EventStream> {
    if stream.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    if !(params.width > 0.0 && params.height > 0.0 && params.t_span > 0.0) {
        return Err(Error::invalid("normalization scales must be positive"));
    }
    Ok(EventStream {
        events: stream.events.iter().map(|e| params.forward(e)).collect(),
        sensor: stream.sensor,
        norm: Some(params),
    })
}

pub fn denormalize(stream: &EventStream) -> Result<EventStream> {
    let params = stream.norm.ok_or(Error::NotNormalized)?;
    Ok(EventStream {
        events: stream.events.iter().map(|e| params.inverse(e)).collect(),
        sensor: stream.sensor,
        norm: None,
    })
}

/// Resamples to exactly `n` events: a uniform subset without replacement
/// when the stream is long enough, otherwise draws with replacement. The
/// output is re-sorted by timestamp.
pub fn resample_fixed(stream: &EventStream, n: usize, seed: u64) -> Result<EventStream> {
    if n == 0 {
        return Err(Error::invalid("resample size must be positive"));
    }
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = stream.len();
    let mut picks: Vec<usize> = if len >= n {
        index::sample(&mut rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.gen_range(0..len)).collect()
    };
    // sorting indices keeps equal-timestamp events in their original order
    picks.sort_unstable();
    let mut events: Vec<Event> = picks.into_iter().map(|i| stream.events[i]).collect();
    sort_by_t(&mut events);
    Ok(EventStream {
        events,
        sensor: stream.sensor,
        norm: stream.norm,
    })
}
