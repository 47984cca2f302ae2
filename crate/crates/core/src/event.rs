//! Event streams and their fixed-size spatiotemporal volume representation.
//!
//! Each event is scattered into `B` temporal bins with a linear (triangular)
//! kernel after rescaling its timestamp onto `[0, B - 1]`. Positive and
//! negative events go to separate sub-volumes which are concatenated along the
//! channel axis, positive first, so the volume is non-negative.

use eventgan_grad::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const DEFAULT_NUM_BINS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(value: i8) -> Option<Self> {
        match value {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Seconds.
    pub t: f64,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, polarity: Polarity) -> Self {
        Self { x, y, t, polarity }
    }
}

/// Time-ordered events from a `width x height` sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and timestamp order.
    pub fn new(width: usize, height: usize, events: Vec<Event>) -> Result<Self> {
        check_bounds(&events, width, height)?;
        if events.iter().any(|e| !e.t.is_finite()) {
            return Err(Error::NonFinite("event timestamp"));
        }
        if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::UnsortedEvents { index: i + 1 });
        }
        Ok(Self { width, height, events })
    }

    /// Like [`EventStream::new`] but sorts by timestamp first (stable).
    pub fn from_unsorted(width: usize, height: usize, mut events: Vec<Event>) -> Result<Self> {
        if events.iter().any(|e| !e.t.is_finite()) {
            return Err(Error::NonFinite("event timestamp"));
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Self::new(width, height, events)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, events: Vec::new() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `t0 <= t < t1`.
    pub fn slice_time(&self, t0: f64, t1: f64) -> EventStream {
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1);
        let events = if lo < hi { self.events[lo..hi].to_vec() } else { Vec::new() };
        EventStream { width: self.width, height: self.height, events }
    }

    /// Mirrors x coordinates (`x -> width - 1 - x`).
    pub fn flip_horizontal(&self) -> EventStream {
        let w = self.width as u16;
        let events = self.events.iter().map(|e| Event { x: w - 1 - e.x, ..*e }).collect();
        EventStream { width: self.width, height: self.height, events }
    }

    /// Keeps events inside the window and shifts them to its origin.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> EventStream {
        let events = self
            .events
            .iter()
            .filter(|e| {
                let (x, y) = (e.x as usize, e.y as usize);
                x >= x0 && y >= y0 && x < x0 + width && y < y0 + height
            })
            .map(|e| Event { x: e.x - x0 as u16, y: e.y - y0 as u16, ..*e })
            .collect();
        EventStream { width, height, events }
    }

    /// Splits into consecutive chunks of `chunk_len` events; the last chunk
    /// holds the remainder.
    pub fn chunks(&self, chunk_len: usize) -> Vec<EventStream> {
        assert!(chunk_len > 0, "chunk length must be positive");
        self.events
            .chunks(chunk_len)
            .map(|c| EventStream { width: self.width, height: self.height, events: c.to_vec() })
            .collect()
    }
}

fn check_bounds(events: &[Event], width: usize, height: usize) -> Result<()> {
    match events.iter().position(|e| e.x as usize >= width || e.y as usize >= height) {
        Some(index) => {
            let e = events[index];
            Err(Error::EventOutOfBounds { index, x: e.x, y: e.y, width, height })
        }
        None => Ok(()),
    }
}

/// How the time axis is summed away in [`collapse_time`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseMode {
    /// Both polarities add: per-pixel activity magnitude.
    #[default]
    Unsigned,
    /// Positive minus negative.
    Signed,
}

impl CollapseMode {
    /// Channel weights for a volume with `num_bins` bins per polarity.
    pub fn channel_weights(self, num_bins: usize) -> Vec<f32> {
        (0..2 * num_bins)
            .map(|c| match self {
                CollapseMode::Unsigned => 1.0,
                CollapseMode::Signed if c < num_bins => 1.0,
                CollapseMode::Signed => -1.0,
            })
            .collect()
    }
}

/// Non-negative `[2B, H, W]` event volume; channels `0..B` hold positive
/// events and `B..2B` negative events.
#[derive(Clone, Debug, PartialEq)]
pub struct EventVolume {
    num_bins: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EventVolume {
    pub fn zeros(num_bins: usize, height: usize, width: usize) -> Self {
        Self { num_bins, height, width, data: vec![0.0; 2 * num_bins * height * width], normalized: false }
    }

    pub fn from_vec(num_bins: usize, height: usize, width: usize, data: Vec<f32>, normalized: bool) -> Result<Self> {
        if data.len() != 2 * num_bins * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a [{}, {height}, {width}] volume",
                data.len(),
                2 * num_bins
            )));
        }
        if data.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("event volumes must be non-negative".into()));
        }
        Ok(Self { num_bins, height, width, data, normalized })
    }

    /// From a `[1, 2B, H, W]` tensor. Negative entries are rejected.
    pub fn from_tensor(t: &Tensor<f32>, normalized: bool) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c % 2 != 0 || c == 0 {
            return Err(Error::ShapeMismatch(format!("expected [1, 2B, H, W], got {:?}", t.shape())));
        }
        Self::from_vec(c / 2, h, w, t.data().to_vec(), normalized)
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn channels(&self) -> usize {
        2 * self.num_bins
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    /// Sum of the positive (`true`) or negative sub-volume.
    pub fn polarity_mass(&self, positive: bool) -> f64 {
        let plane = self.height * self.width;
        let range = if positive { 0..self.num_bins * plane } else { self.num_bins * plane..self.data.len() };
        self.data[range].iter().map(|&v| v as f64).sum()
    }

    pub fn nonzero_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|v| **v != 0.0).count() as f64 / self.data.len() as f64
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec([1, self.channels(), self.height, self.width], self.data.clone())
    }
}

/// Scatters `stream` into a `2 * num_bins` channel volume of size
/// `height x width` using the linear temporal kernel.
///
/// Timestamps are rescaled with the first and last timestamps of the whole
/// stream, so both polarities share one time axis. A zero time span maps
/// every event to bin 0. Output does not depend on event order.
pub fn build_volume(stream: &EventStream, num_bins: usize, width: usize, height: usize) -> Result<EventVolume> {
    if num_bins == 0 {
        return Err(Error::InvalidArgument("num_bins must be at least 1".into()));
    }
    check_bounds(stream.events(), width, height)?;
    if stream.events().iter().any(|e| !e.t.is_finite()) {
        return Err(Error::NonFinite("event timestamp"));
    }
    let mut volume = EventVolume::zeros(num_bins, height, width);
    if stream.is_empty() {
        return Ok(volume);
    }

    // Canonical order makes the floating-point accumulation order-independent.
    let mut events = stream.events().to_vec();
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x)).then(a.polarity.cmp(&b.polarity)));
    let t_first = events[0].t;
    let t_last = events[events.len() - 1].t;
    let span = t_last - t_first;
    let last_bin = (num_bins - 1) as f64;

    let plane = height * width;
    let mut acc = vec![0f64; volume.data.len()];
    for e in &events {
        let t_star = if span > 0.0 { last_bin * (e.t - t_first) / span } else { 0.0 };
        let lower = t_star.floor().min(last_bin);
        let frac = t_star - lower;
        let pixel = e.y as usize * width + e.x as usize;
        let base = if e.polarity == Polarity::Positive { 0 } else { num_bins };
        let b0 = lower as usize;
        acc[(base + b0) * plane + pixel] += 1.0 - frac;
        if frac > 0.0 && b0 + 1 < num_bins {
            acc[(base + b0 + 1) * plane + pixel] += frac;
        }
    }
    volume.data = acc.into_iter().map(|v| v as f32).collect();
    Ok(volume)
}

/// Nearest-rank 98th percentile of the non-zero values: the
/// `ceil(0.98 * n)`-th smallest. `None` when there are no non-zero values.
pub fn percentile98_nonzero(values: &[f32]) -> Option<f32> {
    let mut nz: Vec<f32> = values.iter().copied().filter(|v| *v != 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    nz.sort_by(|a, b| a.total_cmp(b));
    let rank = (98 * nz.len()).div_ceil(100);
    Some(nz[rank - 1])
}

/// Clips at the 98th percentile of non-zero values and rescales to [0, 1].
/// An all-zero volume is returned unchanged (but flagged normalized).
pub fn normalize_volume(volume: &EventVolume) -> EventVolume {
    let mut out = volume.clone();
    out.normalized = true;
    if let Some(eta) = percentile98_nonzero(&volume.data) {
        for v in &mut out.data {
            *v = v.min(eta) / eta;
        }
    }
    out
}

/// Sums all `2B` channels into a single-channel image.
pub fn collapse_time(volume: &EventVolume, mode: CollapseMode) -> Frame {
    let plane = volume.height * volume.width;
    let weights = mode.channel_weights(volume.num_bins);
    let mut out = vec![0f32; plane];
    for (c, w) in weights.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(&volume.data[c * plane..(c + 1) * plane]) {
            *o += w * v;
        }
    }
    Frame::from_vec(volume.width, volume.height, out).expect("plane size")
}

/// Mean event timestamp per pixel; zero where there are no events.
pub fn average_timestamp_image(stream: &EventStream) -> Frame {
    let (w, h) = (stream.width(), stream.height());
    let mut sum = vec![0f64; w * h];
    let mut count = vec![0u32; w * h];
    for e in stream.events() {
        let i = e.y as usize * w + e.x as usize;
        sum[i] += e.t;
        count[i] += 1;
    }
    let data = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { (s / c as f64) as f32 } else { 0.0 }).collect();
    Frame::from_vec(w, h, data).expect("plane size")
}

/// Number of events per pixel.
pub fn event_count_image(stream: &EventStream) -> Frame {
    let (w, h) = (stream.width(), stream.height());
    let mut count = vec![0f32; w * h];
    for e in stream.events() {
        count[e.y as usize * w + e.x as usize] += 1.0;
    }
    Frame::from_vec(w, h, count).expect("plane size")
}

/// Volume analogue of [`average_timestamp_image`]: the value-weighted mean
/// bin position per pixel, rescaled to [0, 1]; zero where the volume is empty.
pub fn volume_average_time_image(volume: &EventVolume) -> Frame {
    let (b, h, w) = (volume.num_bins, volume.height, volume.width);
    let denom = (b.max(2) - 1) as f32;
    Frame::from_fn(w, h, |x, y| {
        let mut mass = 0f32;
        let mut moment = 0f32;
        for c in 0..2 * b {
            let v = volume.get(c, y, x);
            mass += v;
            moment += v * (c % b) as f32;
        }
        if mass > 0.0 {
            moment / mass / denom
        } else {
            0.0
        }
    })
}
