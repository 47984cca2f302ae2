//! Classical (non-learned) event simulators.
//!
//! [`frame_pair_events`] differences the log intensity of two frames directly.
//! [`CrossingSimulator`] follows rendered frames at a fine time step and fires
//! an event each time a pixel's log intensity moves one threshold away from
//! its reference level; [`affine_sim_events`] drives it with an interpolated
//! affine warp of a single image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_io::FramePair;
use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::frame::Frame;

/// Lower bound on any per-pixel threshold after noise.
pub const MIN_THRESHOLD: f64 = 0.01;

/// Slack, in units of the threshold, so that changes of exactly `k * theta`
/// are not lost to rounding in the log.
const CROSSING_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdModel {
    /// Contrast threshold on log intensity.
    pub theta: f64,
    /// Standard deviation of the per-pixel Gaussian perturbation of `theta`.
    pub noise_sigma: f64,
    /// Added to intensities before taking the log.
    pub log_eps: f64,
}

impl Default for ThresholdModel {
    fn default() -> Self {
        Self { theta: 0.2, noise_sigma: 0.0, log_eps: 1e-3 }
    }
}

impl ThresholdModel {
    pub fn new(theta: f64, noise_sigma: f64) -> Result<Self> {
        let m = Self { theta, noise_sigma, ..Self::default() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::InvalidArgument(format!("theta must be > 0, got {}", self.theta)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.log_eps > 0.0) {
            return Err(Error::InvalidArgument(format!("log_eps must be > 0, got {}", self.log_eps)));
        }
        Ok(())
    }

    fn log(&self, intensity: f32) -> f64 {
        (intensity as f64 + self.log_eps).ln()
    }
}

/// Static per-pixel thresholds (fixed-pattern mismatch).
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ThresholdField {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Draws `theta + sigma * N(0, 1)` per pixel, clamped to [`MIN_THRESHOLD`].
pub fn sample_threshold_field(model: &ThresholdModel, width: usize, height: usize, seed: u64) -> Result<ThresholdField> {
    model.validate()?;
    let base = model.theta.max(MIN_THRESHOLD);
    let values = if model.noise_sigma == 0.0 {
        vec![base; width * height]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(model.theta, model.noise_sigma).expect("validated sigma");
        (0..width * height).map(|_| normal.sample(&mut rng).max(MIN_THRESHOLD)).collect()
    };
    Ok(ThresholdField { width, height, values })
}

fn check_intensities(frame: &Frame, name: &'static str) -> Result<()> {
    if frame.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    if frame.data().iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(format!("{name} has negative pixel values")));
    }
    Ok(())
}

fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x)));
}

/// Direct log-intensity differencing between two frames taken `dt` apart.
///
/// A pixel whose log intensity changes by `delta` emits
/// `floor(|delta| / theta)` events of polarity `sign(delta)`, the `i`-th at
/// `t0 + dt * i * theta / |delta|`.
pub fn frame_pair_events(first: &Frame, second: &Frame, t0: f64, dt: f64, model: &ThresholdModel, seed: u64) -> Result<EventStream> {
    if !first.same_shape(second) {
        return Err(Error::ShapeMismatch(format!(
            "frames are {}x{} and {}x{}",
            first.width(),
            first.height(),
            second.width(),
            second.height()
        )));
    }
    check_intensities(first, "first frame")?;
    check_intensities(second, "second frame")?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let (w, h) = (first.width(), first.height());
    let field = sample_threshold_field(model, w, h, seed)?;
    let mut events = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let delta = model.log(second.get(x, y)) - model.log(first.get(x, y));
            let theta = field.at(x, y);
            let count = (delta.abs() / theta + CROSSING_TOLERANCE).floor() as usize;
            let polarity = if delta > 0.0 { Polarity::Positive } else { Polarity::Negative };
            for i in 1..=count {
                let t = t0 + dt * (i as f64 * theta / delta.abs());
                events.push(Event::new(x as u16, y as u16, t, polarity));
            }
        }
    }
    sort_events(&mut events);
    EventStream::new(w, h, events)
}

/// Per-pixel reference-crossing simulator over a sequence of rendered frames.
pub struct CrossingSimulator {
    width: usize,
    height: usize,
    thresholds: ThresholdField,
    log_eps: f64,
    reference: Vec<f64>,
    last_log: Vec<f64>,
    last_t: f64,
    events: Vec<Event>,
    large_steps: usize,
}

impl CrossingSimulator {
    pub fn new(first: &Frame, t0: f64, model: &ThresholdModel, seed: u64) -> Result<Self> {
        check_intensities(first, "frame")?;
        let thresholds = sample_threshold_field(model, first.width(), first.height(), seed)?;
        let logs: Vec<f64> = first.data().iter().map(|&v| model.log(v)).collect();
        Ok(Self {
            width: first.width(),
            height: first.height(),
            thresholds,
            log_eps: model.log_eps,
            reference: logs.clone(),
            last_log: logs,
            last_t: t0,
            events: Vec::new(),
            large_steps: 0,
        })
    }

    /// Integrates from the previous frame to `frame` at time `t`, assuming
    /// log intensity varies linearly in between.
    pub fn advance(&mut self, frame: &Frame, t: f64) -> Result<()> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::ShapeMismatch("frame size changed during simulation".into()));
        }
        check_intensities(frame, "frame")?;
        if !(t > self.last_t) {
            return Err(Error::InvalidArgument(format!("time must increase ({t} after {})", self.last_t)));
        }
        let span = t - self.last_t;
        for (i, &v) in frame.data().iter().enumerate() {
            let now = (v as f64 + self.log_eps).ln();
            let prev = self.last_log[i];
            let theta = self.thresholds.values[i];
            if (now - prev).abs() >= theta {
                self.large_steps += 1;
            }
            let (x, y) = ((i % self.width) as u16, (i / self.width) as u16);
            loop {
                let diff = now - self.reference[i];
                let reach = theta * (1.0 - CROSSING_TOLERANCE);
                let polarity = if diff >= reach {
                    Polarity::Positive
                } else if diff <= -reach {
                    Polarity::Negative
                } else {
                    break;
                };
                let level = self.reference[i] + theta * polarity.sign() as f64;
                let frac = if now != prev { ((level - prev) / (now - prev)).clamp(0.0, 1.0) } else { 1.0 };
                self.events.push(Event::new(x, y, self.last_t + frac * span, polarity));
                self.reference[i] = level;
            }
            self.last_log[i] = now;
        }
        self.last_t = t;
        Ok(())
    }

    /// Number of pixel updates so far whose log change reached a full threshold.
    pub fn large_steps(&self) -> usize {
        self.large_steps
    }

    pub fn finish(mut self) -> Result<EventStream> {
        sort_events(&mut self.events);
        EventStream::new(self.width, self.height, self.events)
    }
}

/// Affine motion accumulated over the simulated interval, about the image centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMotion {
    /// Pixels (x, y) over the whole interval.
    pub translation: (f64, f64),
    /// Radians.
    pub rotation: f64,
    pub scale: f64,
    pub num_substeps: usize,
}

impl Default for AffineMotion {
    fn default() -> Self {
        Self { translation: (0.0, 0.0), rotation: 0.0, scale: 1.0, num_substeps: 16 }
    }
}

impl AffineMotion {
    fn validate(&self) -> Result<()> {
        if self.num_substeps == 0 {
            return Err(Error::InvalidArgument("num_substeps must be >= 1".into()));
        }
        let finite = self.translation.0.is_finite() && self.translation.1.is_finite() && self.rotation.is_finite();
        if !finite || !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::DegenerateTransform(format!(
                "scale {} / translation {:?} / rotation {} is not invertible",
                self.scale, self.translation, self.rotation
            )));
        }
        Ok(())
    }

    /// Renders `image` moved by fraction `s` in [0, 1] of this motion.
    pub fn render(&self, image: &Frame, s: f64) -> Frame {
        let cx = (image.width() as f64 - 1.0) / 2.0;
        let cy = (image.height() as f64 - 1.0) / 2.0;
        let scale = 1.0 + s * (self.scale - 1.0);
        let (sin, cos) = (s * self.rotation).sin_cos();
        let (tx, ty) = (s * self.translation.0, s * self.translation.1);
        Frame::from_fn(image.width(), image.height(), |x, y| {
            // invert dest = c + scale * R * (src - c) + t
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let sx = (cos * dx + sin * dy) / scale + cx;
            let sy = (-sin * dx + cos * dy) / scale + cy;
            image.sample_clamped(sx, sy)
        })
    }
}

/// ESIM-style simulation of `image` undergoing `motion` over `duration`
/// seconds. Returns all events and the first/last rendered frames; the pair
/// carries the events in the half-open interval `[0, duration)`.
pub fn affine_sim_events(image: &Frame, motion: &AffineMotion, duration: f64, model: &ThresholdModel, seed: u64) -> Result<(EventStream, FramePair)> {
    motion.validate()?;
    model.validate()?;
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be > 0, got {duration}")));
    }
    let first = motion.render(image, 0.0);
    let mut sim = CrossingSimulator::new(&first, 0.0, model, seed)?;
    let mut last = first.clone();
    for k in 1..=motion.num_substeps {
        let s = k as f64 / motion.num_substeps as f64;
        last = motion.render(image, s);
        sim.advance(&last, duration * s)?;
    }
    let pixel_steps = motion.num_substeps * image.width() * image.height();
    if sim.large_steps() * 20 > pixel_steps {
        log::warn!(
            "{} of {} pixel substeps changed by at least one threshold; increase num_substeps",
            sim.large_steps(),
            pixel_steps
        );
    }
    let stream = sim.finish()?;
    let pair = FramePair::new(first, last, 0.0, duration, stream.slice_time(0.0, duration))?;
    Ok((stream, pair))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(theta: f64, sigma: f64) -> ThresholdModel {
        ThresholdModel::new(theta, sigma).unwrap()
    }

    #[test]
    fn brightening_pixel_emits_floor_of_ratio() {
        let m = ThresholdModel { theta: 0.1, noise_sigma: 0.0, log_eps: 1e-9 };
        let a = Frame::filled(1, 1, 100.0);
        let b = Frame::filled(1, 1, 100.0 * 0.3f32.exp());
        let s = frame_pair_events(&a, &b, 0.0, 1.0, &m, 0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.events().iter().all(|e| e.polarity == Polarity::Positive));
        let back = frame_pair_events(&b, &a, 0.0, 1.0, &m, 0).unwrap();
        assert_eq!(back.len(), 3);
        assert!(back.events().iter().all(|e| e.polarity == Polarity::Negative));
    }

    #[test]
    fn identical_frames_emit_nothing() {
        let a = Frame::from_fn(5, 4, |x, y| (x + y) as f32 / 10.0);
        assert!(frame_pair_events(&a, &a, 0.0, 0.1, &model(0.2, 0.0), 1).unwrap().is_empty());
    }

    #[test]
    fn mismatched_or_negative_frames_are_rejected() {
        let a = Frame::zeros(2, 2);
        assert!(matches!(frame_pair_events(&a, &Frame::zeros(3, 2), 0.0, 1.0, &model(0.1, 0.0), 0), Err(Error::ShapeMismatch(_))));
        let neg = Frame::filled(2, 2, -0.5);
        assert!(matches!(frame_pair_events(&a, &neg, 0.0, 1.0, &model(0.1, 0.0), 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn threshold_field_properties() {
        let f = sample_threshold_field(&model(0.25, 0.0), 8, 8, 3).unwrap();
        assert!(f.values.iter().all(|v| *v == 0.25));
        let a = sample_threshold_field(&model(0.25, 0.05), 8, 8, 3).unwrap();
        let b = sample_threshold_field(&model(0.25, 0.05), 8, 8, 3).unwrap();
        assert_eq!(a, b);
        let clamp = sample_threshold_field(&model(0.02, 1.0), 32, 32, 4).unwrap();
        assert!(clamp.values.iter().all(|v| *v >= MIN_THRESHOLD));
    }

    #[test]
    fn threshold_must_be_positive() {
        assert!(ThresholdModel::new(0.0, 0.0).is_err());
        assert!(ThresholdModel::new(-1.0, 0.0).is_err());
        assert!(ThresholdModel::new(0.1, -0.1).is_err());
    }

    #[test]
    fn zero_motion_is_silent() {
        let img = Frame::from_fn(16, 16, |x, y| 0.2 + 0.5 * ((x * 7 + y * 3) % 11) as f32 / 11.0);
        let (s, pair) = affine_sim_events(&img, &AffineMotion::default(), 0.05, &model(0.1, 0.0), 9).unwrap();
        assert!(s.is_empty());
        assert_eq!(pair.first, pair.second);
    }

    #[test]
    fn degenerate_scale_is_rejected() {
        let img = Frame::zeros(4, 4);
        let motion = AffineMotion { scale: 0.0, ..AffineMotion::default() };
        assert!(matches!(affine_sim_events(&img, &motion, 1.0, &model(0.1, 0.0), 0), Err(Error::DegenerateTransform(_))));
    }
}
