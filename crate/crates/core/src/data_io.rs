//! On-disk formats and the frame-pair samplers used for training.
//!
//! Event streams (`EVSTRM1`):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "EVSTRM1\0"
//! 8       2     width   (u16 LE)
//! 10      2     height  (u16 LE)
//! 12      8     count   (u64 LE)
//! 20      13*n  records: x u16, y u16, t f64, p i8 (+1 / -1)
//! ```
//!
//! Event volumes (`EVOL`): a 16-byte header (magic "EVOL", u16 B, u16 H,
//! u16 W, u8 normalized, 5 zero bytes) followed by `2B*H*W` f32 LE values in
//! channel-major order.
//!
//! Sequence manifests are plain text:
//!
//! ```text
//! # comments and blank lines are ignored
//! events: events.evs
//! width: 64
//! height: 64
//! path,timestamp
//! frames/000.png,0.000
//! frames/001.png,0.033
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, EventVolume, Polarity};
use crate::frame::Frame;

pub const EVENTS_MAGIC: &[u8; 8] = b"EVSTRM1\0";
pub const EVENTS_HEADER_LEN: usize = 20;
pub const EVENT_RECORD_LEN: usize = 13;
pub const VOLUME_MAGIC: &[u8; 4] = b"EVOL";
pub const VOLUME_HEADER_LEN: usize = 16;

/// Two frames, their timestamps and the events with `t0 <= t < t1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub first: Frame,
    pub second: Frame,
    pub t0: f64,
    pub t1: f64,
    pub events: EventStream,
}

impl FramePair {
    pub fn new(first: Frame, second: Frame, t0: f64, t1: f64, events: EventStream) -> Result<Self> {
        if !first.same_shape(&second) {
            return Err(Error::ShapeMismatch("frame pair images differ in size".into()));
        }
        if events.width() != first.width() || events.height() != first.height() {
            return Err(Error::ShapeMismatch(format!(
                "events are {}x{}, frames {}x{}",
                events.width(),
                events.height(),
                first.width(),
                first.height()
            )));
        }
        if !(t0 < t1) {
            return Err(Error::InvalidArgument(format!("frame pair needs t0 < t1 (got {t0}, {t1})")));
        }
        if let Some(i) = events.events().iter().position(|e| e.t < t0 || e.t >= t1) {
            return Err(Error::InvalidArgument(format!(
                "event {i} at t={} lies outside [{t0}, {t1})",
                events.events()[i].t
            )));
        }
        Ok(Self { first, second, t0, t1, events })
    }

    pub fn width(&self) -> usize {
        self.first.width()
    }

    pub fn height(&self) -> usize {
        self.first.height()
    }
}

// ---- EVSTRM1 ----

pub fn encode_events(stream: &EventStream) -> Result<Vec<u8>> {
    let (w, h) = (stream.width(), stream.height());
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("{w}x{h} does not fit the u16 header fields")));
    }
    let mut out = Vec::with_capacity(EVENTS_HEADER_LEN + EVENT_RECORD_LEN * stream.len());
    out.extend_from_slice(EVENTS_MAGIC);
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.polarity.sign() as u8);
    }
    Ok(out)
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < EVENTS_MAGIC.len() || &bytes[..8] != EVENTS_MAGIC {
        if bytes.len() < EVENTS_MAGIC.len() && EVENTS_MAGIC.starts_with(bytes) {
            return Err(Error::Truncated { offset: bytes.len() as u64, what: "header" });
        }
        return Err(Error::BadMagic { expected: "EVSTRM1\\0" });
    }
    if bytes.len() < EVENTS_HEADER_LEN {
        return Err(Error::Truncated { offset: bytes.len() as u64, what: "header" });
    }
    let width = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let height = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let body = &bytes[EVENTS_HEADER_LEN..];
    let complete = (body.len() / EVENT_RECORD_LEN) as u64;
    if complete < count {
        let offset = (EVENTS_HEADER_LEN as u64) + complete * EVENT_RECORD_LEN as u64;
        return Err(Error::Truncated { offset, what: "event record" });
    }
    let used = count as usize * EVENT_RECORD_LEN;
    if body.len() > used {
        return Err(Error::TrailingData {
            offset: (EVENTS_HEADER_LEN + used) as u64,
            count: (body.len() - used) as u64,
        });
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, r) in body.chunks_exact(EVENT_RECORD_LEN).enumerate() {
        let x = u16::from_le_bytes([r[0], r[1]]);
        let y = u16::from_le_bytes([r[2], r[3]]);
        let t = f64::from_le_bytes(r[4..12].try_into().unwrap());
        let p = r[12] as i8;
        let polarity = Polarity::from_sign(p).ok_or(Error::InvalidPolarity { index: i as u64, value: p })?;
        events.push(Event { x, y, t, polarity });
    }
    EventStream::new(width, height, events)
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    let bytes = encode_events(stream)?;
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_events(&bytes)
}

// ---- EVOL ----

pub fn encode_volume(volume: &EventVolume) -> Result<Vec<u8>> {
    let dims = [volume.num_bins(), volume.height(), volume.width()];
    if dims.iter().any(|&d| d > u16::MAX as usize) {
        return Err(Error::InvalidArgument(format!("volume dims {dims:?} do not fit u16 header fields")));
    }
    let mut out = Vec::with_capacity(VOLUME_HEADER_LEN + 4 * volume.data().len());
    out.extend_from_slice(VOLUME_MAGIC);
    for d in dims {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    out.push(volume.is_normalized() as u8);
    out.extend_from_slice(&[0; 5]);
    for v in volume.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_volume(bytes: &[u8]) -> Result<EventVolume> {
    if bytes.len() < 4 || &bytes[..4] != VOLUME_MAGIC {
        return Err(Error::BadMagic { expected: "EVOL" });
    }
    if bytes.len() < VOLUME_HEADER_LEN {
        return Err(Error::Truncated { offset: bytes.len() as u64, what: "volume header" });
    }
    let field = |i: usize| u16::from_le_bytes([bytes[4 + 2 * i], bytes[5 + 2 * i]]) as usize;
    let (bins, h, w) = (field(0), field(1), field(2));
    let normalized = match bytes[10] {
        0 => false,
        1 => true,
        v => return Err(Error::MalformedHeader(format!("normalized flag {v}"))),
    };
    let n = 2 * bins * h * w;
    let body = &bytes[VOLUME_HEADER_LEN..];
    if body.len() < 4 * n {
        let offset = VOLUME_HEADER_LEN + body.len() / 4 * 4;
        return Err(Error::Truncated { offset: offset as u64, what: "volume data" });
    }
    if body.len() > 4 * n {
        return Err(Error::TrailingData { offset: (VOLUME_HEADER_LEN + 4 * n) as u64, count: (body.len() - 4 * n) as u64 });
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    EventVolume::from_vec(bins, h, w, data, normalized)
}

pub fn write_volume(path: &Path, volume: &EventVolume) -> Result<()> {
    fs::write(path, encode_volume(volume)?).map_err(|e| Error::file(path, e))
}

pub fn read_volume(path: &Path) -> Result<EventVolume> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_volume(&bytes)
}

// ---- sequences ----

/// Manifest of one recorded sequence: frame files with timestamps and the
/// event file covering them.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub frames: Vec<(PathBuf, f64)>,
    pub events: PathBuf,
    pub width: usize,
    pub height: usize,
}

impl SequenceRecord {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut events = None;
        let mut width = None;
        let mut height = None;
        let mut frames = Vec::new();
        let mut in_table = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| Error::Parse { location: format!("line {}", n + 1), message };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !in_table {
                if line == "path,timestamp" {
                    in_table = true;
                    continue;
                }
                let (key, value) = line.split_once(':').ok_or_else(|| err(format!("expected `key: value`, got {line:?}")))?;
                let value = value.trim();
                let dim = || value.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
                match key.trim() {
                    "events" => events = Some(base.join(value)),
                    "width" => width = Some(dim()?),
                    "height" => height = Some(dim()?),
                    other => return Err(err(format!("unknown header key {other:?}"))),
                }
            } else {
                let (path, t) = line.rsplit_once(',').ok_or_else(|| err("expected `path,timestamp`".into()))?;
                let t: f64 = t.trim().parse().map_err(|e| err(format!("timestamp: {e}")))?;
                if !t.is_finite() {
                    return Err(err("timestamp is not finite".into()));
                }
                frames.push((base.join(path.trim()), t));
            }
        }
        let missing = |k: &str| Error::Parse { location: "header".into(), message: format!("missing `{k}`") };
        let record = SequenceRecord {
            frames,
            events: events.ok_or_else(|| missing("events"))?,
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
        };
        record.check_timestamps()?;
        Ok(record)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Writes the manifest with paths relative to `dir` where possible.
    pub fn to_text(&self, dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut s = format!("events: {}\nwidth: {}\nheight: {}\npath,timestamp\n", rel(&self.events), self.width, self.height);
        for (p, t) in &self.frames {
            s.push_str(&format!("{},{t}\n", rel(p)));
        }
        s
    }

    fn check_timestamps(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::InvalidArgument("a sequence needs at least two frames".into()));
        }
        if let Some(i) = self.frames.windows(2).position(|w| !(w[1].1 > w[0].1)) {
            return Err(Error::InvalidArgument(format!("frame timestamps must strictly increase (frame {})", i + 1)));
        }
        Ok(())
    }
}

/// A sequence held in memory.
#[derive(Clone, Debug)]
pub struct Sequence {
    frames: Vec<Frame>,
    timestamps: Vec<f64>,
    events: EventStream,
}

impl Sequence {
    pub fn new(frames: Vec<Frame>, timestamps: Vec<f64>, events: EventStream) -> Result<Self> {
        if frames.len() != timestamps.len() {
            return Err(Error::ShapeMismatch(format!("{} frames but {} timestamps", frames.len(), timestamps.len())));
        }
        if frames.len() < 2 {
            return Err(Error::InvalidArgument("a sequence needs at least two frames".into()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!("frame timestamps must strictly increase (frame {})", i + 1)));
        }
        let (w, h) = (events.width(), events.height());
        if let Some(i) = frames.iter().position(|f| f.width() != w || f.height() != h) {
            return Err(Error::ShapeMismatch(format!("frame {i} does not match the {w}x{h} sensor")));
        }
        let (lo, hi) = (timestamps[0], *timestamps.last().unwrap());
        if let Some(i) = events.events().iter().position(|e| e.t < lo || e.t > hi) {
            return Err(Error::InvalidArgument(format!("event {i} lies outside the frame time range [{lo}, {hi}]")));
        }
        Ok(Self { frames, timestamps, events })
    }

    pub fn load(record: &SequenceRecord) -> Result<Self> {
        let frames = record.frames.iter().map(|(p, _)| Frame::load(p)).collect::<Result<Vec<_>>>()?;
        let timestamps = record.frames.iter().map(|(_, t)| *t).collect();
        let events = read_events(&record.events)?;
        if events.width() != record.width || events.height() != record.height {
            return Err(Error::ShapeMismatch(format!(
                "event file is {}x{}, manifest says {}x{}",
                events.width(),
                events.height(),
                record.width,
                record.height
            )));
        }
        Self::new(frames, timestamps, events)
    }

    /// Writes frames as PNG, the event file and a manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let mut frames = Vec::new();
        for (i, (f, t)) in self.frames.iter().zip(&self.timestamps).enumerate() {
            let p = dir.join(format!("frame_{i:05}.png"));
            f.save_png(&p)?;
            frames.push((p, *t));
        }
        let events = dir.join("events.evs");
        write_events(&events, &self.events)?;
        let record = SequenceRecord { frames, events, width: self.width(), height: self.height() };
        let manifest = dir.join("sequence.txt");
        fs::write(&manifest, record.to_text(dir)).map_err(|e| Error::file(&manifest, e))?;
        Ok(manifest)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.events.width()
    }

    pub fn height(&self) -> usize {
        self.events.height()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn events(&self) -> &EventStream {
        &self.events
    }
}

/// Frames `anchor` and `anchor + gap` with the events between them.
pub fn sample_pair(seq: &Sequence, gap: usize, anchor: usize) -> Result<FramePair> {
    if gap == 0 {
        return Err(Error::InvalidArgument("frame gap must be >= 1".into()));
    }
    let end = anchor.checked_add(gap).filter(|&e| e < seq.len()).ok_or_else(|| {
        Error::FrameRange(format!("frames {anchor}..={} requested from a {}-frame sequence", anchor.saturating_add(gap), seq.len()))
    })?;
    let (t0, t1) = (seq.timestamps[anchor], seq.timestamps[end]);
    FramePair::new(seq.frames[anchor].clone(), seq.frames[end].clone(), t0, t1, seq.events.slice_time(t0, t1))
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub sequences: Vec<Sequence>,
}

/// Which pair a sampler drew.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairChoice {
    pub dataset: usize,
    pub sequence: usize,
    pub gap: usize,
    pub anchor: usize,
}

/// Picks a dataset by weight, then a sequence uniformly, a gap uniformly in
/// the inclusive `gap_range`, and an anchor uniformly among valid positions.
pub struct WeightedSampler<'a> {
    datasets: &'a [Dataset],
    index: WeightedIndex<f64>,
    gap_range: (usize, usize),
    rng: ChaCha8Rng,
}

pub fn weighted_dataset_sampler<'a>(datasets: &'a [Dataset], weights: &[f64], gap_range: (usize, usize), seed: u64) -> Result<WeightedSampler<'a>> {
    if datasets.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!("{} datasets but {} weights", datasets.len(), weights.len())));
    }
    let (lo, hi) = gap_range;
    if lo == 0 || hi < lo {
        return Err(Error::InvalidArgument(format!("bad frame gap range [{lo}, {hi}]")));
    }
    let index = WeightedIndex::new(weights.iter().copied())
        .map_err(|e| Error::InvalidArgument(format!("dataset weights: {e}")))?;
    for (d, w) in datasets.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        if d.sequences.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset {:?} has no sequences", d.name)));
        }
        if let Some(s) = d.sequences.iter().position(|s| s.len() <= hi) {
            return Err(Error::FrameRange(format!(
                "sequence {s} of {:?} has {} frames, fewer than needed for gap {hi}",
                d.name,
                d.sequences[s].len()
            )));
        }
    }
    Ok(WeightedSampler { datasets, index, gap_range, rng: ChaCha8Rng::seed_from_u64(seed) })
}

impl WeightedSampler<'_> {
    pub fn next_choice(&mut self) -> PairChoice {
        let dataset = self.index.sample(&mut self.rng);
        let seqs = &self.datasets[dataset].sequences;
        let sequence = self.rng.random_range(0..seqs.len());
        let gap = self.rng.random_range(self.gap_range.0..=self.gap_range.1);
        let anchor = self.rng.random_range(0..seqs[sequence].len() - gap);
        PairChoice { dataset, sequence, gap, anchor }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl Iterator for WeightedSampler<'_> {
    type Item = (PairChoice, FramePair);

    fn next(&mut self) -> Option<Self::Item> {
        let c = self.next_choice();
        let pair = sample_pair(&self.datasets[c.dataset].sequences[c.sequence], c.gap, c.anchor)
            .expect("choice validated against sequence length");
        Some((c, pair))
    }
}
