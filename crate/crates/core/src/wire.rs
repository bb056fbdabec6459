//! Wire messages for the frame downlink and the command uplink, and a
//! simulated one-way channel that delays them.
//!
//! All integers and floats are little-endian.
//!
//! Frame header (50 bytes), followed by the RGB then the depth payload:
//!
//! | off | size | field                 |
//! |-----|------|-----------------------|
//! | 0   | 4    | magic `PPFM`          |
//! | 4   | 2    | version (u16)         |
//! | 6   | 8    | seq (u64)             |
//! | 14  | 8    | capture time, µs (u64)|
//! | 22  | 4    | speed, m/s (f32)      |
//! | 26  | 4    | accel, m/s² (f32)     |
//! | 30  | 12   | fov_h, fov_v, pitch (f32, rad) |
//! | 42  | 8    | rgb, depth payload lengths (u32) |
//!
//! Command (40 bytes): magic `PPCM`, version (u16), reserved (u16, zero),
//! then steer, station timestamp, p95, p999 as f64.

use std::collections::VecDeque;
use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delay_model::{GevParams, TraceRecord, MAX_P999};
use crate::depth_codec::{Bandwidth, EncodedDepthMap, Fov};
use crate::error::{invalid, Error, Result};

pub const FRAME_MAGIC: [u8; 4] = *b"PPFM";
pub const COMMAND_MAGIC: [u8; 4] = *b"PPCM";
pub const WIRE_VERSION: u16 = 1;
pub const FRAME_HEADER_LEN: usize = 50;
pub const COMMAND_LEN: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMsg {
    pub seq: u64,
    /// Capture time in whole microseconds of the shared clock.
    pub t0_us: u64,
    pub speed: f32,
    pub accel: f32,
    pub fov_h: f32,
    pub fov_v: f32,
    pub pitch: f32,
    pub rgb_payload: Vec<u8>,
    pub depth_payload: Vec<u8>,
}

/// Image container used for a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Container {
    Png,
    Jpeg { quality: u8 },
}

impl Container {
    /// `png`, `jpeg` or `jpeg:<quality>` with quality in 1..=100.
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (kind, quality) = match lower.split_once(':') {
            Some((k, q)) => (k, Some(q)),
            None => (lower.as_str(), None),
        };
        match (kind, quality) {
            ("png", None) => Ok(Container::Png),
            ("jpeg" | "jpg", None) => Ok(Container::Jpeg { quality: 80 }),
            ("jpeg" | "jpg", Some(q)) => match q.parse::<u8>() {
                Ok(q @ 1..=100) => Ok(Container::Jpeg { quality: q }),
                _ => invalid(format!("jpeg quality must be 1..=100, got {q:?}")),
            },
            _ => invalid(format!("unknown container {s:?} (png, jpeg, jpeg:<quality>)")),
        }
    }
}

pub fn seconds_to_micros(t: f64) -> Result<u64> {
    if !t.is_finite() || t < 0.0 {
        return invalid(format!("timestamp must be finite and nonnegative, got {t}"));
    }
    Ok((t * 1e6).round() as u64)
}

pub fn encode_rgb(img: &RgbImage, c: Container) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match c {
        Container::Png => img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)?,
        Container::Jpeg { quality } => JpegEncoder::new_with_quality(&mut out, quality).encode_image(img)?,
    }
    Ok(out)
}

pub fn encode_depth_payload(e: &EncodedDepthMap, c: Container) -> Result<Vec<u8>> {
    match c {
        Container::Png => e.to_png(),
        Container::Jpeg { quality } => e.to_jpeg(quality),
    }
}

impl FrameMsg {
    #[allow(clippy::too_many_arguments)]
    pub fn from_images(
        seq: u64,
        t0: f64,
        speed: f64,
        accel: f64,
        fov: Fov,
        pitch: f64,
        rgb: &RgbImage,
        depth: &EncodedDepthMap,
        rgb_container: Container,
        depth_container: Container,
    ) -> Result<Self> {
        if rgb.width() as usize != depth.width || rgb.height() as usize != depth.height {
            return invalid("rgb and depth payloads differ in size");
        }
        Ok(Self {
            seq,
            t0_us: seconds_to_micros(t0)?,
            speed: speed as f32,
            accel: accel as f32,
            fov_h: fov.horizontal as f32,
            fov_v: fov.vertical as f32,
            pitch: pitch as f32,
            rgb_payload: encode_rgb(rgb, rgb_container)?,
            depth_payload: encode_depth_payload(depth, depth_container)?,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0_us as f64 * 1e-6
    }

    pub fn fov(&self) -> Result<Fov> {
        Fov::new(self.fov_h as f64, self.fov_v as f64)
    }

    /// Decodes both payloads and checks that their dimensions agree.
    pub fn decode_images(&self) -> Result<(RgbImage, EncodedDepthMap)> {
        let rgb = image::load_from_memory(&self.rgb_payload)?.into_rgb8();
        let depth = EncodedDepthMap::from_container(&self.depth_payload)?;
        if rgb.width() as usize != depth.width || rgb.height() as usize != depth.height {
            return Err(Error::Decode(format!(
                "rgb payload is {}x{} but depth payload is {}x{}",
                rgb.width(),
                rgb.height(),
                depth.width,
                depth.height
            )));
        }
        Ok((rgb, depth))
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_LEN + self.rgb_payload.len() + self.depth_payload.len()
    }
}

/// Measured bandwidth of a frame stream once both payloads are compressed,
/// header included.
pub fn stream_bandwidth(
    frames: &[(RgbImage, EncodedDepthMap)],
    rgb_container: Container,
    depth_container: Container,
    fps: f64,
) -> Result<Bandwidth> {
    if frames.is_empty() {
        return invalid("no frames to measure");
    }
    let mut total = 0usize;
    for (rgb, depth) in frames {
        total += FRAME_HEADER_LEN + encode_rgb(rgb, rgb_container)?.len();
        total += encode_depth_payload(depth, depth_container)?.len();
    }
    Ok(Bandwidth::from_frame_bytes(total as f64 / frames.len() as f64, fps))
}

pub fn encode_frame(f: &FrameMsg) -> Result<Vec<u8>> {
    let rgb_len = u32::try_from(f.rgb_payload.len()).or_else(|_| invalid("rgb payload too large"))?;
    let depth_len = u32::try_from(f.depth_payload.len()).or_else(|_| invalid("depth payload too large"))?;
    let mut out = Vec::with_capacity(f.encoded_len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.extend_from_slice(&f.seq.to_le_bytes());
    out.extend_from_slice(&f.t0_us.to_le_bytes());
    for v in [f.speed, f.accel, f.fov_h, f.fov_v, f.pitch] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&rgb_len.to_le_bytes());
    out.extend_from_slice(&depth_len.to_le_bytes());
    out.extend_from_slice(&f.rgb_payload);
    out.extend_from_slice(&f.depth_payload);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Decode(format!(
                    "{} truncated: need {} bytes at offset {}, have {}",
                    self.what,
                    n,
                    self.pos,
                    self.buf.len()
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        self.take().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.take().map(u64::from_le_bytes)
    }
    fn f32(&mut self) -> Result<f32> {
        self.take().map(f32::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64> {
        self.take().map(f64::from_le_bytes)
    }

    fn preamble(&mut self, magic: [u8; 4]) -> Result<()> {
        let m: [u8; 4] = self.take()?;
        if m != magic {
            return Err(Error::Decode(format!("{}: bad magic {:?}", self.what, m)));
        }
        let v = self.u16()?;
        if v != WIRE_VERSION {
            return Err(Error::Decode(format!("{}: unsupported version {v}", self.what)));
        }
        Ok(())
    }
}

pub fn decode_frame(bytes: &[u8]) -> Result<FrameMsg> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "frame",
    };
    r.preamble(FRAME_MAGIC)?;
    let seq = r.u64()?;
    let t0_us = r.u64()?;
    let (speed, accel, fov_h, fov_v, pitch) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?, r.f32()?);
    let (rgb_len, depth_len) = (r.u32()? as usize, r.u32()? as usize);
    let rgb_payload = r.bytes(rgb_len)?.to_vec();
    let depth_payload = r.bytes(depth_len)?.to_vec();
    if r.pos != bytes.len() {
        return Err(Error::Decode(format!("frame: {} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(FrameMsg {
        seq,
        t0_us,
        speed,
        accel,
        fov_h,
        fov_v,
        pitch,
        rgb_payload,
        depth_payload,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandMsg {
    steer: f64,
    ts_station: f64,
    p95: f64,
    p999: f64,
}

impl CommandMsg {
    pub fn new(steer: f64, ts_station: f64, p95: f64, p999: f64) -> Result<Self> {
        if !steer.is_finite() || !ts_station.is_finite() {
            return invalid("steer and timestamp must be finite");
        }
        if !(0.0..=p999).contains(&p95) || !(p999 <= MAX_P999) {
            return invalid(format!(
                "need 0 <= p95 <= p999 <= {MAX_P999}, got p95={p95}, p999={p999}"
            ));
        }
        Ok(Self {
            steer,
            ts_station,
            p95,
            p999,
        })
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }
    pub fn ts_station(&self) -> f64 {
        self.ts_station
    }
    pub fn p95(&self) -> f64 {
        self.p95
    }
    pub fn p999(&self) -> f64 {
        self.p999
    }
}

pub fn encode_command(c: &CommandMsg) -> [u8; COMMAND_LEN] {
    let mut out = [0u8; COMMAND_LEN];
    out[0..4].copy_from_slice(&COMMAND_MAGIC);
    out[4..6].copy_from_slice(&WIRE_VERSION.to_le_bytes());
    for (i, v) in [c.steer, c.ts_station, c.p95, c.p999].into_iter().enumerate() {
        out[8 + 8 * i..16 + 8 * i].copy_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_command(bytes: &[u8]) -> Result<CommandMsg> {
    if bytes.len() != COMMAND_LEN {
        return Err(Error::Decode(format!(
            "command must be {COMMAND_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "command",
    };
    r.preamble(COMMAND_MAGIC)?;
    if r.u16()? != 0 {
        return Err(Error::Decode("command: reserved field is not zero".into()));
    }
    let (steer, ts, p95, p999) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    CommandMsg::new(steer, ts, p95, p999).map_err(|e| Error::Decode(format!("command: {e}")))
}

/// Where a channel's per-message delays come from.
#[derive(Debug, Clone)]
pub enum DelaySource {
    Constant(f64),
    Gev {
        params: GevParams,
        rng: ChaCha8Rng,
    },
    /// Replays a recorded trace: a message sent at channel time `t` gets the
    /// delay of the last record at or before `t + first timestamp`, times
    /// `scale`. The trace repeats past its end.
    Trace {
        records: Vec<TraceRecord>,
        scale: f64,
    },
}

impl DelaySource {
    pub fn constant(delay: f64) -> Result<Self> {
        if !(delay >= 0.0) || !delay.is_finite() {
            return invalid(format!("delay must be finite and nonnegative, got {delay}"));
        }
        Ok(DelaySource::Constant(delay))
    }

    pub fn gev(params: GevParams, seed: u64) -> Self {
        DelaySource::Gev {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn trace(mut records: Vec<TraceRecord>, scale: f64) -> Result<Self> {
        if records.is_empty() {
            return invalid("delay trace is empty");
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return invalid(format!("trace scale must be positive, got {scale}"));
        }
        records.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
        Ok(DelaySource::Trace { records, scale })
    }

    /// Delay for a message sent at `t`, never negative.
    pub fn sample(&mut self, t: f64) -> f64 {
        match self {
            DelaySource::Constant(d) => *d,
            DelaySource::Gev { params, rng } => params.sample(rng).max(0.0),
            DelaySource::Trace { records, scale } => {
                let t0 = records[0].timestamp_s;
                let span = records[records.len() - 1].timestamp_s - t0;
                let mut rel = t.max(0.0);
                if span > 0.0 && rel > span {
                    // the period includes one mean record spacing so the last
                    // record gets a turn before wrapping
                    let period = span * records.len() as f64 / (records.len() - 1) as f64;
                    rel = rel.rem_euclid(period);
                }
                let i = records.partition_point(|r| r.timestamp_s - t0 <= rel).saturating_sub(1);
                records[i].delay_s * *scale
            }
        }
    }
}

/// One-way channel with per-message delays and FIFO delivery.
#[derive(Debug, Clone)]
pub struct DelayedChannel<T> {
    source: DelaySource,
    queue: VecDeque<(f64, f64, T)>,
    last_release: f64,
}

/// A message taken off a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery<T> {
    pub sent_at: f64,
    pub released_at: f64,
    pub msg: T,
}

impl<T> DelayedChannel<T> {
    pub fn new(source: DelaySource) -> Self {
        Self {
            source,
            queue: VecDeque::new(),
            last_release: f64::NEG_INFINITY,
        }
    }

    /// Queues `msg` and returns its release time. A message never overtakes
    /// one sent before it.
    pub fn send(&mut self, msg: T, now: f64) -> f64 {
        let release = (now + self.source.sample(now)).max(self.last_release);
        self.last_release = release;
        self.queue.push_back((now, release, msg));
        release
    }

    /// Removes and returns every message released at or before `now`, up to
    /// a nanosecond of rounding.
    pub fn poll(&mut self, now: f64) -> Vec<Delivery<T>> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|(_, r, _)| *r <= now + 1e-9) {
            let (sent_at, released_at, msg) = self.queue.pop_front().expect("front checked");
            out.push(Delivery {
                sent_at,
                released_at,
                msg,
            });
        }
        out
    }

    pub fn next_release(&self) -> Option<f64> {
        self.queue.front().map(|(_, r, _)| *r)
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}
