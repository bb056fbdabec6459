//! Test tracks built from straight and circular pieces.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pose::{wrap_angle, WorldPose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Right,
}

impl Turn {
    fn sign(self) -> f64 {
        match self {
            Turn::Left => -1.0,
            Turn::Right => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackElement {
    Line {
        length: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        section: Option<String>,
    },
    Arc {
        radius: f64,
        angle_deg: f64,
        turn: Turn,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        section: Option<String>,
    },
}

impl TrackElement {
    pub fn line(length: f64) -> Self {
        TrackElement::Line { length, section: None }
    }

    pub fn arc(radius: f64, angle_deg: f64, turn: Turn) -> Self {
        TrackElement::Arc {
            radius,
            angle_deg,
            turn,
            section: None,
        }
    }

    pub fn in_section(mut self, name: &str) -> Self {
        match &mut self {
            TrackElement::Line { section, .. } | TrackElement::Arc { section, .. } => *section = Some(name.to_string()),
        }
        self
    }

    fn section(&self) -> Option<&str> {
        match self {
            TrackElement::Line { section, .. } | TrackElement::Arc { section, .. } => section.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub name: String,
    #[serde(default)]
    pub start: WorldPose,
    pub elements: Vec<TrackElement>,
}

/// Named arc-length interval of a track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSection {
    pub name: String,
    pub s_start: f64,
    pub s_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Piece {
    Line {
        start: WorldPose,
        length: f64,
        s0: f64,
    },
    Arc {
        start: WorldPose,
        center: [f64; 2],
        radius: f64,
        sign: f64,
        length: f64,
        s0: f64,
    },
}

impl Piece {
    fn s0(&self) -> f64 {
        match *self {
            Piece::Line { s0, .. } | Piece::Arc { s0, .. } => s0,
        }
    }

    fn length(&self) -> f64 {
        match *self {
            Piece::Line { length, .. } | Piece::Arc { length, .. } => length,
        }
    }

    fn pose_at(&self, u: f64) -> WorldPose {
        match *self {
            Piece::Line { start, .. } => start.compose(0.0, u, 0.0),
            Piece::Arc {
                start,
                center,
                radius,
                sign,
                ..
            } => {
                let h = start.heading + sign * u / radius;
                let r = WorldPose::new(0.0, 0.0, h).right();
                WorldPose::new(center[0] - sign * radius * r[0], center[1] - sign * radius * r[1], h)
            }
        }
    }

    /// Cheap lower bound on the distance from `p` to this piece.
    fn distance_bound(&self, p: [f64; 2]) -> f64 {
        match *self {
            Piece::Line { start, length, .. } => {
                let f = start.forward();
                let r = start.right();
                let (dx, dy) = (p[0] - start.x, p[1] - start.y);
                let along = dx * f[0] + dy * f[1];
                let lat = (dx * r[0] + dy * r[1]).abs();
                lat.max(-along).max(along - length)
            }
            Piece::Arc { center, radius, .. } => ((p[0] - center[0]).hypot(p[1] - center[1]) - radius).abs(),
        }
    }

    /// `(arc length within piece, signed lateral offset, distance)`.
    fn project(&self, p: [f64; 2]) -> (f64, f64, f64) {
        match *self {
            Piece::Line { start, length, .. } => {
                let (lat, along, _) = start.relative(&WorldPose::new(p[0], p[1], start.heading));
                let u = along.clamp(0.0, length);
                let dist = if u == along { lat.abs() } else { lat.hypot(along - u) };
                (u, lat, dist)
            }
            Piece::Arc {
                start,
                center,
                radius,
                sign,
                length,
                ..
            } => {
                let q = [p[0] - center[0], p[1] - center[1]];
                let rho = q[0].hypot(q[1]);
                if rho == 0.0 {
                    return (0.0, sign * radius, radius);
                }
                // right(h_u) = −sign·q/ρ, right(h) = (cos h, −sin h)
                let rx = -sign * q[0] / rho;
                let ry = -sign * q[1] / rho;
                let h_u = (-ry).atan2(rx);
                let sweep = length / radius;
                let phi = sign * wrap_angle(h_u - start.heading);
                let lat = sign * (radius - rho);
                if (0.0..=sweep).contains(&phi) {
                    return (phi * radius, lat, (rho - radius).abs());
                }
                let ends = [0.0, length].map(|u| {
                    let e = self.pose_at(u);
                    (u, (p[0] - e.x).hypot(p[1] - e.y))
                });
                let (u, dist) = if ends[0].1 <= ends[1].1 { ends[0] } else { ends[1] };
                (u, lat, dist)
            }
        }
    }
}

/// Closest point on the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackProjection {
    pub s: f64,
    /// Right of the direction of travel is positive.
    pub lateral: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub name: String,
    pieces: Vec<Piece>,
    pub sections: Vec<TrackSection>,
    length: f64,
    spec: TrackSpec,
}

impl Track {
    pub fn from_spec(spec: &TrackSpec) -> Result<Track> {
        if spec.elements.is_empty() {
            return invalid(format!("track {} has no elements", spec.name));
        }
        let mut pieces = Vec::with_capacity(spec.elements.len());
        let mut sections: Vec<TrackSection> = Vec::new();
        let mut pose = spec.start;
        let mut s = 0.0;
        for el in &spec.elements {
            let piece = match *el {
                TrackElement::Line { length, .. } => {
                    if !(length > 0.0 && length.is_finite()) {
                        return invalid(format!("line length must be positive, got {length}"));
                    }
                    Piece::Line {
                        start: pose,
                        length,
                        s0: s,
                    }
                }
                TrackElement::Arc {
                    radius,
                    angle_deg,
                    turn,
                    ..
                } => {
                    if !(radius > 0.0 && radius.is_finite()) {
                        return invalid(format!("arc radius must be positive, got {radius}"));
                    }
                    if !(angle_deg > 0.0 && angle_deg < 360.0) {
                        return invalid(format!("arc angle must lie in (0, 360), got {angle_deg}"));
                    }
                    let sign = turn.sign();
                    let r = pose.right();
                    Piece::Arc {
                        start: pose,
                        center: [pose.x + sign * radius * r[0], pose.y + sign * radius * r[1]],
                        radius,
                        sign,
                        length: radius * angle_deg * PI / 180.0,
                        s0: s,
                    }
                }
            };
            let len = piece.length();
            if let Some(name) = el.section() {
                match sections.last_mut() {
                    Some(last) if last.name == name && last.s_end == s => last.s_end = s + len,
                    _ => sections.push(TrackSection {
                        name: name.to_string(),
                        s_start: s,
                        s_end: s + len,
                    }),
                }
            }
            pose = piece.pose_at(len);
            s += len;
            pieces.push(piece);
        }
        Ok(Track {
            name: spec.name.clone(),
            pieces,
            sections,
            length: s,
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn start(&self) -> WorldPose {
        self.spec.start
    }

    pub fn section(&self, name: &str) -> Option<&TrackSection> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Centerline pose at arc length `s`, clamped to the track.
    pub fn pose_at(&self, s: f64) -> WorldPose {
        let s = s.clamp(0.0, self.length);
        let idx = self.pieces.partition_point(|p| p.s0() <= s).saturating_sub(1);
        let piece = &self.pieces[idx];
        piece.pose_at((s - piece.s0()).min(piece.length()))
    }

    pub fn project(&self, p: [f64; 2]) -> TrackProjection {
        let mut best = TrackProjection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
        };
        for piece in &self.pieces {
            let (u, lat, dist) = piece.project(p);
            if dist < best.distance {
                best = TrackProjection {
                    s: piece.s0() + u,
                    lateral: lat,
                    distance: dist,
                };
            }
        }
        best
    }

    /// Projection if the centerline lies within `max_distance` of `p`.
    pub fn project_within(&self, p: [f64; 2], max_distance: f64) -> Option<TrackProjection> {
        let mut best: Option<TrackProjection> = None;
        for piece in &self.pieces {
            let bound = piece.distance_bound(p);
            if bound > max_distance || best.is_some_and(|b| bound >= b.distance) {
                continue;
            }
            let (u, lat, dist) = piece.project(p);
            if dist <= max_distance && best.is_none_or(|b| dist < b.distance) {
                best = Some(TrackProjection {
                    s: piece.s0() + u,
                    lateral: lat,
                    distance: dist,
                });
            }
        }
        best
    }

    /// Like [`project`](Self::project) but only considers pieces overlapping
    /// `[s_lo, s_hi]`, so a track that passes near itself stays unambiguous.
    pub fn project_near(&self, p: [f64; 2], s_lo: f64, s_hi: f64) -> TrackProjection {
        let mut best = TrackProjection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
        };
        for piece in &self.pieces {
            if piece.s0() > s_hi || piece.s0() + piece.length() < s_lo {
                continue;
            }
            let (u, lat, dist) = piece.project(p);
            if dist < best.distance {
                best = TrackProjection {
                    s: piece.s0() + u,
                    lateral: lat,
                    distance: dist,
                };
            }
        }
        if best.distance.is_finite() {
            best
        } else {
            self.project(p)
        }
    }

    /// Points every `step` meters, for drawing.
    pub fn polyline(&self, step: f64) -> Vec<[f64; 2]> {
        let n = (self.length / step).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| {
                let p = self.pose_at(self.length * i as f64 / n as f64);
                [p.x, p.y]
            })
            .collect()
    }
}

/// Minimum distance from `point` to the centerline.
pub fn deviation(point: [f64; 2], track: &Track) -> f64 {
    track.project(point).distance
}

const LANE_CHANGE_RADIUS: f64 = 45.5;

/// Half of an S bend that moves 3.5 m sideways over 25 m.
fn lane_change_angle() -> f64 {
    // two arcs: offset 2R(1 − cos φ) = 3.5
    (1.0 - 3.5 / (2.0 * LANE_CHANGE_RADIUS)).acos().to_degrees()
}

fn s_bend(first: Turn, section: &str) -> [TrackElement; 2] {
    let second = if first == Turn::Left { Turn::Right } else { Turn::Left };
    let phi = lane_change_angle();
    [
        TrackElement::arc(LANE_CHANGE_RADIUS, phi, first).in_section(section),
        TrackElement::arc(LANE_CHANGE_RADIUS, phi, second).in_section(section),
    ]
}

pub fn r7_80() -> TrackSpec {
    TrackSpec {
        name: "r7_80".into(),
        start: WorldPose::default(),
        elements: vec![
            TrackElement::line(20.0).in_section("approach"),
            TrackElement::arc(7.0, 80.0, Turn::Left).in_section("r7_80"),
            TrackElement::line(25.0).in_section("exit"),
        ],
    }
}

pub fn r5_120() -> TrackSpec {
    TrackSpec {
        name: "r5_120".into(),
        start: WorldPose::default(),
        elements: vec![
            TrackElement::line(20.0).in_section("approach"),
            TrackElement::arc(5.0, 120.0, Turn::Left).in_section("r5_120"),
            TrackElement::line(25.0).in_section("exit"),
        ],
    }
}

pub fn double_lane_change() -> TrackSpec {
    let mut elements = vec![TrackElement::line(20.0).in_section("approach")];
    elements.extend(s_bend(Turn::Left, "lane_change"));
    elements.push(TrackElement::line(10.0).in_section("lane_change"));
    elements.extend(s_bend(Turn::Right, "lane_change"));
    elements.push(TrackElement::line(25.0).in_section("exit"));
    TrackSpec {
        name: "lane_change".into(),
        start: WorldPose::default(),
        elements,
    }
}

/// The three maneuvers chained on one course.
pub fn full_course() -> TrackSpec {
    let mut elements = vec![
        TrackElement::line(20.0).in_section("approach"),
        TrackElement::arc(7.0, 80.0, Turn::Left).in_section("r7_80"),
        TrackElement::line(25.0).in_section("straight_1"),
    ];
    elements.extend(s_bend(Turn::Left, "lane_change"));
    elements.push(TrackElement::line(10.0).in_section("lane_change"));
    elements.extend(s_bend(Turn::Right, "lane_change"));
    elements.push(TrackElement::line(25.0).in_section("straight_2"));
    elements.push(TrackElement::arc(5.0, 120.0, Turn::Right).in_section("r5_120"));
    elements.push(TrackElement::line(25.0).in_section("exit"));
    TrackSpec {
        name: "full".into(),
        start: WorldPose::default(),
        elements,
    }
}

pub fn track_by_name(name: &str) -> Result<TrackSpec> {
    match name {
        "r7_80" => Ok(r7_80()),
        "r5_120" => Ok(r5_120()),
        "lane_change" => Ok(double_lane_change()),
        "full" => Ok(full_course()),
        other => invalid(format!(
            "unknown track {other:?} (expected r7_80, r5_120, lane_change or full)"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(track: &Track, p: [f64; 2]) -> f64 {
        let n = 200_000;
        (0..=n)
            .map(|i| {
                let q = track.pose_at(track.length() * i as f64 / n as f64);
                (p[0] - q.x).hypot(p[1] - q.y)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn on_centerline_is_zero() {
        let t = Track::from_spec(&r7_80()).unwrap();
        for s in [0.0, 5.0, 22.0, 27.5, 40.0, t.length()] {
            let p = t.pose_at(s);
            assert!(deviation([p.x, p.y], &t) < 1e-9, "s={s}");
            assert!((t.project([p.x, p.y]).s - s).abs() < 1e-9, "s={s}");
        }
    }

    #[test]
    fn straight_offset() {
        let t = Track::from_spec(&r7_80()).unwrap();
        assert!((deviation([0.5, 10.0], &t) - 0.5).abs() < 1e-12);
        assert!((t.project([0.5, 10.0]).lateral - 0.5).abs() < 1e-12);
        assert!((t.project([-0.5, 10.0]).lateral + 0.5).abs() < 1e-12);
    }

    #[test]
    fn arc_matches_brute_force() {
        let t = Track::from_spec(&r5_120()).unwrap();
        for p in [[-3.0, 23.0], [-6.0, 26.0], [-4.5, 21.5], [-1.0, 30.0], [-12.0, 18.0]] {
            let d = deviation(p, &t);
            assert!((d - brute(&t, p)).abs() < 1e-3, "{p:?}: {d} vs {}", brute(&t, p));
        }
    }

    #[test]
    fn left_turn_geometry() {
        let t = Track::from_spec(&r7_80()).unwrap();
        let arc = t.section("r7_80").unwrap();
        let end = t.pose_at(arc.s_end);
        assert!((end.heading + 80f64.to_radians()).abs() < 1e-12);
        // center at (−7, 20)
        let r = (end.x + 7.0).hypot(end.y - 20.0);
        assert!((r - 7.0).abs() < 1e-12);
    }

    #[test]
    fn lane_change_offsets() {
        let t = Track::from_spec(&double_lane_change()).unwrap();
        let sec = t.section("lane_change").unwrap();
        let bend_len = 2.0 * LANE_CHANGE_RADIUS * lane_change_angle().to_radians();
        let mid = t.pose_at(sec.s_start + bend_len);
        assert!((mid.x + 3.5).abs() < 1e-9);
        assert!((mid.y - 20.0 - 25.0).abs() < 0.01);
        assert!(mid.heading.abs() < 1e-12);
        let end = t.pose_at(sec.s_end);
        assert!(end.x.abs() < 1e-9);
    }

    #[test]
    fn sections_are_contiguous() {
        let t = Track::from_spec(&full_course()).unwrap();
        for w in t.sections.windows(2) {
            assert!((w[0].s_end - w[1].s_start).abs() < 1e-12);
        }
        assert!((t.sections.last().unwrap().s_end - t.length()).abs() < 1e-9);
    }

    #[test]
    fn bounded_projection_agrees() {
        let t = Track::from_spec(&full_course()).unwrap();
        for i in 0..400 {
            let p = [-40.0 + (i % 20) as f64 * 4.1, -5.0 + (i / 20) as f64 * 6.3];
            let full = t.project(p);
            match t.project_within(p, 3.0) {
                Some(b) => assert!((b.distance - full.distance).abs() < 1e-12),
                None => assert!(full.distance > 3.0),
            }
        }
    }

    #[test]
    fn reflection_symmetry() {
        let t = Track::from_spec(&r7_80()).unwrap();
        let base = t.pose_at(30.0);
        let n = base.right();
        let a = deviation([base.x + 0.7 * n[0], base.y + 0.7 * n[1]], &t);
        let b = deviation([base.x - 0.7 * n[0], base.y - 0.7 * n[1]], &t);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bad_specs() {
        assert!(track_by_name("oval").is_err());
        let spec = TrackSpec {
            name: "x".into(),
            start: WorldPose::default(),
            elements: vec![],
        };
        assert!(Track::from_spec(&spec).is_err());
        let spec = TrackSpec {
            name: "x".into(),
            start: WorldPose::default(),
            elements: vec![TrackElement::arc(-1.0, 30.0, Turn::Left)],
        };
        assert!(Track::from_spec(&spec).is_err());
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = full_course();
        let text = toml::to_string(&spec).unwrap();
        let back: TrackSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
