use std::collections::VecDeque;

use crate::motion_predictor::{integrate_trajectory, SteerSegment, VehicleGeometry, MAX_STEER};
use crate::pose::WorldPose;
use crate::sim_world::{Track, FRONT_OVERHANG};

/// Deterministic stand-in for the human driver.
///
/// Looks `preview` seconds ahead: it picks the steering angle whose constant
/// arc puts the car's forward-most point on the centerline after the preview
/// time, judged from the pose the display implies. Each decision becomes
/// effective `reaction_delay` after the view that prompted it.
#[derive(Debug, Clone)]
pub struct ScriptedOperator {
    preview: f64,
    reaction_delay: f64,
    geom: VehicleGeometry,
    pending: VecDeque<(f64, f64)>,
    steer: f64,
    progress: f64,
}

impl ScriptedOperator {
    pub fn new(preview: f64, reaction_delay: f64, geom: VehicleGeometry) -> Self {
        Self {
            preview,
            reaction_delay,
            geom,
            pending: VecDeque::new(),
            steer: 0.0,
            progress: 0.0,
        }
    }

    fn front_after(&self, axle: &WorldPose, steer: f64, speed: f64) -> [f64; 2] {
        let seg = [SteerSegment::new(steer, self.preview)];
        let p = integrate_trajectory(&seg, speed, 0.0, &self.geom).expect("valid segment");
        axle.compose(p.x, p.z, p.psi)
            .ahead(self.geom.wheelbase + FRONT_OVERHANG)
    }

    /// Steering angle for a rear-axle pose at the given speed.
    pub fn decide(&mut self, track: &Track, axle: &WorldPose, speed: f64) -> f64 {
        let front = axle.ahead(self.geom.wheelbase + FRONT_OVERHANG);
        let here = track.project_near(front, self.progress - 5.0, self.progress + 15.0);
        self.progress = self.progress.max(here.s);
        let speed = speed.max(0.5);
        let reach = speed * self.preview + 5.0;
        let lateral = |op: &Self, steer: f64| {
            let p = op.front_after(axle, steer, speed);
            track.project_near(p, here.s - 1.0, here.s + reach).lateral
        };
        let (mut lo, mut hi) = (-MAX_STEER, MAX_STEER);
        if lateral(self, lo) >= 0.0 {
            return lo;
        }
        if lateral(self, hi) <= 0.0 {
            return hi;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if lateral(self, mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Where the car will be once a decision taken at `t` takes effect,
    /// given the steering already committed.
    fn anticipate(&self, t: f64, shown: &WorldPose, speed: f64) -> WorldPose {
        let end = t + self.reaction_delay;
        let mut segs = Vec::new();
        let (mut from, mut steer) = (t, self.steer);
        for &(ready, s) in &self.pending {
            if ready > from {
                segs.push(SteerSegment::new(steer, ready.min(end) - from));
                from = ready.min(end);
            }
            steer = s;
        }
        if end > from {
            segs.push(SteerSegment::new(steer, end - from));
        }
        match integrate_trajectory(&segs, speed.max(0.0), 0.0, &self.geom) {
            Ok(p) => shown.compose(p.x, p.z, p.psi),
            Err(_) => *shown,
        }
    }

    /// Reacts to a view of the car at time `t`.
    pub fn observe(&mut self, t: f64, track: &Track, shown: &WorldPose, speed: f64) {
        let ahead = self.anticipate(t, shown, speed);
        let steer = self.decide(track, &ahead, speed);
        self.pending.push_back((t + self.reaction_delay, steer));
    }

    /// Steering wheel position at time `t`.
    pub fn steer_at(&mut self, t: f64) -> f64 {
        while self.pending.front().is_some_and(|&(ready, _)| ready <= t + 1e-9) {
            self.steer = self.pending.pop_front().expect("front checked").1;
        }
        self.steer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_world::{r7_80, Track, TrackElement, TrackSpec, Turn};

    fn op() -> ScriptedOperator {
        ScriptedOperator::new(1.0, 0.15, VehicleGeometry::default())
    }

    #[test]
    fn straight_on_centerline_is_zero() {
        let track = Track::from_spec(&r7_80()).unwrap();
        assert!(op().decide(&track, &WorldPose::new(0.0, 2.0, 0.0), 2.78).abs() < 1e-9);
    }

    #[test]
    fn offset_steers_back() {
        let track = Track::from_spec(&r7_80()).unwrap();
        // half a meter right of the line: steer left (negative)
        assert!(op().decide(&track, &WorldPose::new(0.5, 2.0, 0.0), 2.78) < 0.0);
        assert!(op().decide(&track, &WorldPose::new(-0.5, 2.0, 0.0), 2.78) > 0.0);
    }

    #[test]
    fn holds_a_circle_without_bias() {
        // car whose front point sits on a right-hand circle, tangent to it
        let r = 30.0;
        let spec = TrackSpec {
            name: "circle".into(),
            start: WorldPose::default(),
            elements: vec![TrackElement::arc(r, 300.0, Turn::Right)],
        };
        let track = Track::from_spec(&spec).unwrap();
        let g = VehicleGeometry::default();
        let d = g.wheelbase + FRONT_OVERHANG;
        let rr = (r * r - d * d).sqrt();
        // rear axle on the inner circle, heading tangent to it, front point at the track start
        let beta = (d / r).asin();
        let axle = WorldPose::new(r - rr * beta.cos(), -rr * beta.sin(), -beta);
        let front = axle.ahead(d);
        assert!(front[0].abs() < 1e-9 && front[1].abs() < 1e-9);
        let steer = op().decide(&track, &axle, 2.78);
        let want = (g.wheelbase / rr).atan();
        assert!((steer - want).abs() < 1e-6, "{steer} vs {want}");
    }

    #[test]
    fn reaction_delay_holds_decisions() {
        let track = Track::from_spec(&r7_80()).unwrap();
        let mut o = op();
        o.observe(1.0, &track, &WorldPose::new(0.5, 2.0, 0.0), 2.78);
        assert_eq!(o.steer_at(1.1), 0.0);
        assert!(o.steer_at(1.15) < 0.0);
    }

    #[test]
    fn output_is_bounded() {
        let track = Track::from_spec(&r7_80()).unwrap();
        let s = op().decide(&track, &WorldPose::new(-3.0, 5.0, 1.5), 2.78);
        assert!(s.abs() <= MAX_STEER);
    }
}
