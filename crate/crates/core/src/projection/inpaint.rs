//! Fast-marching inpainting (Telea).
//!
//! Unknown pixels are visited in increasing arrival time `T` of a front that
//! starts on the known pixels bordering the hole. Each is filled with a
//! normalized weighted average of already-known pixels within the radius,
//! weighted by direction (alignment with ∇T), distance and level-set
//! closeness.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use image::{Rgb, RgbImage};

use super::WarpedFrame;

pub const DEFAULT_INPAINT_RADIUS: u32 = 5;

const INSIDE_T: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Inpainted {
    pub image: RgbImage,
    /// The mask had no valid pixel; the image is the frame's mean color.
    pub uniform_fill: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

#[derive(Clone, Copy)]
struct Entry {
    t: f64,
    idx: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // min-heap on (t, idx)
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.idx.cmp(&self.idx))
    }
}

struct Grid {
    w: usize,
    h: usize,
    flags: Vec<Flag>,
    t: Vec<f64>,
}

impl Grid {
    #[inline]
    fn at(&self, x: i64, y: i64) -> Option<usize> {
        (x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h).then(|| y as usize * self.w + x as usize)
    }

    #[inline]
    fn settled(&self, i: Option<usize>) -> Option<f64> {
        i.filter(|&i| self.flags[i] != Flag::Inside).map(|i| self.t[i])
    }

    fn solve_pair(&self, a: Option<usize>, b: Option<usize>) -> f64 {
        match (self.settled(a), self.settled(b)) {
            (Some(t1), Some(t2)) => {
                let d = t1 - t2;
                let r2 = 2.0 - d * d;
                if r2 > 0.0 {
                    let r = r2.sqrt();
                    let s = (t1 + t2 - r) / 2.0;
                    if s >= t1 && s >= t2 {
                        return s;
                    }
                    let s = s + r;
                    if s >= t1 && s >= t2 {
                        return s;
                    }
                }
                1.0 + t1.min(t2)
            }
            (Some(t1), None) | (None, Some(t1)) => 1.0 + t1,
            (None, None) => INSIDE_T,
        }
    }

    fn arrival(&self, x: i64, y: i64) -> f64 {
        let (l, r) = (self.at(x - 1, y), self.at(x + 1, y));
        let (u, d) = (self.at(x, y - 1), self.at(x, y + 1));
        self.solve_pair(u, l)
            .min(self.solve_pair(d, l))
            .min(self.solve_pair(u, r))
            .min(self.solve_pair(d, r))
    }

    fn gradient(&self, x: i64, y: i64, t_here: f64) -> (f64, f64) {
        let axis = |lo: Option<usize>, hi: Option<usize>| match (self.settled(lo), self.settled(hi)) {
            (Some(a), Some(b)) => (b - a) / 2.0,
            (Some(a), None) => t_here - a,
            (None, Some(b)) => b - t_here,
            (None, None) => 0.0,
        };
        (
            axis(self.at(x - 1, y), self.at(x + 1, y)),
            axis(self.at(x, y - 1), self.at(x, y + 1)),
        )
    }
}

fn mean_color(img: &RgbImage) -> Rgb<u8> {
    let n = (img.width() * img.height()).max(1) as f64;
    let mut acc = [0.0f64; 3];
    for p in img.pixels() {
        for c in 0..3 {
            acc[c] += p.0[c] as f64;
        }
    }
    Rgb(acc.map(|v| (v / n).round() as u8))
}

pub fn inpaint(frame: &WarpedFrame, radius: u32) -> Inpainted {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let mask = &frame.valid_mask;
    if mask.iter().all(|&v| v) {
        return Inpainted {
            image: frame.rgb.clone(),
            uniform_fill: false,
        };
    }
    if !mask.iter().any(|&v| v) {
        log::warn!("inpaint: no valid pixel; filling with the mean color");
        let c = mean_color(&frame.rgb);
        return Inpainted {
            image: RgbImage::from_pixel(w as u32, h as u32, c),
            uniform_fill: true,
        };
    }

    let mut grid = Grid {
        w,
        h,
        flags: mask
            .iter()
            .map(|&v| if v { Flag::Known } else { Flag::Inside })
            .collect(),
        t: mask.iter().map(|&v| if v { 0.0 } else { INSIDE_T }).collect(),
    };
    let mut image = frame.rgb.clone();
    let mut heap = BinaryHeap::new();
    for i in 0..w * h {
        if grid.flags[i] != Flag::Inside {
            continue;
        }
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            if let Some(j) = grid.at(x + dx, y + dy) {
                if grid.flags[j] == Flag::Known {
                    grid.flags[j] = Flag::Band;
                    heap.push(Entry { t: 0.0, idx: j });
                }
            }
        }
    }

    let rad = radius.max(1) as i64;
    // (dx, dy, distance weight) for every offset inside the disc
    let disc: Vec<(i64, i64, f64)> = (-rad..=rad)
        .flat_map(|dy| (-rad..=rad).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| (dx, dy) != (0, 0) && dx * dx + dy * dy <= rad * rad)
        .map(|(dx, dy)| {
            let len2 = (dx * dx + dy * dy) as f64;
            (dx, dy, 1.0 / (len2 * len2.sqrt()))
        })
        .collect();
    while let Some(Entry { idx, .. }) = heap.pop() {
        if grid.flags[idx] == Flag::Known {
            continue;
        }
        grid.flags[idx] = Flag::Known;
        let (x, y) = ((idx % w) as i64, (idx / w) as i64);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            let Some(j) = grid.at(nx, ny) else { continue };
            if grid.flags[j] != Flag::Inside {
                continue;
            }
            let t = grid.arrival(nx, ny);
            let (gx, gy) = grid.gradient(nx, ny, t);

            let px = image.as_raw();
            let mut acc = [0.0; 3];
            let mut wsum = 0.0;
            for &(ox, oy, dst) in &disc {
                let Some(k) = grid.at(nx - ox, ny - oy) else { continue };
                if grid.flags[k] == Flag::Inside {
                    continue;
                }
                // r points from the neighbour to the pixel being filled
                let d = (ox as f64 * gx + oy as f64 * gy).abs();
                let dir = if d <= 0.01 { 1e-6 } else { d };
                let lev = 1.0 / (1.0 + (grid.t[k] - t).abs());
                let wk = dir * dst * lev;
                for c in 0..3 {
                    acc[c] += wk * px[k * 3 + c] as f64;
                }
                wsum += wk;
            }
            if wsum > 0.0 {
                let v = acc.map(|v| (v / wsum).round().clamp(0.0, 255.0) as u8);
                image.put_pixel(nx as u32, ny as u32, Rgb(v));
            }
            grid.t[j] = t;
            grid.flags[j] = Flag::Band;
            heap.push(Entry { t, idx: j });
        }
    }

    Inpainted {
        image,
        uniform_fill: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_codec::{DepthMap, Fov};

    fn frame(img: RgbImage, mask: Vec<bool>) -> WarpedFrame {
        let (w, h) = (img.width() as usize, img.height() as usize);
        WarpedFrame {
            rgb: img,
            new_depth: DepthMap::filled(w, h, 1.0)
                .unwrap()
                .with_fov(Fov::from_degrees(90.0, 60.0).unwrap()),
            valid_mask: mask,
        }
    }

    #[test]
    fn full_mask_is_identity() {
        let img = RgbImage::from_fn(6, 5, |x, y| Rgb([x as u8 * 30, y as u8 * 40, 7]));
        let out = inpaint(&frame(img.clone(), vec![true; 30]), 5);
        assert_eq!(out.image, img);
    }

    #[test]
    fn single_hole_in_uniform_color() {
        let mut img = RgbImage::from_pixel(9, 9, Rgb([40, 120, 200]));
        img.put_pixel(4, 4, Rgb([0, 0, 0]));
        let mut mask = vec![true; 81];
        mask[40] = false;
        let out = inpaint(&frame(img, mask), 5);
        assert_eq!(*out.image.get_pixel(4, 4), Rgb([40, 120, 200]));
    }

    #[test]
    fn stripe_stays_within_neighbour_range() {
        let (w, h) = (20u32, 12u32);
        let img = RgbImage::from_fn(w, h, |x, _| {
            if x < 8 {
                Rgb([200, 10, 10])
            } else if x >= 12 {
                Rgb([20, 180, 60])
            } else {
                Rgb([0, 0, 0])
            }
        });
        let mask: Vec<bool> = (0..w * h).map(|i| !(8..12).contains(&(i % w))).collect();
        let out = inpaint(&frame(img, mask), 5);
        for y in 0..h {
            for x in 8..12 {
                let p = out.image.get_pixel(x, y).0;
                assert!((20..=200).contains(&p[0]), "{p:?}");
                assert!((10..=180).contains(&p[1]), "{p:?}");
                assert!((10..=60).contains(&p[2]), "{p:?}");
            }
        }
    }

    #[test]
    fn empty_mask_uses_mean() {
        let img = RgbImage::from_fn(2, 1, |x, _| if x == 0 { Rgb([0, 0, 0]) } else { Rgb([100, 50, 20]) });
        let out = inpaint(&frame(img, vec![false; 2]), 5);
        assert!(out.uniform_fill);
        assert!(out.image.pixels().all(|p| *p == Rgb([50, 25, 10])));
    }

    #[test]
    fn large_hole_is_completely_filled() {
        let (w, h) = (30u32, 30u32);
        let img = RgbImage::from_pixel(w, h, Rgb([10, 20, 30]));
        let mask: Vec<bool> = (0..w * h).map(|i| i % w < 3).collect();
        let out = inpaint(&frame(img, mask), 3);
        assert!(out.image.pixels().all(|p| *p == Rgb([10, 20, 30])));
    }
}
