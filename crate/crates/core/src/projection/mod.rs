//! Depth-image reprojection into a forecast camera pose.
//!
//! Pipeline: depth map to camera-frame points, rigid transform (yaw and
//! translation in the level frame, conjugated by the camera pitch), back to
//! pixel coordinates, then every source pixel is painted as a square span
//! scaled by `z_old / z_new`, far to near. Pixels nobody paints stay invalid
//! and are filled by [`inpaint`].
//!
//! Pixel storage is 0-based; the centering uses 1-based coordinates
//! `x_d = col + 1`, so `x̂_d = x_d − (W/2 + 0.5)`.

mod inpaint;

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use image::RgbImage;
pub use inpaint::{inpaint, Inpainted, DEFAULT_INPAINT_RADIUS};

use crate::depth_codec::{is_valid_depth, DepthMap, Fov, INVALID_DEPTH};
use crate::error::{invalid, Result};
use crate::motion_predictor::{PoseDelta, VehicleGeometry};

/// Points at or closer than this after the transform are dropped.
pub const Z_NEAR: f64 = 0.2;

/// Absorbs floating-point noise in span bounds so exact integer centers
/// produce exact spans.
const SPAN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub width: u32,
    pub height: u32,
    pub fov: Fov,
    /// Camera-frame `(x right, y down, z forward)`, one per source pixel in
    /// row-major order.
    pub points: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl PointCloud {
    /// 1-based source pixel `(x_d, y_d)` of point `i`.
    pub fn source_pixel(&self, i: usize) -> (u32, u32) {
        let w = self.width as usize;
        ((i % w) as u32 + 1, (i / w) as u32 + 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Homogeneous rigid transform taking source-camera points to the forecast
/// camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpTransform {
    pub matrix: Matrix4<f64>,
}

impl WarpTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == Matrix4::identity()
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &WarpTransform) -> WarpTransform {
        WarpTransform {
            matrix: self.matrix * first.matrix,
        }
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)] * p[2] + m[(0, 3)],
            m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)] * p[2] + m[(1, 3)],
            m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)] * p[2] + m[(2, 3)],
        ]
    }
}

/// Yaw about the vertical (y-down) axis, positive for a right turn: the new
/// forward direction is `(sin ψ, 0, cos ψ)` in the old frame.
pub fn yaw_matrix(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Level-to-camera rotation for a camera pitched down by `theta`.
pub fn pitch_matrix(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn block(r: &Matrix3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m
}

pub fn make_transform(delta: &PoseDelta, geom: &VehicleGeometry) -> WarpTransform {
    let r = yaw_matrix(delta.dpsi_cam);
    let d = Vector3::new(delta.dx_cam, 0.0, delta.dz_cam);
    let rt = r.transpose();
    let mut t = block(&rt);
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * d)));
    let r2 = pitch_matrix(geom.cam_pitch);
    WarpTransform {
        matrix: block(&r2) * t * block(&r2.transpose()),
    }
}

fn require_fov(dm: &DepthMap) -> Result<Fov> {
    match dm.fov() {
        Some(f) => Ok(f),
        None => invalid("depth map has no field of view"),
    }
}

/// Metres per unit of centered pixel coordinate per metre of depth.
#[inline]
fn focal_scales(width: u32, height: u32, fov: &Fov) -> (f64, f64) {
    (
        (fov.horizontal / 2.0).tan() / (width as f64 / 2.0),
        (fov.vertical / 2.0).tan() / (height as f64 / 2.0),
    )
}

pub fn depth_to_points(dm: &DepthMap) -> Result<PointCloud> {
    let fov = require_fov(dm)?;
    let (w, h) = (dm.width() as u32, dm.height() as u32);
    let (kx, ky) = focal_scales(w, h, &fov);
    let (cx, cy) = (w as f64 / 2.0 + 0.5, h as f64 / 2.0 + 0.5);
    let n = (w * h) as usize;
    let mut points = vec![[0.0; 3]; n];
    let mut valid = vec![false; n];
    points
        .par_chunks_mut(w as usize)
        .zip(valid.par_chunks_mut(w as usize))
        .enumerate()
        .for_each(|(row, (prow, vrow))| {
            let yd = (row + 1) as f64 - cy;
            for col in 0..w as usize {
                let z = dm.data()[row * w as usize + col];
                if is_valid_depth(z) && z > 0.0 {
                    let z = z as f64;
                    let xd = (col + 1) as f64 - cx;
                    prow[col] = [z * xd * kx, z * yd * ky, z];
                    vrow[col] = true;
                }
            }
        });
    Ok(PointCloud {
        width: w,
        height: h,
        fov,
        points,
        valid,
    })
}

pub fn transform_points(pc: &PointCloud, t: &WarpTransform) -> PointCloud {
    let mut out = pc.clone();
    out.points
        .par_iter_mut()
        .zip(out.valid.par_iter_mut())
        .for_each(|(p, v)| {
            if *v {
                *p = t.apply(*p);
                if !(p[2] > Z_NEAR) {
                    *v = false;
                }
            }
        });
    out
}

/// Reprojected location of one point, 1-based pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelHit {
    pub x_d: f64,
    pub y_d: f64,
    pub z: f64,
    /// False when the point is invalid, too close, or lands outside the frame.
    pub kept: bool,
}

#[inline]
fn project_point(p: [f64; 3], w: u32, h: u32, kx: f64, ky: f64) -> PixelHit {
    let z = p[2];
    if !(z > Z_NEAR) {
        return PixelHit {
            x_d: f64::NAN,
            y_d: f64::NAN,
            z,
            kept: false,
        };
    }
    let x_d = p[0] / (z * kx) + w as f64 / 2.0 + 0.5;
    let y_d = p[1] / (z * ky) + h as f64 / 2.0 + 0.5;
    // the pixel a 1-based coordinate rounds to must exist
    let kept = x_d >= 0.5 && x_d < w as f64 + 0.5 && y_d >= 0.5 && y_d < h as f64 + 0.5;
    PixelHit { x_d, y_d, z, kept }
}

pub fn points_to_pixels(pc: &PointCloud) -> Vec<PixelHit> {
    let (kx, ky) = focal_scales(pc.width, pc.height, &pc.fov);
    pc.points
        .par_iter()
        .zip(pc.valid.par_iter())
        .map(|(&p, &v)| {
            if v {
                project_point(p, pc.width, pc.height, kx, ky)
            } else {
                PixelHit {
                    x_d: f64::NAN,
                    y_d: f64::NAN,
                    z: f64::NAN,
                    kept: false,
                }
            }
        })
        .collect()
}

pub fn pixel_scale(z_old: f64, z_new: f64) -> Result<f64> {
    if !(z_new > 0.0) || !z_old.is_finite() || !z_new.is_finite() {
        return invalid(format!(
            "pixel scale needs positive finite depths, got {z_old} / {z_new}"
        ));
    }
    Ok(z_old / z_new)
}

/// Inclusive 0-based index range painted around real-valued 0-based
/// `center` at scale `s`, before clipping.
pub fn pixel_span(center: f64, s: f64) -> (i64, i64) {
    let half = (s - 1.0) / 2.0;
    let mut lo = (center - half + SPAN_EPS).floor() as i64;
    let mut hi = (center + half - SPAN_EPS).ceil() as i64;
    if lo > hi {
        lo = center.round() as i64;
        hi = lo;
    }
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpedFrame {
    pub rgb: RgbImage,
    pub new_depth: DepthMap,
    /// Row-major; false marks pixels no source pixel reached.
    pub valid_mask: Vec<bool>,
}

impl WarpedFrame {
    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }

    pub fn mask_image(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width(), self.height(), |x, y| {
            let i = (y * self.width() + x) as usize;
            image::Luma([if self.valid_mask[i] { 255 } else { 0 }])
        })
    }
}

/// One source pixel to be painted.
///
/// `(far_key, src)` orders stamps in paint order: far to near, then ascending
/// source index. Positive `f64` bit patterns order like the values, so the
/// depth key is the complemented bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Stamp {
    far_key: u64,
    src: u32,
    rows: (u16, u16),
    cols: (u16, u16),
}

fn check_dims(rgb: &RgbImage, dm: &DepthMap) -> Result<()> {
    if rgb.width() != dm.width() as u32 || rgb.height() != dm.height() as u32 {
        return invalid(format!(
            "image is {}x{} but depth map is {}x{}",
            rgb.width(),
            rgb.height(),
            dm.width() as u32,
            dm.height() as u32
        ));
    }
    Ok(())
}

fn stamps(dm: &DepthMap, t: &WarpTransform) -> Result<Vec<Stamp>> {
    let fov = require_fov(dm)?;
    let (w, h) = (dm.width() as u32, dm.height() as u32);
    let (kx, ky) = focal_scales(w, h, &fov);
    let (cx, cy) = (w as f64 / 2.0 + 0.5, h as f64 / 2.0 + 0.5);
    let m = &t.matrix;
    let col = |j: usize| [m[(0, j)], m[(1, j)], m[(2, j)]];
    let (m0, m1, m2, m3) = (col(0), col(1), col(2), col(3));
    let (wf, hf) = (w as f64, h as f64);
    let data = dm.data();
    let clip = |lo: i64, hi: i64, n: u32| (lo.clamp(0, n as i64 - 1) as u16, hi.clamp(0, n as i64 - 1) as u16);
    let out: Vec<Stamp> = (0..h as usize)
        .into_par_iter()
        .flat_map_iter(|row| {
            let yn = ((row + 1) as f64 - cy) * ky;
            // transformed ray direction for x̂ = 0 on this row
            let base = [0, 1, 2].map(|k| m1[k] * yn + m2[k]);
            (0..w as usize).filter_map(move |col| {
                let src = row * w as usize + col;
                let z_old = data[src];
                if !(is_valid_depth(z_old) && z_old > 0.0) {
                    return None;
                }
                let z_old = z_old as f64;
                let xn = ((col + 1) as f64 - cx) * kx;
                let p = [0, 1, 2].map(|k| z_old * (base[k] + m0[k] * xn) + m3[k]);
                let z = p[2];
                if !(z > Z_NEAR) {
                    return None;
                }
                let inv = 1.0 / z;
                // 0-based centers
                let xc = p[0] * inv / kx + wf / 2.0 - 0.5;
                let yc = p[1] * inv / ky + hf / 2.0 - 0.5;
                if !(xc >= -0.5 && xc < wf - 0.5 && yc >= -0.5 && yc < hf - 0.5) {
                    return None;
                }
                let s = z_old * inv;
                let (c0, c1) = pixel_span(xc, s);
                let (r0, r1) = pixel_span(yc, s);
                Some(Stamp {
                    far_key: !z.to_bits(),
                    src: src as u32,
                    rows: clip(r0, r1, h),
                    cols: clip(c0, c1, w),
                })
            })
        })
        .collect();
    Ok(out)
}

pub fn render_projection(rgb: &RgbImage, dm: &DepthMap, t: &WarpTransform) -> Result<WarpedFrame> {
    check_dims(rgb, dm)?;
    if dm.width() > u16::MAX as usize || dm.height() > u16::MAX as usize {
        return invalid("frames wider or taller than 65535 pixels are not supported");
    }
    let fov = require_fov(dm)?;
    let (w, h) = (dm.width() as u32, dm.height() as u32);
    let order = stamps(dm, t)?;

    let n = (w * h) as usize;
    let mut color = vec![0u8; n * 3];
    let mut depth = vec![INVALID_DEPTH; n];
    let mut mask = vec![false; n];
    let src_px = rgb.as_raw();

    // Painting in (far_key, src) order leaves on every pixel the covering
    // stamp with the largest key, so each band keeps that key per pixel
    // instead of sorting.
    let band_rows = (h as usize).div_ceil(rayon::current_num_threads() * 4).max(1);
    let row_len = w as usize;
    let mut winner = vec![(0u64, 0u32); n];
    color
        .par_chunks_mut(band_rows * row_len * 3)
        .zip(depth.par_chunks_mut(band_rows * row_len))
        .zip(mask.par_chunks_mut(band_rows * row_len))
        .zip(winner.par_chunks_mut(band_rows * row_len))
        .enumerate()
        .for_each(|(band, (((cband, dband), mband), wband))| {
            let top = (band * band_rows) as u16;
            let bottom = top + (mband.len() / row_len) as u16 - 1;
            for st in &order {
                if st.rows.1 < top || st.rows.0 > bottom {
                    continue;
                }
                let key = (st.far_key, st.src);
                for r in st.rows.0.max(top)..=st.rows.1.min(bottom) {
                    let base = (r - top) as usize * row_len;
                    for c in st.cols.0..=st.cols.1 {
                        let i = base + c as usize;
                        if !mband[i] || key > wband[i] {
                            wband[i] = key;
                            mband[i] = true;
                        }
                    }
                }
            }
            for (i, &(key, src)) in wband.iter().enumerate() {
                if mband[i] {
                    let s = src as usize * 3;
                    cband[i * 3..i * 3 + 3].copy_from_slice(&src_px[s..s + 3]);
                    dband[i] = f64::from_bits(!key) as f32;
                }
            }
        });

    let rgb_out = RgbImage::from_raw(w, h, color).expect("buffer sized for image");
    let new_depth = DepthMap::new(w as usize, h as usize, depth)?.with_fov(fov);
    Ok(WarpedFrame {
        rgb: rgb_out,
        new_depth,
        valid_mask: mask,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectOptions {
    pub inpaint_radius: u32,
    /// Skip inpainting and return the warped image with holes left black.
    pub skip_inpaint: bool,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        Self {
            inpaint_radius: DEFAULT_INPAINT_RADIUS,
            skip_inpaint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub image: RgbImage,
    pub warped: WarpedFrame,
    /// Nothing survived the warp and the image is a uniform fill.
    pub uniform_fill: bool,
}

pub fn project_frame(rgb: &RgbImage, dm: &DepthMap, delta: &PoseDelta, geom: &VehicleGeometry) -> Result<Projected> {
    project_frame_with(rgb, dm, delta, geom, &ProjectOptions::default())
}

pub fn project_frame_with(
    rgb: &RgbImage,
    dm: &DepthMap,
    delta: &PoseDelta,
    geom: &VehicleGeometry,
    opts: &ProjectOptions,
) -> Result<Projected> {
    check_dims(rgb, dm)?;
    let fov = require_fov(dm)?;
    if delta.is_zero() {
        let n = (dm.width() as u32 * dm.height() as u32) as usize;
        let warped = WarpedFrame {
            rgb: rgb.clone(),
            new_depth: dm.clone().with_fov(fov),
            valid_mask: vec![true; n],
        };
        return Ok(Projected {
            image: rgb.clone(),
            warped,
            uniform_fill: false,
        });
    }
    let t = make_transform(delta, geom);
    let warped = render_projection(rgb, dm, &t)?;
    if opts.skip_inpaint {
        return Ok(Projected {
            image: warped.rgb.clone(),
            warped,
            uniform_fill: false,
        });
    }
    if warped.valid_count() == 0 {
        // masked pixels carry no color, so the source stands in for the mean
        let mut fallback = warped.clone();
        fallback.rgb = rgb.clone();
        let filled = inpaint(&fallback, opts.inpaint_radius);
        return Ok(Projected {
            image: filled.image,
            warped,
            uniform_fill: true,
        });
    }
    let filled = inpaint(&warped, opts.inpaint_radius);
    Ok(Projected {
        image: filled.image,
        warped,
        uniform_fill: filled.uniform_fill,
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn fov90() -> Fov {
        Fov::new(FRAC_PI_2, FRAC_PI_2).unwrap()
    }

    fn flat(w: u32, h: u32, z: f32) -> DepthMap {
        DepthMap::filled(w as usize, h as usize, z).unwrap().with_fov(fov90())
    }

    fn level() -> VehicleGeometry {
        VehicleGeometry {
            cam_pitch: 0.0,
            ..VehicleGeometry::default()
        }
    }

    #[test]
    fn centered_coordinates() {
        let dm = DepthMap::filled(672, 2, 10.0).unwrap().with_fov(fov90());
        let pc = depth_to_points(&dm).unwrap();
        // 1-based x_d = 336 is 0-based column 335
        let p = pc.points[335];
        assert!((p[0] - 10.0 * (-0.5 / 336.0)).abs() < 1e-12);
        assert!((p[0] - -0.01488).abs() < 1e-5);
        assert_eq!(pc.source_pixel(335), (336, 1));

        let odd = DepthMap::filled(5, 5, 3.0).unwrap().with_fov(fov90());
        let pc = depth_to_points(&odd).unwrap();
        assert_eq!(pc.points[12][0], 0.0);
        assert_eq!(pc.points[12][1], 0.0);
    }

    #[test]
    fn depth_scales_points_linearly() {
        let a = depth_to_points(&flat(8, 6, 2.0)).unwrap();
        let b = depth_to_points(&flat(8, 6, 4.0)).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((2.0 * p[0] - q[0]).abs() < 1e-12 && (2.0 * p[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_fov_is_rejected() {
        let dm = DepthMap::filled(4, 4, 1.0).unwrap();
        assert!(depth_to_points(&dm).is_err());
    }

    #[test]
    fn invalid_depths_become_invalid_points() {
        let mut data = vec![5.0f32; 16];
        data[3] = INVALID_DEPTH;
        let dm = DepthMap::new(4, 4, data).unwrap().with_fov(fov90());
        let pc = depth_to_points(&dm).unwrap();
        assert!(!pc.valid[3] && pc.valid[2]);
    }

    #[test]
    fn identity_and_translation_transforms() {
        let t = make_transform(&PoseDelta::ZERO, &level());
        assert!(t.is_identity());
        let t = make_transform(&PoseDelta::new(0.0, 1.0, 0.0), &level());
        let p = t.apply([0.0, 0.0, 5.0]);
        assert_eq!(p, [0.0, 0.0, 4.0]);
    }

    #[test]
    fn transform_is_rigid() {
        let g = VehicleGeometry {
            cam_pitch: 10f64.to_radians(),
            ..level()
        };
        let t = make_transform(&PoseDelta::new(0.5, 2.1, 15f64.to_radians()), &g);
        let r = t.matrix.fixed_view::<3, 3>(0, 0).into_owned();
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert_eq!(
            t.matrix.row(3).into_owned(),
            nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn right_turn_moves_straight_ahead_point_left() {
        let t = make_transform(&PoseDelta::new(0.0, 0.0, 0.2), &level());
        let p = t.apply([0.0, 0.0, 10.0]);
        assert!(p[0] < 0.0);
    }

    #[test]
    fn points_round_trip_to_pixels() {
        let dm = flat(9, 7, 3.0);
        let pc = depth_to_points(&dm).unwrap();
        let hits = points_to_pixels(&pc);
        for (i, h) in hits.iter().enumerate() {
            let (xd, yd) = pc.source_pixel(i);
            assert!((h.x_d - xd as f64).abs() < 1e-9 && (h.y_d - yd as f64).abs() < 1e-9);
            assert!(h.kept);
        }
    }

    #[test]
    fn behind_camera_is_discarded() {
        let dm = flat(4, 4, 1.0);
        let t = make_transform(&PoseDelta::new(0.0, 1.5, 0.0), &level());
        let pc = transform_points(&depth_to_points(&dm).unwrap(), &t);
        assert!(pc.valid.iter().all(|v| !v));
        assert!(points_to_pixels(&pc).iter().all(|h| !h.kept));
    }

    #[test]
    fn explicit_pixel_mapping() {
        // point (1, −0.5, 4) in a 100×80 frame with 90° fov
        let pc = PointCloud {
            width: 100,
            height: 80,
            fov: fov90(),
            points: vec![[1.0, -0.5, 4.0]],
            valid: vec![true],
        };
        let h = points_to_pixels(&pc)[0];
        assert!((h.x_d - (1.0 / 4.0 * 50.0 + 50.5)).abs() < 1e-12);
        assert!((h.y_d - (-0.5 / 4.0 * 40.0 + 40.5)).abs() < 1e-12);
    }

    #[test]
    fn spans() {
        assert_eq!(pixel_scale(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(pixel_span(10.0, 1.0), (10, 10));
        assert_eq!(pixel_span(10.0 + 1e-10, 1.0), (10, 10));
        let s = pixel_scale(4.0, 2.0).unwrap();
        assert_eq!(s, 2.0);
        assert_eq!(pixel_span(10.0, s), (9, 11));
        assert_eq!(pixel_span(10.5, s), (10, 11));
        let (lo, hi) = pixel_span(10.3, 0.4);
        assert!(hi >= lo);
        assert!(pixel_scale(1.0, 0.0).is_err());
    }

    fn checker(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x * 17 % 256) as u8, (y * 29 % 256) as u8, 90])
        })
    }

    #[test]
    fn identity_render_is_exact() {
        let (w, h) = (16, 12);
        let img = checker(w, h);
        let wf = render_projection(&img, &flat(w, h, 5.0), &WarpTransform::identity()).unwrap();
        assert_eq!(wf.rgb, img);
        assert!(wf.valid_mask.iter().all(|&v| v));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(render_projection(&checker(4, 4), &flat(5, 4, 1.0), &WarpTransform::identity()).is_err());
    }

    #[test]
    fn zero_delta_passthrough() {
        let img = checker(10, 8);
        let out = project_frame(&img, &flat(10, 8, 7.0), &PoseDelta::ZERO, &VehicleGeometry::default()).unwrap();
        assert_eq!(out.image.as_raw(), img.as_raw());
    }

    #[test]
    fn forward_motion_on_a_wall() {
        let (w, h) = (64, 48);
        let (z, dz) = (5.0f32, 1.0);
        let img = RgbImage::from_fn(w, h, |x, y| {
            let inside = (28..36).contains(&x) && (20..28).contains(&y);
            image::Rgb(if inside { [255, 0, 0] } else { [0, 0, 255] })
        });
        let wf = render_projection(
            &img,
            &flat(w, h, z),
            &make_transform(&PoseDelta::new(0.0, dz, 0.0), &level()),
        )
        .unwrap();
        for (i, &v) in wf.valid_mask.iter().enumerate() {
            if v {
                assert!((wf.new_depth.data()[i] - (z - dz as f32)).abs() < 1e-5);
            }
        }
        let red = wf.rgb.pixels().filter(|p| p.0 == [255, 0, 0]).count() as f64;
        let expect = 64.0 * (z as f64 / (z as f64 - dz)).powi(2);
        assert!((red / expect - 1.0).abs() < 0.25, "{red} vs {expect}");
        assert!(wf.valid_mask.iter().all(|&v| v));
    }

    #[test]
    fn turning_right_leaves_right_edge_empty() {
        let (w, h) = (64, 48);
        let wf = render_projection(
            &checker(w, h),
            &flat(w, h, 6.0),
            &make_transform(&PoseDelta::new(0.0, 0.0, 15f64.to_radians()), &level()),
        )
        .unwrap();
        let col_valid = |c: u32| (0..h).filter(|&r| wf.valid_mask[(r * w + c) as usize]).count();
        assert_eq!(col_valid(w - 1), 0);
        assert!(col_valid(0) > 0);
    }

    #[test]
    fn left_turn_leaves_left_edge_empty() {
        let (w, h) = (64, 48);
        let wf = render_projection(
            &checker(w, h),
            &flat(w, h, 6.0),
            &make_transform(&PoseDelta::new(0.0, 0.0, -15f64.to_radians()), &level()),
        )
        .unwrap();
        assert!((0..h).all(|r| !wf.valid_mask[(r * w) as usize]));
    }

    #[test]
    fn all_lost_falls_back_to_uniform() {
        let img = checker(8, 8);
        let out = project_frame(&img, &flat(8, 8, 1.0), &PoseDelta::new(0.0, 3.0, 0.0), &level()).unwrap();
        assert!(out.uniform_fill);
        let first = *out.image.get_pixel(0, 0);
        assert!(out.image.pixels().all(|p| *p == first));
    }
}
