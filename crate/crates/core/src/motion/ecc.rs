//! Enhanced Correlation Coefficient image registration.
//!
//! Forward-additive Gauss-Newton maximization of the zero-mean normalized
//! correlation between the previous frame and the current frame sampled at
//! the warped coordinates, run coarse-to-fine over a 2x pyramid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Transform2D, TransformKind};

use super::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum EccError {
    #[error("image sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("image has constant intensity")]
    ConstantImage,
    #[error("image {0}x{1} too small for registration")]
    TooSmall(usize, usize),
    #[error("invalid ECC configuration: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EccConfig {
    pub mode: TransformKind,
    pub pyramid_levels: usize,
    /// Iteration cap per pyramid level.
    pub max_iterations: usize,
    /// Stop once the correlation gain of one iteration falls below this.
    pub eps: f64,
}

impl Default for EccConfig {
    fn default() -> Self {
        Self {
            mode: TransformKind::Euclidean,
            pyramid_levels: 3,
            max_iterations: 100,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EccResult {
    /// Maps previous-frame coordinates to current-frame coordinates.
    pub transform: Transform2D,
    pub correlation: f64,
    /// False when some level hit `max_iterations`; `transform` is then the
    /// best one seen.
    pub converged: bool,
    pub iterations: usize,
}

const MIN_LEVEL_SIDE: usize = 16;

/// Warp parameters. Euclidean keeps the angle explicitly so the linear part
/// stays a rotation.
#[derive(Debug, Clone, Copy)]
enum Params {
    Euclidean { theta: f64, tx: f64, ty: f64 },
    Affine([[f64; 3]; 2]),
}

impl Params {
    fn identity(kind: TransformKind) -> Self {
        match kind {
            TransformKind::Euclidean => Params::Euclidean {
                theta: 0.0,
                tx: 0.0,
                ty: 0.0,
            },
            TransformKind::Affine => Params::Affine([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        }
    }

    fn matrix(&self) -> [[f64; 3]; 2] {
        match *self {
            Params::Euclidean { theta, tx, ty } => Transform2D::euclidean(theta, tx, ty).matrix,
            Params::Affine(m) => m,
        }
    }

    fn count(&self) -> usize {
        match self {
            Params::Euclidean { .. } => 3,
            Params::Affine(_) => 6,
        }
    }

    fn add(&mut self, d: &[f64]) {
        match self {
            Params::Euclidean { theta, tx, ty } => {
                *theta += d[0];
                *tx += d[1];
                *ty += d[2];
            }
            Params::Affine(m) => {
                for r in 0..2 {
                    for c in 0..3 {
                        m[r][c] += d[r * 3 + c];
                    }
                }
            }
        }
    }

    fn translation_mut(&mut self) -> (&mut f64, &mut f64, [[f64; 2]; 2]) {
        let lin = {
            let m = self.matrix();
            [[m[0][0], m[0][1]], [m[1][0], m[1][1]]]
        };
        match self {
            Params::Euclidean { tx, ty, .. } => (tx, ty, lin),
            Params::Affine(m) => {
                let (r0, r1) = m.split_at_mut(1);
                (&mut r0[0][2], &mut r1[0][2], lin)
            }
        }
    }

    /// Re-expresses the warp one pyramid level finer. Coarse pixel `c` covers
    /// fine coordinate `2c + 0.5`.
    fn to_finer(mut self) -> Self {
        let (tx, ty, a) = self.translation_mut();
        *tx = 2.0 * *tx + 0.5 * (1.0 - a[0][0] - a[0][1]);
        *ty = 2.0 * *ty + 0.5 * (1.0 - a[1][0] - a[1][1]);
        self
    }
}

fn blur(img: &GrayImage) -> Vec<f32> {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut tmp = vec![0.0f32; w * h];
    let mut out = vec![0.0f32; w * h];
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in K.iter().enumerate() {
                acc += kv * row[clampi(x as isize + k as isize - 2, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in K.iter().enumerate() {
                acc += kv * tmp[clampi(y as isize + k as isize - 2, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() / 2, img.height() / 2);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = img.get(2 * x, 2 * y)
                + img.get(2 * x + 1, 2 * y)
                + img.get(2 * x, 2 * y + 1)
                + img.get(2 * x + 1, 2 * y + 1);
            data.push(s / 4.0);
        }
    }
    GrayImage::new(w, h, data).expect("averages stay in range")
}

struct Level {
    w: usize,
    h: usize,
    template: Vec<f32>,
    input: Vec<f32>,
    grad_x: Vec<f32>,
    grad_y: Vec<f32>,
}

impl Level {
    fn new(prev: &GrayImage, cur: &GrayImage) -> Self {
        let (w, h) = (prev.width(), prev.height());
        let template = blur(prev);
        let input = blur(cur);
        let mut grad_x = vec![0.0f32; w * h];
        let mut grad_y = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x > 0 && x + 1 < w {
                    grad_x[i] = (input[i + 1] - input[i - 1]) * 0.5;
                }
                if y > 0 && y + 1 < h {
                    grad_y[i] = (input[i + w] - input[i - w]) * 0.5;
                }
            }
        }
        Self {
            w,
            h,
            template,
            input,
            grad_x,
            grad_y,
        }
    }

    #[inline]
    fn bilinear(&self, img: &[f32], u: f64, v: f64) -> f64 {
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let (x0, y0) = (x0 as usize, y0 as usize);
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let a = f64::from(img[y0 * self.w + x0]);
        let b = f64::from(img[y0 * self.w + x1]);
        let c = f64::from(img[y1 * self.w + x0]);
        let d = f64::from(img[y1 * self.w + x1]);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

/// Solves the symmetric positive definite system `h x = b` by Cholesky.
fn solve_spd(h: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

struct LevelOutcome {
    params: Params,
    correlation: f64,
    converged: bool,
    iterations: usize,
}

fn align_level(level: &Level, init: Params, cfg: &EccConfig) -> LevelOutcome {
    let n = init.count();
    let mut params = init;
    let mut best = (f64::NEG_INFINITY, init);
    let mut prev_rho = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    let capacity = level.w * level.h;
    let mut t_vals = Vec::with_capacity(capacity);
    let mut i_vals = Vec::with_capacity(capacity);
    let mut jac = Vec::with_capacity(capacity * n);

    while iterations < cfg.max_iterations {
        iterations += 1;
        let m = params.matrix();
        t_vals.clear();
        i_vals.clear();
        jac.clear();
        let (umax, vmax) = ((level.w - 1) as f64, (level.h - 1) as f64);
        for y in 0..level.h {
            let yf = y as f64;
            for x in 0..level.w {
                let xf = x as f64;
                let u = m[0][0] * xf + m[0][1] * yf + m[0][2];
                let v = m[1][0] * xf + m[1][1] * yf + m[1][2];
                if !(0.0..=umax).contains(&u) || !(0.0..=vmax).contains(&v) {
                    continue;
                }
                let gx = level.bilinear(&level.grad_x, u, v);
                let gy = level.bilinear(&level.grad_y, u, v);
                i_vals.push(level.bilinear(&level.input, u, v));
                t_vals.push(f64::from(level.template[y * level.w + x]));
                match params {
                    Params::Euclidean { theta, .. } => {
                        let (s, c) = theta.sin_cos();
                        jac.push(gx * (-s * xf - c * yf) + gy * (c * xf - s * yf));
                        jac.push(gx);
                        jac.push(gy);
                    }
                    Params::Affine(_) => {
                        jac.extend_from_slice(&[gx * xf, gx * yf, gx, gy * xf, gy * yf, gy]);
                    }
                }
            }
        }
        let count = t_vals.len();
        if count < n * 10 {
            break;
        }
        let mean_t = t_vals.iter().sum::<f64>() / count as f64;
        let mean_i = i_vals.iter().sum::<f64>() / count as f64;

        let mut hess = vec![0.0; n * n];
        let mut proj_i = vec![0.0; n];
        let mut proj_t = vec![0.0; n];
        let (mut ii, mut it, mut tt) = (0.0, 0.0, 0.0);
        for k in 0..count {
            let tz = t_vals[k] - mean_t;
            let iz = i_vals[k] - mean_i;
            ii += iz * iz;
            it += iz * tz;
            tt += tz * tz;
            let g = &jac[k * n..(k + 1) * n];
            for a in 0..n {
                proj_i[a] += g[a] * iz;
                proj_t[a] += g[a] * tz;
                for b in 0..=a {
                    hess[a * n + b] += g[a] * g[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                hess[b * n + a] = hess[a * n + b];
            }
        }
        if ii <= 0.0 || tt <= 0.0 {
            break;
        }
        let rho = it / (ii.sqrt() * tt.sqrt());
        if rho > best.0 {
            best = (rho, params);
        }
        if (rho - prev_rho).abs() < cfg.eps {
            converged = true;
            break;
        }
        prev_rho = rho;

        let (Some(hinv_i), Some(hinv_t)) =
            (solve_spd(&hess, &proj_i, n), solve_spd(&hess, &proj_t, n))
        else {
            break;
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let lambda_n = ii - dot(&proj_i, &hinv_i);
        let lambda_d = it - dot(&proj_i, &hinv_t);
        if lambda_d <= 0.0 {
            break;
        }
        let lambda = lambda_n / lambda_d;
        let err_proj: Vec<f64> = proj_t
            .iter()
            .zip(&proj_i)
            .map(|(t, i)| lambda * t - i)
            .collect();
        let Some(delta) = solve_spd(&hess, &err_proj, n) else {
            break;
        };
        params.add(&delta);
    }

    let (correlation, params) = if converged {
        (prev_rho.max(best.0), params)
    } else {
        best
    };
    LevelOutcome {
        params,
        correlation,
        converged,
        iterations,
    }
}

/// Estimates the warp mapping `prev` coordinates onto `cur`.
pub fn ecc_align(
    prev: &GrayImage,
    cur: &GrayImage,
    cfg: &EccConfig,
) -> Result<EccResult, EccError> {
    if cfg.pyramid_levels == 0 {
        return Err(EccError::Config("pyramid_levels must be >= 1"));
    }
    if cfg.max_iterations == 0 {
        return Err(EccError::Config("max_iterations must be >= 1"));
    }
    if !(cfg.eps > 0.0) {
        return Err(EccError::Config("eps must be positive"));
    }
    let dims = (prev.width(), prev.height());
    if dims != (cur.width(), cur.height()) {
        return Err(EccError::SizeMismatch(dims, (cur.width(), cur.height())));
    }
    if dims.0 < MIN_LEVEL_SIDE || dims.1 < MIN_LEVEL_SIDE {
        return Err(EccError::TooSmall(dims.0, dims.1));
    }
    if prev.mean_and_variance().1 <= 0.0 || cur.mean_and_variance().1 <= 0.0 {
        return Err(EccError::ConstantImage);
    }

    let mut pyramid = vec![(prev.clone(), cur.clone())];
    while pyramid.len() < cfg.pyramid_levels {
        let (p, c) = pyramid.last().expect("non-empty");
        if p.width() / 2 < MIN_LEVEL_SIDE || p.height() / 2 < MIN_LEVEL_SIDE {
            break;
        }
        let next = (downsample(p), downsample(c));
        pyramid.push(next);
    }

    let mut params = Params::identity(cfg.mode);
    let mut converged = true;
    let mut iterations = 0;
    let mut correlation = 0.0;
    for (depth, (p, c)) in pyramid.iter().enumerate().rev() {
        let level = Level::new(p, c);
        let out = align_level(&level, params, cfg);
        converged &= out.converged;
        iterations += out.iterations;
        correlation = out.correlation;
        params = if depth > 0 {
            out.params.to_finer()
        } else {
            out.params
        };
    }
    Ok(EccResult {
        transform: Transform2D {
            kind: cfg.mode,
            matrix: params.matrix(),
        },
        correlation,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f64, y: f64) -> f64 {
        0.5 + 0.18 * (x * 0.045 + 0.3).sin() * (y * 0.06).cos()
            + 0.12 * ((x + y) * 0.11).sin()
            + 0.08 * (x * 0.21 - y * 0.17).cos()
    }

    fn render(w: usize, h: usize, t: &Transform2D) -> GrayImage {
        let inv = t.inverse().unwrap();
        GrayImage::from_fn(w, h, |x, y| {
            let (u, v) = inv.apply(x, y);
            texture(u, v)
        })
    }

    fn max_point_error(a: &Transform2D, b: &Transform2D, w: f64, h: f64) -> f64 {
        [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h), (w / 2.0, h / 2.0)]
            .iter()
            .map(|&(x, y)| {
                let (p, q) = a.apply(x, y);
                let (r, s) = b.apply(x, y);
                ((p - r).powi(2) + (q - s).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn identical_images() {
        let img = render(160, 120, &Transform2D::translation(0.0, 0.0));
        let r = ecc_align(&img, &img, &EccConfig::default()).unwrap();
        assert!(r.transform.distance_from_identity() < 1e-4);
        assert!((r.correlation - 1.0).abs() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn recovers_translation() {
        let truth = Transform2D::translation(4.0, 0.0);
        let prev = render(200, 150, &Transform2D::translation(0.0, 0.0));
        let cur = render(200, 150, &truth);
        let r = ecc_align(&prev, &cur, &EccConfig::default()).unwrap();
        assert!((r.transform.matrix[0][2] - 4.0).abs() < 0.5, "{:?}", r);
        assert!(r.transform.matrix[1][2].abs() < 0.5);
    }

    #[test]
    fn recovers_rotation_about_center() {
        let angle = 2f64.to_radians();
        let truth = Transform2D::rotation_about(angle, 100.0, 75.0);
        let prev = render(200, 150, &Transform2D::translation(0.0, 0.0));
        let cur = render(200, 150, &truth);
        let r = ecc_align(&prev, &cur, &EccConfig::default()).unwrap();
        let got = r.transform.matrix[1][0].atan2(r.transform.matrix[0][0]);
        assert!((got - angle).abs() < 0.5f64.to_radians());
        assert!(max_point_error(&r.transform, &truth, 200.0, 150.0) < 1.0);
    }

    #[test]
    fn affine_mode() {
        let truth = Transform2D {
            kind: TransformKind::Affine,
            matrix: [[1.01, 0.01, 3.0], [-0.005, 0.99, -2.0]],
        };
        let prev = render(200, 150, &Transform2D::translation(0.0, 0.0));
        let cur = render(200, 150, &truth);
        let cfg = EccConfig {
            mode: TransformKind::Affine,
            ..EccConfig::default()
        };
        let r = ecc_align(&prev, &cur, &cfg).unwrap();
        assert!(
            max_point_error(&r.transform, &truth, 200.0, 150.0) < 1.0,
            "{:?}",
            r
        );
    }

    #[test]
    fn rejects_bad_input() {
        let flat = GrayImage::from_fn(64, 64, |_, _| 0.5);
        let tex = render(64, 64, &Transform2D::translation(0.0, 0.0));
        let cfg = EccConfig::default();
        assert_eq!(
            ecc_align(&flat, &tex, &cfg).unwrap_err(),
            EccError::ConstantImage
        );
        let small = render(8, 8, &Transform2D::translation(0.0, 0.0));
        assert!(matches!(
            ecc_align(&small, &small, &cfg),
            Err(EccError::TooSmall(..))
        ));
        let other = render(64, 32, &Transform2D::translation(0.0, 0.0));
        assert!(matches!(
            ecc_align(&tex, &other, &cfg),
            Err(EccError::SizeMismatch(..))
        ));
        let bad = EccConfig { eps: 0.0, ..cfg };
        assert!(matches!(
            ecc_align(&tex, &tex, &bad),
            Err(EccError::Config(_))
        ));
    }

    #[test]
    fn one_iteration_cap_reports_non_convergence() {
        let prev = render(200, 150, &Transform2D::translation(0.0, 0.0));
        let cur = render(200, 150, &Transform2D::translation(6.0, 2.0));
        let cfg = EccConfig {
            max_iterations: 1,
            ..EccConfig::default()
        };
        let r = ecc_align(&prev, &cur, &cfg).unwrap();
        assert!(!r.converged);
    }
}
