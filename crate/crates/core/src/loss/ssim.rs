//! Structural similarity with an 11x11 Gaussian window (sigma 1.5) and its
//! exact gradient with respect to both inputs.

use crate::error::Result;
use crate::image::Image;

pub const WINDOW_RADIUS: usize = 5;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone)]
pub struct SsimValue {
    /// Mean local SSIM over pixels and channels.
    pub value: f64,
    pub grad_a: Image,
    pub grad_b: Image,
}

fn window() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let mut w = [0.0; 2 * WINDOW_RADIUS + 1];
    for (k, v) in w.iter_mut().enumerate() {
        let d = k as f64 - WINDOW_RADIUS as f64;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mirror index without repeating the edge sample; valid for any offset and length.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

const TAPS: usize = 2 * WINDOW_RADIUS + 1;

/// Separable reflect-padded Gaussian filter on a single-channel plane.
struct Filter {
    w: usize,
    h: usize,
    taps: [f64; TAPS],
    /// Reflected source column (row) of every tap, per output column (row).
    cols: Vec<[usize; TAPS]>,
    rows: Vec<[usize; TAPS]>,
}

fn tap_indices(n: usize) -> Vec<[usize; TAPS]> {
    let r = WINDOW_RADIUS as isize;
    (0..n)
        .map(|i| std::array::from_fn(|k| reflect(i as isize + k as isize - r, n)))
        .collect()
}

impl Filter {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            taps: window(),
            cols: tap_indices(w),
            rows: tap_indices(h),
        }
    }

    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, idx) in self.cols.iter().enumerate() {
                tmp[y * w + x] = self.taps.iter().zip(idx).map(|(t, &i)| t * row[i]).sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for (y, idx) in self.rows.iter().enumerate() {
            let dst = &mut out[y * w..(y + 1) * w];
            for (t, &sy) in self.taps.iter().zip(idx) {
                for (o, v) in dst.iter_mut().zip(&tmp[sy * w..(sy + 1) * w]) {
                    *o += t * v;
                }
            }
        }
        out
    }

    /// Transpose of [`Filter::apply`].
    fn adjoint(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0; w * h];
        for (y, idx) in self.rows.iter().enumerate() {
            let s = &src[y * w..(y + 1) * w];
            for (t, &sy) in self.taps.iter().zip(idx) {
                for (o, v) in tmp[sy * w..(sy + 1) * w].iter_mut().zip(s) {
                    *o += t * v;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let row = &mut out[y * w..(y + 1) * w];
            for (x, idx) in self.cols.iter().enumerate() {
                let v = tmp[y * w + x];
                for (t, &i) in self.taps.iter().zip(idx) {
                    row[i] += t * v;
                }
            }
        }
        out
    }
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(img.channels()).copied().collect()
}

pub fn ssim(a: &Image, b: &Image) -> Result<SsimValue> {
    a.ensure_same_shape(b, "ssim")?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let mut grad_a = Image::zeros(w, h, ch);
    let mut grad_b = Image::zeros(w, h, ch);
    if a.is_empty() {
        return Ok(SsimValue {
            value: 1.0,
            grad_a,
            grad_b,
        });
    }
    let filter = Filter::new(w, h);
    let n = (w * h * ch) as f64;
    let mut total = 0.0;

    for c in 0..ch {
        let pa = plane(a, c);
        let pb = plane(b, c);
        let mu_a = filter.apply(&pa);
        let mu_b = filter.apply(&pb);
        let e_aa = filter.apply(&pa.iter().map(|v| v * v).collect::<Vec<_>>());
        let e_bb = filter.apply(&pb.iter().map(|v| v * v).collect::<Vec<_>>());
        let e_ab = filter.apply(&pa.iter().zip(&pb).map(|(x, y)| x * y).collect::<Vec<_>>());

        let m = w * h;
        let (mut pa_coef, mut qa_coef, mut r_coef) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let (mut pb_coef, mut qb_coef) = (vec![0.0; m], vec![0.0; m]);
        for i in 0..m {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num_l = 2.0 * ma * mb + C1;
            let num_c = 2.0 * cov + C2;
            let den_l = ma * ma + mb * mb + C1;
            let den_c = var_a + var_b + C2;
            let s = num_l * num_c / (den_l * den_c);
            total += s;

            let d_mu_a = 2.0 * mb * num_c / (den_l * den_c) - s * 2.0 * ma / den_l;
            let d_mu_b = 2.0 * ma * num_c / (den_l * den_c) - s * 2.0 * mb / den_l;
            let d_var = -s / den_c;
            let d_cov = 2.0 * num_l / (den_l * den_c);
            pa_coef[i] = (d_mu_a - 2.0 * ma * d_var - mb * d_cov) / n;
            pb_coef[i] = (d_mu_b - 2.0 * mb * d_var - ma * d_cov) / n;
            qa_coef[i] = d_var / n;
            qb_coef[i] = d_var / n;
            r_coef[i] = d_cov / n;
        }
        let fa_p = filter.adjoint(&pa_coef);
        let fb_p = filter.adjoint(&pb_coef);
        let f_qa = filter.adjoint(&qa_coef);
        let f_qb = filter.adjoint(&qb_coef);
        let f_r = filter.adjoint(&r_coef);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                grad_a.set(x, y, c, fa_p[i] + 2.0 * pa[i] * f_qa[i] + pb[i] * f_r[i]);
                grad_b.set(x, y, c, fb_p[i] + 2.0 * pb[i] * f_qb[i] + pa[i] * f_r[i]);
            }
        }
    }
    Ok(SsimValue {
        value: total / n,
        grad_a,
        grad_b,
    })
}
