//! Gaussian and Laplacian image pyramids.
//!
//! Analysis blurs with the binomial kernel `[1, 4, 6, 4, 1] / 16` (mirror
//! borders) and decimates by two. Synthesis upsamples with the same bilinear
//! operator the analysis used to form the band-pass levels, so
//! `reconstruct(decompose(x))` equals `x` up to rounding.

use crate::error::{Error, Result};
use crate::numeric::ops::{self, mirror};
use crate::numeric::Tensor;
use crate::scalar::Scalar;
use crate::ImageRgb;

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Levels from full resolution (level 1) down to the coarsest.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPyramid<T> {
    levels: Vec<ImageRgb<T>>,
}

/// Band-pass levels `L1..L(N-1)` followed by the low-pass residual `LN`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPyramid<T> {
    levels: Vec<ImageRgb<T>>,
}

macro_rules! level_access {
    ($ty:ident) => {
        impl<T: Scalar> $ty<T> {
            pub fn len(&self) -> usize {
                self.levels.len()
            }

            pub fn is_empty(&self) -> bool {
                self.levels.is_empty()
            }

            /// Level `i`, 1-based.
            pub fn level(&self, i: usize) -> &ImageRgb<T> {
                &self.levels[i - 1]
            }

            pub fn levels(&self) -> &[ImageRgb<T>] {
                &self.levels
            }

            pub fn into_levels(self) -> Vec<ImageRgb<T>> {
                self.levels
            }
        }
    };
}

level_access!(GaussianPyramid);
level_access!(LaplacianPyramid);

impl<T: Scalar> LaplacianPyramid<T> {
    pub fn from_levels(levels: Vec<ImageRgb<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::dim("laplacian_pyramid", "no levels"));
        }
        Ok(Self { levels })
    }
}

/// Blurs with the 5-tap binomial kernel and keeps every second sample.
pub fn gaussian_down<T: Scalar>(img: &ImageRgb<T>) -> Result<ImageRgb<T>> {
    let (c, h, w) = img.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("gaussian_down", format!("odd dims {h}x{w}")));
    }
    let k: Vec<T> = BINOMIAL5.iter().map(|&v| T::lit(v)).collect();
    let (oh, ow) = (h / 2, w / 2);
    let src = img.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    // Horizontal pass on even columns only, then vertical pass on even rows.
    let mut rows = vec![T::zero(); h * ow];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for ox in 0..ow {
                let x = 2 * ox as isize;
                rows[y * ow + ox] = (0..5)
                    .map(|t| k[t] * plane[y * w + mirror(x + t as isize - 2, w)])
                    .sum();
            }
        }
        for oy in 0..oh {
            let y = 2 * oy as isize;
            for ox in 0..ow {
                out.push(
                    (0..5)
                        .map(|t| k[t] * rows[mirror(y + t as isize - 2, h) * ow + ox])
                        .sum(),
                );
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

fn check_levels(op: &'static str, h: usize, w: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::dim(op, "level count must be at least 1"));
    }
    let m = 1usize << (n - 1);
    if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(Error::dim(op, format!("{h}x{w} not divisible by 2^{} = {m}", n - 1)));
    }
    Ok(())
}

pub fn gaussian_pyramid<T: Scalar>(img: &ImageRgb<T>, n: usize) -> Result<GaussianPyramid<T>> {
    let (_, h, w) = img.chw()?;
    check_levels("gaussian_pyramid", h, w, n)?;
    let mut levels = vec![img.clone()];
    for _ in 1..n {
        let next = gaussian_down(levels.last().expect("non-empty"))?;
        levels.push(next);
    }
    Ok(GaussianPyramid { levels })
}

/// `L_i = G_i - up(G_{i+1})` for `i < N`, `L_N = G_N`.
pub fn laplacian_decompose<T: Scalar>(img: &ImageRgb<T>, n: usize) -> Result<LaplacianPyramid<T>> {
    let gauss = gaussian_pyramid(img, n)?.into_levels();
    let mut levels = Vec::with_capacity(n);
    for pair in gauss.windows(2) {
        let (_, h, w) = pair[0].chw()?;
        let up = ops::bilinear_resize(&pair[1], h, w)?;
        levels.push(ops::sub(&pair[0], &up)?);
    }
    levels.push(gauss.last().expect("non-empty").clone());
    Ok(LaplacianPyramid { levels })
}

/// Folds from the residual upward: `R_i = L_i + up(R_{i+1})`.
pub fn laplacian_reconstruct<T: Scalar>(pyr: &LaplacianPyramid<T>) -> Result<ImageRgb<T>> {
    let mut levels = pyr.levels.iter().rev();
    let mut acc = levels.next().expect("non-empty pyramid").clone();
    for band in levels {
        let (c, h, w) = band.chw()?;
        let (ac, ah, aw) = acc.chw()?;
        if ac != c || 2 * ah != h || 2 * aw != w {
            return Err(Error::shapes("laplacian_reconstruct", acc.shape(), band.shape()));
        }
        let up = ops::bilinear_resize(&acc, h, w)?;
        acc = ops::add(band, &up)?;
    }
    Ok(acc)
}
