//! Gradient-free operations on plain tensors.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bilinear resize of a `[C,H,W]` tensor with half-pixel centres.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    if oh == 0 || ow == 0 {
        return Err(Error::dim("bilinear_resize", format!("target size {oh}x{ow}")));
    }
    let (c, h, w) = x.chw()?;
    if (oh, ow) == (h, w) {
        return Ok(x.clone());
    }
    Ok(Tensor::from_parts(
        vec![c, oh, ow],
        kernels::bilinear_resize(x.data(), c, h, w, oh, ow),
    ))
}

pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("avg_pool2", format!("odd spatial dims {h}x{w}")));
    }
    Ok(Tensor::from_parts(vec![c, h / 2, w / 2], kernels::avg_pool2(x.data(), c, h, w)))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y).map_err(|_| Error::shapes("add", a.shape(), b.shape()))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x - y).map_err(|_| Error::shapes("sub", a.shape(), b.shape()))
}

pub fn clip01<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()).min(T::one()))
}

/// Copies a `[C,H,W]` window starting at `(y0, x0)`.
pub fn crop<T: Scalar>(x: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, sh, sw) = x.chw()?;
    if y0 + h > sh || x0 + w > sw || h == 0 || w == 0 {
        return Err(Error::dim("crop", format!("{h}x{w}+{y0}+{x0} outside {sh}x{sw}")));
    }
    let mut data = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        for y in 0..h {
            let start = (ci * sh + y0 + y) * sw + x0;
            data.extend_from_slice(&x.data()[start..start + w]);
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], data))
}

/// Pads bottom/right by mirroring interior rows and columns.
pub fn pad_reflect<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, sh, sw) = x.chw()?;
    if h < sh || w < sw {
        return Err(Error::dim("pad_reflect", format!("{sh}x{sw} larger than target {h}x{w}")));
    }
    let mut data = Vec::with_capacity(c * h * w);
    for ci in 0..c {
        for y in 0..h {
            let sy = mirror(y as isize, sh);
            for xx in 0..w {
                data.push(x.data()[(ci * sh + sy) * sw + mirror(xx as isize, sw)]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], data))
}

/// Mirror-reflects an index into `[0, n)` without repeating the edge sample.
pub fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Horizontal flip of a `[C,H,W]` tensor.
pub fn flip_horizontal<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let row = i / w;
        let col = i % w;
        x.data()[row * w + (w - 1 - col)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_small_extents() {
        assert_eq!(mirror(-1, 4), 1);
        assert_eq!(mirror(-2, 4), 2);
        assert_eq!(mirror(4, 4), 2);
        assert_eq!(mirror(-2, 2), 0);
        assert_eq!(mirror(3, 2), 1);
        assert_eq!(mirror(5, 1), 0);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let x = Tensor::<f32>::from_fn(&[3, 5, 7], |i| i as f32);
        let p = pad_reflect(&x, 8, 8).unwrap();
        assert_eq!(crop(&p, 0, 0, 5, 7).unwrap(), x);
        assert_eq!(pad_reflect(&x, 5, 7).unwrap(), x);
    }
}
