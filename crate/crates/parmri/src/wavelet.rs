//! Orthonormal 2D Haar transform with periodic layout, used as the sparsity
//! transform of the l1-regularized reconstruction. `W^H W = I` exactly (up to
//! round-off), so `||W x||_2 = ||x||_2`.

use crate::error::{Error, Result};
use crate::numerics::{ComplexImage, C64};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn haar_rows(buf: &mut [C64], rows: usize, cols: usize, stride: usize, inverse: bool) {
    let mut tmp = vec![C64::new(0.0, 0.0); cols];
    for r in 0..rows {
        let row = &mut buf[r * stride..r * stride + cols];
        let half = cols / 2;
        if inverse {
            for i in 0..half {
                let a = row[i];
                let d = row[half + i];
                tmp[2 * i] = (a + d) * INV_SQRT2;
                tmp[2 * i + 1] = (a - d) * INV_SQRT2;
            }
        } else {
            for i in 0..half {
                let v0 = row[2 * i];
                let v1 = row[2 * i + 1];
                tmp[i] = (v0 + v1) * INV_SQRT2;
                tmp[half + i] = (v0 - v1) * INV_SQRT2;
            }
        }
        row.copy_from_slice(&tmp);
    }
}

fn haar_cols(buf: &mut [C64], rows: usize, cols: usize, stride: usize, inverse: bool) {
    let mut tmp = vec![C64::new(0.0, 0.0); rows];
    for c in 0..cols {
        let half = rows / 2;
        if inverse {
            for i in 0..half {
                let a = buf[i * stride + c];
                let d = buf[(half + i) * stride + c];
                tmp[2 * i] = (a + d) * INV_SQRT2;
                tmp[2 * i + 1] = (a - d) * INV_SQRT2;
            }
        } else {
            for i in 0..half {
                let v0 = buf[2 * i * stride + c];
                let v1 = buf[(2 * i + 1) * stride + c];
                tmp[i] = (v0 + v1) * INV_SQRT2;
                tmp[half + i] = (v0 - v1) * INV_SQRT2;
            }
        }
        for i in 0..rows {
            buf[i * stride + c] = tmp[i];
        }
    }
}

fn check_dims(h: usize, w: usize, levels: usize) -> Result<()> {
    let div = 1usize << levels;
    if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
        return Err(Error::Parameter(format!(
            "haar with {levels} levels needs dimensions divisible by {div}, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Forward transform: each level splits the current low-pass block into
/// approximation and detail bands along both axes.
pub fn haar2_forward(img: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    let (h, w) = (img.height(), img.width());
    check_dims(h, w, levels)?;
    let mut out = img.clone();
    let stride = w;
    for level in 0..levels {
        let (bh, bw) = (h >> level, w >> level);
        haar_rows(out.data_mut(), bh, bw, stride, false);
        haar_cols(out.data_mut(), bh, bw, stride, false);
    }
    Ok(out)
}

/// Exact inverse (and adjoint) of [`haar2_forward`].
pub fn haar2_inverse(coeffs: &ComplexImage, levels: usize) -> Result<ComplexImage> {
    let (h, w) = (coeffs.height(), coeffs.width());
    check_dims(h, w, levels)?;
    let mut out = coeffs.clone();
    let stride = w;
    for level in (0..levels).rev() {
        let (bh, bw) = (h >> level, w >> level);
        haar_cols(out.data_mut(), bh, bw, stride, true);
        haar_rows(out.data_mut(), bh, bw, stride, true);
    }
    Ok(out)
}
