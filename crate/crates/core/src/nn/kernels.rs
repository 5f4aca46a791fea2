//! Convolution lowering (im2col / col2im) on top of the GEMM backend.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::{ConvGeom, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeom,
}

impl ConvShape {
    pub fn patch(&self) -> usize {
        self.cin * self.geom.kh * self.geom.kw
    }

    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    pub fn columns(&self) -> usize {
        self.batch * self.positions()
    }
}

/// Lowers `x: [B, C, H, W]` to `[C * kh * kw, B * Ho * Wo]`.
pub(crate) fn im2col<F: Real>(x: &[F], s: &ConvShape) -> Vec<F> {
    let g = s.geom;
    let (p, n) = (s.positions(), s.columns());
    let mut col = vec![F::zero(); s.patch() * n];
    for c in 0..s.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &mut col[r * n..(r + 1) * n];
                for b in 0..s.batch {
                    let plane = &x[(b * s.cin + c) * s.h * s.w..][..s.h * s.w];
                    let dst = &mut row[b * p..(b + 1) * p];
                    for oh in 0..s.ho {
                        let ih = (oh * g.sh + ki) as isize - g.ph as isize;
                        if ih < 0 || ih >= s.h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * s.w..][..s.w];
                        for ow in 0..s.wo {
                            let iw = (ow * g.sw + kj) as isize - g.pw as isize;
                            if iw >= 0 && iw < s.w as isize {
                                dst[oh * s.wo + ow] = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im<F: Real>(col: &[F], s: &ConvShape) -> Vec<F> {
    let g = s.geom;
    let (p, n) = (s.positions(), s.columns());
    let mut x = vec![F::zero(); s.batch * s.cin * s.h * s.w];
    for c in 0..s.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &col[r * n..(r + 1) * n];
                for b in 0..s.batch {
                    let plane = &mut x[(b * s.cin + c) * s.h * s.w..][..s.h * s.w];
                    let src = &row[b * p..(b + 1) * p];
                    for oh in 0..s.ho {
                        let ih = (oh * g.sh + ki) as isize - g.ph as isize;
                        if ih < 0 || ih >= s.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * s.w..][..s.w];
                        for ow in 0..s.wo {
                            let iw = (ow * g.sw + kj) as isize - g.pw as isize;
                            if iw >= 0 && iw < s.w as isize {
                                dst[iw as usize] += src[oh * s.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Returns the `[B, O, Ho, Wo]` output and the lowered input for backward.
pub(crate) fn conv_forward<F: Real>(
    x: &[F],
    w: &[F],
    bias: &[F],
    s: &ConvShape,
) -> (Vec<F>, Vec<F>) {
    let col = im2col(x, s);
    let (k, n, p) = (s.patch(), s.columns(), s.positions());
    let mut tmp = vec![F::zero(); s.cout * n];
    F::gemm(
        s.cout,
        k,
        n,
        w,
        (k, 1),
        &col,
        (n, 1),
        &mut tmp,
        (n, 1),
        false,
    );
    let mut out = vec![F::zero(); s.batch * s.cout * p];
    for b in 0..s.batch {
        for o in 0..s.cout {
            let src = &tmp[o * n + b * p..][..p];
            let dst = &mut out[(b * s.cout + o) * p..][..p];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + bias[o];
            }
        }
    }
    (out, col)
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// requested.
pub(crate) fn conv_backward<F: Real>(
    go: &[F],
    w: &[F],
    col: &[F],
    s: &ConvShape,
    dw: Option<&mut [F]>,
    db: Option<&mut [F]>,
    need_dx: bool,
) -> Option<Vec<F>> {
    let (k, n, p) = (s.patch(), s.columns(), s.positions());
    let mut go_t = vec![F::zero(); s.cout * n];
    for b in 0..s.batch {
        for o in 0..s.cout {
            let src = &go[(b * s.cout + o) * p..][..p];
            go_t[o * n + b * p..][..p].copy_from_slice(src);
        }
    }
    if let Some(db) = db {
        for (o, d) in db.iter_mut().enumerate() {
            let sum: f64 = go_t[o * n..(o + 1) * n].iter().map(|v| v.f64()).sum();
            *d += F::of(sum);
        }
    }
    if let Some(dw) = dw {
        F::gemm(s.cout, n, k, &go_t, (n, 1), col, (1, n), dw, (k, 1), true);
    }
    if !need_dx {
        return None;
    }
    let mut dcol = vec![F::zero(); k * n];
    F::gemm(
        k,
        s.cout,
        n,
        w,
        (1, k),
        &go_t,
        (n, 1),
        &mut dcol,
        (n, 1),
        false,
    );
    Some(col2im(&dcol, s))
}
