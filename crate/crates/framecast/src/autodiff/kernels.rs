//! im2col-based convolution kernels. Matrix products go through ndarray's
//! `dot`, everything else is plain index arithmetic on standard-layout data.

use ndarray::{Array2, ArrayD, Axis, IxDyn};

use super::dims4;

pub(crate) fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= k,
        "kernel {k} larger than padded input {input}+2*{pad}"
    );
    (input + 2 * pad - k) / stride + 1
}

/// Unfold one (C,H,W) image into a (C*kh*kw, Ho*Wo) matrix.
pub(crate) fn im2col(
    x: &ndarray::ArrayView3<'_, f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let mut col = Array2::<f64>::zeros((c * kh * kw, ho * wo));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        col[[row, oi * wo + oj]] = x[[ci, ii as usize, jj as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Fold a (C*kh*kw, Ho*Wo) gradient matrix back onto a (C,H,W) image,
/// accumulating overlapping contributions.
pub(crate) fn col2im(
    col: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array3<f64> {
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(w, kw, stride, pad);
    let mut img = ndarray::Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        img[[ci, ii as usize, jj as usize]] += col[[row, oi * wo + oj]];
                    }
                }
            }
        }
    }
    img
}

pub(crate) fn conv2d_forward(
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    b: Option<&ArrayD<f64>>,
    stride: usize,
    pad: usize,
) -> ArrayD<f64> {
    let (bs, ci, h, wd) = dims4(x);
    let (co, ciw, kh, kw) = dims4(w);
    assert_eq!(ci, ciw, "conv2d channel mismatch");
    let ho = conv_out_size(h, kh, stride, pad);
    let wo = conv_out_size(wd, kw, stride, pad);
    let wmat = w
        .view()
        .into_shape_with_order((co, ci * kh * kw))
        .unwrap();
    let mut y = ArrayD::zeros(IxDyn(&[bs, co, ho, wo]));
    for bi in 0..bs {
        let xi = x
            .index_axis(Axis(0), bi)
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        let col = im2col(&xi, kh, kw, stride, pad);
        let mut yi = wmat.dot(&col); // (Co, Ho*Wo)
        if let Some(bias) = b {
            for (mut row, bv) in yi.rows_mut().into_iter().zip(bias.iter()) {
                row += *bv;
            }
        }
        let yi = yi.into_shape_with_order((co, ho, wo)).unwrap();
        y.index_axis_mut(Axis(0), bi).assign(&yi);
    }
    y
}

/// Returns (dx, dw, db). The im2col matrices are recomputed rather than
/// cached; at desk scale the extra work is cheaper than holding them.
pub(crate) fn conv2d_backward(
    gy: &ArrayD<f64>,
    x: &ArrayD<f64>,
    w: &ArrayD<f64>,
    stride: usize,
    pad: usize,
    want_bias: bool,
) -> (ArrayD<f64>, ArrayD<f64>, Option<ArrayD<f64>>) {
    let (bs, ci, h, wd) = dims4(x);
    let (co, _, kh, kw) = dims4(w);
    let (_, _, ho, wo) = dims4(gy);
    let wmat = w
        .view()
        .into_shape_with_order((co, ci * kh * kw))
        .unwrap();
    let mut gx = ArrayD::zeros(x.raw_dim());
    let mut gw_mat = Array2::<f64>::zeros((co, ci * kh * kw));
    let mut gb = if want_bias {
        Some(ArrayD::zeros(IxDyn(&[co])))
    } else {
        None
    };
    for bi in 0..bs {
        let gyi = gy
            .index_axis(Axis(0), bi)
            .into_shape_with_order((co, ho * wo))
            .unwrap()
            .to_owned();
        let xi = x
            .index_axis(Axis(0), bi)
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        let col = im2col(&xi, kh, kw, stride, pad);
        gw_mat += &gyi.dot(&col.t());
        let gcol = wmat.t().dot(&gyi); // (Ci*kh*kw, Ho*Wo)
        let gxi = col2im(&gcol, ci, h, wd, kh, kw, stride, pad);
        gx.index_axis_mut(Axis(0), bi).assign(&gxi);
        if let Some(gb) = gb.as_mut() {
            let sums = gyi.sum_axis(Axis(1));
            for (g, s) in gb.iter_mut().zip(sums.iter()) {
                *g += *s;
            }
        }
    }
    let gw = gw_mat
        .into_shape_with_order((co, ci, kh, kw))
        .unwrap()
        .into_dyn();
    (gx, gw, gb)
}
