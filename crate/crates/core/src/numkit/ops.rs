use crate::scalar::Real;

use super::tensor::at4;
use super::{NumError, Tensor};

/// Spatial output size of a convolution, or `None` if the kernel cannot fit.
pub fn conv_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Spatial output size of a transposed convolution, or `None` if non-positive.
pub fn deconv_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 {
        return None;
    }
    ((size - 1) * stride + k).checked_sub(2 * pad).filter(|&d| d > 0)
}

fn check4(context: &'static str, t: &Tensor<impl Real>) -> Result<(), NumError> {
    if t.rank() != 4 {
        return Err(NumError::shape(context, "a rank-4 [N,C,H,W] tensor", t.shape()));
    }
    Ok(())
}

/// 2-D cross-correlation of `input [N,C,H,W]` with `kernel [K,C,kh,kw]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NumError> {
    check4("conv2d input", input)?;
    check4("conv2d kernel", kernel)?;
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [k, kc, kh, kw] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
    if kc != c {
        return Err(NumError::dim(
            "conv2d",
            format!("kernel expects {kc} input channels, input has {c}"),
        ));
    }
    let ho = conv_out_dim(h, kh, stride, pad)
        .ok_or_else(|| NumError::dim("conv2d", format!("kernel {kh}x{kw} does not fit {h}x{w} with stride {stride}, pad {pad}")))?;
    let wo = conv_out_dim(w, kw, stride, pad)
        .ok_or_else(|| NumError::dim("conv2d", format!("kernel {kh}x{kw} does not fit {h}x{w} with stride {stride}, pad {pad}")))?;

    let mut out = Tensor::zeros(&[n, k, ho, wo]);
    let ishape = [n, c, h, w];
    let kshape = [k, kc, kh, kw];
    let oshape = [n, k, ho, wo];
    let idata = input.data();
    let kdata = kernel.data();
    let odata = out.data_mut();
    for bi in 0..n {
        for ko in 0..k {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for ci in 0..c {
                        for i in 0..kh {
                            let y = (oy * stride + i).wrapping_sub(pad);
                            if y >= h {
                                continue;
                            }
                            for j in 0..kw {
                                let x = (ox * stride + j).wrapping_sub(pad);
                                if x >= w {
                                    continue;
                                }
                                acc = acc
                                    + idata[at4(&ishape, bi, ci, y, x)]
                                        * kdata[at4(&kshape, ko, ci, i, j)];
                            }
                        }
                    }
                    odata[at4(&oshape, bi, ko, oy, ox)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same kernel,
/// stride, and padding. Input `[N,K,H,W]`, kernel `[K,C,kh,kw]`, output
/// `[N,C,(H−1)·stride−2·pad+kh, …]`.
pub fn deconv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NumError> {
    check4("deconv2d input", input)?;
    check4("deconv2d kernel", kernel)?;
    let [n, k, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [kk, c, kh, kw] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
    if kk != k {
        return Err(NumError::dim(
            "deconv2d",
            format!("kernel expects {kk} input channels, input has {k}"),
        ));
    }
    let ho = deconv_out_dim(h, kh, stride, pad)
        .ok_or_else(|| NumError::dim("deconv2d", format!("non-positive output for {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}")))?;
    let wo = deconv_out_dim(w, kw, stride, pad)
        .ok_or_else(|| NumError::dim("deconv2d", format!("non-positive output for {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad}")))?;

    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    scatter_transpose(input, kernel, stride, pad, &mut out);
    Ok(out)
}

/// Scatters `source [N,K,H,W]` through `kernel [K,C,kh,kw]` into
/// `out [N,C,*,*]`, accumulating; positions falling outside `out` are dropped.
fn scatter_transpose<T: Real>(
    source: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    out: &mut Tensor<T>,
) {
    let [n, k, h, w] = [source.shape()[0], source.shape()[1], source.shape()[2], source.shape()[3]];
    let [_, c, kh, kw] = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
    let (ho, wo) = (out.shape()[2], out.shape()[3]);
    let sshape = [n, k, h, w];
    let kshape = [k, c, kh, kw];
    let oshape = [n, c, ho, wo];
    let sdata = source.data();
    let kdata = kernel.data();
    let odata = out.data_mut();
    for bi in 0..n {
        for ki in 0..k {
            for sy in 0..h {
                for sx in 0..w {
                    let v = sdata[at4(&sshape, bi, ki, sy, sx)];
                    for ci in 0..c {
                        for i in 0..kh {
                            let y = (sy * stride + i).wrapping_sub(pad);
                            if y >= ho {
                                continue;
                            }
                            for j in 0..kw {
                                let x = (sx * stride + j).wrapping_sub(pad);
                                if x >= wo {
                                    continue;
                                }
                                odata[at4(&oshape, bi, ci, y, x)] =
                                    odata[at4(&oshape, bi, ci, y, x)]
                                        + v * kdata[at4(&kshape, ki, ci, i, j)];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// d(conv2d)/d(input): scatters the output gradient back onto the exact
/// stored input shape, which stays correct when the conv dropped trailing
/// rows or columns to flooring.
pub(crate) fn conv2d_grad_input<T: Real>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    input_shape: &[usize],
) -> Tensor<T> {
    let mut out = Tensor::zeros(input_shape);
    scatter_transpose(grad_out, kernel, stride, pad, &mut out);
    out
}

/// d(conv2d)/d(kernel).
pub(crate) fn conv2d_grad_kernel<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    stride: usize,
    pad: usize,
    kernel_shape: &[usize],
) -> Tensor<T> {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [k, _, kh, kw] = [kernel_shape[0], kernel_shape[1], kernel_shape[2], kernel_shape[3]];
    let (ho, wo) = (grad_out.shape()[2], grad_out.shape()[3]);
    let mut grad = Tensor::zeros(kernel_shape);
    let ishape = [n, c, h, w];
    let oshape = [n, k, ho, wo];
    let kshape = [k, c, kh, kw];
    let idata = input.data();
    let gdata = grad_out.data();
    let out = grad.data_mut();
    for bi in 0..n {
        for ko in 0..k {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = gdata[at4(&oshape, bi, ko, oy, ox)];
                    for ci in 0..c {
                        for i in 0..kh {
                            let y = (oy * stride + i).wrapping_sub(pad);
                            if y >= h {
                                continue;
                            }
                            for j in 0..kw {
                                let x = (ox * stride + j).wrapping_sub(pad);
                                if x >= w {
                                    continue;
                                }
                                out[at4(&kshape, ko, ci, i, j)] = out[at4(&kshape, ko, ci, i, j)]
                                    + g * idata[at4(&ishape, bi, ci, y, x)];
                            }
                        }
                    }
                }
            }
        }
    }
    grad
}

/// d(deconv2d)/d(input): a plain convolution of the output gradient with the
/// same kernel.
pub(crate) fn deconv2d_grad_input<T: Real>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    conv2d(grad_out, kernel, stride, pad).expect("deconv grad shapes were validated at forward")
}

/// d(deconv2d)/d(kernel).
pub(crate) fn deconv2d_grad_kernel<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    stride: usize,
    pad: usize,
    kernel_shape: &[usize],
) -> Tensor<T> {
    let [n, k, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [_, c, kh, kw] = [kernel_shape[0], kernel_shape[1], kernel_shape[2], kernel_shape[3]];
    let (ho, wo) = (grad_out.shape()[2], grad_out.shape()[3]);
    let mut grad = Tensor::zeros(kernel_shape);
    let ishape = [n, k, h, w];
    let oshape = [n, c, ho, wo];
    let kshape = [k, c, kh, kw];
    let idata = input.data();
    let gdata = grad_out.data();
    let out = grad.data_mut();
    for bi in 0..n {
        for ki in 0..k {
            for sy in 0..h {
                for sx in 0..w {
                    let v = idata[at4(&ishape, bi, ki, sy, sx)];
                    for ci in 0..c {
                        for i in 0..kh {
                            let y = (sy * stride + i).wrapping_sub(pad);
                            if y >= ho {
                                continue;
                            }
                            for j in 0..kw {
                                let x = (sx * stride + j).wrapping_sub(pad);
                                if x >= wo {
                                    continue;
                                }
                                out[at4(&kshape, ki, ci, i, j)] = out[at4(&kshape, ki, ci, i, j)]
                                    + v * gdata[at4(&oshape, bi, ci, y, x)];
                            }
                        }
                    }
                }
            }
        }
    }
    grad
}

/// Elementwise sum of same-shape tensors.
pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    a.zip_map(b, |x, y| x + y)
}

/// Elementwise product of same-shape tensors.
pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    a.zip_map(b, |x, y| x * y)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_val)
}

/// Stable logistic: never overflows, stays in (0,1) for non-extreme inputs.
#[inline]
pub(crate) fn sigmoid_val<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t4([1, 1, 3, 3], (1..=9).map(f64::from).collect());
        let k = t4([1, 1, 1, 1], vec![1.0]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_zero_kernel_zero_output() {
        let x = t4([1, 2, 3, 3], (0..18).map(f64::from).collect());
        let k = Tensor::zeros(&[3, 2, 2, 2]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
    }

    #[test]
    fn conv_direct_sum_case() {
        let x = t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 10.0);
    }

    #[test]
    fn conv_channel_mismatch_errors() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let k = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1, 1), Err(NumError::Dimension { .. })));
    }

    #[test]
    fn conv_kernel_larger_than_padded_input_errors() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &k, 1, 1).is_err());
    }

    #[test]
    fn deconv_unit_kernel_identity() {
        let x = t4([1, 1, 3, 3], (1..=9).map(f64::from).collect());
        let k = t4([1, 1, 1, 1], vec![1.0]);
        let y = deconv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn deconv_direct_placement_case() {
        let x = t4([1, 1, 1, 1], vec![5.0]);
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let y = deconv2d(&x, &k, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn out_dim_formulas() {
        assert_eq!(conv_out_dim(32, 3, 2, 1), Some(16));
        assert_eq!(conv_out_dim(5, 3, 1, 0), Some(3));
        assert_eq!(conv_out_dim(2, 5, 1, 1), None);
        assert_eq!(deconv_out_dim(16, 4, 2, 1), Some(32));
        assert_eq!(deconv_out_dim(1, 2, 2, 0), Some(2));
        assert_eq!(deconv_out_dim(1, 2, 1, 1), None);
    }

    #[test]
    fn activations_pointwise_values() {
        let x = Tensor::new(vec![4], vec![-10.0, -1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 0.0, 2.0]);
        let l = leaky_relu(&x, 0.2);
        assert_eq!(l.data(), &[-2.0, -0.2, 0.0, 2.0]);
        let s = sigmoid(&x);
        assert_eq!(s.data()[2], 0.5);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn sigmoid_extreme_inputs_never_overflow() {
        // Past |x| of about 36 the open interval collapses onto {0,1} in
        // f64; what matters is that nothing overflows or goes NaN and the
        // representable open range holds as far as the format allows.
        let x = Tensor::new(vec![4], vec![-700.0, -36.0, 36.0, 700.0]).unwrap();
        let s = sigmoid(&x);
        assert!(s.all_finite());
        assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(s.data()[1] > 0.0);
        assert!(s.data()[2] < 1.0);
    }

    #[test]
    fn elementwise_add_mul() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(add(&a, &b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(mul(&a, &Tensor::ones(&[2])).unwrap().data(), a.data());
        assert_eq!(add(&a, &Tensor::zeros(&[2])).unwrap().data(), a.data());
    }
}
