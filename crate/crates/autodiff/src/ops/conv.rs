use crate::error::{dim_err, AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv1dSpec {
    /// Stride 1 with `k / 2` padding: output length equals input length for
    /// odd kernels.
    pub fn same(kernel: usize) -> Self {
        Self {
            padding: kernel / 2,
            ..Self::default()
        }
    }

    pub fn depthwise(kernel: usize, channels: usize) -> Self {
        Self {
            groups: channels,
            ..Self::same(kernel)
        }
    }

    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

/// Range of output positions `t` for which `t*stride + tap - padding` lands
/// inside `[0, len)`.
fn valid_range(len: usize, out_len: usize, tap: usize, spec: &Conv1dSpec) -> (usize, usize) {
    let s = spec.stride;
    let lo = if spec.padding > tap {
        (spec.padding - tap).div_ceil(s)
    } else {
        0
    };
    let hi = if len + spec.padding > tap {
        ((len - 1 + spec.padding - tap) / s + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// 1-D cross-correlation over `x: [B, C_in, L]` (or `[C_in, L]`) with
/// `weight: [C_out, C_in / groups, k]`.
///
/// `groups == C_in == C_out` gives a depthwise convolution, `k == 1` with
/// one group a pointwise one.
pub fn conv1d<T: Scalar>(
    x: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    spec: Conv1dSpec,
) -> Result<Var<T>> {
    let xs = x.shape().to_vec();
    let unbatched = xs.len() == 2;
    let (batch, cin, len) = match xs[..] {
        [c, l] => (1, c, l),
        [b, c, l] => (b, c, l),
        _ => return Err(dim_err("conv1d", &xs, weight.shape())),
    };
    let ws = weight.shape().to_vec();
    if ws.len() != 3 {
        return Err(dim_err("conv1d", &xs, &ws));
    }
    let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
    let groups = spec.groups;
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(AutodiffError::Config {
            op: "conv1d",
            msg: format!("groups={groups} must divide C_in={cin} and C_out={cout}"),
        });
    }
    if spec.stride == 0 {
        return Err(AutodiffError::Config {
            op: "conv1d",
            msg: "stride must be positive".into(),
        });
    }
    if cin_g != cin / groups {
        return Err(dim_err("conv1d", &xs, &ws));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(dim_err("conv1d", &ws, b.shape()));
        }
    }
    let out_len = spec.output_len(len, k).ok_or(AutodiffError::InputTooShort {
        op: "conv1d",
        len,
        min: k.saturating_sub(2 * spec.padding).max(1),
    })?;
    let cout_g = cout / groups;

    if groups == 1 {
        return dense_conv1d(x, weight, bias, spec, (batch, cin, len, cout, k, out_len), unbatched);
    }
    let xv = x.shared_value();
    let wv = weight.shared_value();
    let mut y = vec![T::zero(); batch * cout * out_len];
    let xd = xv.data();
    let wd = wv.data();
    let ranges: Vec<(usize, usize)> = (0..k).map(|tap| valid_range(len, out_len, tap, &spec)).collect();
    for b in 0..batch {
        for oc in 0..cout {
            let g = oc / cout_g;
            let yrow = &mut y[(b * cout + oc) * out_len..][..out_len];
            if let Some(bias) = bias {
                let bv = bias.value().data()[oc];
                yrow.iter_mut().for_each(|v| *v = bv);
            }
            for ic in 0..cin_g {
                let xrow = &xd[(b * cin + g * cin_g + ic) * len..][..len];
                for (tap, &(lo, hi)) in ranges.iter().enumerate() {
                    let w = wd[(oc * cin_g + ic) * k + tap];
                    if spec.stride == 1 {
                        let off = tap as isize - spec.padding as isize;
                        for t in lo..hi {
                            yrow[t] = yrow[t] + w * xrow[(t as isize + off) as usize];
                        }
                    } else {
                        for t in lo..hi {
                            let pos = t * spec.stride + tap - spec.padding;
                            yrow[t] = yrow[t] + w * xrow[pos];
                        }
                    }
                }
            }
        }
    }
    let out_shape = if unbatched {
        vec![cout, out_len]
    } else {
        vec![batch, cout, out_len]
    };
    let value = Tensor::from_parts(out_shape, y);

    let pullback = move |gy: &Tensor<T>| {
        let gd = gy.data();
        let xd = xv.data();
        let wd = wv.data();
        let mut gx = vec![T::zero(); xd.len()];
        let mut gw = vec![T::zero(); wd.len()];
        let mut gb = vec![T::zero(); cout];
        for b in 0..batch {
            for oc in 0..cout {
                let g = oc / cout_g;
                let grow = &gd[(b * cout + oc) * out_len..][..out_len];
                gb[oc] = grow.iter().fold(gb[oc], |a, &v| a + v);
                for ic in 0..cin_g {
                    let base = (b * cin + g * cin_g + ic) * len;
                    let xrow = &xd[base..][..len];
                    for (tap, &(lo, hi)) in ranges.iter().enumerate() {
                        let wi = (oc * cin_g + ic) * k + tap;
                        let w = wd[wi];
                        let mut acc = T::zero();
                        for t in lo..hi {
                            let pos = t * spec.stride + tap - spec.padding;
                            acc = acc + grow[t] * xrow[pos];
                            gx[base + pos] = gx[base + pos] + w * grow[t];
                        }
                        gw[wi] = gw[wi] + acc;
                    }
                }
            }
        }
        vec![
            Some(Tensor::from_parts(xs.clone(), gx)),
            Some(Tensor::from_parts(ws.clone(), gw)),
            Some(Tensor::from_parts(vec![cout], gb)),
        ]
    };
    match bias {
        Some(b) => Var::record(&[x, weight, b], value, pullback),
        None => Var::record(&[x, weight], value, move |g| {
            let mut grads = pullback(g);
            grads.pop();
            grads
        }),
    }
}

/// Gathers `x` into `[C_in * k, B * L_out]` so a dense convolution becomes
/// a single matrix product.
fn im2col<T: Scalar>(x: &[T], dims: (usize, usize, usize, usize, usize), spec: &Conv1dSpec) -> Vec<T> {
    let (batch, cin, len, k, out_len) = dims;
    let n = batch * out_len;
    let mut col = vec![T::zero(); cin * k * n];
    for ic in 0..cin {
        for tap in 0..k {
            let (lo, hi) = valid_range(len, out_len, tap, spec);
            let row = &mut col[(ic * k + tap) * n..][..n];
            for b in 0..batch {
                let xrow = &x[(b * cin + ic) * len..][..len];
                for t in lo..hi {
                    row[b * out_len + t] = xrow[t * spec.stride + tap - spec.padding];
                }
            }
        }
    }
    col
}

fn dense_conv1d<T: Scalar>(
    x: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    spec: Conv1dSpec,
    dims: (usize, usize, usize, usize, usize, usize),
    unbatched: bool,
) -> Result<Var<T>> {
    let (batch, cin, len, cout, k, out_len) = dims;
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    let xv = x.shared_value();
    let wv = weight.shared_value();
    let n = batch * out_len;
    let ck = cin * k;
    let col = im2col(xv.data(), (batch, cin, len, k, out_len), &spec);
    // [C_out, B * L_out]
    let mut prod = vec![T::zero(); cout * n];
    T::gemm(cout, ck, n, (wv.data(), ck as isize, 1), (&col, n as isize, 1), T::zero(), (&mut prod, n as isize, 1));
    let mut y = vec![T::zero(); batch * cout * out_len];
    for oc in 0..cout {
        let bv = bias.map_or(T::zero(), |b| b.value().data()[oc]);
        for b in 0..batch {
            let src = &prod[oc * n + b * out_len..][..out_len];
            let dst = &mut y[(b * cout + oc) * out_len..][..out_len];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + bv;
            }
        }
    }
    let out_shape = if unbatched {
        vec![cout, out_len]
    } else {
        vec![batch, cout, out_len]
    };
    let value = Tensor::from_parts(out_shape, y);

    let pullback = move |gy: &Tensor<T>| {
        let gd = gy.data();
        let mut g = vec![T::zero(); cout * n];
        let mut gb = vec![T::zero(); cout];
        for oc in 0..cout {
            for b in 0..batch {
                let src = &gd[(b * cout + oc) * out_len..][..out_len];
                g[oc * n + b * out_len..][..out_len].copy_from_slice(src);
                gb[oc] = src.iter().fold(gb[oc], |a, &v| a + v);
            }
        }
        let mut gw = vec![T::zero(); cout * ck];
        // gw = g colᵀ
        T::gemm(cout, n, ck, (&g, n as isize, 1), (&col, 1, n as isize), T::zero(), (&mut gw, ck as isize, 1));
        // gcol = wᵀ g
        let mut gcol = vec![T::zero(); ck * n];
        T::gemm(ck, cout, n, (wv.data(), 1, ck as isize), (&g, n as isize, 1), T::zero(), (&mut gcol, n as isize, 1));
        let mut gx = vec![T::zero(); batch * cin * len];
        for ic in 0..cin {
            for tap in 0..k {
                let (lo, hi) = valid_range(len, out_len, tap, &spec);
                let row = &gcol[(ic * k + tap) * n..][..n];
                for b in 0..batch {
                    let gxrow = &mut gx[(b * cin + ic) * len..][..len];
                    for t in lo..hi {
                        let pos = t * spec.stride + tap - spec.padding;
                        gxrow[pos] = gxrow[pos] + row[b * out_len + t];
                    }
                }
            }
        }
        vec![
            Some(Tensor::from_parts(xs.clone(), gx)),
            Some(Tensor::from_parts(ws.clone(), gw)),
            Some(Tensor::from_parts(vec![cout], gb)),
        ]
    };
    match bias {
        Some(b) => Var::record(&[x, weight, b], value, pullback),
        None => Var::record(&[x, weight], value, move |g| {
            let mut grads = pullback(g);
            grads.pop();
            grads
        }),
    }
}
