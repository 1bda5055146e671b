use crate::tensor::{gemm, Backward, Graph, Tensor, Transpose, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane is already the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("stride must be >= 1"));
    }
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn im2col(x: &[f64], g: &Geometry, col: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut col[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &Geometry, dx: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &col[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in row[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    geom: Geometry,
}

impl Backward for Conv2dOp {
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], _out: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let g = &self.geom;
        let (k, p) = (g.col_rows(), g.positions());
        let x = inputs[0].data();
        let w = inputs[1].data();
        let in_len = g.cin * g.h * g.w;
        let out_len = g.cout * p;

        let mut dx = wanted[0].then(|| vec![0.0; x.len()]);
        let mut dw = wanted[1].then(|| vec![0.0; w.len()]);
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        let mut dcol = vec![0.0; k * p];

        for b in 0..g.batch {
            let gout = &grad[b * out_len..(b + 1) * out_len];
            if let Some(dw) = dw.as_mut() {
                let xb = &x[b * in_len..(b + 1) * in_len];
                let cols: &[f64] = if g.is_pointwise() {
                    xb
                } else {
                    im2col(xb, g, &mut col);
                    &col
                };
                gemm(g.cout, p, k, gout, Transpose::No, cols, Transpose::Yes, 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * in_len..(b + 1) * in_len];
                if g.is_pointwise() {
                    gemm(k, g.cout, p, w, Transpose::Yes, gout, Transpose::No, 0.0, dxb);
                } else {
                    gemm(k, g.cout, p, w, Transpose::Yes, gout, Transpose::No, 0.0, &mut dcol);
                    col2im(&dcol, g, dxb);
                }
            }
        }

        let mut grads = vec![dx, dw];
        if inputs.len() == 3 {
            grads.push(wanted[2].then(|| {
                let mut db = vec![0.0; g.cout];
                for b in 0..g.batch {
                    for (c, acc) in db.iter_mut().enumerate() {
                        *acc += grad[b * out_len + c * p..b * out_len + (c + 1) * p].iter().sum::<f64>();
                    }
                }
                db
            }));
        }
        grads
    }
}

/// 2-D cross-correlation with symmetric zero padding.
///
/// `x` is `[C_in, H, W]` or `[B, C_in, H, W]`; `weight` is
/// `[C_out, C_in, k_h, k_w]`; `bias` is `[C_out]`. The output keeps the rank
/// of `x`.
pub fn conv2d(g: &mut Graph, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
    let xs = g.try_value(x)?.shape().to_vec();
    let ws = g.try_value(weight)?.shape().to_vec();
    let (batch, cin, h, w) = match xs[..] {
        [c, h, w] => (1, c, h, w),
        [b, c, h, w] => (b, c, h, w),
        _ => return Err(Error::shape(format!("conv2d input must be rank 3 or 4, got {xs:?}"))),
    };
    let &[cout, wcin, kh, kw] = &ws[..] else {
        return Err(Error::shape(format!("conv2d weight must be rank 4, got {ws:?}")));
    };
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv2d input has {cin} channels, weight expects {wcin}"
        )));
    }
    if let Some(b) = bias {
        if g.try_value(b)?.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv2d bias must be [{cout}], got {:?}",
                g.value(b).shape()
            )));
        }
    }
    let ho = conv_output_size(h, kh, stride, padding)?;
    let wo = conv_output_size(w, kw, stride, padding)?;
    let geom = Geometry {
        batch,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad: padding,
        ho,
        wo,
    };

    let (k, p) = (geom.col_rows(), geom.positions());
    let xd = g.value(x).data();
    let wd = g.value(weight).data();
    let bd = bias.map(|b| g.value(b).data());
    let mut out = vec![0.0; batch * cout * p];
    let mut col = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for b in 0..batch {
        let xb = &xd[b * cin * h * w..(b + 1) * cin * h * w];
        let cols: &[f64] = if geom.is_pointwise() {
            xb
        } else {
            im2col(xb, &geom, &mut col);
            &col
        };
        let ob = &mut out[b * cout * p..(b + 1) * cout * p];
        gemm(cout, k, p, wd, Transpose::No, cols, Transpose::No, 0.0, ob);
        if let Some(bd) = bd {
            for (c, plane) in ob.chunks_mut(p).enumerate() {
                plane.iter_mut().for_each(|v| *v += bd[c]);
            }
        }
    }
    let shape = if xs.len() == 3 {
        vec![cout, ho, wo]
    } else {
        vec![batch, cout, ho, wo]
    };
    let out = Tensor::from_vec(&shape, out)?;
    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    g.record(out, &inputs, Conv2dOp { geom })
}
