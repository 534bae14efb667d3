//! Temporal convolutional decoder: two same-padded 1-D convolutions along
//! time (shared across roles) followed by a learnable `T × K` time projection.

use crate::diffcore::{DifferentiableOp, Rng, Tensor};
use crate::error::{Error, Result};

/// `input: [C, R, T]`, `w: [O, C, kernel]`, `b: [O]` -> `[O, R, T]`.
pub fn conv_time(input: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (c, r, t, o, k) = conv_dims(input, w, b)?;
    let pad = k / 2;
    let (x, wd) = (input.data(), w.data());
    let mut out = vec![0.0; o * r * t];
    for oc in 0..o {
        for role in 0..r {
            let orow = &mut out[(oc * r + role) * t..][..t];
            orow.fill(b.data()[oc]);
            for ic in 0..c {
                let xrow = &x[(ic * r + role) * t..][..t];
                let wk = &wd[(oc * c + ic) * k..][..k];
                for (j, &wv) in wk.iter().enumerate() {
                    for f in 0..t {
                        let s = f + j;
                        if s >= pad && s - pad < t {
                            orow[f] += wv * xrow[s - pad];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![o, r, t], out)
}

/// Returns `(d_input, dW, db)`.
pub fn conv_time_backward(input: &Tensor, w: &Tensor, b: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, r, t, o, k) = conv_dims(input, w, b)?;
    d_out.expect_shape(&[o, r, t], "convolution cotangent")?;
    let pad = k / 2;
    let (x, wd, g) = (input.data(), w.data(), d_out.data());
    let mut dx = vec![0.0; c * r * t];
    let mut dw = vec![0.0; o * c * k];
    let mut db = vec![0.0; o];
    for oc in 0..o {
        for role in 0..r {
            let grow = &g[(oc * r + role) * t..][..t];
            db[oc] += grow.iter().sum::<f64>();
            for ic in 0..c {
                let xrow = &x[(ic * r + role) * t..][..t];
                for j in 0..k {
                    let wv = wd[(oc * c + ic) * k + j];
                    let mut acc = 0.0;
                    for f in 0..t {
                        let s = f + j;
                        if s >= pad && s - pad < t {
                            acc += grow[f] * xrow[s - pad];
                            dx[(ic * r + role) * t + s - pad] += wv * grow[f];
                        }
                    }
                    dw[(oc * c + ic) * k + j] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![c, r, t], dx)?,
        Tensor::new(vec![o, c, k], dw)?,
        Tensor::new(vec![o], db)?,
    ))
}

fn conv_dims(input: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, r, t) = match input.shape() {
        &[c, r, t] => (c, r, t),
        s => return Err(Error::dim(format!("convolution input must be [C, R, T], got {s:?}"))),
    };
    let (o, k) = match w.shape() {
        &[o, wc, k] if wc == c && k % 2 == 1 => (o, k),
        s => {
            return Err(Error::dim(format!(
                "convolution weight {s:?} incompatible with {c} input channels and an odd kernel"
            )))
        }
    };
    b.expect_shape(&[o], "convolution bias")?;
    Ok((c, r, t, o, k))
}

/// `y: [O, R, T]`, `p: [T, K]` -> `[K, R, O]`.
pub fn project_time(y: &Tensor, p: &Tensor) -> Result<Tensor> {
    let (o, r, t) = match y.shape() {
        &[o, r, t] => (o, r, t),
        s => return Err(Error::dim(format!("projection input must be [O, R, T], got {s:?}"))),
    };
    if p.ndim() != 2 || p.shape()[0] != t {
        return Err(Error::dim(format!("time projection {:?} does not start with T={t}", p.shape())));
    }
    let kf = p.shape()[1];
    let (yd, pd) = (y.data(), p.data());
    Ok(Tensor::from_fn(&[kf, r, o], |i| {
        let (k, role, oc) = (i / (r * o), (i / o) % r, i % o);
        (0..t).map(|f| pd[f * kf + k] * yd[(oc * r + role) * t + f]).sum()
    }))
}

/// Returns `(dY, dP)`.
pub fn project_time_backward(y: &Tensor, p: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (o, r, t) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let kf = p.shape()[1];
    d_out.expect_shape(&[kf, r, o], "projection cotangent")?;
    let (yd, pd, g) = (y.data(), p.data(), d_out.data());
    let dy = Tensor::from_fn(&[o, r, t], |i| {
        let (oc, role, f) = (i / (r * t), (i / t) % r, i % t);
        (0..kf).map(|k| pd[f * kf + k] * g[(k * r + role) * o + oc]).sum()
    });
    let dp = Tensor::from_fn(&[t, kf], |i| {
        let (f, k) = (i / kf, i % kf);
        let mut s = 0.0;
        for role in 0..r {
            for oc in 0..o {
                s += yd[(oc * r + role) * t + f] * g[(k * r + role) * o + oc];
            }
        }
        s
    });
    Ok((dy, dp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnDecoder {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    /// `[T, K]`
    pub projection: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    input: Tensor,
    hidden: Tensor,
    conv_out: Tensor,
}

impl TcnDecoder {
    pub fn new(
        in_channels: usize,
        hidden: usize,
        kernel: usize,
        frames: usize,
        horizon: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("decoder kernel must be odd, got {kernel}")));
        }
        if in_channels == 0 || hidden == 0 || frames == 0 || horizon == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        let b1 = 1.0 / ((in_channels * kernel) as f64).sqrt();
        let b2 = 1.0 / ((hidden * kernel) as f64).sqrt();
        // projection starts as "repeat the last observed frame"
        let projection = Tensor::from_fn(&[frames, horizon], |i| if i / horizon == frames - 1 { 1.0 } else { 0.0 });
        Ok(Self {
            conv1_w: Tensor::from_fn(&[hidden, in_channels, kernel], |_| rng.uniform(-b1, b1)),
            conv1_b: Tensor::zeros(&[hidden]),
            conv2_w: Tensor::from_fn(&[2, hidden, kernel], |_| rng.uniform(-b2, b2)),
            conv2_b: Tensor::zeros(&[2]),
            projection,
        })
    }

    pub fn forward(&self, h: &Tensor) -> Result<(Tensor, DecoderCache)> {
        let hidden = conv_time(h, &self.conv1_w, &self.conv1_b)?.map(f64::tanh);
        let conv_out = conv_time(&hidden, &self.conv2_w, &self.conv2_b)?;
        let out = project_time(&conv_out, &self.projection)?;
        Ok((
            out,
            DecoderCache {
                input: h.clone(),
                hidden,
                conv_out,
            },
        ))
    }

    /// Parameter gradients in [`TcnDecoder::params`] order, and the input
    /// cotangent.
    pub fn backward(&self, cache: &DecoderCache, d_out: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let (d_conv, d_proj) = project_time_backward(&cache.conv_out, &self.projection, d_out)?;
        let (d_hidden, d_w2, d_b2) = conv_time_backward(&cache.hidden, &self.conv2_w, &self.conv2_b, &d_conv)?;
        let d_pre = Tensor::from_fn(d_hidden.shape(), |i| {
            let a = cache.hidden.data()[i];
            d_hidden.data()[i] * (1.0 - a * a)
        });
        let (d_in, d_w1, d_b1) = conv_time_backward(&cache.input, &self.conv1_w, &self.conv1_b, &d_pre)?;
        Ok((vec![d_w1, d_b1, d_w2, d_b2, d_proj], d_in))
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("decoder.conv1.w".into(), &self.conv1_w),
            ("decoder.conv1.b".into(), &self.conv1_b),
            ("decoder.conv2.w".into(), &self.conv2_w),
            ("decoder.conv2.b".into(), &self.conv2_b),
            ("decoder.projection".into(), &self.projection),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.projection,
        ]
    }
}

/// `H: [C_enc, R, T]` -> `[K, R, 2]`.
pub fn decode(dec: &TcnDecoder, h: &Tensor) -> Result<Tensor> {
    Ok(dec.forward(h)?.0)
}

/// `[H, conv1_w, conv1_b, conv2_w, conv2_b, projection] -> [decode]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecoderOp;

fn decoder_from(inputs: &[Tensor]) -> TcnDecoder {
    TcnDecoder {
        conv1_w: inputs[1].clone(),
        conv1_b: inputs[2].clone(),
        conv2_w: inputs[3].clone(),
        conv2_b: inputs[4].clone(),
        projection: inputs[5].clone(),
    }
}

impl DifferentiableOp for DecoderOp {
    type Context = DecoderCache;

    fn forward(&self, inputs: &[Tensor]) -> Result<(Vec<Tensor>, DecoderCache)> {
        let (out, cache) = decoder_from(inputs).forward(&inputs[0])?;
        Ok((vec![out], cache))
    }

    fn backward(&self, inputs: &[Tensor], ctx: &DecoderCache, cot: &[Tensor]) -> Result<Vec<Tensor>> {
        let (params, d_in) = decoder_from(inputs).backward(ctx, &cot[0])?;
        let mut out = vec![d_in];
        out.extend(params);
        Ok(out)
    }
}
