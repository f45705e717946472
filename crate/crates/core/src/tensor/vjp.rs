use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use super::ops::{self, reduce_to};
use super::{ensure_same, ConvKernel, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Tensor-level ops with a registered adjoint.
///
/// Inputs are passed positionally. `Conv2d` takes `[x, weight, bias]` with
/// bias shaped `(1, C_out, 1, 1)`; `Lerp` takes `[a, b, m]`;
/// `BilinearSample` takes `[src, flow]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TensorOp {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Lerp,
    Conv2d,
    UpsampleNearest2x,
    AvgPool2x,
    BilinearSample,
}

impl TensorOp {
    /// Registry order. `scale` is registered with a fixed factor of 1.5.
    pub const ALL: [TensorOp; 10] = [
        TensorOp::Add,
        TensorOp::Sub,
        TensorOp::Mul,
        TensorOp::Scale(1.5),
        TensorOp::Relu,
        TensorOp::Lerp,
        TensorOp::Conv2d,
        TensorOp::UpsampleNearest2x,
        TensorOp::AvgPool2x,
        TensorOp::BilinearSample,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TensorOp::Add => "add",
            TensorOp::Sub => "sub",
            TensorOp::Mul => "mul",
            TensorOp::Scale(_) => "scale",
            TensorOp::Relu => "relu",
            TensorOp::Lerp => "lerp",
            TensorOp::Conv2d => "conv2d",
            TensorOp::UpsampleNearest2x => "upsample_nearest2x",
            TensorOp::AvgPool2x => "avgpool2x",
            TensorOp::BilinearSample => "bilinear_sample",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            TensorOp::Scale(_)
            | TensorOp::Relu
            | TensorOp::UpsampleNearest2x
            | TensorOp::AvgPool2x => 1,
            TensorOp::Add | TensorOp::Sub | TensorOp::Mul | TensorOp::BilinearSample => 2,
            TensorOp::Lerp | TensorOp::Conv2d => 3,
        }
    }
}

impl FromStr for TensorOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TensorOp::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

fn arity_check(op: TensorOp, n: usize) -> Result<()> {
    if n == op.arity() {
        Ok(())
    } else {
        Err(Error::contract(
            op.name(),
            alloc::format!("expected {} inputs, got {n}", op.arity()),
        ))
    }
}

fn kernel_from(weight: &Tensor4, bias: &Tensor4) -> Result<ConvKernel> {
    let ws = weight.shape();
    if bias.shape() != Shape4::new(1, ws.b, 1, 1) {
        return Err(Error::Dimension {
            op: "conv2d",
            lhs: ws,
            rhs: bias.shape(),
        });
    }
    ConvKernel::new(weight.clone(), bias.data().to_vec())
}

/// Forward dispatch matching [`tensor_vjp`]'s input conventions.
pub fn tensor_forward(op: TensorOp, inputs: &[&Tensor4]) -> Result<Tensor4> {
    arity_check(op, inputs.len())?;
    match op {
        TensorOp::Add => ops::add(inputs[0], inputs[1]),
        TensorOp::Sub => ops::sub(inputs[0], inputs[1]),
        TensorOp::Mul => ops::mul(inputs[0], inputs[1]),
        TensorOp::Scale(s) => Ok(ops::scale(inputs[0], s)),
        TensorOp::Relu => Ok(ops::relu(inputs[0])),
        TensorOp::Lerp => ops::lerp(inputs[0], inputs[1], inputs[2]),
        TensorOp::Conv2d => ops::conv2d(inputs[0], &kernel_from(inputs[1], inputs[2])?),
        TensorOp::UpsampleNearest2x => Ok(ops::upsample_nearest2x(inputs[0])),
        TensorOp::AvgPool2x => ops::avgpool2x(inputs[0]),
        TensorOp::BilinearSample => ops::bilinear_sample(inputs[0], inputs[1]),
    }
}

/// Vector–Jacobian product: one gradient per input, in input order.
pub fn tensor_vjp(op: TensorOp, inputs: &[&Tensor4], grad_out: &Tensor4) -> Result<Vec<Tensor4>> {
    arity_check(op, inputs.len())?;
    let out_shape = match op {
        TensorOp::Conv2d => inputs[0].shape().with_c(inputs[1].shape().b),
        TensorOp::UpsampleNearest2x => {
            let s = inputs[0].shape();
            s.with_hw(s.h * 2, s.w * 2)
        }
        TensorOp::AvgPool2x => {
            let s = inputs[0].shape();
            if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
                return Err(Error::shape(
                    "avgpool2x",
                    alloc::format!("odd spatial dims in {s}"),
                ));
            }
            s.with_hw(s.h / 2, s.w / 2)
        }
        _ => inputs[0].shape(),
    };
    ensure_same(op.name(), out_shape, grad_out.shape())?;
    let g = grad_out;
    Ok(match op {
        TensorOp::Add => vec![g.clone(), reduce_to(g, inputs[1].shape())],
        TensorOp::Sub => vec![
            g.clone(),
            reduce_to(&ops::scale(g, -1.0), inputs[1].shape()),
        ],
        TensorOp::Mul => {
            let ga = ops::mul(g, inputs[1])?;
            let gb = reduce_to(&ops::mul(g, inputs[0])?, inputs[1].shape());
            vec![ga, gb]
        }
        TensorOp::Scale(s) => vec![ops::scale(g, s)],
        TensorOp::Relu => {
            let mut out = g.clone();
            for (o, &x) in out.data_mut().iter_mut().zip(inputs[0].data()) {
                if x <= 0.0 {
                    *o = 0.0;
                }
            }
            vec![out]
        }
        TensorOp::Lerp => {
            let (a, b, m) = (inputs[0], inputs[1], inputs[2]);
            let ga = ops::mul(g, m)?;
            let one_minus = m.map(|v| 1.0 - v);
            let gb = ops::mul(g, &one_minus)?;
            let diff = ops::sub(a, b)?;
            let gm = reduce_to(&ops::mul(&diff, g)?, m.shape());
            vec![ga, gb, gm]
        }
        TensorOp::Conv2d => {
            let k = kernel_from(inputs[1], inputs[2])?;
            let (gx, gw, gb) = ops::conv2d_backward(inputs[0], &k, g, true);
            let gb = Tensor4::from_raw(inputs[2].shape(), gb);
            vec![gx.expect("input gradient requested"), gw, gb]
        }
        TensorOp::UpsampleNearest2x => vec![ops::upsample_nearest2x_backward(g)],
        TensorOp::AvgPool2x => vec![ops::avgpool2x_backward(g)],
        TensorOp::BilinearSample => {
            let (gs, gf) = ops::bilinear_sample_backward(inputs[0], inputs[1], g, true);
            vec![gs, gf.expect("flow gradient requested")]
        }
    })
}
