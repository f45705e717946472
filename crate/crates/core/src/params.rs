//! Flat views over named parameter tensors, shared by the optimizer and
//! the checkpoint format.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{ConvKernel, Shape4};

/// A named, shaped parameter buffer.
#[derive(Debug)]
pub struct Slot<'a> {
    pub name: String,
    pub shape: Shape4,
    pub data: &'a [f64],
}

/// Anything holding trainable tensors in a fixed order.
pub trait ParamSet {
    fn slots(&self) -> Vec<Slot<'_>>;
    fn slots_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.slots().iter().map(|s| s.data.len()).sum()
    }

    /// Overwrite every slot from `src`, which must have the same layout.
    fn copy_from(&mut self, src: &dyn ParamSet) -> Result<()> {
        let src_slots = src.slots();
        let names: Vec<(String, Shape4)> = self
            .slots()
            .into_iter()
            .map(|s| (s.name, s.shape))
            .collect();
        if names.len() != src_slots.len() {
            return Err(Error::Config(format!(
                "parameter layout mismatch: {} vs {} tensors",
                names.len(),
                src_slots.len()
            )));
        }
        for ((name, shape), s) in names.iter().zip(&src_slots) {
            if *name != s.name || *shape != s.shape {
                return Err(Error::Config(format!(
                    "parameter layout mismatch at `{name}` {shape} vs `{}` {}",
                    s.name, s.shape
                )));
            }
        }
        for (dst, s) in self.slots_mut().into_iter().zip(src_slots) {
            dst.copy_from_slice(s.data);
        }
        Ok(())
    }
}

pub(crate) fn push_conv<'a>(
    out: &mut Vec<Slot<'a>>,
    prefix: String,
    k: &'a ConvKernel,
    with_bias: bool,
) {
    out.push(Slot {
        name: format!("{prefix}.weight"),
        shape: k.weight.shape(),
        data: k.weight.data(),
    });
    if with_bias {
        out.push(Slot {
            name: format!("{prefix}.bias"),
            shape: Shape4::new(1, k.c_out(), 1, 1),
            data: &k.bias,
        });
    }
}

pub(crate) fn push_conv_mut<'a>(
    out: &mut Vec<&'a mut [f64]>,
    k: &'a mut ConvKernel,
    with_bias: bool,
) {
    out.push(k.weight.data_mut());
    if with_bias {
        out.push(&mut k.bias);
    }
}
