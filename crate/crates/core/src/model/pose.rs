use alloc::vec::Vec;

use super::{conv_relu, conv_relu_backward, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{self, Shape4, Tensor4};

/// Pose features per level, plus each level's conv input.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFeatures {
    pub feats: Vec<Tensor4>,
    inputs: Vec<Tensor4>,
}

/// Conv + ReLU per level, downsampling by 2×2 mean pooling in between.
pub fn encode_pose(p: &Tensor4, params: &ModelParams, cfg: &ModelConfig) -> Result<PoseFeatures> {
    let expected = Shape4::new(1, 1, cfg.height, cfg.width);
    if p.shape() != expected {
        return Err(Error::Dimension {
            op: "encode_pose",
            lhs: expected,
            rhs: p.shape(),
        });
    }
    let mut inputs = Vec::with_capacity(cfg.scales);
    let mut feats: Vec<Tensor4> = Vec::with_capacity(cfg.scales);
    for k in 0..cfg.scales {
        let input = if k == 0 {
            p.clone()
        } else {
            tensor::avgpool2x(&feats[k - 1])?
        };
        feats.push(conv_relu(&input, &params.pose_enc[k])?);
        inputs.push(input);
    }
    Ok(PoseFeatures { feats, inputs })
}

pub(crate) fn encode_pose_backward(
    pf: &PoseFeatures,
    params: &ModelParams,
    mut g_feats: Vec<Tensor4>,
    grads: &mut ModelParams,
) {
    for k in (0..g_feats.len()).rev() {
        let gx = conv_relu_backward(
            &pf.inputs[k],
            &params.pose_enc[k],
            &pf.feats[k],
            &g_feats[k],
            &mut grads.pose_enc[k],
            k > 0,
        );
        if let Some(gx) = gx {
            let up = tensor::avgpool2x_backward(&gx);
            g_feats[k - 1]
                .add_assign(&up)
                .expect("matching feature shapes");
        }
    }
}
