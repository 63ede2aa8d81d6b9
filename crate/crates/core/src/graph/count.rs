//! Parameter and multiply-accumulate counts. Counts depend only on tensor
//! dims and layer specs, never on weight values.

use super::{LayerOp, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerCost {
    pub params: u64,
    pub macs: u64,
}

fn elements(dims: &[usize]) -> u64 {
    dims.iter().map(|&d| d as u64).product()
}

pub fn layer_costs(m: &Model) -> Vec<LayerCost> {
    m.layers
        .iter()
        .map(|layer| {
            let params = layer.weights().map_or(0, |t| t.len() as u64) + layer.bias().map_or(0, |t| t.len() as u64);
            let out = &layer.output.dims;
            let macs = match &layer.op {
                // kh * kw * cin * cout * hout * wout, folded as weights * output pixels
                LayerOp::Conv2d { weights, .. } => match (weights.dims(), out.as_slice()) {
                    ([cout, kh, kw, cin], [n, oh, ow, _]) => elements(&[*kh, *kw, *cin, *cout, *n, *oh, *ow]),
                    _ => 0,
                },
                LayerOp::DepthwiseConv2d { weights, .. } => match (weights.dims(), out.as_slice()) {
                    ([_, kh, kw, c], [n, oh, ow, _]) => elements(&[*kh, *kw, *c, *n, *oh, *ow]),
                    _ => 0,
                },
                LayerOp::FcS8 { weights, .. } | LayerOp::FcReal { weights, .. } => elements(weights.dims()),
                LayerOp::Flatten | LayerOp::ConcatGrid => 0,
            };
            LayerCost { params, macs }
        })
        .collect()
}

/// Weight plus bias element count.
pub fn count_params(m: &Model) -> u64 {
    layer_costs(m).iter().map(|c| c.params).sum()
}

pub fn count_macs(m: &Model) -> u64 {
    layer_costs(m).iter().map(|c| c.macs).sum()
}
