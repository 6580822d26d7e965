//! Reverse-mode gradient of one class logit with respect to an intermediate
//! activation.
//!
//! Only activation adjoints are implemented. Starting from a one-hot seed on
//! the chosen logit, each layer between the logits and the target maps the
//! upstream gradient to the gradient of its input:
//!
//! * dense: `Wᵀ·g`
//! * relu: `g` where the recorded pre-activation is `> 0`, zero elsewhere
//! * maxpool: `g` routed to the recorded argmax, accumulating on collisions
//! * conv: transposed convolution with the layer's kernels
//! * flatten: reshape
//!
//! Softmax is never traversed; the gradient is taken at the logit.

use crate::error::{Error, Result};
use crate::model::{ActivationTrace, Layer, Network};
use crate::tensor::{self, Tensor};

/// `∂ logits[class_index] / ∂ output(target_layer)`, shaped like the target
/// layer's output. `trace` must come from a forward pass on `net` with
/// backward bookkeeping recorded for every layer after `target_layer`.
pub fn backward_to_layer(
    net: &Network,
    trace: &ActivationTrace,
    class_index: usize,
    target_layer: usize,
) -> Result<Tensor> {
    let classes = net.num_classes();
    if class_index >= classes {
        return Err(Error::OutOfRange {
            what: "class index",
            index: class_index,
            valid: format!("0..{classes}"),
        });
    }
    if target_layer >= net.classifier_start() {
        return Err(Error::InvalidArgument(format!(
            "target layer {target_layer} must precede the classifier head (starts at layer {})",
            net.classifier_start()
        )));
    }

    let mut grad = Tensor::from_fn(vec![classes], |i| if i == class_index { 1.0 } else { 0.0 })?;
    for layer_index in (target_layer + 1..=net.logits_layer()).rev() {
        let layer = net.layer(layer_index).expect("index within network");
        let missing = || Error::MissingBookkeeping {
            layer: layer_index,
            target: target_layer,
        };
        grad = match layer {
            Layer::Dense { weight, .. } => tensor::dense_input_grad(&grad, weight)?,
            Layer::Relu => {
                let pre = trace.pre_activation.get(&layer_index).ok_or_else(missing)?;
                if pre.shape() != grad.shape() {
                    return Err(Error::shape(format!(
                        "recorded pre-activation {:?} of layer {layer_index} does not match gradient {:?}",
                        pre.shape(),
                        grad.shape()
                    )));
                }
                let mut g = grad;
                for (gv, &p) in g.data_mut().iter_mut().zip(pre.data()) {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g
            }
            Layer::MaxPool => {
                let record = trace.pool_argmax.get(&layer_index).ok_or_else(missing)?;
                tensor::maxpool2d_input_grad(&grad, record)?
            }
            Layer::Conv { weight, params, .. } => {
                let [c, h, w] = net.layer_input_shape(layer_index)[..] else {
                    unreachable!("conv inputs are rank 3 in a validated network");
                };
                tensor::conv2d_input_grad(&grad, weight, [c, h, w], *params)?
            }
            Layer::Flatten => grad.reshape(net.layer_input_shape(layer_index).to_vec())?,
            Layer::Softmax => unreachable!("softmax lies after the logits layer"),
        };
    }
    Ok(grad)
}
