//! SGD-with-momentum update rule shared by the condenser (key-frame
//! pixels) and the evaluation trainer (model parameters).

use crate::tensor::Tensor;

/// One momentum step: buf <- m·buf + grad; value <- value − lr·buf.
pub fn momentum_step(value: &mut Tensor, buf: &mut Tensor, grad: &Tensor, lr: f64, momentum: f64) {
    debug_assert_eq!(value.shape(), grad.shape());
    debug_assert_eq!(buf.shape(), grad.shape());
    buf.scale(momentum as f32);
    buf.axpy(1.0, grad);
    value.axpy(-(lr as f32), buf);
}
