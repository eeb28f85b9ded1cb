use super::SeqBatch;

pub fn relu_forward(x: &SeqBatch) -> SeqBatch {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient through ReLU given the forward *output* (or input; the sign pattern is the same).
/// The kink at exactly zero takes gradient 0.
pub fn relu_backward(activated: &SeqBatch, grad_out: &SeqBatch) -> SeqBatch {
    let mut g = grad_out.clone();
    for (gv, &a) in g.data_mut().iter_mut().zip(activated.data()) {
        if a <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// `y = a + b`; the adjoint routes `grad_out` unchanged to both operands.
pub fn residual_add(a: &SeqBatch, b: &SeqBatch) -> SeqBatch {
    let mut y = a.clone();
    y.add_assign(b);
    y
}
