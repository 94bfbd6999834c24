use super::tensor::{Real, Tensor};
use super::NnError;

/// Plain gradient descent: `p <- p - lr * g` for every parameter.
pub fn sgd_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    learning_rate: T,
) -> Result<(), NnError> {
    if params.len() != grads.len() {
        return Err(NnError::Shape(format!(
            "sgd: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if let Some((p, g)) = params
        .iter()
        .zip(grads)
        .find(|(p, g)| p.shape() != g.shape())
    {
        return Err(NnError::Shape(format!(
            "sgd: parameter {:?} vs gradient {:?}",
            p.shape(),
            g.shape()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= learning_rate * gv;
        }
    }
    Ok(())
}
