//! Toy-scale shifted-window transformer for dense grasp prediction, with
//! reverse-mode gradients.

pub mod eval;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;

pub use model::{
    forward, image_tensor, rgbd_tensor, init_params, loss, loss_and_grad, param_shapes, sgd_step, check_params, HeadTargets, Heads,
    ModelConfig, Net, WindowPlan,
};
pub use params::{load_model, read_model, save_model, write_model, ParamSet};
pub use tape::{Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum GraspNetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("patch merging needs an even grid, got {0}×{1}")]
    OddGrid(usize, usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Plain scaled dot-product attention `softmax(QKᵀ/√d)·V` on `[n, d]`
/// matrices.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor, GraspNetError> {
    if q.shape.len() != 2 || q.shape != k.shape || k.shape[0] != v.shape.first().copied().unwrap_or(0) || v.shape.len() != 2 {
        return Err(GraspNetError::ShapeMismatch(format!("attention {:?} {:?} {:?}", q.shape, k.shape, v.shape)));
    }
    let d = q.shape[1];
    let mut g = Graph::new();
    let lift = |g: &mut Graph, t: &Tensor| {
        let mut shape = vec![1];
        shape.extend(&t.shape);
        g.leaf(t.clone().reshape(&shape).expect("same size"))
    };
    let (qv, kv, vv) = (lift(&mut g, q), lift(&mut g, k), lift(&mut g, v));
    let s = g.bmm(qv, kv, true)?;
    let s = g.scale(s, 1.0 / (d as f64).sqrt());
    let p = g.masked_softmax(s, None)?;
    let o = g.bmm(p, vv, false)?;
    g.value(o).clone().reshape(&[q.shape[0], v.shape[1]])
}

#[cfg(test)]
mod tests;
