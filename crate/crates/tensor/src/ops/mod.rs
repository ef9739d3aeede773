mod elementwise;
mod linalg;
mod nn;
mod shape;

pub use elementwise::broadcast_shape;
pub use nn::LAYER_NORM_EPS;
