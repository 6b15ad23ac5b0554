pub mod attention;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod shape;

pub use attention::scaled_dot_product;
pub use conv::Conv2dOpts;
pub use elementwise::sigmoid;
pub use loss::{bce_from_logit, LOGIT_CLAMP};
