//! Numerical kernels with analytic backward passes.

pub mod bn;
pub mod conv;
pub mod loss;
pub mod pool;

pub use bn::{bn_apply, bn_backward, bn_forward, BatchStats, BnCache, BnLayer, Mode};
pub use conv::{conv_backward, conv_backward_accumulate, conv_forward, ConvGrads, ConvLayer, ConvSpec};
pub use loss::{argmax, softmax, softmax_cross_entropy, Linear, Matrix};
pub use pool::{
    global_avg_pool_spatial, global_avg_pool_spatial_backward, max_pool_spatial,
    max_pool_spatial_backward, relu, relu_backward, MaxPoolSpec,
};
