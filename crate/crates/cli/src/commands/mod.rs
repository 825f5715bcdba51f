pub mod calibrate;
pub mod gradcheck;
pub mod simplex;
pub mod sparsity;
pub mod timing;
pub mod train;
