//! Cropped-view masked autoencoder pre-training on a small CPU autodiff
//! substrate, with label-propagation evaluation and attention-map tooling.

pub mod numerics;
pub mod optim;
pub mod propeval;
pub mod trainer;
pub mod cli;
pub mod model;
pub mod views;
