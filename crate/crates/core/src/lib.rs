//! Unsupervised single-image deraining with an attention-guided cycle GAN.
//!
//! A recurrent attention network (U-ARSE) estimates where rain is, two
//! generators translate between the rainy and clean domains with the mask as
//! extra input, and multi-scale discriminators judge each domain. Training
//! needs no paired data; the objective mixes adversarial, attention-prior,
//! cycle, perceptual, streak-GMM and reconstructive terms.
//!
//! Everything runs on the CPU in `f64` with a small reverse-mode autodiff
//! ([`autograd`]) so results are bitwise reproducible for a fixed seed.
//!
//! Module map:
//!
//! - [`imaging`] images, masks, PNG I/O, 8-bit quantization
//! - [`model`] ConvLSTM, hybrid blocks, U-ARSE, generators, discriminators
//! - [`losses`] every objective term, plus the EM fit of the streak prior
//! - [`metrics`] PSNR and SSIM on 8-bit planes
//! - [`data`] dataset layouts, loaders and the synthetic rain generator
//! - [`engine`] training, checkpoints, deraining, rain synthesis, evaluation
//! - [`cli`] the `derain-cyclegan` command-line front end
//!
//! Runnable examples live in `examples/`:
//!
//! | example | shows |
//! |---|---|
//! | `synth_rain` | streak rendering over a procedural scene |
//! | `attention_masks` | per-stage U-ARSE mask statistics |
//! | `gmm_em` | EM fit of the zero-mean mixture and its NLL trajectory |
//! | `losses_tour` | every loss term on one translation, then the weighted total |
//! | `metrics` | PSNR/SSIM as rain gets heavier, RGB and luma |
//! | `gradient_check` | analytic vs finite-difference gradients |
//! | `train_toy` | toy training run scored against the rainy input |
//! | `rainmake` | building a paired set with the rain-adding generator |
//! | `ablation` | the loss-subset presets and their logged totals |
//! | `checkpoint_roundtrip` | save, reload, derain and resume |

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod autograd;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
