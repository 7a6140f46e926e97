//! Dual convolutional filter learning for paired image domains.
//!
//! This crate represents an image as a sum of `K` small filters convolved
//! with `K` full-size sparse feature maps, learns one filter bank per
//! domain from registered image pairs, and couples the two banks through
//! a `K x K` channel mapping trained in a closed loop: the forward
//! mapping transports source feature maps to the target domain and the
//! reverse mapping feeds reconstruction feedback into training. Applied
//! to super-resolution (low-res/high-res as the two domains) and
//! cross-modality synthesis.
//!
//! All subproblems are solved in the frequency domain under periodic
//! boundary conditions; see the `book/` guide for a chapter-by-chapter
//! walk through the math.
//!
//! ```
//! use dote::grid::{circular_convolve, fft_forward, fft_inverse, Tensor};
//!
//! let image = Tensor::new(vec![4, 4], (0..16).map(|v| v as f64 / 15.0).collect())?;
//! let roundtrip = fft_inverse(&fft_forward(&image)?)?;
//! assert!(image.max_abs_diff(&roundtrip)? < 1e-12);
//!
//! // Convolving with a one-hot kernel leaves the image unchanged.
//! let mut delta = Tensor::zeros(&[3, 3])?;
//! delta.set(&[0, 0], 1.0);
//! assert!(circular_convolve(&image, &delta)?.max_abs_diff(&image)? < 1e-12);
//! # Ok::<(), dote::DoteError>(())
//! ```

pub mod cli;
pub mod config;
pub mod csc;
pub mod dataio;
pub mod error;
pub mod grid;
pub mod mapping;
pub mod metrics;
pub mod synthesis;
pub mod train;

pub use config::SolverConfig;
pub use csc::{FeatureMapStack, FilterBank};
pub use error::{DoteError, Result};
pub use grid::Tensor;
pub use mapping::ChannelMap;
pub use synthesis::{synthesize, PairedDataset};
pub use train::{train, DoteModel, TrainReport};
