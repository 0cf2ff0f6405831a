//! One-dimensional convolutional autoencoder for model-order prediction and
//! mode separation.

pub mod checkpoint;
pub mod data;
pub mod layers;
pub mod loss;
pub mod net;
pub mod predict;
mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, load_net, save_checkpoint, NetWeights};
pub use data::{labelled_sample, GenConfig, SampleStream, TrainSample};
pub use loss::{loss, LossWeights};
pub use net::{Net, NetConfig, NetOutput};
pub use predict::{predict, Prediction};
pub use tensor::Tensor3;
pub use train::{read_metrics, train_to_dir, MetricsRow, TrainOptions, Trainer};
