//! Weakly supervised multi-output siamese temporal convolutional networks
//! for sensor-based activity and person discovery.
//!
//! A shared encoder of dilated convolution blocks turns a multichannel
//! window into a general representation; one linear head per task maps it
//! into a task embedding. Training sees only pairwise same/different labels
//! per task. Evaluation clusters each head's embeddings.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod siamese;
pub mod task;
pub mod tcn;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use data::{PairItem, SensorStream, SynthConfig, Window};
pub use error::{Error, Result};
pub use eval::{ClusterResult, KMeansConfig, Metrics};
pub use loss::{LossConfig, SimilarityLabel};
pub use siamese::{EmbeddingSet, HeadSpec, Network, NetworkConfig};
pub use task::Task;
pub use tcn::Mode;
pub use tensor::{ParamTensor, Real, Tensor};
pub use train::{Reduction, TrainConfig, TrainHistory, TrainMode, TrainOutcome};
