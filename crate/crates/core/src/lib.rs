pub mod container;
pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod models;
pub mod pde;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use container::Container;
pub use datasets::{DataConfig, DatasetKind, Equation, OperatorDataset, Split, SplitRatios};
pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::{irfft, rfft, Activation, ComplexTensor, Graph, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Model32 = models::Model<f32>;
pub type Model64 = models::Model<f64>;
pub type Dataset32 = OperatorDataset<f32>;
pub type Dataset64 = OperatorDataset<f64>;
