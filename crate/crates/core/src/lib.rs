//! Relation-aware neural architecture search for graph tasks.

pub mod arch;
pub mod checkpoint;
pub mod error;
pub mod grad;
pub mod graph;
pub mod heads;
pub mod network;
pub mod ops;
pub mod optim;
pub mod params;
pub mod planted;
pub mod proliferate;
pub mod search;
pub mod train;

pub use arch::{ArchDag, Link, LinkOp, Vertex};
pub use error::{Error, Result};
pub use grad::{Gradients, Primitive, Reduce, Tape, Tensor, Var};
pub use graph::{Dataset, Graph, Task};
pub use network::{DataShape, NetConfig, Network};
pub use ops::{NodeOp, OpKind, RelOp, Space, ZooConfig, NUM_OPS};
pub use params::{Group, ParamStore};
pub use search::{ProliferationPlan, StrategyConfig, StrategyKind};
pub use train::{Metrics, TrainConfig};
