pub mod deform;
pub mod dimension;
pub mod error;
pub mod experiments;
pub mod excursion;
pub mod nets;
pub mod path;
pub mod rmq;
pub mod stats;
pub mod tree;
pub mod weights;

pub use error::{Error, Result};
pub use path::{PathGrid, PathKind};
pub use tree::{ContourTree, SubtreeHandle, TreeMode, TreeOptions, TreePoint};
