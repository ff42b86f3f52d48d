//! Change detection and object extraction between two point cloud maps of
//! the same environment.
//!
//! Changed places are located by ranking place descriptors of the later
//! session by their distance to the nearest descriptor of the earlier one;
//! the objects responsible are then extracted by comparing points of one
//! session against a voxel occupancy grid of the other.
//!
//! ```no_run
//! use cloud_delta::pipeline::{run, Alignment, PipelineConfig, Sessions};
//! use cloud_delta::synth::{generate, SceneSpec};
//!
//! let scene = generate(&SceneSpec::standard(1)).unwrap();
//! let sessions = Sessions {
//!     map_t: &scene.map_t,
//!     map_t1: &scene.map_t1,
//!     traj_t: &scene.traj_t,
//!     traj_t1: &scene.traj_t1,
//! };
//! let out = run(sessions, Alignment::Icp, None, &PipelineConfig::default(), Vec::new()).unwrap();
//! println!("{} changed regions", out.regions.len());
//! ```

pub mod alignment;
pub mod descriptor;
pub mod detection;
pub mod error;
pub mod extraction;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Point3, PointCloud, RigidTransform, SphereRegion, Trajectory};
