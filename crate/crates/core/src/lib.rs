//! Compact semantic world models from 2-D occupancy grid maps.
//!
//! The library turns a grayscale grid map into a small structured
//! description: axis-aligned rectangular units typed as rooms, corridors, or
//! halls, pairwise adjacency relations, doors, and the induced topology.
//! Extraction is maximum-a-posteriori search with a data-driven
//! Metropolis-Hastings sampler: a cell-wise likelihood couples a candidate
//! world to the map, and a logic-network prior encodes soft structural
//! knowledge such as "adjacent rooms share a wall of equal length".
//!
//! Modules follow the pipeline order: [`gridmap`] handles maps, [`world`] the
//! model, [`mln`] exact inference over the knowledge base, [`scoring`] the
//! posterior, [`detectors`] data-driven proposal candidates, and [`mcmc`] the
//! sampler.

pub mod detectors;
pub mod error;
mod exec;
pub mod gridmap;
pub mod mcmc;
pub mod mln;
pub mod scoring;
pub mod world;

pub use error::{Error, Result};
