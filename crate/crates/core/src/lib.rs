//! Grid-world and metric-map navigation: belief filtering, active
//! localization, noise modelling, semantic mapping, frontier exploration and
//! topological graph labels.

pub mod belief;
pub mod error;
pub mod explore;
pub mod localize;
pub mod mapping;
pub mod noise;
pub mod seed;
pub mod topo;
pub mod world;

pub use error::{Error, Result};
