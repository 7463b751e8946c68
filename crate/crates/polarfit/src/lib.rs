//! Inverse-rendering engine that recovers spatially-varying skin/material
//! textures (diffuse albedo, specular gain, normal map, ambient map, global
//! roughness) from co-located flash photographs split into cross- and
//! parallel-polarized sets.
//!
//! The pipeline is a two-stage, mip-weighted, coarse-to-fine photometric
//! optimization over texture space:
//!
//! 1. cross-polarized views fit the diffuse albedo, ambient map and an
//!    initial normal map with the specular lobe switched off;
//! 2. parallel-polarized views then fit specular gain, global roughness,
//!    the final normal map and per-channel diffuse scales, with the diffuse
//!    texture frozen.
//!
//! Two calibration procedures support the fits: a per-pixel light
//! attenuation map recovered from views of a textured plane, and an affine
//! color correction fit to color-checker patches.
//!
//! See the `examples/` directory for runnable entry points per capability,
//! or the `polarfit` binary for the batch CLI.

pub mod brdf;
pub mod camera;
pub mod cli;
pub mod error;
pub mod image;
pub mod math;
pub mod mesh;
pub mod grad;
pub mod optim;
pub mod raster;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod synth;
pub mod texture;

pub use camera::{Camera, CaptureView, PointLight, Polarization, ViewRole};
pub use error::{Error, Result};
pub use image::Image;
pub use mesh::TriMesh;
pub use texture::{Texture, TextureSet};
