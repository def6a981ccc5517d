// SPDX-License-Identifier: Apache-2.0

//! 2-D projections of paired embeddings and SVG figures with CSV sidecars.

mod project;
mod render;
mod tsne;

pub use project::{pca_2d, LanguageTag, Pca2d, Projection2D};
pub use render::{layer_curve_y_range, render_layer_curve, render_projection, Figure};
pub use tsne::{tsne_2d, tsne_affinities, tsne_kernel, TsneConfig};
