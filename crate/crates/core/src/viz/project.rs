// SPDX-License-Identifier: Apache-2.0

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageTag {
    Source,
    Target,
}

/// Plotted points with labels and translation links.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<String>,
    pub tags: Vec<LanguageTag>,
    /// `(source index, target index)` into `points`.
    pub pair_links: Vec<(usize, usize)>,
}

impl Projection2D {
    pub fn new(
        points: Vec<[f64; 2]>,
        labels: Vec<String>,
        tags: Vec<LanguageTag>,
        pair_links: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = points.len();
        if labels.len() != n || tags.len() != n {
            return Err(Error::shape(
                "projection",
                &[n],
                &[labels.len(), tags.len()],
            ));
        }
        for &(s, t) in &pair_links {
            if s >= n || t >= n {
                return Err(Error::Contract(format!(
                    "pair link ({s}, {t}) out of range for {n} points"
                )));
            }
            if tags[s] != LanguageTag::Source || tags[t] != LanguageTag::Target {
                return Err(Error::Contract(format!(
                    "pair link ({s}, {t}) must join a source to a target"
                )));
            }
        }
        Ok(Self {
            points,
            labels,
            tags,
            pair_links,
        })
    }

    /// Lays out `n` pairs as points `0..n` (sources) and `n..2n`
    /// (targets), linked index to index. `coords` has `2n` rows.
    pub fn from_pairs(coords: &Tensor, sources: &[String], targets: &[String]) -> Result<Self> {
        let n = sources.len();
        if targets.len() != n || coords.rows() != 2 * n || coords.cols() != 2 {
            return Err(Error::shape("projection", coords.shape(), &[2 * n, 2]));
        }
        let points = (0..2 * n)
            .map(|i| [coords.at(i, 0), coords.at(i, 1)])
            .collect();
        let labels = sources.iter().chain(targets).cloned().collect();
        let tags = (0..2 * n)
            .map(|i| {
                if i < n {
                    LanguageTag::Source
                } else {
                    LanguageTag::Target
                }
            })
            .collect();
        Self::new(points, labels, tags, (0..n).map(|i| (i, n + i)).collect())
    }
}

/// Principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    /// N×2 coordinates.
    pub coords: Tensor,
    /// Variances along the two components, largest first.
    pub explained_variance: [f64; 2],
    /// Total variance of the centered data.
    pub total_variance: f64,
}

/// Projects mean-centered rows onto the two leading eigenvectors of their
/// sample covariance. Each component's first non-negligible loading is made
/// positive.
pub fn pca_2d(x: &Tensor) -> Result<Pca2d> {
    let (n, d) = (x.rows(), x.cols());
    if !x.is_matrix() || n < 3 {
        return Err(Error::Contract(format!(
            "PCA needs at least 3 rows, got shape {:?}",
            x.shape()
        )));
    }
    let mut centered = DMatrix::from_row_slice(n, d, x.data());
    for j in 0..d {
        let m = centered.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = total_variance.abs().max(f64::MIN_POSITIVE);
    if eig.eigenvalues[order[0]] <= 1e-12 * scale || total_variance <= 0.0 {
        return Err(Error::Contract("PCA input has no variance".into()));
    }
    let mut coords = vec![0.0; n * 2];
    let mut explained = [0.0; 2];
    // With d = 1 the second component does not exist and stays zero.
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let tol = 1e-12 * v.amax();
        if let Some(first) = v.iter().find(|a| a.abs() > tol) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        let proj = &centered * v;
        for i in 0..n {
            coords[i * 2 + c] = proj[i];
        }
        explained[c] = eig.eigenvalues[k].max(0.0);
    }
    Ok(Pca2d {
        coords: Tensor::new(&[n, 2], coords)?,
        explained_variance: explained,
        total_variance,
    })
}
