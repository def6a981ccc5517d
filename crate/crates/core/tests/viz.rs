// SPDX-License-Identifier: Apache-2.0

use lexalign_core::numcore::{Rng, Tensor};
use lexalign_core::probe::LayerScanResult;
use lexalign_core::viz::{
    layer_curve_y_range, pca_2d, render_layer_curve, render_projection, tsne_2d, tsne_affinities,
    tsne_kernel, LanguageTag, Projection2D, TsneConfig,
};
use proptest::prelude::*;

fn rows(data: &[[f64; 3]]) -> Tensor {
    Tensor::from_rows(&data.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn collinear_points_have_flat_second_axis() {
    let x = rows(&[
        [1.0, 2.0, 3.0],
        [2.0, 4.0, 6.0],
        [-1.0, -2.0, -3.0],
        [0.5, 1.0, 1.5],
    ]);
    let p = pca_2d(&x).unwrap();
    for i in 0..4 {
        assert!(p.coords.at(i, 1).abs() < 1e-9);
    }
}

#[test]
fn zero_variance_is_rejected() {
    let x = rows(&[[1.0, 1.0, 1.0]; 4]);
    assert!(pca_2d(&x).is_err());
    assert!(pca_2d(&rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])).is_err());
}

#[test]
fn two_dimensional_input_is_rotated_rigidly() {
    let mut rng = Rng::new(3);
    let x = Tensor::randn(&[12, 2], 1.0, &mut rng);
    let p = pca_2d(&x).unwrap();
    for i in 0..12 {
        for j in 0..12 {
            let d = |t: &Tensor| {
                ((t.at(i, 0) - t.at(j, 0)).powi(2) + (t.at(i, 1) - t.at(j, 1)).powi(2)).sqrt()
            };
            assert!((d(&x) - d(&p.coords)).abs() < 1e-9);
        }
    }
}

/// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn explained_variance_matches_jacobi_eigenvalues() {
    let mut rng = Rng::new(9);
    let (n, d) = (30, 6);
    let x = Tensor::randn(&[n, d], 1.0, &mut rng);
    let means: Vec<f64> = (0..d)
        .map(|c| (0..n).map(|r| x.at(r, c)).sum::<f64>() / n as f64)
        .collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    (0..n)
                        .map(|r| (x.at(r, i) - means[i]) * (x.at(r, j) - means[j]))
                        .sum::<f64>()
                        / (n - 1) as f64
                })
                .collect()
        })
        .collect();
    let ev = jacobi_eigenvalues(cov);
    let p = pca_2d(&x).unwrap();
    assert!((p.explained_variance[0] - ev[0]).abs() < 1e-9);
    assert!((p.explained_variance[1] - ev[1]).abs() < 1e-9);
    // Projected variance along each axis equals its eigenvalue.
    for c in 0..2 {
        let var = (0..n).map(|r| p.coords.at(r, c).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - ev[c]).abs() < 1e-9);
    }
}

#[test]
fn affinities_are_a_distribution() {
    let mut rng = Rng::new(4);
    let x = Tensor::randn(&[40, 5], 1.0, &mut rng);
    let p = tsne_affinities(&x, 10.0).unwrap();
    assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(p.data().iter().all(|&v| v >= 0.0));
    for i in 0..40 {
        assert_eq!(p.at(i, i), 0.0);
        for j in 0..40 {
            assert!((p.at(i, j) - p.at(j, i)).abs() < 1e-15);
        }
    }
    assert!(tsne_affinities(&x, 14.0).is_err());
    assert!(tsne_affinities(&x, 0.5).is_err());
}

#[test]
fn duplicated_point_stays_together() {
    let mut rng = Rng::new(6);
    let mut data = Tensor::randn(&[10, 4], 3.0, &mut rng).into_data();
    let first = data[..4].to_vec();
    data[4..8].copy_from_slice(&first);
    let x = Tensor::new(&[10, 4], data).unwrap();
    let cfg = TsneConfig {
        perplexity: 3.0,
        ..TsneConfig::default()
    };
    let y = tsne_2d(&x, &cfg).unwrap();
    let d = |i: usize, j: usize| {
        ((y.at(i, 0) - y.at(j, 0)).powi(2) + (y.at(i, 1) - y.at(j, 1)).powi(2)).sqrt()
    };
    for k in 2..10 {
        assert!(d(0, 1) < d(0, k) && d(0, 1) < d(1, k), "third point {k}");
    }
    assert_eq!(y, tsne_2d(&x, &cfg).unwrap());
    let (q, _) = tsne_kernel(&y).unwrap();
    assert!((q.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

fn scan(means: Vec<f64>) -> LayerScanResult {
    let n = means.len();
    LayerScanResult {
        peak_layer: 2,
        per_layer_std: vec![0.1; n],
        per_layer_mean_sim: means,
        pair_count: 10,
    }
}

#[test]
fn layer_curve_counts_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let means: Vec<f64> = (0..34)
        .map(|i| 0.3 + 0.6 * (-((i as f64 - 2.0).powi(2)) / 20.0).exp())
        .collect();
    let fig = render_layer_curve(&scan(means.clone()), 2, &dir.path().join("curve.svg")).unwrap();
    let svg = std::fs::read_to_string(&fig.svg).unwrap();
    assert_eq!(svg.matches(r#"class="point""#).count(), 34);
    assert_eq!(svg.matches("stroke-dasharray").count(), 1);
    let mut reader = csv::Reader::from_path(&fig.data).unwrap();
    let back: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(back, means);
    let again = render_layer_curve(&scan(means), 2, &dir.path().join("curve2.svg")).unwrap();
    assert_eq!(std::fs::read(&again.svg).unwrap(), svg.as_bytes());
}

#[test]
fn curve_range_rule() {
    assert_eq!(layer_curve_y_range(&[0.3, 0.9, 0.5]), (0.3 - 0.05, 1.0));
    assert_eq!(layer_curve_y_range(&[-0.4, 0.2]), (-0.4 - 0.05, 1.0));
}

fn projection(n: usize, seed: u64) -> Projection2D {
    let mut rng = Rng::new(seed);
    let coords = Tensor::randn(&[2 * n, 2], 1.0, &mut rng);
    let src: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let tgt: Vec<String> = (0..n).map(|i| format!("t<{i}>")).collect();
    Projection2D::from_pairs(&coords, &src, &tgt).unwrap()
}

fn attr(tag: &str, name: &str) -> String {
    let key = format!(r#" {name}=""#);
    let start = tag.find(&key).unwrap() + key.len();
    tag[start..].split('"').next().unwrap().to_string()
}

#[test]
fn projection_segments_meet_markers() {
    let dir = tempfile::tempdir().unwrap();
    let proj = projection(7, 1);
    let fig = render_projection(&proj, "final layer", &dir.path().join("proj.svg")).unwrap();
    let svg = std::fs::read_to_string(&fig.svg).unwrap();
    let lines: Vec<&str> = svg.lines().collect();
    let segments: Vec<&&str> = lines
        .iter()
        .filter(|l| l.contains(r#"class="pair-link""#))
        .collect();
    let markers: Vec<&&str> = lines
        .iter()
        .filter(|l| l.contains(r#"class="marker"#))
        .collect();
    assert_eq!(segments.len(), 7);
    assert_eq!(markers.len(), 14);
    assert_eq!(
        markers
            .iter()
            .filter(|m| m.contains("fill=\"blue\""))
            .count(),
        7
    );
    assert!(svg.contains("t&lt;3&gt;"));

    let mut reader = csv::Reader::from_path(&fig.data).unwrap();
    let table: Vec<(String, String)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[5].to_string(), r[6].to_string())
        })
        .collect();
    for (i, m) in markers.iter().enumerate() {
        assert_eq!((attr(m, "cx"), attr(m, "cy")), table[i]);
    }
    for (k, s) in segments.iter().enumerate() {
        assert_eq!((attr(s, "x1"), attr(s, "y1")), table[k]);
        assert_eq!((attr(s, "x2"), attr(s, "y2")), table[7 + k]);
    }
}

#[test]
fn no_links_no_segments() {
    let dir = tempfile::tempdir().unwrap();
    let p = projection(3, 2);
    let bare = Projection2D::new(p.points, p.labels, p.tags, vec![]).unwrap();
    let fig = render_projection(&bare, "x", &dir.path().join("bare.svg")).unwrap();
    let svg = std::fs::read_to_string(&fig.svg).unwrap();
    assert_eq!(svg.matches("pair-link").count(), 0);
}

#[test]
fn links_must_join_opposite_languages() {
    let p = projection(2, 3);
    assert!(Projection2D::new(
        p.points.clone(),
        p.labels.clone(),
        p.tags.clone(),
        vec![(0, 1)]
    )
    .is_err());
    assert!(Projection2D::new(
        p.points,
        p.labels,
        vec![LanguageTag::Source; 4],
        vec![(0, 2)]
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pca_output_is_centered(seed in any::<u64>(), n in 3usize..20, d in 2usize..8) {
        let x = Tensor::randn(&[n, d], 2.0, &mut Rng::new(seed));
        let p = pca_2d(&x).unwrap();
        for c in 0..2 {
            let m = (0..n).map(|r| p.coords.at(r, c)).sum::<f64>() / n as f64;
            prop_assert!(m.abs() < 1e-9);
        }
    }
}
