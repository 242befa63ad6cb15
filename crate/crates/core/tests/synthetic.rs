use glrtml::dataset::{generate_synthetic, SynthConfig};
use glrtml::numerics::{sym_eigen, SymMatrix};

fn sample_cov(points: &[Vec<f64>]) -> SymMatrix {
    let d = points[0].len();
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n).collect();
    let rows = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / n)
                .collect()
        })
        .collect();
    SymMatrix::from_rows(rows).unwrap()
}

#[test]
fn per_class_eigenvalue_ratio_tracks_anisotropy() {
    let cfg = SynthConfig { num_classes: 4, per_class: 50, d_in: 2, anisotropy: 10.0, seed: 1, ..SynthConfig::default() };
    let data = generate_synthetic(&cfg).unwrap();
    let all: Vec<_> = [&data.source.train, &data.source.query, &data.source.gallery]
        .into_iter()
        .flatten()
        .collect();
    for class in 0..4 {
        let points: Vec<Vec<f64>> = all.iter().filter(|i| i.label == class).map(|i| i.features.clone()).collect();
        assert_eq!(points.len(), 50);
        let eig = sym_eigen(&sample_cov(&points)).unwrap();
        let ratio = eig.eigenvalues[0] / eig.eigenvalues[eig.eigenvalues.len() - 1];
        assert!((5.0..=20.0).contains(&ratio), "class {class}: ratio {ratio}");
    }
}

#[test]
fn target_covariance_follows_the_latent_transform() {
    let cfg = SynthConfig { num_classes: 2, per_class: 2000, d_in: 4, anisotropy: 8.0, seed: 3, ..SynthConfig::default() };
    let data = generate_synthetic(&cfg).unwrap();
    let latent_of = |set: &[glrtml::dataset::LabeledInstance]| -> Vec<Vec<f64>> {
        set.iter().filter(|i| i.label == 0).map(|i| data.to_latent(&i.features)).collect()
    };
    let mut source = latent_of(&data.source.train);
    source.extend(latent_of(&data.source.query));
    source.extend(latent_of(&data.source.gallery));
    let mut target = latent_of(&data.target.train);
    target.extend(latent_of(&data.target.query));
    target.extend(latent_of(&data.target.gallery));

    let src = sample_cov(&source);
    for (k, s) in data.latent_std.iter().enumerate() {
        assert!((src.get(k, k) / (s * s) - 1.0).abs() < 0.1);
    }
    // Rotating the plane (0, 3) by θ and scaling by c maps the axis
    // variances (a, b) to a covariance with off-diagonal c²·sinθ·cosθ·(a − b).
    let (a, b) = (data.latent_std[0].powi(2), data.latent_std[3].powi(2));
    let (s, c) = cfg.shift_rotation_deg.to_radians().sin_cos();
    let scale2 = cfg.shift_scale * cfg.shift_scale;
    let tgt = sample_cov(&target);
    let expected_03 = scale2 * s * c * (a - b);
    let expected_00 = scale2 * (c * c * a + s * s * b);
    assert!((tgt.get(0, 3) - expected_03).abs() < 0.1 * expected_00);
    assert!((tgt.get(0, 0) / expected_00 - 1.0).abs() < 0.1);
}
