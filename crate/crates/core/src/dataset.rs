//! Labeled instances, CSV persistence, stratified splitting and a seeded
//! synthetic source/target generator.

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label reserved for distractor (background) instances.
pub const DISTRACTOR_LABEL: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub id: String,
    pub label: i64,
    pub features: Vec<f64>,
}

impl LabeledInstance {
    pub fn is_distractor(&self) -> bool {
        self.label == DISTRACTOR_LABEL
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledInstance>,
    pub query: Vec<LabeledInstance>,
    pub gallery: Vec<LabeledInstance>,
}

pub fn save_csv(instances: &[LabeledInstance], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let d = instances.first().map_or(0, |i| i.features.len());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..d).map(|k| format!("f{k}")));
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(&header).map_err(csv_err)?;
    for inst in instances {
        if inst.features.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: inst.features.len(),
            });
        }
        let mut row = Vec::with_capacity(d + 2);
        row.push(inst.id.clone());
        row.push(inst.label.to_string());
        // `Display` for f64 prints the shortest string that parses back to
        // the same value.
        row.extend(inst.features.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<Vec<LabeledInstance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers().map_err(|e| parse_error(&e, 1))?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.len() < 2 || &header[0] != "id" || &header[1] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with `id,label`".into(),
        });
    }
    let d = header.len() - 2;
    let mut out = Vec::new();
    for (n, record) in r.records().enumerate() {
        let line_guess = n + 2;
        let record = record.map_err(|e| parse_error(&e, line_guess))?;
        let line = record.position().map_or(line_guess, |p| p.line() as usize);
        if record.len() != d + 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", d + 2, record.len()),
            });
        }
        let label = record[1].trim().parse::<i64>().map_err(|e| Error::Parse {
            line,
            message: format!("bad label `{}`: {e}", &record[1]),
        })?;
        let features = record
            .iter()
            .skip(2)
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("bad feature `{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(LabeledInstance {
            id: record[0].to_string(),
            label,
            features,
        });
    }
    Ok(out)
}

fn parse_error(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Per-class `(train, query)` counts; the gallery receives the rest. Query
/// and gallery each get at least one instance.
fn role_counts(n: usize, train_frac: f64, query_frac: f64) -> (usize, usize) {
    let train = ((n as f64 * train_frac).round() as usize).min(n.saturating_sub(2));
    let query = ((n as f64 * query_frac).round() as usize).clamp(1, n - train - 1);
    (train, query)
}

fn check_fractions(train_frac: f64, query_frac: f64) -> Result<()> {
    let ok = train_frac > 0.0 && train_frac < 1.0 && query_frac > 0.0 && query_frac < 1.0 && train_frac + query_frac < 1.0;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "split fractions must lie in (0, 1) and sum below 1 (train_frac={train_frac}, query_frac={query_frac})"
        )))
    }
}

fn stratify(
    instances: &[LabeledInstance],
    train_frac: f64,
    query_frac: f64,
    min_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DatasetSplit> {
    let mut labels: Vec<i64> = instances.iter().map(|i| i.label).filter(|&l| l != DISTRACTOR_LABEL).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut split = DatasetSplit::default();
    for label in labels {
        let mut members: Vec<&LabeledInstance> = instances.iter().filter(|i| i.label == label).collect();
        if members.len() < min_per_class {
            return Err(Error::InvalidConfig(format!(
                "class {label} has {} instances; at least {min_per_class} are needed",
                members.len()
            )));
        }
        members.shuffle(rng);
        let (train, query) = role_counts(members.len(), train_frac, query_frac);
        split.train.extend(members[..train].iter().map(|&i| i.clone()));
        split.query.extend(members[train..train + query].iter().map(|&i| i.clone()));
        split.gallery.extend(members[train + query..].iter().map(|&i| i.clone()));
    }
    Ok(split)
}

/// Label-stratified split into train/query/gallery. Labeled inputs with
/// label −1 are ignored; `distractors` are appended to the gallery with
/// label −1.
pub fn make_split(
    instances: &[LabeledInstance],
    train_frac: f64,
    query_frac: f64,
    distractors: &[LabeledInstance],
    seed: u64,
) -> Result<DatasetSplit> {
    check_fractions(train_frac, query_frac)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = stratify(instances, train_frac, query_frac, 3, &mut rng)?;
    split.gallery.extend(distractors.iter().map(|d| LabeledInstance {
        label: DISTRACTOR_LABEL,
        ..d.clone()
    }));
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub d_in: usize,
    /// Typical distance between two class means.
    pub class_sep: f64,
    /// Ratio of largest to smallest within-class covariance eigenvalue.
    pub anisotropy: f64,
    /// Distractors added to each domain's gallery.
    pub distractors: usize,
    pub shift_rotation_deg: f64,
    pub shift_scale: f64,
    pub train_frac: f64,
    pub query_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 8,
            per_class: 60,
            d_in: 16,
            class_sep: 3.0,
            anisotropy: 8.0,
            distractors: 0,
            shift_rotation_deg: 30.0,
            shift_scale: 1.5,
            train_frac: 0.5,
            query_frac: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_classes < 2 {
            return bad("synth num_classes must be at least 2");
        }
        if self.per_class < 2 {
            return bad("synth per_class must be at least 2");
        }
        if self.d_in == 0 {
            return bad("synth d_in must be positive");
        }
        if !(self.anisotropy >= 1.0) {
            return bad("synth anisotropy must be at least 1");
        }
        if !(self.class_sep >= 0.0) {
            return bad("synth class_sep must be nonnegative");
        }
        if !(self.shift_scale > 0.0) {
            return bad("synth shift_scale must be positive");
        }
        if !self.shift_rotation_deg.is_finite() {
            return bad("synth shift_rotation_deg must be finite");
        }
        check_fractions(self.train_frac, self.query_frac)
    }
}

/// Output of [`generate_synthetic`], with the generating structure exposed
/// for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub source: DatasetSplit,
    pub target: DatasetSplit,
    /// Class means in latent coordinates (source domain).
    pub latent_means: Vec<Vec<f64>>,
    /// Within-class standard deviation per latent axis.
    pub latent_std: Vec<f64>,
    /// Orthogonal lift from latent to feature space, row-major `d_in × d_in`.
    pub lift: Vec<f64>,
}

impl SyntheticData {
    /// Maps a feature vector back to latent coordinates (`Lᵀ x`).
    pub fn to_latent(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..d).map(|j| (0..d).map(|i| self.lift[i * d + j] * x[i]).sum()).collect()
    }
}

/// Random orthogonal matrix by Gram–Schmidt on a Gaussian matrix.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= p * ci;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut m = vec![0.0; d * d];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            m[i * d + j] = c[i];
        }
    }
    m
}

/// Target-domain transform in latent space: scale times Givens rotations by
/// the configured angle in the planes `(k, d−1−k)`, which pair the
/// lowest-variance latent axes with the highest-variance ones.
pub fn latent_shift(z: &[f64], rotation_deg: f64, scale: f64) -> Vec<f64> {
    let (s, c) = rotation_deg.to_radians().sin_cos();
    let d = z.len();
    let mut out: Vec<f64> = z.to_vec();
    for k in 0..d / 2 {
        let (a, b) = (out[k], out[d - 1 - k]);
        out[k] = c * a - s * b;
        out[d - 1 - k] = s * a + c * b;
    }
    out.into_iter().map(|v| scale * v).collect()
}

/// Class-structured Gaussian data for a source domain and a shifted target
/// domain. Classes share an axis-aligned anisotropic covariance in latent
/// space (eigenvalues log-spaced from 1 to `anisotropy`, normalized to mean
/// 1); the target applies [`latent_shift`] to every latent sample before the
/// common orthogonal lift. Distractors come from a broad zero-mean Gaussian.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let d = cfg.d_in;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lift = random_orthogonal(d, &mut rng);

    let raw: Vec<f64> = (0..d)
        .map(|k| {
            let t = if d > 1 { k as f64 / (d - 1) as f64 } else { 0.0 };
            cfg.anisotropy.powf(t)
        })
        .collect();
    let mean_raw = raw.iter().sum::<f64>() / d as f64;
    let latent_std: Vec<f64> = raw.iter().map(|v| (v / mean_raw).sqrt()).collect();

    let mean_scale = cfg.class_sep / (2.0 * d as f64).sqrt();
    let latent_means: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| (0..d).map(|_| mean_scale * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    // Marginal per-axis variance is 1 on average within class plus the
    // spread of the means.
    let distractor_std = (2.0 * (1.0 + mean_scale * mean_scale)).sqrt();

    let lift_vec = |z: &[f64]| -> Vec<f64> { (0..d).map(|i| (0..d).map(|j| lift[i * d + j] * z[j]).sum()).collect() };

    let domain = |prefix: &str, shift: bool, rng: &mut ChaCha8Rng| -> Result<DatasetSplit> {
        let transform = |z: Vec<f64>| {
            if shift {
                latent_shift(&z, cfg.shift_rotation_deg, cfg.shift_scale)
            } else {
                z
            }
        };
        let mut instances = Vec::with_capacity(cfg.num_classes * cfg.per_class);
        for (c, mean) in latent_means.iter().enumerate() {
            for i in 0..cfg.per_class {
                let z: Vec<f64> = mean
                    .iter()
                    .zip(&latent_std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                instances.push(LabeledInstance {
                    id: format!("{prefix}-c{c}-{i:05}"),
                    label: c as i64,
                    features: lift_vec(&transform(z)),
                });
            }
        }
        let distractors: Vec<LabeledInstance> = (0..cfg.distractors)
            .map(|i| {
                let z: Vec<f64> = (0..d).map(|_| distractor_std * rng.sample::<f64, _>(StandardNormal)).collect();
                LabeledInstance {
                    id: format!("{prefix}-bg-{i:05}"),
                    label: DISTRACTOR_LABEL,
                    features: lift_vec(&transform(z)),
                }
            })
            .collect();
        let mut split = stratify(&instances, cfg.train_frac, cfg.query_frac, 2, rng)?;
        split.gallery.extend(distractors);
        Ok(split)
    };

    let source = domain("src", false, &mut rng)?;
    let target = domain("tgt", true, &mut rng)?;
    Ok(SyntheticData {
        source,
        target,
        latent_means,
        latent_std,
        lift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, label: i64, features: Vec<f64>) -> LabeledInstance {
        LabeledInstance { id: id.into(), label, features }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<LabeledInstance> = (0..10)
            .map(|i| inst(&format!("x{i}"), i % 3 - 1, (0..4).map(|_| rng.sample::<f64, _>(StandardNormal) * 1e3).collect()))
            .collect();
        save_csv(&data, &path).unwrap();
        assert_eq!(load_csv(&path).unwrap(), data);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,label,f0,f1,f2,f3\n"));
    }

    #[test]
    fn csv_header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "id,label,f0\n").unwrap();
        assert!(load_csv(&path).unwrap().is_empty());
        std::fs::write(&path, "").unwrap();
        assert!(load_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_ragged_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "id,label,f0,f1\na,0,1.0,2.0\nb,1,3.0\n").unwrap();
        match load_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "id,label,f0\na,zero,1.0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(load_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    fn labeled(n_per: usize, classes: i64) -> Vec<LabeledInstance> {
        (0..classes)
            .flat_map(|c| (0..n_per).map(move |i| inst(&format!("c{c}-{i}"), c, vec![c as f64, i as f64])))
            .collect()
    }

    #[test]
    fn split_is_stratified() {
        let data = labeled(25, 4);
        let s = make_split(&data, 0.5, 0.2, &[], 3).unwrap();
        for c in 0..4 {
            let t = s.train.iter().filter(|i| i.label == c).count();
            assert!((12..=13).contains(&t));
            assert!(s.query.iter().any(|i| i.label == c));
            assert!(s.gallery.iter().any(|i| i.label == c));
        }
        assert!(s.gallery.iter().all(|i| i.label >= 0));
        assert_eq!(s, make_split(&data, 0.5, 0.2, &[], 3).unwrap());
        let mut ids: Vec<&str> = s.train.iter().chain(&s.query).chain(&s.gallery).map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn split_appends_distractors_and_rejects_small_classes() {
        let data = labeled(5, 2);
        let bg = vec![inst("bg", 7, vec![0.0, 0.0])];
        let s = make_split(&data, 0.4, 0.2, &bg, 0).unwrap();
        assert_eq!(s.gallery.last().unwrap().label, DISTRACTOR_LABEL);
        assert!(make_split(&labeled(2, 2), 0.4, 0.2, &[], 0).is_err());
        assert!(make_split(&data, 0.8, 0.3, &[], 0).is_err());
    }

    #[test]
    fn identity_shift_preserves_means() {
        let cfg = SynthConfig { num_classes: 2, per_class: 2, shift_rotation_deg: 0.0, shift_scale: 1.0, ..SynthConfig::default() };
        let data = generate_synthetic(&cfg).unwrap();
        assert_eq!(latent_shift(&data.latent_means[0], 0.0, 1.0), data.latent_means[0]);
        assert_eq!(data.source.query.len(), 2);
        assert_eq!(data.source.gallery.len(), 2);
        assert!(data.source.train.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig { seed: 7, distractors: 5, ..SynthConfig::default() };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn lift_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = 6;
        let m = random_orthogonal(d, &mut rng);
        for i in 0..d {
            for j in 0..d {
                let v: f64 = (0..d).map(|k| m[k * d + i] * m[k * d + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_invalid_config() {
        for cfg in [
            SynthConfig { per_class: 1, ..SynthConfig::default() },
            SynthConfig { anisotropy: 0.5, ..SynthConfig::default() },
            SynthConfig { num_classes: 1, ..SynthConfig::default() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
        }
    }
}
