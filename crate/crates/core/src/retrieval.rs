//! Query-versus-gallery scoring, ranking metrics and ROC curves.

use serde::{Deserialize, Serialize};

use crate::dataset::DISTRACTOR_LABEL;
use crate::error::{check_dim, Error, Result};
use crate::model::Scorer;
use crate::numerics::dot;

/// Entry `(i, j)` is the model score of `query[i] − gallery[j]`.
pub fn score_matrix<Q: AsRef<[f64]>, G: AsRef<[f64]>>(scorer: &Scorer, query: &[Q], gallery: &[G]) -> Result<Vec<Vec<f64>>> {
    let mut diff = vec![0.0; scorer.dim()];
    query
        .iter()
        .map(|q| {
            let q = q.as_ref();
            check_dim(scorer.dim(), q.len())?;
            gallery
                .iter()
                .map(|g| {
                    let g = g.as_ref();
                    check_dim(q.len(), g.len())?;
                    for ((d, a), b) in diff.iter_mut().zip(q).zip(g) {
                        *d = a - b;
                    }
                    scorer.score(&diff)
                })
                .collect()
        })
        .collect()
}

/// Cosine similarity; pairs involving a zero vector score 0.
pub fn cosine_score_matrix<Q: AsRef<[f64]>, G: AsRef<[f64]>>(query: &[Q], gallery: &[G]) -> Vec<Vec<f64>> {
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let gnorms: Vec<f64> = gallery.iter().map(|g| norm(g.as_ref())).collect();
    query
        .iter()
        .map(|q| {
            let q = q.as_ref();
            let qn = norm(q);
            gallery
                .iter()
                .zip(&gnorms)
                .map(|(g, &gn)| if qn == 0.0 || gn == 0.0 { 0.0 } else { dot(q, g.as_ref()) / (qn * gn) })
                .collect()
        })
        .collect()
}

/// Gallery indices by descending score; ties keep gallery index order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Mean of precision at the rank of every relevant item; `None` when
/// nothing is relevant.
pub fn average_precision(scores: &[f64], relevance: &[bool]) -> Option<f64> {
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, idx) in ranking(scores).into_iter().enumerate() {
        if relevance[idx] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    pub scores: Vec<Vec<f64>>,
    pub relevance: Vec<Vec<bool>>,
    pub k_list: Vec<usize>,
}

impl RetrievalRun {
    pub fn new(scores: Vec<Vec<f64>>, relevance: Vec<Vec<bool>>, k_list: Vec<usize>) -> Result<Self> {
        check_dim(scores.len(), relevance.len())?;
        for (s, r) in scores.iter().zip(&relevance) {
            check_dim(s.len(), r.len())?;
        }
        if k_list.contains(&0) {
            return Err(Error::InvalidConfig("retrieval cutoffs must be positive".into()));
        }
        Ok(RetrievalRun { scores, relevance, k_list })
    }

    /// Relevance from labels: same label and not a distractor.
    pub fn from_labels(scores: Vec<Vec<f64>>, query_labels: &[i64], gallery_labels: &[i64], k_list: Vec<usize>) -> Result<Self> {
        let relevance = query_labels
            .iter()
            .map(|&q| {
                gallery_labels
                    .iter()
                    .map(|&g| q != DISTRACTOR_LABEL && g == q)
                    .collect()
            })
            .collect();
        RetrievalRun::new(scores, relevance, k_list)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean AP over queries with at least one relevant item.
    pub map: f64,
    /// Per-query AP; `None` for unanswerable queries.
    pub per_query_ap: Vec<Option<f64>>,
    /// Queries with no relevant gallery item.
    pub unanswerable: usize,
    /// Mean over answerable queries of relevant-in-top-K / total relevant.
    pub recall_at_k: Vec<AtK>,
    /// Mean over answerable queries of relevant-in-top-K / K.
    pub precision_at_k: Vec<AtK>,
}

pub fn metrics(run: &RetrievalRun) -> Metrics {
    let mut per_query_ap = Vec::with_capacity(run.scores.len());
    let mut recall = vec![0.0; run.k_list.len()];
    let mut precision = vec![0.0; run.k_list.len()];
    let mut answerable = 0usize;
    let mut ap_sum = 0.0;
    for (scores, rel) in run.scores.iter().zip(&run.relevance) {
        let total = rel.iter().filter(|&&r| r).count();
        if total == 0 {
            per_query_ap.push(None);
            continue;
        }
        answerable += 1;
        let order = ranking(scores);
        let mut hits = 0;
        let mut sum = 0.0;
        let mut hits_at = vec![0usize; order.len() + 1];
        for (rank, &idx) in order.iter().enumerate() {
            if rel[idx] {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
            hits_at[rank + 1] = hits;
        }
        let ap = sum / total as f64;
        ap_sum += ap;
        per_query_ap.push(Some(ap));
        for (i, &k) in run.k_list.iter().enumerate() {
            let h = hits_at[k.min(order.len())] as f64;
            recall[i] += h / total as f64;
            precision[i] += h / k as f64;
        }
    }
    let denom = answerable.max(1) as f64;
    let at = |values: Vec<f64>| {
        run.k_list
            .iter()
            .zip(values)
            .map(|(&k, v)| AtK { k, value: v / denom })
            .collect()
    };
    Metrics {
        map: ap_sum / denom,
        unanswerable: run.scores.len() - answerable,
        per_query_ap,
        recall_at_k: at(recall),
        precision_at_k: at(precision),
    }
}

/// Empirical operating points of the test `score ≥ β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first threshold is +∞ (nothing accepted).
    pub thresholds: Vec<f64>,
    pub p_fa: Vec<f64>,
    pub p_d: Vec<f64>,
}

impl RocCurve {
    /// Detection rate at a false-alarm rate, interpolating linearly between
    /// neighbouring operating points.
    pub fn detection_at(&self, p_fa: f64) -> f64 {
        let last = self.p_fa.partition_point(|&f| f <= p_fa);
        if last == 0 {
            return 0.0;
        }
        let i = last - 1;
        if self.p_fa[i] == p_fa || i + 1 == self.p_fa.len() {
            return self.p_d[i];
        }
        let (f0, f1) = (self.p_fa[i], self.p_fa[i + 1]);
        let t = (p_fa - f0) / (f1 - f0);
        self.p_d[i] + t * (self.p_d[i + 1] - self.p_d[i])
    }

    /// Area under the curve by the trapezoid rule.
    pub fn auc(&self) -> f64 {
        self.p_fa
            .windows(2)
            .zip(self.p_d.windows(2))
            .map(|(f, d)| (f[1] - f[0]) * (d[0] + d[1]) / 2.0)
            .sum()
    }
}

/// ROC of the threshold test over positive and negative scores. `grid == 0`
/// uses every distinct observed score as a threshold; otherwise `grid`
/// evenly spaced thresholds from the largest to the smallest score.
pub fn roc_curve(pos: &[f64], neg: &[f64], grid: usize) -> Result<RocCurve> {
    if pos.is_empty() {
        return Err(Error::EmptyInput("roc_curve needs positive scores"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyInput("roc_curve needs negative scores"));
    }
    let mut p: Vec<f64> = pos.to_vec();
    let mut n: Vec<f64> = neg.to_vec();
    p.sort_by(|a, b| b.total_cmp(a));
    n.sort_by(|a, b| b.total_cmp(a));
    let hi = p[0].max(n[0]);
    let lo = p[p.len() - 1].min(n[n.len() - 1]);

    let mut thresholds = vec![f64::INFINITY];
    if grid == 0 {
        let mut all: Vec<f64> = p.iter().chain(&n).copied().collect();
        all.sort_by(|a, b| b.total_cmp(a));
        all.dedup();
        thresholds.extend(all);
    } else if grid == 1 || hi == lo {
        thresholds.push(lo);
    } else {
        thresholds.extend((0..grid).map(|k| {
            if k + 1 == grid {
                lo
            } else {
                hi - (hi - lo) * k as f64 / (grid - 1) as f64
            }
        }));
    }

    let (mut ip, mut ineg) = (0, 0);
    let mut p_fa = Vec::with_capacity(thresholds.len());
    let mut p_d = Vec::with_capacity(thresholds.len());
    for &beta in &thresholds {
        while ip < p.len() && p[ip] >= beta {
            ip += 1;
        }
        while ineg < n.len() && n[ineg] >= beta {
            ineg += 1;
        }
        p_d.push(ip as f64 / p.len() as f64);
        p_fa.push(ineg as f64 / n.len() as f64);
    }
    Ok(RocCurve { thresholds, p_fa, p_d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glrt_mg::{build_mg_model, mg_score};
    use crate::model::HypothesisModel;
    use crate::numerics::{ClipMode, SymMatrix};

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[2.0, 1.0], &[true, false]), Some(1.0));
        assert_eq!(average_precision(&[2.0, 1.0], &[false, true]), Some(0.5));
        let ap = average_precision(&[3.0, 2.0, 1.0], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[1.0], &[false]), None);
    }

    #[test]
    fn ties_follow_gallery_order() {
        assert_eq!(ranking(&[1.0, 1.0, 2.0, 1.0]), vec![2, 0, 1, 3]);
        assert_eq!(average_precision(&[0.0, 0.0], &[false, true]), Some(0.5));
    }

    #[test]
    fn metrics_examples() {
        let run = RetrievalRun::new(vec![vec![0.9, 0.8, 0.1, 0.2]], vec![vec![true, true, false, false]], vec![2]).unwrap();
        let m = metrics(&run);
        assert_eq!(m.map, 1.0);
        assert_eq!(m.recall_at_k[0].value, 1.0);
        assert_eq!(m.precision_at_k[0].value, 1.0);

        let run = RetrievalRun::from_labels(vec![vec![1.0, 2.0, 3.0], vec![0.0; 3]], &[0, 5], &[0, 1, -1], vec![1, 5]).unwrap();
        let m = metrics(&run);
        assert_eq!(m.unanswerable, 1);
        assert_eq!(m.per_query_ap, vec![Some(1.0 / 3.0), None]);
        assert!((m.map - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.recall_at_k[0].value, 0.0);
        assert_eq!(m.recall_at_k[1].value, 1.0);
        assert!((m.precision_at_k[1].value - 0.2).abs() < 1e-15);
    }

    #[test]
    fn perfect_retrieval_precision_is_capped() {
        let run = RetrievalRun::new(vec![vec![3.0, 2.0, 1.0]], vec![vec![true, true, false]], vec![5]).unwrap();
        let m = metrics(&run);
        assert_eq!(m.map, 1.0);
        assert!((m.precision_at_k[0].value - 0.4).abs() < 1e-15);
    }

    #[test]
    fn cosine_examples() {
        let m = cosine_score_matrix(&[vec![1.0, 1.0], vec![0.0, 0.0]], &[vec![2.0, 2.0], vec![1.0, 0.0], vec![0.0, 3.0]]);
        assert!((m[0][0] - 1.0).abs() < 1e-15);
        assert!((m[0][1] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine_score_matrix(&[vec![1.0, 0.0]], &[vec![0.0, 3.0]])[0][0], 0.0);
        assert_eq!(m[1], vec![0.0; 3]);
    }

    #[test]
    fn score_matrix_matches_direct_scores() {
        let model = build_mg_model(SymMatrix::from_diag(&[0.5, 1.0]), SymMatrix::from_diag(&[2.0, 3.0]), ClipMode::NoClip, 1e-6).unwrap();
        let scorer = HypothesisModel::Mg(model.clone()).scorer().unwrap();
        let q = vec![vec![1.0, 2.0], vec![0.0, -1.0], vec![3.0, 3.0]];
        let g = vec![vec![1.0, 2.0], vec![0.5, 0.5], vec![-1.0, 2.0], vec![0.0, 0.0]];
        let m = score_matrix(&scorer, &q, &g).unwrap();
        assert_eq!((m.len(), m[0].len()), (3, 4));
        assert_eq!(m[0][0], 0.0);
        for i in 0..3 {
            for j in 0..4 {
                let diff: Vec<f64> = q[i].iter().zip(&g[j]).map(|(a, b)| a - b).collect();
                assert_eq!(m[i][j], mg_score(&model, &diff).unwrap());
            }
        }
        assert!(score_matrix(&scorer, &[vec![1.0]], &g).is_err());
    }

    #[test]
    fn roc_separated_and_chance() {
        let roc = roc_curve(&[5.0, 6.0, 7.0], &[1.0, 2.0], 0).unwrap();
        assert!(roc.p_fa.iter().zip(&roc.p_d).any(|(&f, &d)| f == 0.0 && d == 1.0));
        assert_eq!((roc.p_fa[0], roc.p_d[0]), (0.0, 0.0));
        assert_eq!((*roc.p_fa.last().unwrap(), *roc.p_d.last().unwrap()), (1.0, 1.0));
        let same = [0.3, 0.1, 0.7, 0.5];
        let roc = roc_curve(&same, &same, 0).unwrap();
        assert!(roc.p_fa.iter().zip(&roc.p_d).all(|(f, d)| f == d));
        assert!((roc.auc() - 0.5).abs() < 1e-12);
        assert!(roc_curve(&[], &[1.0], 0).is_err());
    }

    #[test]
    fn roc_grid_is_monotone() {
        let roc = roc_curve(&[0.1, 0.9, 0.4, 0.8], &[0.2, 0.0, 0.5], 11).unwrap();
        assert_eq!(roc.thresholds.len(), 12);
        for w in roc.thresholds.windows(2) {
            assert!(w[0] > w[1]);
        }
        for i in 1..roc.p_fa.len() {
            assert!(roc.p_fa[i] >= roc.p_fa[i - 1] && roc.p_d[i] >= roc.p_d[i - 1]);
        }
        assert_eq!(*roc.p_d.last().unwrap(), 1.0);
    }

    #[test]
    fn detection_interpolates() {
        let roc = RocCurve { thresholds: vec![f64::INFINITY, 1.0, 0.0], p_fa: vec![0.0, 0.2, 1.0], p_d: vec![0.0, 0.6, 1.0] };
        assert!((roc.detection_at(0.1) - 0.3).abs() < 1e-15);
        assert_eq!(roc.detection_at(0.2), 0.6);
        assert!((roc.detection_at(0.6) - 0.8).abs() < 1e-15);
    }
}
