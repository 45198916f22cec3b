use crate::error::{Error, Result};
use crate::training::loss::MAPE_EPS;

/// Candidate ids ordered by descending score, ties by ascending id.
pub fn rank_candidates(ids: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order.into_iter().map(|i| ids[i]).collect()
}

/// `|top-k ∩ positives| / |positives|`, or `None` without positives.
pub fn recall_at_k(ranked: &[usize], positives: &[usize], k: usize) -> Option<f64> {
    assert!(k >= 1, "recall_at_k needs k >= 1");
    if positives.is_empty() {
        return None;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|id| positives.contains(id))
        .count();
    Some(hits as f64 / positives.len() as f64)
}

/// Mean of precision at the rank of each positive, or `None` without
/// positives.
pub fn average_precision(ranked: &[usize], positives: &[usize]) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if positives.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / positives.len() as f64)
}

/// One ranked instance: candidate ids, model scores, labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredInstance {
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredInstance {
    pub fn positives(&self) -> Vec<usize> {
        self.ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn ranked(&self) -> Vec<usize> {
        rank_candidates(&self.ids, &self.scores)
    }
}

/// Mean average precision over instances with at least one positive.
pub fn map_metric(instances: &[ScoredInstance]) -> Option<f64> {
    mean(
        instances
            .iter()
            .filter_map(|i| average_precision(&i.ranked(), &i.positives())),
    )
}

/// Mean Recall@k over instances with at least one positive.
pub fn mean_recall_at_k(instances: &[ScoredInstance], k: usize) -> Option<f64> {
    mean(
        instances
            .iter()
            .filter_map(|i| recall_at_k(&i.ranked(), &i.positives(), k)),
    )
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Expected average precision of a uniformly random ranking of `n`
/// candidates holding `m` positives.
pub fn random_average_precision(n: usize, m: usize) -> f64 {
    assert!(m >= 1 && m <= n);
    if n == 1 {
        return 1.0;
    }
    let h: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let (n, m) = (n as f64, m as f64);
    (m - 1.0) / (n - 1.0) + h * (n - m) / (n * (n - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForecastMetrics {
    pub mape: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// MAPE, MAE and RMSE over paired values. Only targets above zero enter
/// MAPE, with denominators floored at the MAPE epsilon.
pub fn forecast_metrics(pred: &[f64], target: &[f64]) -> Result<ForecastMetrics> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "forecast_metrics",
            &[pred.len()],
            &[target.len()],
        ));
    }
    if pred.is_empty() {
        return Err(Error::invalid("forecast_metrics", "no values"));
    }
    let mut acc = ForecastAccumulator::default();
    acc.extend(pred, target);
    Ok(acc.finish())
}

/// Streaming form of [`forecast_metrics`].
#[derive(Clone, Debug, Default)]
pub struct ForecastAccumulator {
    ape: f64,
    ape_n: usize,
    ae: f64,
    se: f64,
    n: usize,
}

impl ForecastAccumulator {
    pub fn extend(&mut self, pred: &[f64], target: &[f64]) {
        for (p, y) in pred.iter().zip(target) {
            let d = p - y;
            if *y > 0.0 {
                self.ape += d.abs() / y.max(MAPE_EPS);
                self.ape_n += 1;
            }
            self.ae += d.abs();
            self.se += d * d;
            self.n += 1;
        }
    }

    pub fn finish(&self) -> ForecastMetrics {
        let n = self.n.max(1) as f64;
        ForecastMetrics {
            mape: if self.ape_n > 0 {
                self.ape / self.ape_n as f64
            } else {
                0.0
            },
            mae: self.ae / n,
            rmse: (self.se / n).sqrt(),
        }
    }
}
