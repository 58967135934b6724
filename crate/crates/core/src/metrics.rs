//! Exact-match precision, recall and F1.

use crate::corpus::{Document, EntityMention};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction for unknown sentence id {0}")]
    UnknownSentence(String),
    #[error("more than one prediction record for sentence id {0}")]
    DuplicateSentence(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    /// Zero when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    /// Zero when there is no gold entity.
    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: &Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.correct += other.correct;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_type: BTreeMap<String, Counts>,
    pub micro: Counts,
}

impl Metrics {
    pub fn precision(&self) -> f64 {
        self.micro.precision()
    }

    pub fn recall(&self) -> f64 {
        self.micro.recall()
    }

    pub fn f1(&self) -> f64 {
        self.micro.f1()
    }

    /// Tab-separated table with one row per type and a final micro-average row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("type\tgold\tpredicted\tcorrect\tprecision\trecall\tf1\n");
        let rows = self
            .per_type
            .iter()
            .map(|(k, c)| (k.as_str(), c))
            .chain(std::iter::once(("total", &self.micro)));
        for (name, c) in rows {
            out.push_str(&format!(
                "{name}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
                c.gold,
                c.predicted,
                c.correct,
                c.precision(),
                c.recall(),
                c.f1()
            ));
        }
        out
    }
}

/// Scores `predictions` (sentence id, entities) against `gold`.
///
/// A prediction is correct when its span and label match a gold entity that has not been
/// credited yet. Gold sentences without a prediction record count as predicting nothing.
pub fn evaluate(predictions: &[(String, Vec<EntityMention>)], gold: &[Document]) -> Result<Metrics, EvalError> {
    let by_id: HashMap<&str, &Document> = gold.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut seen = HashMap::new();
    let mut metrics = Metrics::default();
    for d in gold {
        for e in &d.entities {
            metrics.per_type.entry(e.label.clone()).or_default().gold += 1;
        }
    }
    for (id, entities) in predictions {
        let doc = by_id
            .get(id.as_str())
            .ok_or_else(|| EvalError::UnknownSentence(id.clone()))?;
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(EvalError::DuplicateSentence(id.clone()));
        }
        let mut unused: Vec<&EntityMention> = doc.entities.iter().collect();
        for p in entities {
            let c = metrics.per_type.entry(p.label.clone()).or_default();
            c.predicted += 1;
            if let Some(k) = unused.iter().position(|g| *g == p) {
                unused.swap_remove(k);
                c.correct += 1;
            }
        }
    }
    for c in metrics.per_type.values() {
        metrics.micro.add(c);
    }
    Ok(metrics)
}
