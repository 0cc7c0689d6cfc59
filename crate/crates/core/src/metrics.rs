//! Ranking metrics for a single relevant item per query.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One query's final ranking and its gold document.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub query_id: String,
    pub ranking: Vec<String>,
    pub gold: String,
}

impl RankedQuery {
    pub fn new(query_id: &str, ranking: Vec<String>, gold: &str) -> Self {
        RankedQuery {
            query_id: query_id.to_string(),
            ranking,
            gold: gold.to_string(),
        }
    }

    /// 1-based position of the gold document.
    pub fn gold_rank(&self) -> Option<usize> {
        self.ranking.iter().position(|d| *d == self.gold).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_queries: usize,
    pub mrr: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranks: Option<BTreeMap<String, Option<usize>>>,
}

pub const RERANK_KS: [usize; 3] = [5, 10, 20];
pub const RETRIEVAL_KS: [usize; 3] = [10, 50, 300];

fn ndcg_term(rank: usize) -> f64 {
    1.0 / (1.0 + rank as f64).log2()
}

pub fn evaluate(rankings: &[RankedQuery], ks: &[usize]) -> Result<EvalReport> {
    if rankings.is_empty() {
        return Err(Error::Validation("no queries to evaluate".into()));
    }
    if let Some(bad) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::Config(format!("cutoff {bad} must be at least 1")));
    }
    let missing: Vec<&str> = rankings
        .iter()
        .filter(|r| r.gold.is_empty() || r.query_id.is_empty())
        .map(|r| r.query_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "queries without gold or id: {missing:?}"
        )));
    }
    let ks: BTreeSet<usize> = ks.iter().copied().collect();
    let n = rankings.len() as f64;
    let ranks: Vec<Option<usize>> = rankings.iter().map(RankedQuery::gold_rank).collect();
    let mrr = ranks.iter().flatten().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let mut recall_at = BTreeMap::new();
    let mut ndcg_at = BTreeMap::new();
    for &k in &ks {
        let hits = ranks.iter().flatten().filter(|&&r| r <= k);
        let (count, gain) = hits.fold((0usize, 0.0), |(c, g), &r| (c + 1, g + ndcg_term(r)));
        recall_at.insert(k, count as f64 / n);
        ndcg_at.insert(k, gain / n);
    }
    Ok(EvalReport {
        n_queries: rankings.len(),
        mrr,
        recall_at,
        ndcg_at,
        ranks: None,
    })
}

/// Joins rankings with golds by query id; every gold needs a ranking.
pub fn evaluate_lists(
    rankings: &BTreeMap<String, Vec<String>>,
    golds: &BTreeMap<String, String>,
    ks: &[usize],
) -> Result<EvalReport> {
    let missing: Vec<&String> = golds.keys().filter(|q| !rankings.contains_key(*q)).collect();
    let extra: Vec<&String> = rankings.keys().filter(|q| !golds.contains_key(*q)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Validation(format!(
            "rankings missing for {missing:?}; gold missing for {extra:?}"
        )));
    }
    let ranked: Vec<RankedQuery> = golds
        .iter()
        .map(|(q, g)| RankedQuery::new(q, rankings[q].clone(), g))
        .collect();
    evaluate(&ranked, ks)
}

impl EvalReport {
    pub fn with_ranks(mut self, rankings: &[RankedQuery]) -> Self {
        self.ranks = Some(
            rankings
                .iter()
                .map(|r| (r.query_id.clone(), r.gold_rank()))
                .collect(),
        );
        self
    }

    /// Percent table: MRR, then R@K and N@K for each cutoff.
    pub fn to_table(&self, label: &str) -> String {
        let mut head = format!("{:<16} {:>7}", "", "MRR");
        let mut row = format!("{:<16} {:>7.2}", label, self.mrr * 100.0);
        for (k, v) in &self.recall_at {
            let _ = write!(head, " {:>7}", format!("R@{k}"));
            let _ = write!(row, " {:>7.2}", v * 100.0);
        }
        for (k, v) in &self.ndcg_at {
            let _ = write!(head, " {:>7}", format!("N@{k}"));
            let _ = write!(row, " {:>7.2}", v * 100.0);
        }
        format!("{head}\n{row}\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(rank_of_gold: usize, len: usize) -> RankedQuery {
        let ranking = (1..=len)
            .map(|i| if i == rank_of_gold { "g".to_string() } else { format!("d{i}") })
            .collect();
        RankedQuery::new("q", ranking, "g")
    }

    #[test]
    fn perfect_ranking() {
        let r = evaluate(&[one(1, 3), one(1, 5)], &[1, 5]).unwrap();
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.recall_at[&1], 1.0);
        assert_eq!(r.ndcg_at[&5], 1.0);
    }

    #[test]
    fn rank_four() {
        let r = evaluate(&[one(4, 6)], &[3, 5]).unwrap();
        assert_eq!(r.mrr, 0.25);
        assert_eq!(r.recall_at[&5], 1.0);
        assert_eq!(r.recall_at[&3], 0.0);
    }

    #[test]
    fn ndcg_rank_three() {
        let r = evaluate(&[one(3, 10)], &[10]).unwrap();
        assert!((r.ndcg_at[&10] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn absent_gold_scores_zero() {
        let r = evaluate(&[one(0, 4)], &[1, 10]).unwrap();
        assert_eq!(r.mrr, 0.0);
        assert_eq!(r.recall_at[&10], 0.0);
        assert_eq!(r.ndcg_at[&10], 0.0);
    }

    #[test]
    fn errors() {
        assert!(evaluate(&[], &[1]).is_err());
        assert!(evaluate(&[one(1, 1)], &[0]).is_err());
        let mut rankings = BTreeMap::new();
        rankings.insert("a".to_string(), vec!["x".to_string()]);
        let mut golds = BTreeMap::new();
        golds.insert("b".to_string(), "x".to_string());
        let err = evaluate_lists(&rankings, &golds, &[1]).unwrap_err();
        assert!(err.to_string().contains("\"b\""));
    }

    #[test]
    fn table_layout() {
        let r = evaluate(&[one(2, 3)], &[5, 10]).unwrap();
        let t = r.to_table("profiler");
        assert!(t.contains("R@5"));
        assert!(t.contains("50.00"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn queries() -> impl Strategy<Value = Vec<RankedQuery>> {
            prop::collection::vec((prop::collection::vec(0u8..30, 0..25), 0u8..35), 1..30).prop_map(|qs| {
                qs.into_iter()
                    .enumerate()
                    .map(|(i, (ids, gold))| {
                        let mut seen = BTreeSet::new();
                        let ranking = ids.into_iter().filter(|d| seen.insert(*d)).map(|d| format!("d{d}")).collect();
                        RankedQuery::new(&format!("q{i}"), ranking, &format!("d{gold}"))
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn cutoff_metrics_grow_with_k(qs in queries()) {
                let ks: Vec<usize> = (1..=30).collect();
                let r = evaluate(&qs, &ks).unwrap();
                for k in 1..30 {
                    prop_assert!(r.recall_at[&k] <= r.recall_at[&(k + 1)]);
                    prop_assert!(r.ndcg_at[&k] <= r.ndcg_at[&(k + 1)]);
                }
            }

            #[test]
            fn query_order_does_not_matter(qs in queries(), seed in any::<u64>()) {
                use rand::{seq::SliceRandom, SeedableRng};
                let mut shuffled = qs.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let a = evaluate(&qs, &RERANK_KS).unwrap();
                let b = evaluate(&shuffled, &RERANK_KS).unwrap();
                prop_assert!((a.mrr - b.mrr).abs() < 1e-12);
                for k in RERANK_KS {
                    prop_assert!((a.recall_at[&k] - b.recall_at[&k]).abs() < 1e-12);
                    prop_assert!((a.ndcg_at[&k] - b.ndcg_at[&k]).abs() < 1e-12);
                }
            }

            #[test]
            fn absent_gold_everywhere_is_exactly_zero(qs in queries()) {
                let qs: Vec<RankedQuery> = qs.into_iter().map(|q| RankedQuery { gold: "nowhere".into(), ..q }).collect();
                let r = evaluate(&qs, &[1, 10]).unwrap();
                prop_assert_eq!(r.mrr, 0.0);
                prop_assert!(r.recall_at.values().chain(r.ndcg_at.values()).all(|&v| v == 0.0));
            }
        }
    }
}
