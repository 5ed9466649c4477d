//! Exhaustive dot-product retrieval and its metrics: Recall@k, Hit Rate and
//! average precision.
//!
//! Rankings sort references by descending similarity; equal similarities are
//! ordered by ascending reference id (byte order), so every metric is a
//! deterministic function of the embeddings.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Tolerance on row norms accepted by [`EmbeddingMatrix::new`].
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// `N × D` matrix of unit-norm rows with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    ids: Vec<String>,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::retrieval(format!(
                "{} rows of dimension {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::retrieval(format!("duplicate embedding id `{id}`")));
            }
        }
        let m = EmbeddingMatrix { ids, dim, data };
        for (i, row) in m.rows().enumerate() {
            let norm: f64 = num_traits::Float::sqrt(row.iter().map(|v| v.widen() * v.widen()).sum::<f64>());
            if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
                return Err(Error::retrieval(format!(
                    "row {i} (`{}`) has norm {norm}, expected 1",
                    m.ids[i]
                )));
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn ids(&self) -> &[String] {
        &self.ids
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact(0) panics; an empty-dimension matrix has no data anyway
        self.data.chunks_exact(self.dim.max(1)).take(self.ids.len())
    }
}

/// Per query: indices into `reference_ids`, best match first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalResult {
    pub query_ids: Vec<String>,
    pub reference_ids: Vec<String>,
    pub rankings: Vec<Vec<u32>>,
}

impl RetrievalResult {
    fn query_index(&self) -> BTreeMap<&str, usize> {
        self.query_ids
            .iter()
            .enumerate()
            .map(|(i, q)| (q.as_str(), i))
            .collect()
    }

    /// 1-based rank of every reference for query `q`, indexed by reference.
    fn ranks_of(&self, q: usize) -> Vec<usize> {
        let mut ranks = alloc::vec![0; self.reference_ids.len()];
        for (pos, &r) in self.rankings[q].iter().enumerate() {
            ranks[r as usize] = pos + 1;
        }
        ranks
    }

    fn reference_index(&self) -> BTreeMap<&str, usize> {
        self.reference_ids
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect()
    }
}

/// Ranks references for each query from a dense `queries × references` score matrix.
pub fn rank_by_scores(query_ids: Vec<String>, reference_ids: Vec<String>, scores: &[f64]) -> Result<RetrievalResult> {
    let (nq, nr) = (query_ids.len(), reference_ids.len());
    if scores.len() != nq * nr {
        return Err(Error::retrieval(format!(
            "score matrix has {} entries, expected {nq}x{nr}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("similarity scores contain NaN"));
    }
    let mut rankings = Vec::with_capacity(nq);
    for q in 0..nq {
        let row = &scores[q * nr..(q + 1) * nr];
        let mut order: Vec<u32> = (0..nr as u32).collect();
        order.sort_by(|&a, &b| {
            row[b as usize]
                .partial_cmp(&row[a as usize])
                .unwrap_or(Ordering::Equal)
                .then_with(|| reference_ids[a as usize].cmp(&reference_ids[b as usize]))
        });
        rankings.push(order);
    }
    Ok(RetrievalResult {
        query_ids,
        reference_ids,
        rankings,
    })
}

/// Exhaustive dot-product ranking of every reference for every query.
pub fn rank_references<T: Scalar>(
    queries: &EmbeddingMatrix<T>,
    references: &EmbeddingMatrix<T>,
) -> Result<RetrievalResult> {
    if queries.dim() != references.dim() {
        return Err(Error::retrieval(format!(
            "query dimension {} != reference dimension {}",
            queries.dim(),
            references.dim()
        )));
    }
    let mut scores = Vec::with_capacity(queries.len() * references.len());
    for q in queries.rows() {
        for r in references.rows() {
            scores.push(dot(q, r).widen());
        }
    }
    rank_by_scores(queries.ids.clone(), references.ids.clone(), &scores)
}

/// Cutoff for [`recall_at_k`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    Count(usize),
    /// `⌈0.01 · N_refs⌉`
    OnePercent,
}

impl TopK {
    pub fn resolve(self, num_refs: usize) -> Result<usize> {
        match self {
            TopK::Count(0) => Err(Error::parameter("k must be at least 1")),
            TopK::Count(k) => Ok(k),
            TopK::OnePercent => Ok(num_refs.div_ceil(100).max(1)),
        }
    }
}

/// Fraction of queries whose ground-truth reference ranks within the top `k`.
pub fn recall_at_k(result: &RetrievalResult, truth: &BTreeMap<String, String>, k: TopK) -> Result<f64> {
    let k = k.resolve(result.reference_ids.len())?;
    let queries = result.query_index();
    let refs = result.reference_index();
    for q in truth.keys() {
        if !queries.contains_key(q.as_str()) {
            return Err(Error::retrieval(format!(
                "query `{q}` is missing from the retrieval result"
            )));
        }
    }
    if result.query_ids.is_empty() {
        return Err(Error::retrieval("no queries"));
    }
    let mut hits = 0usize;
    for (qi, q) in result.query_ids.iter().enumerate() {
        let t = truth
            .get(q)
            .ok_or_else(|| Error::retrieval(format!("query `{q}` has no ground-truth reference")))?;
        let &ti = refs
            .get(t.as_str())
            .ok_or_else(|| Error::retrieval(format!("ground truth `{t}` of `{q}` is not a reference")))?;
        let rank = result.rankings[qi]
            .iter()
            .position(|&r| r as usize == ti)
            .map(|p| p + 1)
            .ok_or_else(|| Error::retrieval(format!("ranking of `{q}` does not contain `{t}`")))?;
        if rank <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / result.query_ids.len() as f64)
}

/// Fraction of queries whose top-1 reference is in their positive/semi-positive set.
pub fn hit_rate(result: &RetrievalResult, positives: &BTreeMap<String, BTreeSet<String>>) -> Result<f64> {
    if result.query_ids.is_empty() {
        return Err(Error::retrieval("no queries"));
    }
    let mut hits = 0usize;
    for (qi, q) in result.query_ids.iter().enumerate() {
        let set = positives
            .get(q)
            .ok_or_else(|| Error::retrieval(format!("query `{q}` has no positive set")))?;
        if set.is_empty() {
            return Err(Error::retrieval(format!("positive set of `{q}` is empty")));
        }
        let top = result.rankings[qi]
            .first()
            .ok_or_else(|| Error::retrieval("empty reference database"))?;
        if set.contains(&result.reference_ids[*top as usize]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / result.query_ids.len() as f64)
}

/// Mean over queries of the mean precision at the rank of each relevant reference.
pub fn average_precision(result: &RetrievalResult, relevant: &BTreeMap<String, BTreeSet<String>>) -> Result<f64> {
    if result.query_ids.is_empty() {
        return Err(Error::retrieval("no queries"));
    }
    let refs = result.reference_index();
    let mut total = 0.0;
    for (qi, q) in result.query_ids.iter().enumerate() {
        let set = relevant
            .get(q)
            .ok_or_else(|| Error::retrieval(format!("query `{q}` has no relevant set")))?;
        if set.is_empty() {
            return Err(Error::retrieval(format!("relevant set of `{q}` is empty")));
        }
        let ranks = result.ranks_of(qi);
        let mut positions = Vec::with_capacity(set.len());
        for id in set {
            let &ri = refs
                .get(id.as_str())
                .ok_or_else(|| Error::retrieval(format!("relevant `{id}` of `{q}` is not a reference")))?;
            positions.push(ranks[ri]);
        }
        positions.sort_unstable();
        let ap: f64 = positions
            .iter()
            .enumerate()
            .map(|(found, &rank)| (found + 1) as f64 / rank as f64)
            .sum::<f64>()
            / positions.len() as f64;
        total += ap;
    }
    Ok(total / result.query_ids.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:02}")).collect()
    }

    /// Result where query `i`'s truth `r{i}` sits at `rank` (1-based).
    fn with_truth_at(n: usize, rank: usize) -> (RetrievalResult, BTreeMap<String, String>) {
        let refs = ids("r", n);
        let queries = ids("q", n);
        let mut scores = vec![0.0; n * n];
        for q in 0..n {
            let mut others: Vec<usize> = (0..n).filter(|&r| r != q).collect();
            others.insert(rank - 1, q);
            for (pos, r) in others.into_iter().enumerate() {
                scores[q * n + r] = -(pos as f64);
            }
        }
        let truth = queries.iter().cloned().zip(refs.iter().cloned()).collect();
        (rank_by_scores(queries, refs, &scores).unwrap(), truth)
    }

    #[test]
    fn truths_at_rank_one() {
        let (res, truth) = with_truth_at(12, 1);
        for k in [1, 5, 10] {
            assert_eq!(recall_at_k(&res, &truth, TopK::Count(k)).unwrap(), 1.0);
        }
    }

    #[test]
    fn truths_at_rank_three() {
        let (res, truth) = with_truth_at(12, 3);
        assert_eq!(recall_at_k(&res, &truth, TopK::Count(1)).unwrap(), 0.0);
        assert_eq!(recall_at_k(&res, &truth, TopK::Count(5)).unwrap(), 1.0);
    }

    #[test]
    fn self_retrieval_is_top_one() {
        let v = [0.6f64, 0.8, 1.0, 0.0, 0.0, 1.0];
        let m = EmbeddingMatrix::new(ids("x", 3), 2, v.to_vec()).unwrap();
        let res = rank_references(&m, &m).unwrap();
        for (q, r) in res.rankings.iter().enumerate() {
            assert_eq!(r[0] as usize, q);
        }
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let refs = vec!["b".to_string(), "a".to_string(), "c".to_string()];
        let res = rank_by_scores(vec!["q".into()], refs, &[0.5, 0.5, 0.9]).unwrap();
        assert_eq!(res.rankings[0], vec![2, 1, 0]);
    }

    #[test]
    fn top_one_percent_rounds_up() {
        assert_eq!(TopK::OnePercent.resolve(128).unwrap(), 2);
        assert_eq!(TopK::OnePercent.resolve(100).unwrap(), 1);
        assert_eq!(TopK::OnePercent.resolve(1000).unwrap(), 10);
        assert!(TopK::Count(0).resolve(5).is_err());
    }

    #[test]
    fn semi_positive_top_one_counts_as_hit() {
        let res = rank_by_scores(vec!["q".into()], vec!["pos".into(), "semi".into()], &[0.1, 0.9]).unwrap();
        let mut p = BTreeMap::new();
        p.insert(
            "q".to_string(),
            ["pos".to_string(), "semi".to_string()].into_iter().collect(),
        );
        assert_eq!(hit_rate(&res, &p).unwrap(), 1.0);
        let mut t = BTreeMap::new();
        t.insert("q".to_string(), "pos".to_string());
        assert_eq!(recall_at_k(&res, &t, TopK::Count(1)).unwrap(), 0.0);
    }

    #[test]
    fn average_precision_cases() {
        let refs: Vec<String> = ids("r", 4);
        let res = rank_by_scores(vec!["q".into()], refs, &[4.0, 3.0, 2.0, 1.0]).unwrap();
        let rel = |s: &[&str]| {
            let mut m = BTreeMap::new();
            m.insert(
                "q".to_string(),
                s.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>(),
            );
            m
        };
        assert_eq!(average_precision(&res, &rel(&["r00"])).unwrap(), 1.0);
        assert_eq!(average_precision(&res, &rel(&["r01"])).unwrap(), 0.5);
        let ap = average_precision(&res, &rel(&["r00", "r02"])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert!(average_precision(&res, &rel(&[])).is_err());
    }

    #[test]
    fn validation_errors() {
        assert!(EmbeddingMatrix::new(vec!["a".into(), "a".into()], 1, vec![1.0f32, 1.0]).is_err());
        assert!(EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0f32, 1.0]).is_err());
        let a = EmbeddingMatrix::new(vec!["a".into()], 1, vec![1.0f32]).unwrap();
        let b = EmbeddingMatrix::new(vec!["b".into()], 2, vec![1.0f32, 0.0]).unwrap();
        assert!(rank_references(&a, &b).is_err());
        let (res, _) = with_truth_at(3, 1);
        let mut truth = BTreeMap::new();
        truth.insert("nope".to_string(), "r00".to_string());
        assert!(recall_at_k(&res, &truth, TopK::Count(1)).is_err());
        let mut empty = BTreeMap::new();
        for q in &res.query_ids {
            empty.insert(q.clone(), BTreeSet::new());
        }
        assert!(hit_rate(&res, &empty).is_err());
    }
}
