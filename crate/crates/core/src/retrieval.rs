//! Exhaustive nearest-neighbor search with optional PCA whitening.
//!
//! The whitening transform is fitted on map descriptors only. Queries are
//! passed through the transform fitted on the map, never the other way round.

use std::cmp::Ordering;
use std::collections::HashSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{Descriptor, Embedding, NORM_EPS};
use crate::error::{check_dims, Error, Result};

/// Eigenvalues below this are clamped before the inverse square root.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitenTransform {
    pub mean: Vec<f64>,
    /// `output_dims × input_dim`, row-major, rows sorted by descending eigenvalue.
    pub projection: Vec<f64>,
    /// Covariance eigenvalues of the kept components, descending.
    pub eigenvalues: Vec<f64>,
    pub output_dims: usize,
    /// L2-normalize after projecting.
    pub renormalize: bool,
}

impl WhitenTransform {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dims == 0 || self.output_dims > self.input_dim() {
            return Err(Error::invalid(format!(
                "whitening output dims {} outside 1..={}",
                self.output_dims,
                self.input_dim()
            )));
        }
        check_dims(self.output_dims * self.input_dim(), self.projection.len())?;
        check_dims(self.output_dims, self.eigenvalues.len())?;
        if self
            .mean
            .iter()
            .chain(&self.projection)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("whitening parameters".into()));
        }
        Ok(())
    }

    /// Projection without the final normalization.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.input_dim(), x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self
            .projection
            .chunks_exact(self.input_dim())
            .map(|row| row.iter().zip(&centered).map(|(p, c)| p * c).sum())
            .collect())
    }
}

/// Fits `Λ^(-1/2) Vᵀ` on the sample covariance of `rows` (divided by `N - 1`).
pub fn fit_whitening(rows: &[&[f64]], output_dims: usize) -> Result<WhitenTransform> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "whitening needs at least 2 descriptors, got {n}"
        )));
    }
    let d = rows[0].len();
    for r in rows {
        check_dims(d, r.len())?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor used for whitening".into()));
        }
    }
    if output_dims == 0 || output_dims > d.min(n) {
        return Err(Error::invalid(format!(
            "whitening output dims must lie in 1..={}, got {output_dims}",
            d.min(n)
        )));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    if cov.iter().all(|v| v.abs() == 0.0) {
        return Err(Error::Degenerate(
            "all map descriptors are identical".into(),
        ));
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut projection = Vec::with_capacity(output_dims * d);
    let mut eigenvalues = Vec::with_capacity(output_dims);
    for &k in order.iter().take(output_dims) {
        let lambda = eig.eigenvalues[k];
        let scale = 1.0 / lambda.max(EIGEN_FLOOR).sqrt();
        let col = eig.eigenvectors.column(k);
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = (0..d)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        projection.extend(col.iter().map(|v| sign * scale * v));
        eigenvalues.push(lambda);
    }
    Ok(WhitenTransform {
        mean,
        projection,
        eigenvalues,
        output_dims,
        renormalize: true,
    })
}

/// `projection · (x - mean)`, L2-normalized when the transform says so.
/// A zero projection is flagged degenerate.
pub fn apply_whitening(t: &WhitenTransform, x: &Descriptor) -> Result<Embedding> {
    let values = t.project(&x.values)?;
    let mut descriptor = Descriptor::new(values);
    let degenerate = if t.renormalize {
        !descriptor.l2_normalize()
    } else {
        descriptor.norm() < NORM_EPS
    };
    Ok(Embedding {
        descriptor,
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub map_id: String,
    pub distance: f64,
}

/// Matches sorted by ascending distance, ties by ascending map id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedMatches {
    pub matches: Vec<Match>,
}

impl RankedMatches {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn top(&self) -> Option<&Match> {
        self.matches.first()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.matches.iter().map(|m| m.map_id.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub ranked: RankedMatches,
}

#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    dim: usize,
    ids: Vec<String>,
    /// Rows as given to [`RetrievalIndex::new`].
    raw: Vec<f64>,
    /// Rows searched against; equals `raw` unless whitened.
    rows: Vec<f64>,
    whitening: Option<WhitenTransform>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl RetrievalIndex {
    pub fn new(ids: Vec<String>, descriptors: &[Descriptor]) -> Result<Self> {
        check_dims(ids.len(), descriptors.len())?;
        let dim = descriptors.first().map_or(0, Descriptor::dim);
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate map id '{id}'")));
            }
        }
        let mut raw = Vec::with_capacity(dim * descriptors.len());
        for d in descriptors {
            check_dims(dim, d.dim())?;
            if !d.is_finite() {
                return Err(Error::NonFinite("map descriptor".into()));
            }
            raw.extend_from_slice(&d.values);
        }
        Ok(Self {
            dim,
            ids,
            rows: raw.clone(),
            raw,
            whitening: None,
        })
    }

    /// Fits whitening on the indexed descriptors and re-projects them.
    pub fn fit_whitening(
        &mut self,
        output_dims: usize,
        renormalize: bool,
    ) -> Result<&WhitenTransform> {
        let rows: Vec<&[f64]> = self.raw.chunks_exact(self.dim.max(1)).collect();
        let mut t = fit_whitening(&rows, output_dims)?;
        t.renormalize = renormalize;
        self.set_whitening(t)?;
        Ok(self.whitening.as_ref().expect("just set"))
    }

    pub fn set_whitening(&mut self, t: WhitenTransform) -> Result<()> {
        t.validate()?;
        check_dims(self.dim, t.input_dim())?;
        let mut rows = Vec::with_capacity(self.len() * t.output_dims);
        for r in self.raw.chunks_exact(self.dim) {
            let e = apply_whitening(&t, &Descriptor::new(r.to_vec()))?;
            if e.degenerate {
                log::warn!("map descriptor whitens to the zero vector");
            }
            rows.extend(e.descriptor.values);
        }
        self.rows = rows;
        self.whitening = Some(t);
        Ok(())
    }

    pub fn whitening(&self) -> Option<&WhitenTransform> {
        self.whitening.as_ref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Dimension queries must have.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Searched row `i`, after whitening if any.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.search_dim();
        &self.rows[i * w..(i + 1) * w]
    }

    fn search_dim(&self) -> usize {
        self.whitening.as_ref().map_or(self.dim, |t| t.output_dims)
    }

    /// The query in the searched space.
    pub fn transform_query(&self, query: &Descriptor) -> Result<Descriptor> {
        check_dims(self.dim, query.dim())?;
        if !query.is_finite() {
            return Err(Error::NonFinite("query descriptor".into()));
        }
        Ok(match &self.whitening {
            Some(t) => apply_whitening(t, query)?.descriptor,
            None => query.clone(),
        })
    }

    pub fn search(&self, query: &Descriptor, k: usize) -> Result<RankedMatches> {
        if self.is_empty() {
            return Err(Error::invalid("search on an empty index"));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let q = self.transform_query(query)?;
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|i| (sq_dist(&q.values, self.row(i)), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            a.0.total_cmp(&b.0)
                .then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(RankedMatches {
            matches: scored
                .into_iter()
                .map(|(d2, i)| Match {
                    map_id: self.ids[i].clone(),
                    distance: d2.sqrt(),
                })
                .collect(),
        })
    }

    /// Searches every query in parallel; output follows input order.
    pub fn search_many(
        &self,
        queries: &[(String, Descriptor)],
        k: usize,
    ) -> Result<Vec<QueryResult>> {
        queries
            .par_iter()
            .map(|(id, q)| {
                Ok(QueryResult {
                    query_id: id.clone(),
                    ranked: self.search(q, k)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(v: &[f64]) -> Descriptor {
        Descriptor::new(v.to_vec())
    }

    fn index() -> RetrievalIndex {
        RetrievalIndex::new(
            vec!["m2".into(), "m0".into(), "m1".into()],
            &[desc(&[1.0, 0.0]), desc(&[0.0, 1.0]), desc(&[-1.0, 0.0])],
        )
        .unwrap()
    }

    #[test]
    fn exact_match_is_first() {
        let r = index().search(&desc(&[0.0, 1.0]), 1).unwrap();
        assert_eq!(r.matches[0].map_id, "m0");
        assert_eq!(r.matches[0].distance, 0.0);
    }

    #[test]
    fn k_larger_than_index() {
        let r = index().search(&desc(&[0.0, 1.0]), 10).unwrap();
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn ties_break_on_id() {
        let r = index().search(&desc(&[0.0, 0.0]), 3).unwrap();
        let ids: Vec<&str> = r.ids().collect();
        assert_eq!(ids, ["m0", "m1", "m2"]);
    }

    #[test]
    fn errors() {
        let idx = index();
        assert!(matches!(
            idx.search(&desc(&[0.0]), 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(idx.search(&desc(&[0.0, 0.0]), 0).is_err());
        let empty = RetrievalIndex::new(vec![], &[]).unwrap();
        assert!(empty.search(&desc(&[]), 1).is_err());
        assert!(
            RetrievalIndex::new(vec!["a".into(), "a".into()], &[desc(&[1.0]), desc(&[2.0])])
                .is_err()
        );
    }

    #[test]
    fn whitening_keeps_dominant_axis() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 10.0, 0.0, 0.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let t = fit_whitening(&refs, 1).unwrap();
        assert_eq!(t.projection[1], 0.0);
        assert_eq!(t.projection[2], 0.0);
        assert!(t.projection[0] > 0.0);
    }

    #[test]
    fn whitening_errors() {
        let rows = [[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(matches!(fit_whitening(&refs, 1), Err(Error::Degenerate(_))));
        assert!(fit_whitening(&refs[..1], 1).is_err());
        let rows = [[1.0, 2.0], [3.0, 5.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(fit_whitening(&refs, 3).is_err());
        assert!(fit_whitening(&refs, 0).is_err());
    }

    #[test]
    fn mean_whitens_to_degenerate() {
        let rows = [[1.0, 0.0], [-1.0, 0.5], [0.0, -0.5]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let t = fit_whitening(&refs, 2).unwrap();
        let e = apply_whitening(&t, &desc(&t.mean.clone())).unwrap();
        assert!(e.degenerate);
        assert!(e.descriptor.values.iter().all(|v| *v == 0.0));
    }
}
