//! Node features and adjacency for an instantiated schema graph.
//!
//! Columns: the node text embedding (`d`), matched flag, importance under
//! its parent, gate one-hot (and, or, xor, none), and depth divided by the
//! maximum depth. Rows follow event id order.

use ndarray::Array2;

use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::matcher::{schema_text, InstantiatedGraph, TextSource};
use crate::schema::{EventId, SchemaLibrary};

pub const EXTRA_FEATURES: usize = 7;

pub fn feature_width(embedding_dim: usize) -> usize {
    embedding_dim + EXTRA_FEATURES
}

/// Node embeddings depend only on the schema, so they can be computed once
/// and reused across instantiations.
pub fn node_embeddings(lib: &SchemaLibrary, provider: &dyn EmbeddingProvider) -> Result<Array2<f64>, EmbeddingError> {
    let texts: Vec<String> = lib
        .events
        .values()
        .map(|e| schema_text(e, TextSource::NamePlusDescription))
        .collect();
    let vecs = provider.embed_batch(&texts)?;
    let d = provider.dimension();
    let mut out = Array2::zeros((texts.len(), d));
    for (i, v) in vecs.iter().enumerate() {
        if v.dim() != d {
            return Err(EmbeddingError::DimensionMismatch { expected: d, got: v.dim() });
        }
        for (j, x) in v.values().iter().enumerate() {
            out[[i, j]] = *x;
        }
    }
    Ok(out)
}

/// Features from precomputed node embeddings (one row per event, id order).
pub fn features_with(g: &InstantiatedGraph, lib: &SchemaLibrary, embeddings: &Array2<f64>) -> Array2<f64> {
    let n = lib.len();
    let d = embeddings.ncols();
    let depths = lib.depths();
    let max_depth = depths.values().copied().max().unwrap_or(0);
    let mut x = Array2::zeros((n, feature_width(d)));
    for (i, ev) in lib.events.values().enumerate() {
        for j in 0..d {
            x[[i, j]] = embeddings[[i, j]];
        }
        x[[i, d]] = if g.is_matched(&ev.id) { 1.0 } else { 0.0 };
        x[[i, d + 1]] = lib.importance_of(&ev.id);
        x[[i, d + 2 + ev.gate.index()]] = 1.0;
        x[[i, d + 6]] = if max_depth == 0 {
            0.0
        } else {
            depths[&ev.id] as f64 / max_depth as f64
        };
    }
    x
}

pub fn build_features(
    g: &InstantiatedGraph,
    lib: &SchemaLibrary,
    provider: &dyn EmbeddingProvider,
) -> Result<Array2<f64>, EmbeddingError> {
    Ok(features_with(g, lib, &node_embeddings(lib, provider)?))
}

/// Symmetric 0/1 adjacency over hierarchy and temporal edges.
pub fn adjacency(lib: &SchemaLibrary) -> Array2<f64> {
    let ids: Vec<&EventId> = lib.event_ids().collect();
    let index = |id: &EventId| ids.binary_search(&id).ok();
    let n = ids.len();
    let mut a = Array2::zeros((n, n));
    let mut link = |x: &EventId, y: &EventId| {
        if let (Some(i), Some(j)) = (index(x), index(y)) {
            if i != j {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    };
    for ev in lib.events.values() {
        for p in &ev.participants {
            link(&ev.id, &p.child_id);
        }
    }
    for r in &lib.relations {
        link(&r.subject, &r.object);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::schema::fixtures::RECYCLING_TEXT;
    use crate::schema::parse_hierarchy_text;

    #[test]
    fn recycling_features() {
        let lib = parse_hierarchy_text(RECYCLING_TEXT).unwrap().library;
        let g = InstantiatedGraph::unmatched(&lib);
        let p = HashEmbedder::new(32);
        let x = build_features(&g, &lib, &p).unwrap();
        assert_eq!(x.dim(), (9, 39));
        assert!(x.column(32).iter().all(|v| *v == 0.0));
        // ev1 is the first row: a root with an OR gate
        assert_eq!(x[[0, 33]], 0.0);
        assert_eq!(x[[0, 38]], 0.0);
        assert_eq!(x[[0, 34 + 1]], 1.0);
        // ev1.1.2 sits at the maximum depth with importance 0.5
        let row = lib.event_ids().position(|i| i.as_str() == "ev1.1.2").unwrap();
        assert_eq!(x[[row, 33]], 0.5);
        assert_eq!(x[[row, 38]], 1.0);
        for i in 0..9 {
            assert_eq!((34..38).map(|j| x[[i, j]]).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn adjacency_is_symmetric() {
        let lib = parse_hierarchy_text(RECYCLING_TEXT).unwrap().library;
        let a = adjacency(&lib);
        assert_eq!(a, a.t());
        assert!(a.diag().iter().all(|v| *v == 0.0));
        // 8 hierarchy edges plus 6 temporal edges between siblings
        assert_eq!(a.sum(), 2.0 * 14.0);
    }
}
