//! Low-pass synthetic graph signals.

use glpn_core::graph::{augmented_laplacian, is_connected, GraphKind};
use glpn_core::missing::minmax_scale;
use glpn_core::rng::{derive_seed, standard_normal, stream};
use glpn_core::{DenseMatrix, Error, Graph, Result};
use serde::{Deserialize, Serialize};

/// Attempts at drawing a connected graph before giving up.
pub const MAX_GRAPH_ATTEMPTS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub kind: GraphKind,
    /// Number of applications of the low-pass filter `I − Δ̃/2`.
    pub smoothness: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 200,
            d: 8,
            kind: GraphKind::Grid,
            smoothness: 8,
        }
    }
}

/// Draws a graph and features `MinMax((I − Δ̃/2)^s Z)` with `Z` i.i.d.
/// standard normal. The graph is redrawn until connected. The result is
/// fully observed.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Graph> {
    if spec.n < 2 || spec.d == 0 {
        return Err(Error::InvalidParameter("synthetic data needs n >= 2 and d >= 1".into()));
    }
    let mut adjacency = None;
    for attempt in 0..MAX_GRAPH_ATTEMPTS {
        let mut rng = stream(derive_seed(seed, attempt));
        let a: DenseMatrix = spec.kind.build(spec.n, &mut rng)?;
        if is_connected(&a) {
            adjacency = Some(a);
            break;
        }
    }
    let a = adjacency.ok_or_else(|| {
        Error::InvalidParameter(format!(
            "no connected {:?} graph on {} nodes after {MAX_GRAPH_ATTEMPTS} attempts",
            spec.kind, spec.n
        ))
    })?;

    let mut rng = stream(derive_seed(seed, u64::MAX));
    let mut x: DenseMatrix = standard_normal(spec.n, spec.d, &mut rng);
    if spec.smoothness > 0 {
        let filter = DenseMatrix::identity(spec.n).sub(&augmented_laplacian(&a)?.scale(0.5))?;
        for _ in 0..spec.smoothness {
            x = filter.matmul(&x)?;
        }
    }
    let full = DenseMatrix::filled(spec.n, spec.d, 1.0);
    let (scaled, _) = minmax_scale(&x, &full)?;
    Graph::complete(a, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use glpn_core::SpectralCache;

    fn spec(kind: GraphKind, smoothness: usize) -> SyntheticSpec {
        SyntheticSpec {
            n: 60,
            d: 4,
            kind,
            smoothness,
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let s = spec(GraphKind::ErdosRenyi { p: 0.1 }, 3);
        let a = gen_synthetic(&s, 5).unwrap();
        let b = gen_synthetic(&s, 5).unwrap();
        assert_eq!(a.adjacency(), b.adjacency());
        assert_eq!(a.features(), b.features());
        let c = gen_synthetic(&s, 6).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn smoothing_lowers_energy() {
        for kind in [GraphKind::Grid, GraphKind::RingLattice { k: 2 }, GraphKind::ErdosRenyi { p: 0.1 }] {
            let rough = gen_synthetic(&spec(kind, 0), 1).unwrap();
            let smooth = gen_synthetic(&spec(kind, 8), 1).unwrap();
            assert_eq!(rough.adjacency(), smooth.adjacency());
            let cache = SpectralCache::new(rough.adjacency()).unwrap();
            let (er, es) = (cache.energy(rough.features()).unwrap(), cache.energy(smooth.features()).unwrap());
            assert!(es < er, "{kind:?}: {es} vs {er}");
        }
    }

    #[test]
    fn raw_noise_is_scaled_into_unit_range() {
        let g = gen_synthetic(&spec(GraphKind::Grid, 0), 2).unwrap();
        for j in 0..4 {
            let col = g.features().column(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn disconnected_recipes_fail_after_retries() {
        let s = spec(GraphKind::ErdosRenyi { p: 0.001 }, 1);
        assert!(matches!(gen_synthetic(&s, 0), Err(Error::InvalidParameter(_))));
    }
}
