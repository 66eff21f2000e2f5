use glpn_core::baselines::{gcn_refine, mean_impute, GcnConfig};
use glpn_core::glpn::{self, draft_impute, DraftKind, GlpnConfig};
use glpn_core::graph::{augmented_laplacian, GraphKind};
use glpn_core::missing::{minmax_scale, MaskSpec, Mechanism};
use glpn_core::rng::{standard_normal, stream};
use glpn_core::{DenseMatrix, Graph};

/// Smooth signal on an 8x8 grid with 30% of entries hidden at random.
fn smooth_case(seed: u64) -> (Graph, DenseMatrix) {
    let n = 64;
    let mut rng = stream(seed);
    let a: DenseMatrix = GraphKind::Grid.build(n, &mut rng).unwrap();
    let filter = DenseMatrix::identity(n)
        .sub(&augmented_laplacian(&a).unwrap().scale(0.5))
        .unwrap();
    let mut x: DenseMatrix = standard_normal(n, 4, &mut rng);
    for _ in 0..8 {
        x = filter.matmul(&x).unwrap();
    }
    let (x, _) = minmax_scale(&x, &DenseMatrix::filled(n, 4, 1.0)).unwrap();
    let mask = MaskSpec::new(Mechanism::Mcar, 0.3, seed + 1).generate(&x).unwrap();
    let observed = x.hadamard(&mask).unwrap();
    (Graph::new(a, observed, mask).unwrap(), x)
}

fn hidden_rmse(x_hat: &DenseMatrix, truth: &DenseMatrix, mask: &DenseMatrix) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for ((p, t), m) in x_hat.data().iter().zip(truth.data()).zip(mask.data()) {
        if *m == 0.0 {
            sum += (p - t).powi(2);
            count += 1;
        }
    }
    (sum / count as f64).sqrt()
}

fn config(epochs: usize) -> GlpnConfig {
    let mut cfg = GlpnConfig::default();
    cfg.hidden = 16;
    cfg.train.epochs = epochs;
    cfg.train.adam.lr = 0.01;
    cfg.train.seed = 11;
    cfg
}

#[test]
fn glpn_training_halves_the_loss() {
    let (g, truth) = smooth_case(3);
    let (model, trained) = glpn::train(&g, &config(300)).unwrap();
    let first = trained.loss_curve[0];
    let last = *trained.loss_curve.last().unwrap();
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    let x_hat = model.predict(&trained.params, &g).unwrap();
    let mean = mean_impute(g.features(), g.mask()).unwrap().x_hat;
    assert!(hidden_rmse(&x_hat, &truth, g.mask()) < hidden_rmse(&mean, &truth, g.mask()));
}

#[test]
fn gcn_training_lowers_the_error() {
    let (g, truth) = smooth_case(5);
    let rmse = |epochs| {
        let cfg = GcnConfig {
            hidden: 16,
            train: config(epochs).train,
            ..GcnConfig::default()
        };
        hidden_rmse(&gcn_refine(&g, &cfg).unwrap().x_hat, &truth, g.mask())
    };
    let (before, after) = (rmse(0), rmse(300));
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn trained_diffusion_draft_beats_the_mean_draft() {
    let (g, truth) = smooth_case(7);
    let mut cfg = config(300);
    cfg.draft = DraftKind::Mean;
    let mean = draft_impute(&g, &cfg).unwrap();
    cfg.draft = DraftKind::Dgcn;
    let dgcn = draft_impute(&g, &cfg).unwrap();
    let (m, d) = (hidden_rmse(&mean, &truth, g.mask()), hidden_rmse(&dgcn, &truth, g.mask()));
    assert!(d < m, "dgcn {d} vs mean {m}");
}
