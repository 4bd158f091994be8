//! Property-based checks of the structural invariants: sparse algebra
//! against dense oracles, separation geometry, iteration-count minimality,
//! configuration round-trips and mesh numbering.

use proptest::prelude::*;

use lod2d::corrector::{choose_k, SparseVec};
use lod2d::dual::{separated, separation_feasible};
use lod2d::experiment::ExperimentConfig;
use lod2d::mesh::MeshHierarchy;
use lod2d::sparse::{BandCholesky, CsrMatrix};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csr_matvec_matches_dense(
        n in 2usize..12,
        entries in proptest::collection::vec((0usize..12, 0usize..12, -5.0f64..5.0), 0..40),
        x in proptest::collection::vec(-3.0f64..3.0, 12),
    ) {
        // symmetrized triplets so the matrix is valid for the solver paths
        let mut triplets = Vec::new();
        for &(i, j, v) in &entries {
            let (i, j) = (i % n, j % n);
            triplets.push((i, j, v));
            if i != j {
                triplets.push((j, i, v));
            }
        }
        let a = CsrMatrix::from_triplets(n, triplets.clone());
        let mut dense = vec![vec![0.0; n]; n];
        for (i, j, v) in triplets {
            dense[i][j] += v;
        }
        let y = a.matvec(&x[..n]);
        for i in 0..n {
            let want: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
            prop_assert!((y[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn band_cholesky_solves_spd(seed in 0u64..500, n in 2usize..20) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // diagonally dominant banded SPD matrix
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, 4.0 + rng.gen_range(0.0..1.0)));
            if i + 1 < n {
                let v = rng.gen_range(-1.0..1.0);
                triplets.push((i, i + 1, v));
                triplets.push((i + 1, i, v));
            }
        }
        let a = CsrMatrix::from_triplets(n, triplets);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.matvec(&x);
        let chol = BandCholesky::factor(&a).unwrap();
        let got = chol.solve(&b);
        for (u, v) in got.iter().zip(&x) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn separation_is_symmetric_and_local(ax in 0usize..40, ay in 0usize..40, bx in 0usize..40, by in 0usize..40) {
        prop_assert_eq!(separated((ax, ay), (bx, by)), separated((bx, by), (ax, ay)));
        // separated means some axis differs by at least 2
        let expect = ax.abs_diff(bx) > 1 || ay.abs_diff(by) > 1;
        prop_assert_eq!(separated((ax, ay), (bx, by)), expect);
    }

    #[test]
    fn feasibility_monotone_in_refinement(r in 2usize..40, l in 1usize..60) {
        if separation_feasible(r, l) {
            prop_assert!(separation_feasible(r + 1, l));
            if l > 1 {
                prop_assert!(separation_feasible(r, l - 1));
            }
        }
    }

    #[test]
    fn choose_k_is_minimal(
        q in 0.05f64..0.95,
        l in 1.0f64..5000.0,
        m in 1.0f64..1.0e12,
        beta in 1.0f64..1.0e8,
        inv_h in 2.0f64..128.0,
    ) {
        let h = 1.0 / inv_h;
        let k = choose_k(q, l, m, beta, h).unwrap();
        let bound = |kk: i32| 2.0 * q.powi(kk) * l.sqrt() * m.sqrt() * beta.sqrt();
        prop_assert!(k >= 1);
        prop_assert!(bound(k as i32) <= h * h);
        if k > 1 {
            prop_assert!(bound(k as i32 - 1) > h * h);
        }
    }

    #[test]
    fn sparse_vec_roundtrips_dense(values in proptest::collection::vec(-1.0f64..1.0, 1..60)) {
        let (sv, dropped) = SparseVec::from_dense(&values, 0.0);
        let back = sv.to_dense(values.len());
        prop_assert_eq!(dropped, 0);
        for (x, y) in values.iter().zip(&back) {
            prop_assert_eq!(*x, *y);
        }
    }

    #[test]
    fn mesh_numbering_is_a_bijection(nh in 2usize..6, r in 2usize..6) {
        let hier = MeshHierarchy::build(nh, r).unwrap();
        for id in 0..hier.n {
            let (gx, gy) = hier.node_coords(id);
            prop_assert_eq!(hier.node_id(gx, gy), Some(id));
        }
        // boundary nodes have no interior id
        prop_assert_eq!(hier.node_id(0, 1), None);
        prop_assert_eq!(hier.node_id(1, hier.fine_divisions), None);
    }

    #[test]
    fn membership_covers_each_interior_node(nh in 2usize..5, r in 2usize..6) {
        let hier = MeshHierarchy::build(nh, r).unwrap();
        let mut seen = vec![0usize; hier.n];
        for mem in &hier.element_membership {
            for &g in mem {
                seen[g] += 1;
            }
        }
        // every interior node belongs to 1, 2 or 4 coarse elements
        for &count in &seen {
            prop_assert!(count == 1 || count == 2 || count == 4);
        }
    }

    #[test]
    fn config_render_parse_roundtrip(
        nh_pow in 1usize..4,
        fine_mult in 1usize..3,
        beta_exp in 1i32..8,
        seed in 0u64..1000,
    ) {
        let nh = 1 << nh_pow;
        let cfg = ExperimentConfig {
            coarse_divisions: vec![nh],
            fine_divisions: 32 * fine_mult * nh / nh.min(32).max(1),
            betas: vec![10f64.powi(beta_exp)],
            dual_seed: seed,
            ..ExperimentConfig::default()
        };
        // only exercise valid configs
        if cfg.validate().is_ok() {
            let again = ExperimentConfig::parse(&cfg.render()).unwrap();
            prop_assert_eq!(again.coarse_divisions, cfg.coarse_divisions);
            prop_assert_eq!(again.fine_divisions, cfg.fine_divisions);
            prop_assert_eq!(again.betas, cfg.betas);
            prop_assert_eq!(again.dual_seed, cfg.dual_seed);
        }
    }
}
