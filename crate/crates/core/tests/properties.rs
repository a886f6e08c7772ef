//! Invariants checked on random inputs.

use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sdfgan::autodiff::{Tape, Tensor};
use sdfgan::critic::{GrowthSchedule, PointCritic, PointCriticConfig};
use sdfgan::generator::{project_to_surface, LatentCode};
use sdfgan::mesh::dist2;
use sdfgan::mesh2sdf::{read_dataset, write_dataset, Provenance, SdfSampleSet};
use sdfgan::metrics::{chamfer, emd, emd_approx, jsd_distributions};
use sdfgan::spatial::KdTree;
use sdfgan::surfacing::{marching_cubes, Analytic};
use sdfgan::train::{DiscriminatorKind, TrainConfig};

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

fn cloud(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<[f64; 3]>> {
    vec(point(), n)
}

fn shift(c: &[[f64; 3]], t: [f64; 3]) -> Vec<[f64; 3]> {
    c.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kd_tree_agrees_with_brute_force(pts in cloud(1..200), q in point(), radius in 0.0..0.8f64) {
        let tree = KdTree::new(&pts);
        let best = pts.iter().map(|p| dist2(*p, q)).fold(f64::INFINITY, f64::min);
        let (_, d) = tree.nearest(q).unwrap();
        prop_assert!((d - best).abs() <= 1e-12);
        let mut inside = tree.within(q, radius);
        inside.sort();
        let want: Vec<usize> = (0..pts.len()).filter(|&i| dist2(pts[i], q) <= radius * radius).collect();
        prop_assert_eq!(inside, want);
    }

    #[test]
    fn chamfer_is_symmetric_and_translation_invariant(a in cloud(1..40), b in cloud(1..40), t in point()) {
        let ab = chamfer(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - chamfer(&b, &a).unwrap()).abs() <= 1e-12);
        let moved = chamfer(&shift(&a, t), &shift(&b, t)).unwrap();
        prop_assert!((ab - moved).abs() <= 1e-9 * (1.0 + ab));
        prop_assert!(chamfer(&a, &a).unwrap() == 0.0);
    }

    #[test]
    fn emd_is_symmetric_and_bounded_by_auction(ab in (1..25usize).prop_flat_map(|n| (cloud(n..n + 1), cloud(n..n + 1))), t in point()) {
        let (a, b) = ab;
        let e = emd(&a, &b).unwrap();
        prop_assert!((e - emd(&b, &a).unwrap()).abs() <= 1e-9);
        prop_assert!((e - emd(&shift(&a, t), &shift(&b, t)).unwrap()).abs() <= 1e-9);
        let approx = emd_approx(&a, &b, 1e-3).unwrap();
        prop_assert!(approx >= e - 1e-9 && approx <= e + 1e-3 + 1e-9, "{} vs {}", approx, e);
    }

    #[test]
    fn jsd_lies_in_zero_to_ln2(raw_p in vec(0.0..1.0f64, 1..30), seed in any::<u64>()) {
        let n = raw_p.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw_q: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            if s > 0.0 { v.iter().map(|x| x / s).collect::<Vec<_>>() } else { vec![1.0 / n as f64; n] }
        };
        let (p, q) = (norm(&raw_p), norm(&raw_q));
        let d = jsd_distributions(&p, &q);
        prop_assert!((-1e-12..=std::f64::consts::LN_2 + 1e-12).contains(&d));
        prop_assert!((d - jsd_distributions(&q, &p)).abs() <= 1e-12);
        prop_assert!(jsd_distributions(&p, &p).abs() <= 1e-12);
    }

    #[test]
    fn sphere_projection_lands_on_the_surface(p in point(), radius in 0.1..0.9f64) {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        prop_assume!(r > 1e-3);
        let grad = [p[0] / r, p[1] / r, p[2] / r];
        let q = project_to_surface(r - radius, grad, p).unwrap();
        let rq = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        prop_assert!((rq - radius).abs() <= 1e-12);
        let a = Analytic::sphere(radius).project(p);
        prop_assert!(dist2(a, q) <= 1e-20);
    }

    #[test]
    fn latent_interpolation_hits_both_ends(z in vec(-3.0..3.0f64, 1..16), t in 0.0..1.0f64) {
        let a = LatentCode::new(z.clone());
        let b = LatentCode::new(z.iter().map(|x| -x).collect());
        prop_assert_eq!(a.lerp(&b, 0.0), a.clone());
        prop_assert_eq!(a.lerp(&b, 1.0), b.clone());
        for (m, x) in a.lerp(&b, t).values().iter().zip(&z) {
            prop_assert!((m - x * (1.0 - 2.0 * t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn progressive_growth_never_shrinks(total in 8..5000usize, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let s = GrowthSchedule::progressive(total);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let r0 = s.stage_at((lo * total as f64) as usize).resolution();
        let r1 = s.stage_at((hi * total as f64) as usize).resolution();
        prop_assert!(r0 <= r1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn marching_cubes_sphere_is_watertight(c in [-0.3..0.3f64, -0.3..0.3f64, -0.3..0.3f64], radius in 0.15..0.6f64, r in 8..28usize) {
        let mesh = marching_cubes(&Analytic::Sphere { center: c, radius }, r);
        prop_assert!(!mesh.is_empty());
        prop_assert!(mesh.is_watertight());
        prop_assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn point_critic_ignores_point_order(rows in vec([-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -0.5..0.5f64], 2..40), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = PointCriticConfig { shared: vec![8, 16], dense: vec![8] };
        let critic = PointCritic::new(cfg, &mut rng).unwrap();
        let score = |rows: &[[f64; 4]]| {
            let mut tape = Tape::new();
            let bound = critic.params().bind(&mut tape, false);
            let x = tape.constant(Tensor::matrix(rows.len(), 4, rows.iter().flatten().copied().collect()));
            let s = critic.score(&mut tape, &bound, x, &[0, rows.len()]).unwrap();
            tape.value(s).item()
        };
        let mut reversed = rows.clone();
        reversed.reverse();
        prop_assert_eq!(score(&rows).to_bits(), score(&reversed).to_bits());
    }

    #[test]
    fn dataset_round_trips(samples in vec(([-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64], -1.0..1.0f64, any::<bool>()), 0..100)) {
        let mut set = SdfSampleSet::new("shape");
        for (p, s, near) in &samples {
            // the file stores f32
            let p = p.map(|c| c as f32 as f64);
            set.push(p, *s as f32 as f64, if *near { Provenance::NearSurface } else { Provenance::Uniform });
        }
        let mut buf = Vec::new();
        write_dataset(&mut buf, std::slice::from_ref(&set)).unwrap();
        prop_assert_eq!(read_dataset(&buf[..]).unwrap(), vec![set]);
    }

    #[test]
    fn config_text_round_trips(
        lr in 1e-6..1e-2f64,
        batch in 1..64usize,
        n_critic in 1..10usize,
        hidden in 2..300usize,
        layers in 2..10usize,
        kind in 0..3u8,
        seed in any::<u64>(),
        delta in 1e-4..1.0f64,
        shared in vec(1..64usize, 1..5),
    ) {
        let mut cfg = TrainConfig {
            learning_rate: lr,
            batch_size: batch,
            critic_steps_per_gen_step: n_critic,
            seed,
            discriminator: DiscriminatorKind::from_code(kind as f64).unwrap(),
            ..TrainConfig::default()
        };
        cfg.generator.hidden_dim = hidden;
        cfg.generator.layers = layers;
        cfg.generator.reinjection_layer = layers / 2;
        cfg.refinement.delta = delta;
        cfg.point_critic.shared = shared;
        prop_assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }
}
