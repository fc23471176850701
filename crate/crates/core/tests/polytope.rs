use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steamgen::polytope::*;

fn random_polygon(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Polytope {
    let pts: Vec<DVector<f64>> = (0..6)
        .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-radius..radius)))
        .collect();
    let mut p = convex_hull(&pts);
    // ensure a full-dimensional set around the origin
    let bx = Polytope::from_box(&vec![-0.1 * radius; d], &vec![0.1 * radius; d]);
    p = p.minkowski_sum(&bx).unwrap();
    p
}

fn random_dir(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn square_hull_membership_matches_inequalities() {
    let corners = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    let pts: Vec<DVector<f64>> = corners.iter().map(|c| DVector::from_vec(c.to_vec())).collect();
    let sq = convex_hull(&pts);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let x = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        let oracle = (&sq.h * &x - &sq.k).max() <= 0.0;
        assert_eq!(sq.contains(&x), oracle);
        let direct = x[0].abs() <= 1.0 && x[1].abs() <= 1.0;
        if (x[0].abs() - 1.0).abs() > 1e-6 && (x[1].abs() - 1.0).abs() > 1e-6 {
            assert_eq!(sq.contains(&x), direct);
        }
    }
}

#[test]
fn template_directions_cover_the_axes() {
    for d in 1..=6 {
        let dirs = template_directions(d);
        for i in 0..d {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            assert!(dirs.iter().any(|v| (v - &e).amax() < 1e-12));
            assert!(dirs.iter().any(|v| (v + &e).amax() < 1e-12));
        }
        assert!(dirs.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }
}

#[test]
fn box_vertices_in_three_dimensions() {
    let b = Polytope::from_box(&[-1.0, -2.0, 0.0], &[1.0, 2.0, 3.0]);
    assert_eq!(b.vertices().unwrap().len(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pontryagin_then_minkowski_stays_inside(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(1..=2);
        let p = random_polygon(&mut rng, d, 3.0);
        let q = random_polygon(&mut rng, d, 0.3);
        if let Ok(diff) = p.pontryagin_diff(&q) {
            let back = diff.minkowski_sum(&q).unwrap();
            for _ in 0..20 {
                let v = random_dir(&mut rng, d);
                prop_assert!(back.support(&v).unwrap() <= p.support(&v).unwrap() + 1e-8);
            }
        }
    }

    #[test]
    fn supports_add_under_minkowski_sum(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(1..=2);
        let p = random_polygon(&mut rng, d, 2.0);
        let q = random_polygon(&mut rng, d, 1.0);
        let s = p.minkowski_sum(&q).unwrap();
        for _ in 0..20 {
            let v = random_dir(&mut rng, d);
            let lhs = p.support(&v).unwrap() + q.support(&v).unwrap();
            prop_assert!((lhs - s.support(&v).unwrap()).abs() < 1e-8 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn template_sum_is_tight_on_template_directions(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Polytope::from_box(&[-1.0, -0.5, -2.0], &[1.0, 0.5, 2.0]);
        let m = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(3, 3) * 2.0;
        let q = p.linear_image(&m).unwrap();
        let s = p.minkowski_sum(&q).unwrap();
        for v in template_directions(3) {
            let lhs = p.support(&v).unwrap() + q.support(&v).unwrap();
            prop_assert!((lhs - s.support(&v).unwrap()).abs() < 1e-8 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn redundancy_removal_keeps_membership(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(2..=3);
        let base = Polytope::from_box(&vec![-1.0; d], &vec![1.0; d]);
        let mut h = base.h.clone();
        let mut k = base.k.clone();
        for _ in 0..6 {
            let v = random_dir(&mut rng, d);
            let off = base.support(&v).unwrap() * rng.gen_range(0.7..1.5);
            let nr = h.nrows();
            h = h.insert_row(nr, 0.0);
            let r = h.nrows() - 1;
            h.set_row(r, &v.transpose());
            k = k.push(off);
        }
        let p = Polytope::new(h, k).unwrap();
        let q = p.remove_redundant().unwrap();
        prop_assert!(q.num_constraints() <= p.num_constraints());
        for _ in 0..200 {
            let x = DVector::from_fn(d, |_, _| rng.gen_range(-1.5..1.5));
            if p.violation(&x).abs() > 1e-6 {
                prop_assert_eq!(p.contains(&x), q.contains(&x));
            }
        }
    }

    #[test]
    fn image_contains_mapped_points(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_polygon(&mut rng, 2, 1.0);
        let m = DMatrix::from_fn(rng.gen_range(1..=3), 2, |_, _| rng.gen_range(-2.0..2.0));
        let img = p.linear_image(&m).unwrap();
        for _ in 0..50 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-1.2..1.2));
            if p.contains(&x) {
                prop_assert!(img.contains(&(&m * &x)));
            }
        }
    }
}

#[test]
fn scalar_rpi_matches_geometric_series() {
    // x+ = x/2 + w with |w| <= 1 has minimal invariant set [-2, 2]
    let phi = DMatrix::from_element(1, 1, 0.5);
    let w = VertexSet::new(vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)]);
    let z = compute_rpi(&phi, &w, 0.05).unwrap();
    let (lo, hi) = z.as_interval().unwrap();
    assert!(lo <= -2.0 && lo >= -2.05, "lo {lo}");
    assert!(hi >= 2.0 && hi <= 2.05, "hi {hi}");
    assert!(rpi_violation(&z, &phi, &w).unwrap() <= 1e-9);
}

#[test]
fn zero_disturbance_gives_the_origin() {
    let phi = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
    let w = VertexSet::new(vec![DVector::zeros(2)]);
    let z = compute_rpi(&phi, &w, 0.01).unwrap();
    assert!(z.contains(&DVector::zeros(2)));
    assert!(!z.contains(&DVector::from_vec(vec![1e-3, 0.0])));
}

#[test]
fn unstable_dynamics_are_rejected() {
    let phi = DMatrix::from_element(1, 1, 1.0);
    let w = VertexSet::new(vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)]);
    assert!(matches!(compute_rpi(&phi, &w, 0.1), Err(PolytopeError::NoConvergence(_))));
}

#[test]
fn rpi_in_three_dimensions_survives_random_disturbances() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let phi = DMatrix::from_row_slice(3, 3, &[0.6, 0.3, 0.0, -0.2, 0.5, 0.1, 0.05, 0.0, 0.7]);
    // degenerate segment disturbance, as produced by single-input models
    let w = VertexSet::new(vec![
        DVector::zeros(3),
        DVector::from_vec(vec![0.2, 0.0, 0.1]),
        DVector::from_vec(vec![-0.1, 0.0, -0.05]),
    ]);
    let z = compute_rpi(&phi, &w, 0.01).unwrap();
    assert!(rpi_violation(&z, &phi, &w).unwrap() <= 1e-9);
    let verts = z.vertices().unwrap();
    let mut violations = 0;
    for _ in 0..10_000 {
        let lam: Vec<f64> = (0..verts.len()).map(|_| rng.gen::<f64>().powi(4)).collect();
        let s: f64 = lam.iter().sum();
        let x = verts.iter().zip(&lam).fold(DVector::zeros(3), |acc, (v, l)| acc + v * (l / s));
        let t = rng.gen::<f64>();
        let wk = &w.points[1] * t.max(0.0) + &w.points[2] * (1.0 - t) * rng.gen::<f64>();
        if z.violation(&(&phi * x + wk)) > 1e-9 {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
    // trajectories from the origin stay inside
    let mut x = DVector::zeros(3);
    for _ in 0..2000 {
        x = &phi * x + &w.points[rng.gen_range(0..3)];
        assert!(z.violation(&x) <= 1e-9);
    }
}
