//! Checks against independent reference computations written here from
//! first principles.

use std::collections::HashMap;

use opwalk_core::density::{phi_estimate, phi_field};
use opwalk_core::env::{brute_force_backbone, compute_backbone, generate_environment, BackboneField, EnvironmentWindow};
use opwalk_core::geometry::{BoxRegion, LatticeGeometry, Point, Site};
use opwalk_core::pairwalk::{encounter_count, sample_pair};
use opwalk_core::seed::{derive_seed, rng_from_seed};
use opwalk_core::stats;
use opwalk_core::walk::{quenched_law, sample_path};

/// Backbone indicator of a d=1 window by memoised recursion over sites.
fn reference_xi(env: &EnvironmentWindow, horizon: i64) -> HashMap<(i64, i64), bool> {
    let g = *env.geometry();
    let l = g.half_width();
    let mut xi = HashMap::new();
    for t in (g.t_min()..=horizon).rev() {
        for x in -l..=l {
            let open = env.is_open(&Site::new(Point::x(x), t)).unwrap();
            let alive = open
                && (t == horizon || (-1..=1).any(|z| (x + z).abs() <= l && xi[&(x + z, t + 1)]));
            xi.insert((x, t), alive);
        }
    }
    xi
}

#[test]
fn backbone_matches_recursion_on_random_windows() {
    for seed in 0..20 {
        let g = LatticeGeometry::new(1, 12, -3, 15).unwrap();
        let env = generate_environment(g, 0.62, seed).unwrap();
        let bb = compute_backbone(&env, 15).unwrap();
        let xi = reference_xi(&env, 15);
        for ((x, t), v) in xi {
            assert_eq!(bb.xi(&Site::new(Point::x(x), t)).unwrap(), v, "site ({x},{t}) seed {seed}");
        }
    }
}

#[test]
fn backbone_matches_brute_force_in_two_dimensions() {
    for seed in 0..10 {
        let g = LatticeGeometry::new(2, 1, 0, 5).unwrap();
        let env = generate_environment(g, 0.4, seed).unwrap();
        let fast = compute_backbone(&env, 5).unwrap();
        let slow = brute_force_backbone(&env, 5).unwrap();
        for s in g.sites() {
            assert_eq!(fast.xi(&s).unwrap(), slow.xi(&s).unwrap(), "{s} seed {seed}");
        }
    }
}

/// Quenched law by summing the probabilities of all `3^n` paths, with
/// transition weights rebuilt from the reference backbone.
fn path_enumeration_law(env: &EnvironmentWindow, horizon: i64, n: u32) -> HashMap<i64, f64> {
    let xi = reference_xi(env, horizon);
    let mut out = HashMap::new();
    for code in 0..3u32.pow(n) {
        let mut c = code;
        let mut x = 0i64;
        let mut prob = 1.0;
        for t in 0..n as i64 {
            let z = (c % 3) as i64 - 1;
            c /= 3;
            let w = if xi[&(x, t)] {
                let good = (-1..=1).filter(|dz| xi[&(x + dz, t + 1)]).count();
                if xi[&(x + z, t + 1)] {
                    1.0 / good as f64
                } else {
                    0.0
                }
            } else {
                1.0 / 3.0
            };
            prob *= w;
            x += z;
        }
        *out.entry(x).or_insert(0.0) += prob;
    }
    out
}

#[test]
fn quenched_law_matches_path_enumeration() {
    for seed in 0..50 {
        let g = LatticeGeometry::new(1, 4, 0, 3).unwrap();
        let env = generate_environment(g, 0.55, seed).unwrap();
        let bb = compute_backbone(&env, 3).unwrap();
        let law = quenched_law(&bb, &env, Site::origin(), 3).unwrap();
        let oracle = path_enumeration_law(&env, 3, 3);
        for x in -3..=3 {
            let want = oracle.get(&x).copied().unwrap_or(0.0);
            assert!((law.get(&Point::x(x)) - want).abs() < 1e-12, "seed {seed} x {x}");
        }
    }
}

fn supercritical_window(seed: u64, l: i64, t_min: i64, t_max: i64) -> (EnvironmentWindow, BackboneField) {
    let g = LatticeGeometry::new(1, l, t_min, t_max).unwrap();
    let env = generate_environment(g, 0.7, seed).unwrap();
    let bb = compute_backbone(&env, t_max).unwrap().with_safety_margin(20);
    (env, bb)
}

#[test]
fn sampled_endpoints_match_quenched_law() {
    let (env, bb) = supercritical_window(11, 60, 0, 60);
    let law = quenched_law(&bb, &env, Site::origin(), 20).unwrap();
    let mut rng = rng_from_seed(5);
    let draws = 100_000;
    let mut hist: HashMap<i64, u64> = HashMap::new();
    for _ in 0..draws {
        let p = sample_path(&bb, &env, Site::origin(), 20, &mut rng).unwrap();
        assert!(p.is_speed_one());
        *hist.entry(p.end().0[0]).or_insert(0) += 1;
    }
    let tv = 0.5 * (-20..=20).map(|x| (law.get(&Point::x(x)) - *hist.get(&x).unwrap_or(&0) as f64 / draws as f64).abs()).sum::<f64>();
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn pair_marginals_match_quenched_law() {
    let (env, bb) = supercritical_window(12, 60, 0, 60);
    let a = quenched_law(&bb, &env, Site::origin(), 20).unwrap();
    let b = quenched_law(&bb, &env, Site::new(Point::x(3), 0), 20).unwrap();
    let mut rng = rng_from_seed(6);
    let draws = 100_000;
    let (mut ha, mut hb): (HashMap<i64, u64>, HashMap<i64, u64>) = Default::default();
    for _ in 0..draws {
        let t = sample_pair(&bb, &env, Site::origin(), Site::new(Point::x(3), 0), 20, &mut rng).unwrap();
        *ha.entry(t.first.end().0[0]).or_insert(0) += 1;
        *hb.entry(t.second.end().0[0]).or_insert(0) += 1;
    }
    for (law, hist) in [(&a, &ha), (&b, &hb)] {
        let tv = 0.5 * (-25..=25).map(|x| (law.get(&Point::x(x)) - *hist.get(&x).unwrap_or(&0) as f64 / draws as f64).abs()).sum::<f64>();
        assert!(tv < 0.02, "tv {tv}");
    }
}

/// `Q_N(A)` for the cylinder `A = {omega(o, 0) = 1}` two ways: directly as
/// `E[sum_x P^{(o,0)}(X_N = x) 1_A(shifted by (x, N))]` and as
/// `E[phi_N(o, 0) 1_A]`.
#[test]
fn density_reproduces_cylinder_probability() {
    let depth = 50u64;
    let reps = 1500u64;
    let mut direct = Vec::new();
    let mut weighted = Vec::new();
    for r in 0..reps {
        let (env, bb) = supercritical_window(derive_seed(31, r, 1), depth as i64 + 30, 0, depth as i64 + 20);
        let law = quenched_law(&bb, &env, Site::origin(), depth).unwrap();
        let v: f64 = law.iter().filter(|(x, _)| env.is_open(&Site::new(*x, depth as i64)).unwrap()).map(|(_, m)| m).sum();
        direct.push(v);

        let (env, bb) = supercritical_window(derive_seed(32, r, 1), depth as i64 + 30, -(depth as i64), 20);
        let phi = phi_estimate(&bb, &env, Site::origin(), depth).unwrap();
        let open = env.is_open(&Site::origin()).unwrap();
        weighted.push(if open { phi } else { 0.0 });
    }
    let diff = stats::mean(&direct) - stats::mean(&weighted);
    let se = (stats::std_error(&direct).powi(2) + stats::std_error(&weighted).powi(2)).sqrt();
    assert!(diff.abs() < 3.0 * se, "diff {diff} se {se}");
}

#[test]
fn density_field_mean_is_one() {
    let depth = 20u64;
    let mut vals = Vec::new();
    for r in 0..400 {
        let (env, bb) = supercritical_window(derive_seed(40, r, 1), 60, -(depth as i64), 20);
        let f = phi_field(&bb, &env, 0, BoxRegion::centered(1, Point::ORIGIN, 0), depth).unwrap();
        vals.push(f.phi[0]);
    }
    let m = stats::mean(&vals);
    assert!((m - 1.0).abs() < 3.0 * stats::std_error(&vals), "mean {m}");
}

/// Exact `sum_{i<=N} P(|D_i| < r)` for the difference of two independent
/// uniform `{-1, 0, 1}` walks.
fn difference_walk_expected_count(big_n: usize, r: i64) -> f64 {
    let step = [1.0 / 9.0, 2.0 / 9.0, 3.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0];
    let width = 2 * big_n + 1;
    let mut dist = vec![0.0; 2 * width + 1];
    let c = width as i64;
    dist[c as usize] = 1.0;
    let mut total = 0.0;
    for i in 1..=big_n as i64 {
        let mut next = vec![0.0; dist.len()];
        let reach = 2 * (i - 1);
        for x in -reach..=reach {
            let m = dist[(x + c) as usize];
            if m == 0.0 {
                continue;
            }
            for (k, w) in step.iter().enumerate() {
                next[(x + k as i64 - 2 + c) as usize] += m * w;
            }
        }
        dist = next;
        total += (-(r - 1)..=(r - 1)).map(|x| dist[(x + c) as usize]).sum::<f64>();
    }
    total
}

#[test]
fn full_cluster_encounters_match_difference_walk() {
    let big_n = 400u64;
    let r = stats::log_squared_ceil(big_n);
    let g = LatticeGeometry::new(1, big_n as i64 + 2, 0, big_n as i64 + 1).unwrap();
    let env = generate_environment(g, 1.0, 0).unwrap();
    let bb = compute_backbone(&env, g.t_max()).unwrap();
    let mut rng = rng_from_seed(9);
    let counts: Vec<f64> = (0..4000)
        .map(|_| {
            let t = sample_pair(&bb, &env, Site::origin(), Site::origin(), big_n, &mut rng).unwrap();
            encounter_count(&t, big_n, r).unwrap() as f64
        })
        .collect();
    let exact = difference_walk_expected_count(big_n as usize, r as i64);
    let m = stats::mean(&counts);
    assert!((m - exact).abs() < 3.0 * stats::std_error(&counts), "mean {m} exact {exact}");
}
