mod common;

use common::random_connected;
use oasis_core::simulator::{simulate, ProcessSpec};
use oasis_core::{Configuration, LazyField, RunOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn subset(mask: u32, n: usize) -> Configuration {
    (0..n).filter(|v| mask >> v & 1 == 1).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn monotone_in_rate_and_initial_set(
        graph_seed in any::<u64>(), field_seed in any::<u64>(),
        l1 in 0.1f64..2.5, dl in 0.0f64..1.5, a in any::<u32>(), extra in any::<u32>(),
    ) {
        let g = random_connected(&mut ChaCha8Rng::seed_from_u64(graph_seed), 20);
        let n = g.vertex_count();
        let small = subset(a, n);
        let large = subset(a | extra, n);
        let l2 = l1 + dl;
        let field = LazyField::new(&g, l2, 10.0, field_seed).unwrap();
        let specs = [ProcessSpec::new(l1, small), ProcessSpec::new(l2, large)];
        let mut violations = 0usize;
        let mut obs = |_t: f64, s: &[&[bool]]| {
            violations += s[0].iter().zip(s[1]).filter(|(x, y)| **x && !**y).count();
        };
        simulate(&field, &specs, &RunOptions::default(), Some(&mut obs)).unwrap();
        prop_assert_eq!(violations, 0);
    }

    #[test]
    fn additive_in_initial_set(
        graph_seed in any::<u64>(), field_seed in any::<u64>(),
        lambda in 0.1f64..3.0, a in any::<u32>(), b in any::<u32>(),
    ) {
        let g = random_connected(&mut ChaCha8Rng::seed_from_u64(graph_seed), 20);
        let n = g.vertex_count();
        let (sa, sb) = (subset(a, n), subset(b, n));
        let field = LazyField::new(&g, lambda, 10.0, field_seed).unwrap();
        let specs = [
            ProcessSpec::new(lambda, sa.clone()),
            ProcessSpec::new(lambda, sb.clone()),
            ProcessSpec::new(lambda, sa.union(&sb)),
        ];
        let mut violations = 0usize;
        let mut obs = |_t: f64, s: &[&[bool]]| {
            violations += (0..n).filter(|&v| (s[0][v] || s[1][v]) != s[2][v]).count();
        };
        simulate(&field, &specs, &RunOptions::default(), Some(&mut obs)).unwrap();
        prop_assert_eq!(violations, 0);
    }

    #[test]
    fn occupation_matches_log(graph_seed in any::<u64>(), field_seed in any::<u64>(), lambda in 0.1f64..3.0) {
        let g = random_connected(&mut ChaCha8Rng::seed_from_u64(graph_seed), 12);
        let n = g.vertex_count();
        let horizon = 6.0;
        let field = LazyField::new(&g, lambda, horizon, field_seed).unwrap();
        let opts = RunOptions { record_log: true, ..Default::default() };
        let init = Configuration::all(n);
        let tr = oasis_core::simulator::run(&field, lambda, &init, &opts).unwrap();
        let mut since: Vec<Option<f64>> = (0..n).map(|_| Some(0.0)).collect();
        let mut occ = vec![0.0; n];
        for &(t, v, infected) in tr.log.as_ref().unwrap() {
            if infected {
                prop_assert!(since[v].is_none());
                since[v] = Some(t);
            } else {
                occ[v] += t - since[v].take().expect("recovery of a healthy vertex");
            }
        }
        for v in 0..n {
            if let Some(s) = since[v] {
                occ[v] += horizon - s;
            }
            prop_assert!((occ[v] - tr.occupation[v]).abs() < 1e-9);
        }
    }

    #[test]
    fn confinement_never_exceeds_free_process(graph_seed in any::<u64>(), field_seed in any::<u64>(), keep in any::<u32>()) {
        let g = random_connected(&mut ChaCha8Rng::seed_from_u64(graph_seed), 15);
        let n = g.vertex_count();
        let mask: Vec<bool> = (0..n).map(|v| v == 0 || keep >> v & 1 == 1).collect();
        let init = Configuration::singleton(0);
        let field = LazyField::new(&g, 2.0, 8.0, field_seed).unwrap();
        let specs = [ProcessSpec::new(2.0, init.clone()).confined(mask.clone()), ProcessSpec::new(2.0, init)];
        let mut bad = 0usize;
        let mut obs = |_t: f64, s: &[&[bool]]| {
            bad += (0..n).filter(|&v| (s[0][v] && !s[1][v]) || (s[0][v] && !mask[v])).count();
        };
        simulate(&field, &specs, &RunOptions::default(), Some(&mut obs)).unwrap();
        prop_assert_eq!(bad, 0);
    }
}
