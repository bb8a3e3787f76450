mod common;

use common::random_connected;
use oasis_core::simulator::{run, run_dual_on};
use oasis_core::stats::wilson_interval;
use oasis_core::{Configuration, GraphicalField, RunOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dual_meets_forward_exactly_when_target_is_reached() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let horizon = 6.0;
    let mut meetings = 0;
    for case in 0..500u64 {
        let g = random_connected(&mut rng, 8);
        let n = g.vertex_count();
        let lambda = rng.random_range(0.5..2.5);
        let field = GraphicalField::sample(&g, lambda, horizon, 1000 + case).unwrap();
        let timeline = field.timeline();
        let x = rng.random_range(0..n);
        let y = rng.random_range(0..n);
        let s = rng.random_range(0.0..3.0);
        let t = s + rng.random_range(0.0..3.0);
        let opts = RunOptions {
            snapshots: vec![s, t],
            ..Default::default()
        };
        let fwd = run(&field, lambda, &Configuration::singleton(x), &opts).unwrap();
        let dual = run_dual_on(&timeline, &field, lambda, &Configuration::singleton(y), s, t).unwrap();
        let meets = fwd.snapshots[0].1.intersects(&dual.dual_config_at_s);
        let reached = fwd.snapshots[1].1.contains(y);
        if meets {
            meetings += 1;
            assert!(reached, "case {case}: dual meets forward but y is not infected at t");
        }
        // Every path to (y, t) passes through time s, so the converse holds too.
        assert_eq!(meets, reached, "case {case}");
    }
    assert!(meetings > 50);
}

#[test]
fn dual_of_whole_window_is_forward_run_on_reversed_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200u64 {
        let g = random_connected(&mut rng, 7);
        let y = rng.random_range(0..g.vertex_count());
        let field = GraphicalField::sample(&g, 1.5, 4.0, case).unwrap();
        let dual = run_dual_on(&field.timeline(), &field, 1.2, &Configuration::singleton(y), 0.0, 4.0).unwrap();
        let rev = run(&field.reversed(), 1.2, &Configuration::singleton(y), &RunOptions::default()).unwrap();
        assert_eq!(rev.final_infected, dual.dual_config_at_s, "case {case}");
    }
}

#[test]
fn forward_and_dual_estimates_agree_on_path() {
    let g = oasis_core::graph::build_segment(2);
    let n = 8000u64;
    for t in [1.0, 4.0] {
        let mut fwd = 0;
        let mut dual = 0;
        for i in 0..n {
            let a = GraphicalField::sample(&g, 1.0, t, i).unwrap();
            let tr = run(&a, 1.0, &Configuration::singleton(0), &RunOptions::default()).unwrap();
            fwd += usize::from(tr.final_infected.contains(2));
            let b = GraphicalField::sample(&g, 1.0, t, n + i).unwrap();
            let d = run_dual_on(&b.timeline(), &b, 1.0, &Configuration::singleton(2), 0.0, t).unwrap();
            dual += usize::from(d.dual_config_at_s.contains(0));
        }
        let (fl, fh) = wilson_interval(fwd, n as usize, 0.95);
        let (dl, dh) = wilson_interval(dual, n as usize, 0.95);
        assert!(fl <= dh && dl <= fh, "t={t}: forward [{fl},{fh}] dual [{dl},{dh}]");
    }
}
