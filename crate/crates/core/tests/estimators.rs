use oasis_core::estimators::*;
use oasis_core::graph::{build_hat_graph, build_segment, build_tilde_graph, build_truncated_tree};
use oasis_core::oracle::{exact_expected_extinction, exact_hit_probability, GeneratorModel};
use oasis_core::{AugmentationSpec, Configuration, RootedGraph};

fn close(r: &EstimatorResult, exact: f64) -> bool {
    (r.point - exact).abs() <= 3.0 * r.half_width().max(1e-3)
}

#[test]
fn crossing_and_line_match_oracle() {
    let base = RootedGraph::single_vertex();
    for (i, lambda) in [0.5, 1.0, 1.5].into_iter().enumerate() {
        let spec = AugmentationSpec {
            d: 2,
            h: 1,
            lambda,
            epsilon: 0.1,
            ell_max: 2,
        };
        let (hat, layout) = build_hat_graph(&base, &spec).unwrap();
        let initial: Configuration = (0..layout.path_start).collect();
        let model = GeneratorModel::new(&hat, lambda).unwrap();
        for ell in 0..=2 {
            let exact = exact_hit_probability(&model, &initial, layout.path_vertex(ell)).unwrap().value;
            let plan = SamplingPlan::fixed(20_000, 10 * i as u64 + ell as u64);
            let r = estimate_crossing_p_with_margin(&base, &spec, ell, 300.0, &plan, 2 - ell).unwrap();
            assert!(close(&r, exact), "crossing lambda={lambda} ell={ell}: {} vs {exact}", r.point);
        }
        for ell in 1..=3 {
            let g = build_segment(ell);
            let exact = exact_hit_probability(&GeneratorModel::new(&g, lambda).unwrap(), &Configuration::singleton(0), ell)
                .unwrap()
                .value;
            let r = estimate_p_line(ell, lambda, 300.0, &SamplingPlan::fixed(20_000, 100 + ell as u64)).unwrap();
            assert!(close(&r, exact), "line lambda={lambda} ell={ell}: {} vs {exact}", r.point);
        }
    }
}

#[test]
fn crossing_nonincreasing_in_position() {
    let base = RootedGraph::single_vertex();
    let spec = AugmentationSpec {
        d: 3,
        h: 2,
        lambda: 1.5,
        epsilon: 0.1,
        ell_max: 30,
    };
    let plan = SamplingPlan::fixed(2000, 4);
    let r: Vec<_> = [0, 5, 10]
        .iter()
        .map(|&l| estimate_crossing_p(&base, &spec, l, 20.0, &plan).unwrap())
        .collect();
    assert!(r[0].point > 0.9);
    assert!(r[0].ci_high >= r[1].ci_low && r[1].ci_high >= r[2].ci_low);
    assert!(r[0].point >= r[1].point && r[1].point >= r[2].point);
}

#[test]
fn find_l_monotone_in_epsilon() {
    // A larger epsilon lowers the threshold 1 - epsilon, so the first cell
    // below it can only move right. With a fixed pool this is exact.
    let base = RootedGraph::single_vertex();
    let mut last = 0;
    for epsilon in [0.05, 0.1, 0.2] {
        let spec = AugmentationSpec {
            d: 4,
            h: 2,
            lambda: 1.5,
            epsilon,
            ell_max: 60,
        };
        let out = find_l(&base, &spec, 15.0, &SamplingPlan::fixed(1500, 9), &FindLOptions::default()).unwrap();
        let l = out.l_hat.unwrap();
        assert!(l >= last, "epsilon={epsilon}: {l} < {last}");
        last = l;
    }
}

#[test]
fn larger_tree_lives_longer() {
    let full = |g: &RootedGraph| Configuration::all(g.vertex_count());
    let small = build_truncated_tree(2, 1).unwrap();
    let large = build_truncated_tree(2, 2).unwrap();
    let plan = SamplingPlan::fixed(4000, 21);
    let a = estimate_extinction_mean(&small, 2.0, &full(&small), 2000.0, &plan).unwrap();
    let b = estimate_extinction_mean(&large, 2.0, &full(&large), 2000.0, &plan).unwrap();
    assert!(a.separated_below(&b), "{:?} vs {:?}", (a.ci_low, a.ci_high), (b.ci_low, b.ci_high));
    for (g, r) in [(&small, &a), (&large, &b)] {
        let exact = exact_expected_extinction(&GeneratorModel::new(g, 2.0).unwrap(), &full(g)).unwrap().value;
        assert!(close(r, exact), "{} vs {exact}", r.point);
    }
}

#[test]
fn ignition_nondecreasing_in_conditioning_time() {
    let spec = AugmentationSpec {
        d: 4,
        h: 2,
        lambda: 1.5,
        epsilon: 0.1,
        ell_max: 10,
    };
    let (level1, _) = build_tilde_graph(&RootedGraph::single_vertex(), &spec, 2).unwrap();
    let initial = Configuration::all(level1.vertex_count());
    let mut prev: Option<EstimatorResult> = None;
    for t_cond in [1.0, 5.0, 20.0] {
        let r = estimate_ignition(
            &level1,
            &spec,
            3,
            &initial,
            t_cond,
            40.0,
            &SamplingPlan::fixed(1500, 31),
            &IgnitionOptions::default(),
        )
        .unwrap();
        if let Some(p) = &prev {
            assert!(r.ci_high >= p.ci_low, "t_cond={t_cond}: {} well below {}", r.point, p.point);
        }
        prev = Some(r);
    }
}

#[test]
fn identical_inputs_identical_bytes() {
    let g = build_truncated_tree(3, 2).unwrap();
    let run = |workers| {
        let mut plan = SamplingPlan::adaptive(0.04, 8000, 12);
        plan.workers = workers;
        let r = estimate_survival(&g, 1.2, &Configuration::singleton(0), 6.0, &plan).unwrap();
        serde_json::to_string(&r).unwrap()
    };
    let a = run(None);
    assert_eq!(a, run(None));
    assert_eq!(a, run(Some(2)));
}

#[test]
fn paired_line_ratio_reports_steps() {
    let rep = estimate_line_ratio(&[2, 4, 6], 1.0, 1.4, 200.0, &SamplingPlan::fixed(4000, 3), 10).unwrap();
    assert_eq!(rep.steps.len(), 2);
    for (lo, hi) in rep.low.iter().zip(&rep.high) {
        // Shared fields: the lower rate is dominated replica by replica.
        assert!(lo.point <= hi.point);
    }
    assert!(rep.log_ratio.iter().all(|x| *x <= 0.0));
}
