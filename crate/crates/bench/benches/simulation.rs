use criterion::{black_box, criterion_group, criterion_main, Criterion};

use oasis_core::estimators::{estimate_p_line, SamplingPlan};
use oasis_core::graph::{build_segment, build_truncated_tree, connected_graphs};
use oasis_core::oracle::{exact_hit_probability, GeneratorModel};
use oasis_core::simulator::run;
use oasis_core::{Configuration, GraphicalField, LazyField, RunOptions};

fn field_sampling(c: &mut Criterion) {
    let tree = build_truncated_tree(10, 2).unwrap();
    c.bench_function("sample field T(10,2) horizon 20", |b| {
        b.iter(|| GraphicalField::sample(&tree, 1.5, 20.0, black_box(7)).unwrap().event_count())
    });
}

fn trajectories(c: &mut Criterion) {
    let tree = build_truncated_tree(10, 2).unwrap();
    let all = Configuration::all(tree.vertex_count());
    c.bench_function("lazy run T(10,2) lambda 1.5 horizon 20", |b| {
        b.iter(|| {
            let field = LazyField::new(&tree, 1.5, 20.0, black_box(3)).unwrap();
            run(&field, 1.5, &all, &RunOptions::default()).unwrap().extinction_time
        })
    });
    let line = build_segment(200);
    let mid = Configuration::singleton(100);
    c.bench_function("lazy run L(200) lambda 2 horizon 50", |b| {
        b.iter(|| {
            let field = LazyField::new(&line, 2.0, 50.0, black_box(5)).unwrap();
            run(&field, 2.0, &mid, &RunOptions::default()).unwrap().extinction_time
        })
    });
    c.bench_function("p_line ell 10, 1000 replicas", |b| {
        b.iter(|| estimate_p_line(10, 1.0, 200.0, &SamplingPlan::fixed(1000, black_box(1))).unwrap().point)
    });
}

fn oracle(c: &mut Criterion) {
    let k4 = connected_graphs(4).pop().unwrap();
    c.bench_function("oracle hit probability K4", |b| {
        b.iter(|| {
            let m = GeneratorModel::new(&k4, black_box(1.0)).unwrap();
            exact_hit_probability(&m, &Configuration::singleton(0), 3).unwrap().value
        })
    });
    let seg = build_segment(10);
    c.bench_function("oracle hit probability segment 10", |b| {
        b.iter(|| {
            let m = GeneratorModel::new(&seg, black_box(1.0)).unwrap();
            exact_hit_probability(&m, &Configuration::singleton(0), 10).unwrap().value
        })
    });
}

criterion_group!(benches, field_sampling, trajectories, oracle);
criterion_main!(benches);
