//! Quick checks with known answers.

use oasis_core::constructor::{construct, Budgets, ConstructionMode, ConstructionPlan};
use oasis_core::estimators::{estimate_extinction_mean, estimate_p_line, estimate_survival, fit_decay, SamplingPlan};
use oasis_core::graph::{build_segment, build_truncated_tree};
use oasis_core::oracle::{exact_hit_probability, GeneratorModel};
use oasis_core::{Configuration, RootedGraph};

use crate::{CliError, CliResult};

type Check = (&'static str, fn() -> Result<bool, oasis_core::Error>);

const CHECKS: &[Check] = &[
    ("tree d=2 h=3 has 15 vertices", || Ok(build_truncated_tree(2, 3)?.vertex_count() == 15)),
    ("segment of length 4 has 5 vertices", || Ok(build_segment(4).vertex_count() == 5)),
    ("single-edge hit probability is lambda/(1+lambda)", || {
        let model = GeneratorModel::new(&build_segment(1), 1.0)?;
        let p = exact_hit_probability(&model, &Configuration::singleton(0), 1)?;
        Ok((p.value - 0.5).abs() < 1e-12)
    }),
    ("survival from the empty set is zero", || {
        let r = estimate_survival(&build_segment(3), 1.0, &Configuration::empty(), 10.0, &SamplingPlan::fixed(100, 1))?;
        Ok(r.point == 0.0)
    }),
    ("line crossing of length zero is one", || Ok(estimate_p_line(0, 1.0, 10.0, &SamplingPlan::fixed(100, 1))?.point == 1.0)),
    ("single vertex dies after mean time one", || {
        let g = RootedGraph::single_vertex();
        let r = estimate_extinction_mean(&g, 1.0, &Configuration::singleton(0), 100.0, &SamplingPlan::fixed(4000, 2))?;
        Ok(r.ci_low <= 1.0 && 1.0 <= r.ci_high)
    }),
    ("pure death decays at rate one", || {
        let fit = fit_decay(&build_segment(2), 0.0, &Configuration::singleton(1), &[1.0, 2.0, 3.0], &SamplingPlan::fixed(8000, 3))?;
        Ok((fit.slope + 1.0).abs() < 0.1)
    }),
    ("empty construction plan yields a single vertex", || {
        let plan = ConstructionPlan {
            mode: ConstructionMode::PartA,
            lambda_target: 1.5,
            levels: vec![],
            budgets: Budgets::default(),
        };
        let (g, log) = construct(&plan, 0)?;
        Ok(g == RootedGraph::single_vertex() && log.levels.is_empty())
    }),
];

pub fn run() -> CliResult {
    let mut failed = 0;
    for (name, check) in CHECKS {
        let ok = matches!(check(), Ok(true));
        println!("{} {name}", if ok { "ok  " } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        return Err(CliError::Internal(format!("{failed} selftest checks failed")));
    }
    Ok(())
}
