use nalgebra::DMatrix;
use paradram::kernel::{run_chain_serial, ChainRow, NullObserver};
use paradram::parallel::{geometric_contribution, run_fork_join, run_multi_chain, FabricKind, ForkJoinRun};
use paradram::target::MultivariateNormal;
use paradram::{validate_spec, FnObjective, Objective, RawSpec, Result, SpecSet};

fn spec(pairs: &[(&str, &str)], ndim: usize) -> SpecSet {
    let mut raw = RawSpec::new();
    raw.set("randomSeed", "777");
    for (k, v) in pairs {
        raw.set(k, *v);
    }
    validate_spec(&raw, ndim).unwrap().spec
}

fn normal(ndim: usize) -> impl FnMut(usize) -> Result<Box<dyn Objective>> {
    move |_| Ok(Box::new(MultivariateNormal::standard(ndim)) as Box<dyn Objective>)
}

fn fork_join(spec: &SpecSet, np: usize, kind: FabricKind) -> (ForkJoinRun, Vec<ChainRow>) {
    let mut rows = Vec::new();
    let run = run_fork_join(
        spec,
        np,
        kind,
        &mut normal(spec.ndim),
        &mut rows,
        &mut NullObserver,
        None,
    )
    .unwrap();
    (run, rows)
}

fn bits(rows: &[ChainRow]) -> Vec<(u32, u32, u64, u64, u64, u64, Vec<u64>)> {
    rows.iter()
        .map(|r| {
            (
                r.proc_id,
                r.dr_stage,
                r.mean_acceptance_rate.to_bits(),
                r.adaptation_measure.to_bits(),
                r.weight,
                r.log_func.to_bits(),
                r.coords.iter().map(|c| c.to_bits()).collect(),
            )
        })
        .collect()
}

#[test]
fn single_rank_fork_join_equals_serial_chain() {
    for dr in ["0", "2"] {
        let s = spec(
            &[
                ("chainSize", "3000"),
                ("delayedRejectionCount", dr),
                ("adaptationPeriod", "50"),
            ],
            3,
        );
        let mut serial_rows = Vec::new();
        let mut target = MultivariateNormal::standard(3);
        let serial = run_chain_serial(&s, &mut target, &mut serial_rows, &mut NullObserver, None).unwrap();
        let (fj, fj_rows) = fork_join(&s, 1, FabricKind::Local);
        assert_eq!(bits(&serial.rows), bits(&fj.run.rows));
        assert_eq!(bits(&serial_rows), bits(&fj_rows));
        assert_eq!(serial.stats.num_func_calls, fj.run.stats.num_func_calls);
        assert_eq!(fj.scaling.contribution_counts, vec![fj.run.stats.num_accepted]);
        assert!(fj.scaling.measured_to.is_none());
    }
}

#[test]
fn constant_objective_is_always_accepted_by_rank_one() {
    let s = spec(&[("chainSize", "500")], 2);
    let mut factory = |_| Ok(Box::new(FnObjective::new(2, |_: &[f64]| Ok(0.0))) as Box<dyn Objective>);
    let run = run_fork_join(
        &s,
        4,
        FabricKind::Local,
        &mut factory,
        &mut Vec::new(),
        &mut NullObserver,
        None,
    )
    .unwrap();
    assert_eq!(run.scaling.contribution_counts, vec![500, 0, 0, 0]);
    assert!(run.scaling.effective_acceptance_rate > 1.0 - 1e-6);
    assert!(run.run.rows.iter().all(|r| r.proc_id == 1 && r.weight == 1));
    // Every round all four ranks evaluate their candidate.
    assert_eq!(run.run.stats.num_func_calls, 1 + 4 * 499);
}

#[test]
fn fabrics_give_identical_chains() {
    let s = spec(
        &[
            ("chainSize", "2000"),
            ("delayedRejectionCount", "1"),
            ("adaptationPeriod", "40"),
        ],
        2,
    );
    let (local, local_rows) = fork_join(&s, 5, FabricKind::Local);
    let (threads, thread_rows) = fork_join(&s, 5, FabricKind::Threads);
    assert_eq!(bits(&local.run.rows), bits(&threads.run.rows));
    assert_eq!(bits(&local_rows), bits(&thread_rows));
    assert_eq!(local.scaling.contribution_counts, threads.scaling.contribution_counts);
    let (again, _) = fork_join(&s, 5, FabricKind::Local);
    assert_eq!(bits(&local.run.rows), bits(&again.run.rows));
}

#[test]
fn fork_join_bookkeeping() {
    let s = spec(&[("chainSize", "4000"), ("delayedRejectionCount", "2")], 2);
    let (fj, _) = fork_join(&s, 4, FabricKind::Local);
    let stats = &fj.run.stats;
    assert_eq!(fj.run.rows.iter().map(|r| r.weight).sum::<u64>(), 4000);
    assert_eq!(stats.verbose_length, 4000);
    assert_eq!(fj.run.rows.len() as u64, stats.num_accepted);
    assert_eq!(fj.scaling.contribution_counts.iter().sum::<u64>(), stats.num_accepted);
    for rank in 1..=4u32 {
        let attributed = fj.run.rows.iter().filter(|r| r.proc_id == rank).count() as u64;
        assert_eq!(attributed, fj.scaling.contribution_counts[rank as usize - 1]);
    }
    assert!(fj.run.rows.iter().any(|r| r.dr_stage > 0));
    assert!(fj.run.rows.windows(2).all(|w| w[0].coords != w[1].coords));
    let alpha = fj.scaling.effective_acceptance_rate;
    assert!(alpha > 0.0 && alpha <= 1.0);
    assert!(fj.scaling.measured_to.unwrap() >= 0.0);
    let prediction = fj.scaling.prediction.as_ref().unwrap();
    assert_eq!(prediction.curve.len(), 64);
}

#[test]
fn contributions_follow_the_geometric_law() {
    let s = spec(&[("chainSize", "100000")], 2);
    let (fj, _) = fork_join(&s, 4, FabricKind::Local);
    let counts = &fj.scaling.contribution_counts;
    let total = fj.run.stats.num_accepted as f64;
    let expected = geometric_contribution(fj.scaling.effective_acceptance_rate, 4).unwrap();
    for (c, e) in counts.iter().zip(&expected) {
        let predicted = e * total;
        assert!(
            (*c as f64 - predicted).abs() < 0.1 * predicted,
            "{counts:?} vs {expected:?}"
        );
    }
    assert_eq!(counts.iter().max(), counts.first());
}

#[test]
fn multi_chain_agreement_and_separation() {
    let s = spec(&[("chainSize", "20000"), ("parallelismModel", "multiChain")], 2);
    let same = run_multi_chain(&s, 2, &mut normal(2)).unwrap();
    assert_eq!(same.ks.entries.len(), 2);
    assert!(same.ks.min_p_value().unwrap() > 1e-3, "{:?}", same.ks);

    let mut shifted = |rank: usize| -> Result<Box<dyn Objective>> {
        let shift = if rank == 2 { 5.0 } else { 0.0 };
        Ok(Box::new(MultivariateNormal::new(vec![shift, 0.0], DMatrix::identity(2, 2))?) as Box<dyn Objective>)
    };
    let apart = run_multi_chain(&s, 2, &mut shifted).unwrap();
    assert!(apart.ks.get(1, 2, 1).unwrap().p_value < 1e-6);
    assert!(!apart.warnings.is_empty());

    let single = run_multi_chain(&s, 1, &mut normal(2)).unwrap();
    assert!(single.ks.is_empty());
    assert_eq!(single.samples.len(), 1);
}
