use std::collections::BTreeMap;
use std::sync::OnceLock;

use dager_core::augment::{plan_boost, Augmenter, BoostMode};
use dager_core::bench::{
    render_csv, run_agnostic, run_ratio, run_starvation, write_report, Arm, BenchConfig, ExperimentKind, Workbench,
};
use dager_core::classify::Family;
use dager_core::corpus::class_stats;
use dager_core::lm::{BOS, EOS, UNK};
use dager_core::Execution;

const CONFIG: &str = "
synth_total = 400
synth_background = 100
lm_layers = 1
lm_dim = 16
lm_heads = 2
lm_ffn = 32
lm_epochs = 1
lexicon_k = 10
steer_step = 0.2
repeats = 2
starvation_fractions = 0.1, 0.5, 1.0
control_arm = true
ratios = 80/0, 40/40, 20/60
agnostic_fractions = 0.2
agnostic_families = linear, neural
";

fn workbench() -> &'static Workbench {
    static WB: OnceLock<Workbench> = OnceLock::new();
    WB.get_or_init(|| {
        let config = BenchConfig::from_text(CONFIG).unwrap();
        Workbench::prepare(config, Execution::Parallel).unwrap()
    })
}

fn sequential_twin(wb: &Workbench) -> Workbench {
    Workbench::from_parts(
        wb.config().clone(),
        wb.train().clone(),
        wb.test().clone(),
        wb.lm().clone(),
        Execution::Sequential,
    )
    .unwrap()
}

#[test]
fn generated_batch_matches_plan_and_schedule() {
    let wb = workbench();
    let lexicons = wb.lexicons(wb.train()).unwrap();
    let plan = plan_boost(&class_stats(wb.train()), wb.train().len() + 40, BoostMode::Balance, None).unwrap();
    let gen = |exec| {
        Augmenter::new(wb.lm(), &lexicons, wb.config().generation.clone(), exec)
            .unwrap()
            .generate_batch(&plan, 9)
            .unwrap()
    };
    let par = gen(Execution::Parallel);
    assert_eq!(par, gen(Execution::Sequential));
    assert_eq!(par, gen(Execution::Parallel));

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in par.examples() {
        *counts.entry(e.label.clone()).or_default() += 1;
        assert!(!e.tokens.is_empty() && e.tokens.len() <= wb.config().generation.lengths.max);
        for t in &e.tokens {
            assert!(t != BOS && t != EOS && t != UNK, "reserved token {t} in output");
        }
    }
    counts.retain(|_, n| *n > 0);
    let expected: BTreeMap<String, usize> = plan.boosts().into_iter().filter(|(_, n)| *n > 0).collect();
    assert_eq!(counts, expected);
}

#[test]
fn different_seeds_give_different_samples() {
    let wb = workbench();
    let lexicons = wb.lexicons(wb.train()).unwrap();
    let aug = Augmenter::new(wb.lm(), &lexicons, wb.config().generation.clone(), Execution::Sequential).unwrap();
    let a: Vec<_> = (0..10).map(|i| aug.sample("spam", i, 0, 1).unwrap()).collect();
    let b: Vec<_> = (0..10).map(|i| aug.sample("spam", i, 0, 2).unwrap()).collect();
    assert_ne!(a, b);
    assert!(a.iter().all(|e| e.label == "spam"));
}

#[test]
fn starvation_grid_is_complete_and_leak_free() {
    let wb = workbench();
    let report = run_starvation(wb).unwrap();
    assert_eq!(report.kind, ExperimentKind::Starvation);
    for label in ["0.1", "0.5"] {
        for arm in [Arm::Baseline, Arm::Boosted, Arm::Control] {
            let cell = report.cell(Family::LinearBow, label, arm).expect("cell present");
            assert_eq!(cell.repeats.len(), 2);
        }
        let boosted = report.cell(Family::LinearBow, label, Arm::Boosted).unwrap();
        for r in &boosted.repeats {
            assert_eq!(r.n_original + r.n_generated, wb.train().len());
        }
    }
    assert!(report.cell(Family::LinearBow, "1", Arm::Baseline).is_some());
    assert!(report.cell(Family::LinearBow, "1", Arm::Boosted).is_none());
    for seed in wb.config().repeat_seeds() {
        let a = &report.checksums[&format!("lexicons/0.1/{seed}")];
        let b = &report.checksums[&format!("lexicons/0.5/{seed}")];
        assert_ne!(a, b, "lexicons must be mined from each subset");
    }
    assert_eq!(report.checksums["split/test"], wb.split_checksum());

    let again = run_starvation(&sequential_twin(wb)).unwrap();
    assert_eq!(render_csv(&report).unwrap(), render_csv(&again).unwrap());
}

#[test]
fn ratio_reference_cell_is_the_full_baseline() {
    let wb = workbench();
    let ratios = run_ratio(wb).unwrap();
    let starved = run_starvation(wb).unwrap();
    let reference = ratios.cell(Family::LinearBow, "80/0", Arm::Baseline).unwrap();
    let full = starved.cell(Family::LinearBow, "1", Arm::Baseline).unwrap();
    assert_eq!(reference.scores(), full.scores());
    assert_eq!(reference.mean_delta(), Some(0.0));
    for label in ["40/40", "20/60"] {
        let cell = ratios.cell(Family::LinearBow, label, Arm::Boosted).unwrap();
        for (r, base) in cell.repeats.iter().zip(&reference.repeats) {
            assert_eq!(r.delta_f1, Some(r.macro_f1 - base.macro_f1));
        }
    }
}

#[test]
fn agnostic_grid_doubles_each_subset() {
    let wb = workbench();
    let report = run_agnostic(wb).unwrap();
    for family in [Family::LinearBow, Family::Neural] {
        let base = report.cell(family, "0.2", Arm::Baseline).unwrap();
        let boosted = report.cell(family, "0.2", Arm::Boosted).unwrap();
        for (b, a) in base.repeats.iter().zip(&boosted.repeats) {
            assert_eq!(a.seed, b.seed);
            assert!(a.n_generated <= a.n_original && a.n_generated + 5 >= a.n_original);
            assert_eq!(a.delta_f1, Some(a.macro_f1 - b.macro_f1));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let files = write_report(&report, dir.path()).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for name in ["report.csv", "report.md", "config_echo.txt", "checksums.txt"] {
        assert!(names.iter().any(|n| n == name), "missing {name}");
    }
    let echo = std::fs::read_to_string(dir.path().join("config_echo.txt")).unwrap();
    assert_eq!(BenchConfig::from_text(&echo).unwrap(), *wb.config());
}
