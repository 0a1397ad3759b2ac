use nalgebra::DVector;
use normscale::exphost::csv::{format_g9, to_csv_string};
use normscale::exphost::plot::to_plot_string;
use normscale::exphost::*;
use normscale::optim::{OptConfig, Rule};
use normscale::scalelab::rescaled_config;
use normscale::Execution;
use proptest::prelude::*;

fn small(rule: Rule) -> TrainConfig {
    TrainConfig {
        opt: OptConfig::new(rule, 0.1, 1e-3),
        epochs: 6,
        data: DatasetSpec { n_train: 320, n_val: 96, n_test: 96, ..Default::default() },
        ..Default::default()
    }
}

/// Logistic regression by full-batch gradient descent, as an independent
/// reference classifier.
fn linear_probe_error(s: &Splits) -> f64 {
    let (x, y) = (&s.train.x, &s.train.y);
    let d = x.ncols();
    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    for _ in 0..500 {
        let margin = x * &w;
        let r = DVector::from_fn(y.len(), |i, _| 1.0 / (1.0 + (-(margin[i] + b)).exp()) - y[i]);
        w -= x.tr_mul(&r) * (0.5 / y.len() as f64);
        b -= r.sum() * 0.5 / y.len() as f64;
    }
    let m = &s.test.x * &w;
    let wrong = (0..s.test.len()).filter(|&i| (m[i] + b > 0.0) != (s.test.y[i] > 0.5)).count();
    wrong as f64 / s.test.len() as f64
}

#[test]
fn separation_controls_difficulty() {
    let far = make_dataset(&DatasetSpec { separation: 20.0, ..Default::default() }, 1).unwrap();
    assert!(linear_probe_error(&far) <= 0.01);
    let none = make_dataset(&DatasetSpec { separation: 0.0, ..Default::default() }, 1).unwrap();
    assert!((linear_probe_error(&none) - 0.5).abs() <= 0.05);
    let cfg = TrainConfig { data: DatasetSpec { separation: 0.0, ..Default::default() }, epochs: 10, ..Default::default() };
    let r = train_small_net(&cfg, 0).unwrap();
    assert!((r.test_error - 0.5).abs() <= 0.05, "{}", r.test_error);
}

#[test]
fn splits_are_disjoint() {
    let s = make_dataset(&DatasetSpec { n_train: 200, n_val: 50, n_test: 50, ..Default::default() }, 4).unwrap();
    for i in 0..s.test.len() {
        let row = s.test.x.row(i);
        assert!((0..s.train.len()).all(|j| s.train.x.row(j) != row));
        assert!((0..s.val.len()).all(|j| s.val.x.row(j) != row));
    }
}

#[test]
fn moderate_config_learns_well_separated_data() {
    let cfg = TrainConfig {
        opt: OptConfig::new(Rule::Sgd, 0.1, 1e-4),
        data: DatasetSpec { separation: 2.0, ..Default::default() },
        ..Default::default()
    };
    let r = train_small_net(&cfg, 0).unwrap();
    assert!(r.test_error <= 0.05, "{}", r.test_error);
    assert!(r.train_loss < r.initial_loss);
    assert_eq!(r.norm_trace.len(), cfg.epochs + 1);
    assert!(r.val_error >= 0.0 && r.val_error <= 1.0 && r.final_norm > 0.0);
}

#[test]
fn scaled_initialization_matches_rescaled_hyperparameters() {
    for rule in [Rule::Sgd, Rule::Nesterov, Rule::Adam] {
        let alpha = 4.0;
        let base = small(rule);
        let (rescaled, _) = rescaled_config(&base.opt, alpha).unwrap();
        let scaled = TrainConfig { init_scale: alpha, ..base.clone() };
        let transported = TrainConfig { opt: rescaled, ..base };
        let a = train_small_net(&scaled, 9).unwrap();
        let b = train_small_net(&transported, 9).unwrap();
        assert_eq!(a.test_error, b.test_error, "{rule}");
        assert!((a.final_norm - alpha * b.final_norm).abs() <= 1e-4 * a.final_norm, "{rule}");
        assert!((a.train_loss - b.train_loss).abs() <= 1e-4 * a.train_loss, "{rule}");
    }
}

#[test]
fn norm_grows_without_decay() {
    // the stop-gradient step is not exactly tangent, so growth is a tendency
    // over enough steps rather than a per-step identity
    let cfg = TrainConfig { opt: OptConfig::new(Rule::Sgd, 0.1, 0.0), epochs: 10, ..Default::default() };
    let grew = (0..20)
        .filter(|&s| {
            let r = train_small_net(&cfg, s).unwrap();
            r.final_norm >= r.norm_trace[0]
        })
        .count();
    assert!(grew >= 18, "{grew} of 20");
}

#[test]
fn diverged_runs_are_marked() {
    let cfg = TrainConfig { opt: OptConfig::new(Rule::Sgd, 10.0, 10.0), ..small(Rule::Sgd) };
    let r = train_small_net(&cfg, 0).unwrap();
    assert!(r.diverged() && r.test_error.is_nan());
    let table = run_grid_sweep(&Grid { etas: vec![10.0], lambdas: vec![10.0], seeds: 2 }, &cfg, 1, Execution::Serial).unwrap();
    assert!(table.cells().iter().all(|c| c.diverged));
    assert!(to_csv_string(&table).lines().skip(1).all(|l| l.ends_with(",nan,nan,nan,nan,1")));
}

#[test]
fn one_cell_grid_is_a_single_run() {
    let cfg = small(Rule::Sgd);
    let grid = Grid { etas: vec![0.1], lambdas: vec![1e-3], seeds: 1 };
    let table = run_grid_sweep(&grid, &cfg, 5, Execution::Parallel).unwrap();
    let seed = normscale::rng::derive_seed(5, 0);
    let r = train_small_net(&cfg, seed).unwrap();
    assert_eq!(table.cells(), &[SweepCell::from_record(Rule::Sgd, 0.1, 1e-3, &r)]);
    assert_eq!(to_csv_string(&table).lines().count(), 2);
}

#[test]
fn sweep_is_independent_of_execution_order() {
    let cfg = small(Rule::RmsProp);
    let grid = Grid { etas: log_space(1e-3, 1e-1, 3), lambdas: log_space(1e-4, 1e-2, 2), seeds: 2 };
    let serial = run_grid_sweep(&grid, &cfg, 3, Execution::Serial).unwrap();
    let parallel = run_grid_sweep(&grid, &cfg, 3, Execution::Parallel).unwrap();
    let mut reversed = grid.clone();
    reversed.etas.reverse();
    reversed.lambdas.reverse();
    let reordered = run_grid_sweep(&reversed, &cfg, 3, Execution::Parallel).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial, reordered);
    assert_eq!(to_csv_string(&serial), to_csv_string(&parallel));
    for q in [Quantity::Norm, Quantity::TestError] {
        assert_eq!(to_plot_string(&serial, q).unwrap(), to_plot_string(&parallel, q).unwrap());
    }
    assert_eq!(serial.len(), 12);
}

#[test]
fn emitters_write_to_any_sink() {
    let table = run_grid_sweep(&Grid { etas: vec![0.1, 1.0], lambdas: vec![1e-3, 1e-2], seeds: 1 }, &small(Rule::Sgd), 0, Execution::Serial).unwrap();
    let mut csv = Vec::new();
    emit_csv(&table, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap(), to_csv_string(&table));
    let mut plot = Vec::new();
    emit_plot_data(&table, Quantity::Norm, &mut plot).unwrap();
    let text = String::from_utf8(plot).unwrap();
    assert_eq!(text.lines().filter(|l| !l.is_empty()).count(), 4);
    assert_eq!(text.lines().filter(|l| l.is_empty()).count(), 1);
    let first: Vec<f64> = text.lines().next().unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[..2], [-3.0, -1.0]);
    let norm = table.at(0.1, 1e-3)[0].final_norm;
    assert_eq!(format_g9(first[2]), format_g9(norm.log10()));
}

fn arb_cell() -> impl Strategy<Value = SweepCell> {
    (
        prop::sample::select(Rule::ALL.to_vec()),
        -6.0f64..2.0,
        -6.0f64..2.0,
        any::<u64>(),
        (1e-3f64..1e3, 0.0f64..5.0, 0.0f64..1.0, 0.0f64..1.0),
        any::<bool>(),
    )
        .prop_map(|(optimizer, le, ll, seed, (norm, loss, val, test), diverged)| SweepCell {
            optimizer,
            eta: 10f64.powf(le),
            lambda: 10f64.powf(ll),
            seed,
            final_norm: norm,
            train_loss: loss,
            val_error: val,
            test_error: test,
            diverged,
        })
}

fn close9(a: f64, b: f64) -> bool {
    (a - b).abs() <= 5e-9 * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(cells in prop::collection::vec(arb_cell(), 0..20)) {
        let table = SweepTable::new(cells);
        let text = to_csv_string(&table);
        let back = parse_csv(&text).unwrap();
        prop_assert_eq!(back.len(), table.len());
        for (a, b) in table.cells().iter().zip(back.cells()) {
            prop_assert_eq!(a.optimizer, b.optimizer);
            prop_assert_eq!(a.seed, b.seed);
            prop_assert_eq!(a.diverged, b.diverged);
            for (x, y) in [
                (a.eta, b.eta), (a.lambda, b.lambda), (a.final_norm, b.final_norm),
                (a.train_loss, b.train_loss), (a.val_error, b.val_error), (a.test_error, b.test_error),
            ] {
                prop_assert!(close9(x, y), "{} vs {}", x, y);
            }
        }
        // a parsed table re-emits byte for byte
        prop_assert_eq!(to_csv_string(&back), text.clone());
        prop_assert!(!text.contains('\r'));
    }

    #[test]
    fn g9_parses_back_to_nine_digits(x in -1e12f64..1e12) {
        let s = format_g9(x);
        prop_assert!(close9(s.parse::<f64>().unwrap(), x));
        let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
        prop_assert!(digits <= 10);
    }
}
