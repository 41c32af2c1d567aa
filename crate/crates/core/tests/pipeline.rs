mod common;

use common::{learned_grid, rel_close};
use rspmn::builder::{learn_rspmn, learn_rspmn_staged, RspmnParams};
use rspmn::envs::{generate_dataset, grid_to_mdp, reachable_nonterminal, rspmn_action, value_iteration, GridSpec};
use rspmn::evaluator::{evaluate_meu, log_likelihood};
use rspmn::io::{load_model, model_to_json, read_dataset, save_model, OrderSpec};
use rspmn::validity::verify_unfolded;
use rspmn::Error;

#[test]
fn learned_2x2_policy_matches_value_iteration() {
    let spec = GridSpec::grid_2x2();
    let model = learned_grid(&spec, 10_000, 1);
    let mdp = grid_to_mdp(&spec).unwrap();
    let vi = value_iteration(&mdp, spec.horizon);
    let table = evaluate_meu(&model, spec.horizon, Some(&spec.evidence(spec.start))).unwrap();
    assert!(rel_close(table.meu, vi.value(spec.horizon, spec.state_of(spec.start)), 0.01), "meu {}", table.meu);
    for s in reachable_nonterminal(&spec, &mdp) {
        let a = rspmn_action(&spec, &model, &table, s, spec.horizon).unwrap();
        assert_eq!(a, vi.action(spec.horizon, s), "state {s}");
    }
}

#[test]
fn learning_is_deterministic() {
    let spec = GridSpec::grid_3x3();
    let data = generate_dataset(&spec, 3_000, 5, true).unwrap();
    let a = learn_rspmn(&data, &spec.order(), &RspmnParams::default()).unwrap();
    let b = learn_rspmn(&data, &spec.order(), &RspmnParams::default()).unwrap();
    assert_eq!(model_to_json(&a).unwrap(), model_to_json(&b).unwrap());
}

#[test]
fn csv_to_model_file_and_back() {
    let spec = GridSpec::grid_2x2();
    let data = generate_dataset(&spec, 2_000, 3, true).unwrap();
    let mut csv = Vec::new();
    data.write_csv(&mut csv).unwrap();
    let order = OrderSpec::from_order(&spec.order(), &spec.variables());
    let (read, partial) = read_dataset(csv.as_slice(), &order).unwrap();
    assert_eq!(read.episodes, data.episodes);

    let learned = learn_rspmn_staged(&read, &partial, &RspmnParams::default()).unwrap();
    assert_eq!(learned.model.metadata.horizon, Some(spec.horizon));
    assert!(learned.report.final_template_nodes <= learned.report.initial_template_nodes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&learned.model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert!(verify_unfolded(&loaded, 3).unwrap().passed());
    let (ll, floored) = log_likelihood(&loaded, &read).unwrap();
    assert!(ll.is_finite() && ll < 0.0);
    assert_eq!(floored, 0);
}

#[test]
fn em_never_lowers_training_likelihood() {
    let spec = GridSpec::slippery_3x3();
    let data = generate_dataset(&spec, 3_000, 8, true).unwrap();
    let learned = learn_rspmn_staged(&data, &spec.order(), &RspmnParams::default()).unwrap();
    let (before, _) = log_likelihood(&learned.initial, &data).unwrap();
    let (after, _) = log_likelihood(&learned.model, &data).unwrap();
    assert!(after >= before - 1e-9, "{before} -> {after}");
}

#[test]
fn bad_inputs_are_errors() {
    let spec = GridSpec::grid_2x2();
    let model = learned_grid(&spec, 1_000, 2);
    assert!(matches!(evaluate_meu(&model, 0, None), Err(Error::ZeroHorizon)));
    let mut ev = spec.evidence((0, 0));
    ev.set(0, 9);
    assert!(matches!(evaluate_meu(&model, 2, Some(&ev)), Err(Error::ValueOutOfRange { .. })));
    assert!(rspmn::io::model_from_json("{\"version\": 99}").is_err());
}
