use synchro::harness::{export_csv, parse_csv, plan, run_comparison, run_model, Scenario, Signal, CSV_HEADER};
use synchro::models::ModelKind;
use synchro::params::MachineParameters;

fn short_case1(duration: f64) -> Scenario {
    Scenario::builtin("case1").unwrap().with_duration(duration)
}

#[test]
fn case1_elemental_csv_has_one_row_per_centisecond() {
    let p = MachineParameters::table_ii();
    let s = Scenario::builtin("case1").unwrap();
    let plan = plan(&p, &s).unwrap();
    let run = run_model(ModelKind::Elemental, &p, &plan, &s).unwrap();
    assert_eq!(run.samples.len(), 9001);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("elemental.csv");
    export_csv(&run.samples, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(text.lines().count(), 9002);
    let back = parse_csv(&text).unwrap();
    assert_eq!(back, run.samples);
}

#[test]
fn reduced_models_start_at_the_reference_operating_point() {
    let p = MachineParameters::table_ii();
    let s = short_case1(1.0);
    let plan = plan(&p, &s).unwrap();
    for kind in ModelKind::REDUCED {
        let run = run_model(kind, &p, &plan, &s).unwrap();
        let first = run.samples[0];
        assert!((first.omega - p.omega0).abs() < 1e-9, "{kind}");
        assert!((first.v_l - 1.0).abs() < 1e-3, "{kind}: V_l = {}", first.v_l);
    }
}

#[test]
fn damped_and_semi_damped_share_statics_on_a_round_rotor() {
    let p = MachineParameters::table_ii();
    assert!(p.is_round_rotor());
    let s = short_case1(1.0);
    let plan = plan(&p, &s).unwrap();
    let a = run_model(ModelKind::Damped, &p, &plan, &s).unwrap();
    let b = run_model(ModelKind::SemiDamped, &p, &plan, &s).unwrap();
    let (x, y) = (a.samples[0], b.samples[0]);
    assert!((x.delta_deg - y.delta_deg).abs() < 1e-9);
    assert!((x.v_s - y.v_s).abs() < 1e-9);
}

#[test]
fn comparisons_are_deterministic() {
    let p = MachineParameters::table_ii();
    let mut s = short_case1(32.0);
    s.models = vec![ModelKind::Classical, ModelKind::Elemental];
    let a = run_comparison(&p, &s).unwrap();
    let b = run_comparison(&p, &s).unwrap();
    assert_eq!(a.report.to_document(), b.report.to_document());
    assert_eq!(a.reference.samples, b.reference.samples);
}

#[test]
fn load_step_slows_the_machine_and_the_exciter_holds_the_bus() {
    let p = MachineParameters::table_ii();
    let mut s = short_case1(45.0);
    s.models = vec![ModelKind::Elemental];
    let cmp = run_comparison(&p, &s).unwrap();
    let reference = &cmp.reference.samples;
    let before = synchro::harness::interpolate(reference, Signal::OmegaRpm, 29.0);
    let after = synchro::harness::interpolate(reference, Signal::OmegaRpm, 45.0);
    assert!(after < before, "{before} -> {after}");
    let v_end = synchro::harness::interpolate(reference, Signal::VL, 45.0);
    assert!((v_end - 1.0).abs() < 1e-2, "V_l = {v_end}");
    let r = cmp.report.get(ModelKind::Elemental).unwrap();
    assert!(r.omega_rpm.is_finite() && r.omega_rpm > 0.0);
}
