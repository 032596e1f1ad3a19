use std::path::Path;

use mjnn_core::augment::EstimatorGains;
use mjnn_core::fixtures::scalar_toy;
use mjnn_core::io::{certificate_to_json, gains_to_json, load_gains, load_model, parse_gains};
use mjnn_core::protocol::{NodePartition, WtodConfig};
use mjnn_core::sdp::SolveStatus;
use mjnn_core::sim::{mean_square_decay, plant_error_norms, simulate, Decay, DisturbanceSignal, InitialHistory, SimConfig};
use mjnn_core::synthesis::{ccl_synthesize, verify_gains, CclConfig, SynthesisStatus};
use mjnn_core::model::TransitionCompletion;

fn example(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../examples").join(name)
}

#[test]
fn shipped_gains_drive_the_error_down() {
    let loaded = load_model(&example("paper_sec4.json")).unwrap();
    let gains = load_gains(&example("paper_sec4_gains.json"), &loaded.model, &loaded.wtod).unwrap();
    let completion = loaded.completion.unwrap();
    let d = DisturbanceSignal::DecayingSinusoid { literal_exponent: false };
    let t = simulate(&loaded.model, &loaded.wtod, &gains, &completion, &d, &InitialHistory::zero(&loaded.model), &SimConfig::new(200, 1))
        .unwrap();
    let e = plant_error_norms(&t, loaded.model.nx());
    let peak = e.iter().cloned().fold(0.0, f64::max);
    assert!(peak > 0.0 && e[200] < 1e-3 * peak, "{} vs {peak}", e[200]);
}

#[test]
fn toy_design_round_trips_through_files_and_decays() {
    let model = scalar_toy(0.9);
    let wtod = WtodConfig::identity(NodePartition::single(1));
    let r = ccl_synthesize(&model, &wtod, 3.0, &CclConfig::default()).unwrap();
    assert_eq!(r.status, SynthesisStatus::Converged);
    let text = gains_to_json(r.gains.as_ref().unwrap()).to_string();
    let gains = parse_gains(&text, &model, &wtod).unwrap();
    assert_eq!(&gains, r.gains.as_ref().unwrap());

    let cert = certificate_to_json(r.certificate.as_ref().unwrap());
    assert_eq!(cert["gamma"], 3.0);
    assert!(cert["P1"]["1,1"].is_array());

    let v = verify_gains(&model, &wtod, &gains, None, &Default::default(), &Default::default()).unwrap();
    assert_eq!(v.status, SolveStatus::Feasible);
    let completion = TransitionCompletion::from_known(&model.transitions).unwrap();
    let decay = mean_square_decay(&model, &wtod, &gains, &completion, 20, &SimConfig::new(500, 2), 1.0).unwrap();
    assert!(matches!(decay.decay, Decay::Reached(_)), "{:?}", decay.decay);

    let zero = EstimatorGains::zeros(1, 1, 2, 1);
    let open = mean_square_decay(&model, &wtod, &zero, &completion, 20, &SimConfig::new(50, 2), 1.0).unwrap();
    assert_eq!(open.decay, Decay::NoDecay);
}
