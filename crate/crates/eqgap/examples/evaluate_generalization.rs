//! Test generalization on an unseen geometry.
//!
//! Both a Neo-Hookean model and a PANN are trained on plain-strip data whose
//! ground truth is Mooney-Rivlin, then scored on a notched strip they never
//! saw. Near the notch the material visits deformation states absent from
//! training, so the gap between the two model classes shows up exactly
//! there: Mooney-Rivlin lies outside the Neo-Hookean class but inside the
//! PANN class.

use eqgap::datagen::{
    default_mooney_rivlin, default_notched_config, default_strip_config, stretch_ramp, Geometry,
};
use eqgap::icnn::{IcnnArch, IcnnParams};
use eqgap::invariants::N_INVARIANTS;
use eqgap::kinematics::KinematicMode;
use eqgap::material::Model;
use eqgap::training::{
    evaluate, split_dataset, train, Corpus, Experiment, OptimConfig, SplitConfig,
};

fn main() -> eqgap::Result<()> {
    let mut strip = default_strip_config(default_mooney_rivlin());
    strip.geometry = Geometry::Strip {
        width: 10.0,
        height: 30.0,
        nx: 4,
        ny: 12,
    };
    strip.stretches = stretch_ramp(1.4, 26);
    let mut notched = default_notched_config(default_mooney_rivlin());
    notched.stretches = stretch_ramp(1.3, 10);
    let strip_data = strip.run()?;
    let notched_data = notched.run()?;

    let corpus = Corpus::new(vec![
        Experiment {
            name: "strip".to_string(),
            mesh: strip_data.mesh,
            dataset: strip_data.dataset,
            reaction_sets: vec!["top".to_string()],
            fixed_sets: vec!["bottom".to_string()],
        },
        Experiment {
            name: "notched".to_string(),
            mesh: notched_data.mesh,
            dataset: notched_data.dataset,
            reaction_sets: vec!["top".to_string()],
            fixed_sets: vec!["bottom".to_string()],
        },
    ])?;
    // Train and validation steps come from the strip only; every notched
    // step is held out as test.
    let split = split_dataset(&corpus.step_counts(), &SplitConfig::default())?;
    let optim = OptimConfig {
        learning_rate: 0.01,
        max_epochs: 1500,
        patience: 300,
        seed: 0,
    };

    let nh_init = Model::neo_hookean(KinematicMode::PlaneStrain, 1.0, 1.0)?;
    let nh = train(&nh_init, &corpus, &split, &optim, 100.0)?;

    let arch = IcnnArch::new(N_INVARIANTS, vec![8], true)?;
    let pann_init = Model::pann(IcnnParams::init(arch, 0)?, KinematicMode::PlaneStrain);
    let pann = train(&pann_init, &corpus, &split, &optim, 100.0)?;

    let nh_eval = evaluate(&nh.model, &corpus, &split.test, 100.0)?;
    let pann_eval = evaluate(&pann.model, &corpus, &split.test, 100.0)?;

    println!("test set: {} notched-strip steps\n", nh_eval.reports.len());
    println!("model        mean loss       median inner [N^2]");
    println!(
        "neo-hookean  {:14.6e}  {:18.6e}",
        nh_eval.mean_loss, nh_eval.median_inner
    );
    println!(
        "pann         {:14.6e}  {:18.6e}",
        pann_eval.mean_loss, pann_eval.median_inner
    );
    println!(
        "\npann / neo-hookean loss ratio: {:.3}",
        pann_eval.mean_loss / nh_eval.mean_loss
    );
    assert!(pann_eval.mean_loss < nh_eval.mean_loss);
    Ok(())
}
