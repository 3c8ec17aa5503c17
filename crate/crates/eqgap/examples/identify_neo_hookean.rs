//! Recover Neo-Hookean moduli from full-field data without stress labels.
//!
//! Generates a clean uniaxial strip test with mu* = 0.4 MPa, lambda_v* = 4,
//! then fits a Neo-Hookean model started from (1, 1) by minimizing the
//! equilibrium gap. Only displacements and the grip reaction enter the loss;
//! the recovered moduli should land on the ground truth.

use eqgap::datagen::{default_strip_config, stretch_ramp, Geometry, GroundTruthMaterial};
use eqgap::kinematics::KinematicMode;
use eqgap::material::Model;
use eqgap::training::{split_dataset, train, Corpus, Experiment, OptimConfig, SplitConfig};

fn main() -> eqgap::Result<()> {
    let (mu_true, lambda_true) = (0.4, 4.0);
    let mut config = default_strip_config(GroundTruthMaterial::NeoHookean {
        mu: mu_true,
        lambda_v: lambda_true,
    });
    // A coarse mesh keeps this example quick; identification quality does
    // not depend on mesh density for homogeneous ground truth.
    config.geometry = Geometry::Strip {
        width: 10.0,
        height: 30.0,
        nx: 4,
        ny: 12,
    };
    config.stretches = stretch_ramp(1.4, 26);
    let generated = config.run()?;

    let corpus = Corpus::new(vec![Experiment {
        name: "strip".to_string(),
        mesh: generated.mesh,
        dataset: generated.dataset,
        reaction_sets: vec!["top".to_string()],
        fixed_sets: vec!["bottom".to_string()],
    }])?;
    let split = split_dataset(
        &corpus.step_counts(),
        &SplitConfig {
            n_train: 20,
            n_val: 6,
            source: 0,
        },
    )?;

    let init = Model::neo_hookean(KinematicMode::PlaneStrain, 1.0, 1.0)?;
    let optim = OptimConfig {
        learning_rate: 0.02,
        max_epochs: 3000,
        patience: 600,
        seed: 0,
    };
    let result = train(&init, &corpus, &split, &optim, 100.0)?;

    let fitted = match &result.model {
        Model::NeoHookean(nh) => nh,
        Model::Pann(_) => unreachable!("initialized as Neo-Hookean"),
    };
    println!(
        "ran {} epochs, best validation loss {:.3e} at epoch {}",
        result.history.len(),
        result.best_val,
        result.best_epoch
    );
    println!(
        "mu:       true {:.4}  recovered {:.4}  ({:+.2}%)",
        mu_true,
        fitted.mu(),
        100.0 * (fitted.mu() - mu_true) / mu_true
    );
    println!(
        "lambda_v: true {:.4}  recovered {:.4}  ({:+.2}%)",
        lambda_true,
        fitted.lambda_v(),
        100.0 * (fitted.lambda_v() - lambda_true) / lambda_true
    );
    assert!((fitted.mu() - mu_true).abs() / mu_true < 0.01);
    Ok(())
}
