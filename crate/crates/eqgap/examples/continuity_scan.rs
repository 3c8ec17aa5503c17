//! Probe an identified model for discontinuous response.
//!
//! A model trained on a handful of discrete load steps could in principle
//! behave wildly between them. This scan re-solves the forward problem with
//! the identified material at many fine stretch increments and checks that
//! the reaction curve has no jump larger than twice the mean increment.

use eqgap::datagen::{
    default_neo_hookean, default_strip_config, stretch_ramp, Geometry, LoadProgram,
};
use eqgap::kinematics::KinematicMode;
use eqgap::material::Model;
use eqgap::training::{
    continuity_scan, split_dataset, train, Corpus, Experiment, OptimConfig, SplitConfig,
};

fn main() -> eqgap::Result<()> {
    let mut config = default_strip_config(default_neo_hookean());
    config.geometry = Geometry::Strip {
        width: 10.0,
        height: 30.0,
        nx: 2,
        ny: 6,
    };
    config.stretches = stretch_ramp(1.4, 13);
    let generated = config.run()?;
    let mesh = generated.mesh.clone();

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
            n_train: 8,
            n_val: 3,
            source: 0,
        },
    )?;
    let init = Model::neo_hookean(KinematicMode::PlaneStrain, 1.0, 1.0)?;
    let optim = OptimConfig {
        learning_rate: 0.02,
        max_epochs: 2000,
        patience: 400,
        seed: 0,
    };
    let result = train(&init, &corpus, &split, &optim, 100.0)?;
    println!(
        "identified model after {} epochs (best validation loss {:.3e})",
        result.history.len(),
        result.best_val
    );

    // Scan far past the trained range with 4x finer increments than the
    // 13-step training program.
    let program = LoadProgram {
        grip_style: config.grips,
        mode: KinematicMode::PlaneStrain,
        stretches: vec![1.5],
    };
    let scan = continuity_scan(&result.model, &mesh, &program, 50, 1e-9, 25)?;

    println!("\n  stretch  reaction R_y [N]");
    for (s, r) in scan.stretches.iter().zip(&scan.reactions).step_by(5) {
        println!("  {s:7.3}  {r:16.6}");
    }
    println!(
        "\nmax jump {:.4} N, mean jump {:.4} N, ratio {:.3}",
        scan.max_jump.unwrap(),
        scan.mean_jump.unwrap(),
        scan.jump_ratio.unwrap()
    );
    assert!(scan.jump_ratio.unwrap() < 2.0);
    Ok(())
}
