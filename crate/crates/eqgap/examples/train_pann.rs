//! Train a physics-augmented ICNN energy on synthetic strip data.
//!
//! The ground truth is Mooney-Rivlin, which no Neo-Hookean fit can match
//! exactly. A small input-convex network over the invariants
//! (I1, I2, J, -J) learns the energy from displacements and one reaction
//! force per step; convexity and the stress-free reference state are built
//! into the architecture, not learned.

use eqgap::datagen::{default_mooney_rivlin, default_strip_config, stretch_ramp, Geometry};
use eqgap::icnn::{IcnnArch, IcnnParams};
use eqgap::invariants::N_INVARIANTS;
use eqgap::material::Model;
use eqgap::training::{split_dataset, train, Corpus, Experiment, OptimConfig, SplitConfig};

fn main() -> eqgap::Result<()> {
    let mut config = default_strip_config(default_mooney_rivlin());
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
    let split = split_dataset(&corpus.step_counts(), &SplitConfig::default())?;

    let arch = IcnnArch::new(N_INVARIANTS, vec![8], true)?;
    println!(
        "architecture: {} -> {:?} -> 1, {} trainable parameters",
        N_INVARIANTS,
        arch.widths,
        arch.count_parameters()
    );
    let params = IcnnParams::init(arch, 0)?;
    let init = Model::pann(params, config.mode);

    let optim = OptimConfig {
        learning_rate: 0.01,
        max_epochs: 800,
        patience: 200,
        seed: 0,
    };
    let result = train(&init, &corpus, &split, &optim, 100.0)?;

    println!("\nepoch  train loss      validation loss");
    let show = [0, 1, 2, 3, 4];
    for &e in &show {
        let r = &result.history[e];
        println!(
            "{:5}  {:14.6e}  {:14.6e}",
            r.epoch, r.train_loss, r.val_loss
        );
    }
    println!("  ...");
    let last = result.history.last().unwrap();
    println!(
        "{:5}  {:14.6e}  {:14.6e}",
        last.epoch, last.train_loss, last.val_loss
    );
    println!(
        "\nbest validation loss {:.6e} at epoch {} ({} epochs run)",
        result.best_val,
        result.best_epoch,
        result.history.len()
    );
    assert!(result.best_val < result.history[0].val_loss / 100.0);
    Ok(())
}
