//! Select a network architecture by validation loss.
//!
//! Trains several ICNN candidates on the same data with seeds derived from
//! the architecture itself, then picks the lowest validation loss, breaking
//! ties toward fewer parameters. Smaller nets often win on smooth ground
//! truth: the larger candidates buy capacity the data cannot pay for.

use eqgap::datagen::{default_mooney_rivlin, default_strip_config, stretch_ramp, Geometry};
use eqgap::icnn::IcnnArch;
use eqgap::invariants::N_INVARIANTS;
use eqgap::training::{split_dataset, sweep, Corpus, Experiment, OptimConfig, SplitConfig};

fn main() -> eqgap::Result<()> {
    let mut config = default_strip_config(default_mooney_rivlin());
    config.geometry = Geometry::Strip {
        width: 10.0,
        height: 30.0,
        nx: 2,
        ny: 6,
    };
    config.stretches = stretch_ramp(1.4, 13);
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
            n_train: 8,
            n_val: 3,
            source: 0,
        },
    )?;

    let candidates = vec![
        IcnnArch::new(N_INVARIANTS, vec![4], false)?,
        IcnnArch::new(N_INVARIANTS, vec![8], true)?,
        IcnnArch::new(N_INVARIANTS, vec![16, 16], true)?,
    ];
    let optim = OptimConfig {
        learning_rate: 0.01,
        max_epochs: 400,
        patience: 400,
        seed: 0,
    };
    let result = sweep(&candidates, config.mode, &corpus, &split, &optim, 100.0)?;

    println!("arch            params  train loss      validation loss  selected");
    for (i, a) in result.per_arch.iter().enumerate() {
        println!(
            "{:14}  {:6}  {:14.6e}  {:15.6e}  {}",
            format!("{:?}", a.arch.widths),
            a.params,
            a.train_loss,
            a.best_val,
            if i == result.selected { "<--" } else { "" }
        );
    }
    let winner = &result.per_arch[result.selected];
    println!(
        "\nselected {:?} with {} parameters, validation loss {:.6e}",
        winner.arch.widths, winner.params, winner.best_val
    );
    Ok(())
}
