use std::path::PathBuf;

use clap::Args;
use loopgen::io::{load_checkpoint, save_checkpoint, write_loss_csv};
use loopgen::{Result, TrainConfig, TrainState};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint to write.
    #[arg(long, default_value = "toy.llt")]
    pub out: PathBuf,
    /// Loss curve CSV; defaults to the checkpoint path with a `.loss.csv` suffix.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Checkpoint to continue from; the step counter carries on.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::standard(args.seed);
    cfg.steps = args.steps;
    cfg.lr = args.lr;
    cfg.batch = args.batch;
    let mut state: TrainState<f32> = match &args.resume {
        Some(path) => {
            if !path.is_file() {
                return Err(loopgen::Error::Config(format!(
                    "--resume {} does not exist",
                    path.display()
                )));
            }
            let state = load_checkpoint(path)?;
            cfg.arch = *state.params.arch();
            state
        }
        None => TrainState::new(&cfg)?,
    };
    let first = state.step;
    state.run(&cfg, args.steps)?;
    save_checkpoint(&state, &args.out)?;
    let csv = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    write_loss_csv(&csv, &state.losses)?;
    let last = state.losses.last().map_or(f64::NAN, |l| l.1);
    println!(
        "trained steps {first}..{} final_loss={last} checkpoint={} loss_csv={}",
        state.step,
        args.out.display(),
        csv.display()
    );
    Ok(())
}
