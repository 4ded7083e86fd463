use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use loopgen::metrics::{median, sign_test, SignTest};
use loopgen::{LoopReport, Result, RopeMode, Runtime};

use crate::settings::RunArgs;

pub const SHIFTS: [usize; 4] = [1, 2, 6, 12];
pub const MODES: [RopeMode; 2] = [RopeMode::Fixed, RopeMode::Shifted];

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Seeds per cell; every cell uses `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Output directory.
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

struct Cell {
    s: usize,
    mode: RopeMode,
    reports: Vec<LoopReport>,
}

impl Cell {
    fn ratios(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.seam_gap_ratio).collect()
    }

    fn median_of(&self, f: impl Fn(&LoopReport) -> f64) -> f64 {
        median(&self.reports.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    }

    fn text(&self) -> String {
        let ratios: Vec<String> = self.ratios().iter().map(|r| r.to_string()).collect();
        let mut t = String::new();
        let _ = writeln!(t, "s={}", self.s);
        let _ = writeln!(t, "rope_mode={}", self.mode);
        let _ = writeln!(t, "seeds={}", self.reports.len());
        let _ = writeln!(t, "median_seam_gap_ratio={}", self.median_of(|r| r.seam_gap_ratio));
        let _ = writeln!(t, "median_first_last_mse={}", self.median_of(|r| r.first_last_mse));
        let _ = writeln!(t, "median_smoothness_proxy={}", self.median_of(|r| r.smoothness_proxy));
        let _ = writeln!(t, "median_dynamic_proxy={}", self.median_of(|r| r.dynamic_proxy));
        let _ = writeln!(t, "seam_gap_ratios={}", ratios.join(","));
        t
    }
}

fn find(cells: &[Cell], s: usize, mode: RopeMode) -> &Cell {
    cells
        .iter()
        .find(|c| c.s == s && c.mode == mode)
        .expect("every sweep cell is present")
}

fn direction(name: &str, a: &Cell, b: &Cell) -> String {
    let pairs: Vec<(f64, f64)> = a.ratios().into_iter().zip(b.ratios()).collect();
    let SignTest {
        wins,
        losses,
        ties,
        p_value,
    } = sign_test(&pairs);
    let (ma, mb) = (a.median_of(|r| r.seam_gap_ratio), b.median_of(|r| r.seam_gap_ratio));
    let holds = ma <= mb && p_value < 0.05;
    format!(
        "{name}: median {ma} vs {mb}, wins={wins} losses={losses} ties={ties} p={p_value} holds={}\n",
        u8::from(holds)
    )
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let base = args.run.resolve()?;
    if args.seeds == 0 {
        return Err(loopgen::Error::Config("--seeds must be positive".into()));
    }
    let runtime = Runtime::<f64>::from_config(&base)?;
    let mut cells = Vec::new();
    for s in SHIFTS {
        for mode in MODES {
            let mut reports = Vec::with_capacity(args.seeds);
            for k in 0..args.seeds as u64 {
                let mut cfg = base.clone();
                cfg.s = s;
                cfg.rope_mode = mode;
                cfg.seed = base.seed + k;
                let generation = runtime.generate(&cfg)?;
                reports.push(LoopReport::compute(&generation.video.frames)?);
            }
            cells.push(Cell { s, mode, reports });
        }
    }

    fs::create_dir_all(&args.out)?;
    let mut csv = String::from(
        "s,rope_mode,seeds,median_seam_gap_ratio,median_first_last_mse,median_smoothness_proxy,median_dynamic_proxy\n",
    );
    for c in &cells {
        fs::write(args.out.join(format!("report_s{}_{}.txt", c.s, c.mode)), c.text())?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            c.s,
            c.mode,
            c.reports.len(),
            c.median_of(|r| r.seam_gap_ratio),
            c.median_of(|r| r.first_last_mse),
            c.median_of(|r| r.smoothness_proxy),
            c.median_of(|r| r.dynamic_proxy)
        );
    }
    fs::write(args.out.join("summary.csv"), &csv)?;
    let directions = direction(
        "fixed_le_shifted_at_s6",
        find(&cells, 6, RopeMode::Fixed),
        find(&cells, 6, RopeMode::Shifted),
    ) + &direction(
        "s6_le_s1_fixed",
        find(&cells, 6, RopeMode::Fixed),
        find(&cells, 1, RopeMode::Fixed),
    );
    fs::write(args.out.join("directions.txt"), &directions)?;
    print!("{csv}{directions}");
    Ok(())
}
