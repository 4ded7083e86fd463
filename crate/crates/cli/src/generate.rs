use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use loopgen::io::{frame_to_gray, squarest_factorization, write_ppm, Normalization, TensorDump, TensorRecord};
use loopgen::{Generation, GenerationConfig, LoopReport, Result, Runtime};

use crate::settings::RunArgs;

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let runtime = Runtime::<f64>::from_config(&cfg)?;
    let generation = runtime.generate(&cfg)?;
    let report = write_outputs(&args.out, &cfg, &generation)?;
    print!("{report}");
    Ok(())
}

fn is_frame_file(name: &str) -> bool {
    name.starts_with("frame_") && name.ends_with(".ppm")
}

/// Writes `frame_%05d.ppm`, `latents.llt` and `report.txt`; returns the
/// report text.
pub fn write_outputs(out: &Path, cfg: &GenerationConfig, generation: &Generation<f64>) -> Result<String> {
    fs::create_dir_all(out)?;
    for entry in fs::read_dir(out)? {
        let entry = entry?;
        if entry.file_name().to_str().is_some_and(is_frame_file) {
            fs::remove_file(entry.path())?;
        }
    }
    let frames = &generation.video.frames;
    let norm = Normalization::fit(frames);
    let (h, w) = squarest_factorization(frames.cols());
    for (i, frame) in frames.iter_rows().enumerate() {
        write_ppm(&out.join(format!("frame_{i:05}.ppm")), &frame_to_gray(frame, &norm), w, h)?;
    }

    let mut dump = TensorDump::new();
    dump.push(TensorRecord::from_mat("latents", &generation.latents)?)?;
    dump.push(TensorRecord::from_mat("frames", frames)?)?;
    dump.write(&out.join("latents.llt"))?;

    let mut text = LoopReport::compute(frames)?.to_text();
    let _ = writeln!(text, "norm_min={}", norm.min);
    let _ = writeln!(text, "norm_max={}", norm.max);
    let _ = writeln!(text, "mode={}", cfg.mode);
    let _ = writeln!(text, "N={}", cfg.n);
    let _ = writeln!(text, "f={}", cfg.f);
    let _ = writeln!(text, "s={}", cfg.s);
    let _ = writeln!(text, "seed={}", cfg.seed);
    let _ = writeln!(text, "rope_mode={}", cfg.rope_mode);
    let _ = writeln!(text, "denoiser={}", cfg.denoiser);
    let _ = writeln!(text, "decode={}", cfg.decode_mode());
    fs::write(out.join("report.txt"), &text)?;
    Ok(text)
}
