use std::fs;
use std::path::PathBuf;

use clap::Args;
use loopgen::io::{read_ppm, TensorDump};
use loopgen::{Error, LoopReport, Mat, Result};

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct EvalArgs {
    /// Directory of `frame_*.ppm` files.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Tensor dump with a 2-D `frames` record.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

fn frames_from_dir(dir: &std::path::Path) -> Result<Mat<f64>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("frames directory {} does not exist", dir.display())));
    }
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".ppm"))
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Config(format!("no frame_*.ppm files in {}", dir.display())));
    }
    let mut rows = Vec::with_capacity(names.len());
    let mut size = None;
    for path in &names {
        let (w, h, gray) = read_ppm(path)?;
        if *size.get_or_insert((w, h)) != (w, h) {
            return Err(Error::Config(format!("{} has a different size", path.display())));
        }
        rows.push(gray.iter().map(|&g| f64::from(g) / 255.0).collect::<Vec<_>>());
    }
    Mat::from_rows(&rows)
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let frames = match (&args.frames, &args.dump) {
        (Some(dir), _) => frames_from_dir(dir)?,
        (None, Some(path)) => {
            if !path.is_file() {
                return Err(Error::Config(format!("dump {} does not exist", path.display())));
            }
            TensorDump::read(path)?.require("frames")?.to_mat()?
        }
        (None, None) => return Err(Error::Config("pass --frames or --dump".into())),
    };
    print!("{}", LoopReport::compute(&frames)?.to_text());
    Ok(())
}
