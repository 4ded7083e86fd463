//! Toy-model checkpoints as `LLT1` containers.
//!
//! A `header` record (f64) holds the seven architecture integers followed by
//! the completed step count and the optimizer update count. Each weight
//! tensor is stored under its layout name, and the optimizer moments under
//! `adam.m.<name>` and `adam.v.<name>`.

use std::fmt::Write as _;
use std::path::Path;

use super::tensor_dump::{TensorData, TensorDump, TensorRecord};
use crate::denoiser::{Adam, ToyArch, ToyTransformerParams, TrainState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const HEADER: &str = "header";

fn dims(shape: &[usize]) -> Result<Vec<u32>> {
    shape
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::format("tensor dimension exceeds u32")))
        .collect()
}

pub fn write_checkpoint<T: Scalar>(state: &TrainState<T>) -> Result<TensorDump> {
    let arch = state.params.arch();
    let mut header: Vec<f64> = arch.to_header().iter().map(|&v| v as f64).collect();
    header.push(state.step as f64);
    header.push(state.adam.t as f64);
    let mut dump = TensorDump::new();
    dump.push(TensorRecord::new(HEADER, vec![header.len() as u32], TensorData::F64(header))?)?;
    for (name, shape, values) in state.params.named_tensors() {
        dump.push(TensorRecord::new(name, dims(shape)?, TensorData::from_slice(values))?)?;
    }
    for (prefix, flat) in [("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)] {
        for (name, shape, values) in state.params.split_named(flat) {
            dump.push(TensorRecord::new(
                format!("{prefix}{name}"),
                dims(shape)?,
                TensorData::from_slice(values),
            )?)?;
        }
    }
    Ok(dump)
}

fn header_int(v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
        Ok(v as usize)
    } else {
        Err(Error::format(format!("checkpoint header {what} is not an integer: {v}")))
    }
}

/// Rebuilds a resumable training state; weights are converted to `T`.
pub fn read_checkpoint<T: Scalar>(dump: &TensorDump) -> Result<TrainState<T>> {
    let header: Vec<f64> = dump.require(HEADER)?.data.to_vec();
    if header.len() != 9 {
        return Err(Error::format(format!(
            "checkpoint header has {} values, expected 9",
            header.len()
        )));
    }
    let ints = header
        .iter()
        .map(|&v| header_int(v, "entry"))
        .collect::<Result<Vec<_>>>()?;
    let arch = ToyArch::from_header(&ints[..7])?;
    let mut params = ToyTransformerParams::<T>::zeros(arch)?;
    let mut m = vec![T::zero(); params.param_count()];
    let mut v = vec![T::zero(); params.param_count()];
    let layout: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .map(|(n, s, _)| (n.to_string(), s.to_vec()))
        .collect();
    for (name, shape) in &layout {
        let rec = dump.require(name)?;
        let want: Vec<u32> = dims(shape)?;
        if rec.dims != want {
            return Err(Error::format(format!(
                "tensor `{name}` has dims {:?}, expected {want:?}",
                rec.dims
            )));
        }
        params.set_tensor(name, shape, &rec.data.to_vec::<T>())?;
        params.set_in_flat(&mut m, name, &dump.require(&format!("adam.m.{name}"))?.data.to_vec::<T>())?;
        params.set_in_flat(&mut v, name, &dump.require(&format!("adam.v.{name}"))?.data.to_vec::<T>())?;
    }
    let expected = 1 + 3 * layout.len();
    if dump.len() != expected {
        return Err(Error::format(format!(
            "checkpoint has {} records, expected {expected}",
            dump.len()
        )));
    }
    if !params.all_finite() {
        return Err(Error::format("checkpoint weights are not finite"));
    }
    let mut adam = Adam::new(params.param_count(), T::lit(1e-3));
    adam.m = m;
    adam.v = v;
    adam.t = ints[8];
    Ok(TrainState {
        params,
        adam,
        step: ints[7],
        losses: Vec::new(),
    })
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    write_checkpoint(state)?.write(path)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    read_checkpoint(&TensorDump::read(path)?)
}

/// `step,loss` CSV with a header line.
pub fn write_loss_csv(path: &Path, losses: &[(usize, f64)]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (step, loss) in losses {
        let _ = writeln!(s, "{step},{loss}");
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ToyArch {
        ToyArch {
            layers: 1,
            width: 8,
            heads: 2,
            latent_dim: 2,
            mlp_ratio: 2,
            max_context: 4,
            classes: 2,
        }
    }

    fn state() -> TrainState<f32> {
        let params = ToyTransformerParams::init(arch(), 3).unwrap();
        let n = params.param_count();
        let mut adam = Adam::new(n, 1e-3f32);
        adam.m = (0..n).map(|i| i as f32 * 1e-3).collect();
        adam.v = (0..n).map(|i| i as f32 * 2e-3).collect();
        adam.t = 17;
        TrainState {
            params,
            adam,
            step: 17,
            losses: vec![],
        }
    }

    #[test]
    fn round_trip() {
        let st = state();
        let dump = write_checkpoint(&st).unwrap();
        let back: TrainState<f32> = read_checkpoint(&TensorDump::from_bytes(&dump.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.params.data(), st.params.data());
        assert_eq!(back.adam.m, st.adam.m);
        assert_eq!(back.adam.v, st.adam.v);
        assert_eq!((back.step, back.adam.t), (17, 17));
        assert_eq!(write_checkpoint(&back).unwrap().to_bytes(), dump.to_bytes());
        let wide: TrainState<f64> = read_checkpoint(&dump).unwrap();
        assert_eq!(wide.params.data()[5], f64::from(st.params.data()[5]));
    }

    #[test]
    fn missing_or_extra_records_rejected() {
        let dump = write_checkpoint(&state()).unwrap();
        let mut partial = TensorDump::new();
        for r in dump.records().iter().filter(|r| r.name != "w_out") {
            partial.push(r.clone()).unwrap();
        }
        assert!(read_checkpoint::<f32>(&partial).is_err());
        let mut extra = dump.clone();
        extra
            .push(TensorRecord::new("stray", vec![1], TensorData::F32(vec![0.0])).unwrap())
            .unwrap();
        assert!(read_checkpoint::<f32>(&extra).is_err());
        assert!(read_checkpoint::<f32>(&TensorDump::new()).is_err());
    }

    #[test]
    fn loss_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        write_loss_csv(&p, &[(0, 1.5), (1, 0.25)]).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "step,loss\n0,1.5\n1,0.25\n");
    }
}
