//! Checkpoints: a manifest naming every parameter with shape and byte
//! offset, the parameter payload, optimizer moments, and the exact sampler
//! position. Save -> load -> save is byte-identical and a resumed run
//! continues bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::TrainError;
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::{read_tensor, record_len, write_tensor, Tensor};
use crate::train::{AdamState, TrainState};

const FORMAT: &str = "gait-checkpoint-v1";

pub fn save<T: Scalar>(state: &TrainState<T>, dir: &Path) -> Result<(), TrainError> {
    let p = |pb: &Path| pb.display().to_string();
    fs::create_dir_all(dir).map_err(|e| TrainError::io(p(dir), e))?;

    let mut manifest = String::new();
    manifest.push_str(&format!("format={FORMAT}\n"));
    manifest.push_str(&format!("step={}\n", state.step));
    manifest.push_str(&format!("master_seed={}\n", state.master_seed));
    manifest.push_str(&format!("sampler_word_pos={}\n", state.sampler.get_word_pos()));
    manifest.push_str(&format!("adam_steps={}\n", state.adam.steps));
    manifest.push_str(&format!("params={}\n", state.params.entries().len()));

    let mut params_bin = Vec::new();
    for param in state.params.entries() {
        let shape_txt: Vec<String> = param.shape.iter().map(|e| e.to_string()).collect();
        manifest.push_str(&format!(
            "param {} {} offset={} len={}\n",
            param.name,
            shape_txt.join("x"),
            params_bin.len(),
            record_len(&param.shape),
        ));
        let t = Tensor::from_shared(&param.shape, param.data.clone(), false)
            .expect("stored parameter is consistent");
        write_tensor(&mut params_bin, &t).map_err(|e| TrainError::io("params.bin", e))?;
    }

    let mut moments_bin = Vec::new();
    for (i, param) in state.params.entries().iter().enumerate() {
        for buf in [&state.adam.m[i], &state.adam.v[i]] {
            let t = Tensor::from_vec(&param.shape, buf.clone())
                .map_err(|e| TrainError::checkpoint(p(dir), e.to_string()))?;
            write_tensor(&mut moments_bin, &t).map_err(|e| TrainError::io("moments.bin", e))?;
        }
    }

    let write_file = |name: &str, bytes: &[u8]| -> Result<(), TrainError> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| TrainError::io(p(&path), e))?;
        f.write_all(bytes).map_err(|e| TrainError::io(p(&path), e))
    };
    write_file("manifest.txt", manifest.as_bytes())?;
    write_file("params.bin", &params_bin)?;
    write_file("moments.bin", &moments_bin)?;
    Ok(())
}

/// Load a checkpoint against a template parameter set (built from the run
/// config). Any name or shape mismatch is rejected naming the first
/// differing entry.
pub fn load<T: Scalar>(dir: &Path, template: &ModelParams<T>) -> Result<TrainState<T>, TrainError> {
    let p = |pb: &Path| pb.display().to_string();
    let manifest_path = dir.join("manifest.txt");
    let text =
        fs::read_to_string(&manifest_path).map_err(|e| TrainError::io(p(&manifest_path), e))?;

    let mut step = None;
    let mut master_seed = None;
    let mut word_pos: Option<u128> = None;
    let mut adam_steps = None;
    let mut listed: Vec<(String, Vec<usize>)> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("param ") {
            let mut parts = rest.split_whitespace();
            let (Some(name), Some(shape_txt)) = (parts.next(), parts.next()) else {
                return Err(TrainError::checkpoint(p(dir), format!("bad param line: {line}")));
            };
            let shape: Vec<usize> = shape_txt
                .split('x')
                .map(|s| s.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| {
                    TrainError::checkpoint(p(dir), format!("bad shape in line: {line}"))
                })?;
            listed.push((name.to_string(), shape));
        } else if let Some((key, value)) = line.split_once('=') {
            match key {
                "format" => {
                    if value != FORMAT {
                        return Err(TrainError::checkpoint(
                            p(dir),
                            format!("unsupported format {value}"),
                        ));
                    }
                }
                "step" => step = value.parse().ok(),
                "master_seed" => master_seed = value.parse().ok(),
                "sampler_word_pos" => word_pos = value.parse().ok(),
                "adam_steps" => adam_steps = value.parse().ok(),
                _ => {}
            }
        }
    }
    let (Some(step), Some(master_seed), Some(word_pos), Some(adam_steps)) =
        (step, master_seed, word_pos, adam_steps)
    else {
        return Err(TrainError::checkpoint(p(dir), "incomplete manifest header"));
    };

    // Validate against the template: first differing entry wins.
    for (i, tp) in template.entries().iter().enumerate() {
        match listed.get(i) {
            None => {
                return Err(TrainError::checkpoint(
                    p(dir),
                    format!("missing parameter {} (entry {})", tp.name, i),
                ))
            }
            Some((name, shape)) => {
                if *name != tp.name || *shape != tp.shape {
                    return Err(TrainError::checkpoint(
                        p(dir),
                        format!(
                            "parameter mismatch at entry {i}: checkpoint has {name} {shape:?}, \
                             config expects {} {:?}",
                            tp.name, tp.shape
                        ),
                    ));
                }
            }
        }
    }
    if listed.len() != template.entries().len() {
        return Err(TrainError::checkpoint(
            p(dir),
            format!(
                "checkpoint has {} parameters, config expects {}",
                listed.len(),
                template.entries().len()
            ),
        ));
    }

    let params_path = dir.join("params.bin");
    let bytes = fs::read(&params_path).map_err(|e| TrainError::io(p(&params_path), e))?;
    let mut cursor: &[u8] = &bytes;
    let mut params = template.clone();
    for (i, (_, shape)) in listed.iter().enumerate() {
        let t: Tensor<T> = read_tensor(&mut cursor)
            .map_err(|e| TrainError::checkpoint(p(&params_path), e.to_string()))?;
        if t.shape() != shape.as_slice() {
            return Err(TrainError::checkpoint(
                p(&params_path),
                format!("record {i} shape {:?} != manifest {:?}", t.shape(), shape),
            ));
        }
        *params.data_mut(i) = t.to_vec();
    }
    if !cursor.is_empty() {
        return Err(TrainError::checkpoint(
            p(&params_path),
            format!("{} trailing bytes", cursor.len()),
        ));
    }

    let moments_path = dir.join("moments.bin");
    let bytes = fs::read(&moments_path).map_err(|e| TrainError::io(p(&moments_path), e))?;
    let mut cursor: &[u8] = &bytes;
    let mut adam = AdamState::new(&params);
    adam.steps = adam_steps;
    for (i, (_, shape)) in listed.iter().enumerate() {
        for slot in 0..2 {
            let t: Tensor<T> = read_tensor(&mut cursor)
                .map_err(|e| TrainError::checkpoint(p(&moments_path), e.to_string()))?;
            if t.shape() != shape.as_slice() {
                return Err(TrainError::checkpoint(
                    p(&moments_path),
                    format!("moment record {i}.{slot} has shape {:?}", t.shape()),
                ));
            }
            if slot == 0 {
                adam.m[i] = t.to_vec();
            } else {
                adam.v[i] = t.to_vec();
            }
        }
    }

    let mut sampler = crate::seeds::substream(master_seed, "sampling");
    sampler.set_word_pos(word_pos);

    Ok(TrainState {
        master_seed,
        params,
        adam,
        step,
        sampler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{micro_config, ModelParams};
    use crate::train::TrainState;

    #[test]
    fn save_load_save_is_byte_identical() {
        let cfg = micro_config();
        let state = TrainState::<f64>::new(&cfg, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        save(&state, &a).unwrap();
        let template = ModelParams::<f64>::init(&cfg, 0).unwrap();
        let loaded = load(&a, &template).unwrap();
        save(&loaded, &b).unwrap();
        for name in ["manifest.txt", "params.bin", "moments.bin"] {
            let x = std::fs::read(a.join(name)).unwrap();
            let y = std::fs::read(b.join(name)).unwrap();
            assert_eq!(x, y, "{name} differs");
        }
    }

    #[test]
    fn truncated_params_rejected() {
        let cfg = micro_config();
        let state = TrainState::<f64>::new(&cfg, 22).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        save(&state, &a).unwrap();
        let path = a.join("params.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, bytes).unwrap();
        let template = ModelParams::<f64>::init(&cfg, 0).unwrap();
        assert!(load(&a, &template).is_err());
    }

    #[test]
    fn shape_mismatch_names_first_differing_entry() {
        let cfg = micro_config();
        let state = TrainState::<f64>::new(&cfg, 23).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        save(&state, &a).unwrap();
        let mut other = micro_config();
        other.embed_dim = 4;
        let template = ModelParams::<f64>::init(&other, 0).unwrap();
        let err = match load(&a, &template) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("mismatched template must be rejected"),
        };
        assert!(err.contains("head0.weight"), "{err}");
    }
}
