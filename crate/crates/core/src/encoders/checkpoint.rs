//! Checkpoint directories: `manifest.txt` (key=value) plus one `.avt` tensor per parameter block.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::{read_tensor, write_tensor, Tensor};
use crate::encoders::mlp::{Mlp, MlpGrads, MlpSpec, Standardizer};
use crate::encoders::model::{Gradients, TwoStreamModel};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::numeric::Matrix;

const FORMAT: &str = "avsync-checkpoint-1";
const RESERVED: [&str; 7] = [
    "format",
    "video_dims",
    "audio_dims",
    "video_seed",
    "audio_seed",
    "step",
    "has_velocity",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TwoStreamModel,
    pub velocity: Option<Gradients>,
    pub step: u64,
    /// Free-form settings stored alongside the model (sampling window, loss, …).
    pub meta: BTreeMap<String, String>,
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

fn write_vec(path: &Path, v: &[f64]) -> Result<()> {
    write_tensor(path, &Tensor::f64(vec![v.len()], v.to_vec())?)
}

fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_tensor(path, &Tensor::f64(vec![m.rows(), m.cols()], m.data().to_vec())?)
}

fn read_shaped(path: &Path, dims: &[usize]) -> Result<Vec<f64>> {
    let t = read_tensor(path)?;
    if t.dims() != dims {
        return Err(Error::format(
            "checkpoint",
            format!("{} has shape {:?}, expected {:?}", path.display(), t.dims(), dims),
        ));
    }
    Ok(t.to_f64())
}

fn write_grads(dir: &Path, prefix: &str, g: &MlpGrads) -> Result<()> {
    for (l, (w, b)) in g.weights.iter().zip(&g.biases).enumerate() {
        write_matrix(&dir.join(format!("{prefix}_layer{l}_weight.avt")), w)?;
        write_vec(&dir.join(format!("{prefix}_layer{l}_bias.avt")), b)?;
    }
    Ok(())
}

fn read_grads(dir: &Path, prefix: &str, spec: &MlpSpec) -> Result<MlpGrads> {
    let mut g = MlpGrads::zeros(spec);
    for (l, w) in spec.layer_dims.windows(2).enumerate() {
        let data = read_shaped(&dir.join(format!("{prefix}_layer{l}_weight.avt")), &[w[0], w[1]])?;
        g.weights[l] = Matrix::new(w[0], w[1], data)?;
        g.biases[l] = read_shaped(&dir.join(format!("{prefix}_layer{l}_bias.avt")), &[w[1]])?;
    }
    Ok(g)
}

fn write_mlp(dir: &Path, name: &str, m: &Mlp) -> Result<()> {
    let g = MlpGrads {
        weights: m.weights().to_vec(),
        biases: m.biases().to_vec(),
    };
    write_grads(dir, name, &g)?;
    write_vec(&dir.join(format!("{name}_input_shift.avt")), &m.input_norm().shift)?;
    write_vec(&dir.join(format!("{name}_input_scale.avt")), &m.input_norm().scale)
}

fn read_mlp(dir: &Path, name: &str, spec: MlpSpec) -> Result<Mlp> {
    let g = read_grads(dir, name, &spec)?;
    let d = spec.input_dim();
    let norm = Standardizer {
        shift: read_shaped(&dir.join(format!("{name}_input_shift.avt")), &[d])?,
        scale: read_shaped(&dir.join(format!("{name}_input_scale.avt")), &[d])?,
    };
    let mut m = Mlp::new(spec)?;
    for (l, (w, b)) in g.weights.into_iter().zip(g.biases).enumerate() {
        m.set_layer(l, w, b)?;
    }
    m.set_input_norm(norm)?;
    Ok(m)
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut kv = KeyValues::default();
        for (k, v) in &self.meta {
            if RESERVED.contains(&k.as_str()) {
                return Err(Error::arg(format!("metadata key {k} is reserved")));
            }
            kv.insert(k, v);
        }
        let (vs, as_) = (self.model.video.spec(), self.model.audio.spec());
        kv.insert("format", FORMAT);
        kv.insert("video_dims", join(&vs.layer_dims));
        kv.insert("audio_dims", join(&as_.layer_dims));
        kv.insert("video_seed", vs.init_seed);
        kv.insert("audio_seed", as_.init_seed);
        kv.insert("step", self.step);
        kv.insert("has_velocity", self.velocity.is_some());
        let manifest = dir.join("manifest.txt");
        fs::write(&manifest, kv.to_text()).map_err(|e| Error::io(&manifest, e))?;
        write_mlp(dir, "video", &self.model.video)?;
        write_mlp(dir, "audio", &self.model.audio)?;
        if let Some(v) = &self.velocity {
            write_grads(dir, "velocity_video", &v.video)?;
            write_grads(dir, "velocity_audio", &v.audio)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let kv = KeyValues::load(&dir.join("manifest.txt"))?;
        let format: String = kv.require("format")?;
        if format != FORMAT {
            return Err(Error::format("checkpoint", format!("unknown format {format:?}")));
        }
        let spec = |name: &str| -> Result<MlpSpec> {
            let spec = MlpSpec {
                layer_dims: kv
                    .get_list(&format!("{name}_dims"))?
                    .ok_or_else(|| Error::format("checkpoint", format!("missing {name}_dims")))?,
                init_seed: kv.require(&format!("{name}_seed"))?,
            };
            spec.validate()?;
            Ok(spec)
        };
        let (vs, as_) = (spec("video")?, spec("audio")?);
        let step = kv.require("step")?;
        let has_velocity: bool = kv.require("has_velocity")?;
        let model = TwoStreamModel {
            video: read_mlp(dir, "video", vs.clone())?,
            audio: read_mlp(dir, "audio", as_.clone())?,
        };
        if model.video.spec().output_dim() != model.audio.spec().output_dim() {
            return Err(Error::format("checkpoint", "stream embedding dims differ"));
        }
        let velocity = if has_velocity {
            Some(Gradients {
                video: read_grads(dir, "velocity_video", &vs)?,
                audio: read_grads(dir, "velocity_audio", &as_)?,
            })
        } else {
            None
        };
        let meta = kv
            .iter()
            .filter(|(k, _)| !RESERVED.contains(k))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Ok(Checkpoint {
            model,
            velocity,
            step,
            meta,
        })
    }
}
