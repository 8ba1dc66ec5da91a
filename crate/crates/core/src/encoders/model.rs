use crate::encoders::mlp::{ForwardCache, Mlp, MlpGrads, MlpSpec};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Video and audio encoders mapping into one shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamModel {
    pub video: Mlp,
    pub audio: Mlp,
}

pub fn init_model(video: MlpSpec, audio: MlpSpec) -> Result<TwoStreamModel> {
    video.validate()?;
    audio.validate()?;
    if video.output_dim() != audio.output_dim() {
        return Err(Error::config(format!(
            "video embedding dim {} differs from audio embedding dim {}",
            video.output_dim(),
            audio.output_dim()
        )));
    }
    Ok(TwoStreamModel {
        video: Mlp::new(video)?,
        audio: Mlp::new(audio)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub video: MlpGrads,
    pub audio: MlpGrads,
}

impl Gradients {
    pub fn zeros(model: &TwoStreamModel) -> Self {
        Gradients {
            video: MlpGrads::zeros(model.video.spec()),
            audio: MlpGrads::zeros(model.audio.spec()),
        }
    }

    /// Video parameters first, then audio, each in layer order.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.video.flat();
        v.extend(self.audio.flat());
        v
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.video.add_assign(&other.video);
        self.audio.add_assign(&other.audio);
    }

    pub fn all_finite(&self) -> bool {
        self.video.all_finite() && self.audio.all_finite()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.video.slices();
        s.extend(self.audio.slices());
        s
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.video.slices_mut();
        s.extend(self.audio.slices_mut());
        s
    }
}

impl TwoStreamModel {
    pub fn embedding_dim(&self) -> usize {
        self.video.spec().output_dim()
    }

    /// One embedding per row of `segments` (`batch × W·frame_dim`).
    pub fn encode_video(&self, segments: &Matrix) -> Result<Matrix> {
        self.video.infer(segments)
    }

    /// One embedding per row of `segments` (`batch × 4W·n_coeffs`).
    pub fn encode_audio(&self, segments: &Matrix) -> Result<Matrix> {
        self.audio.infer(segments)
    }

    pub fn parameter_count(&self) -> usize {
        self.video.parameter_count() + self.audio.parameter_count()
    }

    /// Video parameters first, then audio.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.video.params();
        p.extend(self.audio.params());
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                actual: flat.len(),
            });
        }
        let split = self.video.parameter_count();
        self.video.set_params(&flat[..split])?;
        self.audio.set_params(&flat[split..])
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.video.param_slices_mut();
        s.extend(self.audio.param_slices_mut());
        s
    }

    /// Forward both streams, keeping activations for [`backward`](Self::backward).
    pub fn forward(&self, video: &Matrix, audio: &Matrix) -> Result<(ForwardCache, ForwardCache)> {
        Ok((self.video.forward(video)?, self.audio.forward(audio)?))
    }

    pub fn backward(
        &self,
        caches: &(ForwardCache, ForwardCache),
        d_video: &Matrix,
        d_audio: &Matrix,
    ) -> Result<Gradients> {
        Ok(Gradients {
            video: self.video.backward(&caches.0, d_video)?,
            audio: self.audio.backward(&caches.1, d_audio)?,
        })
    }
}
