//! Face-crop preprocessing: gray conversion, optional lower-half crop, bilinear resize to
//! 112×112, values in [0, 1].

use crate::corpus::Image;
use crate::error::{Error, Result};

pub const FACE_SIDE: usize = 112;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessOptions {
    pub lower_half: bool,
    /// Value that maps to 1.0 (1.0 for normalized input, 255.0 for 8-bit).
    pub max_value: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            lower_half: true,
            max_value: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoFrameTensor {
    /// Each frame is `FACE_SIDE × FACE_SIDE`, row-major.
    pub frames: Vec<Vec<f64>>,
    pub fps: f64,
}

fn to_gray(img: &Image) -> Vec<f64> {
    match img.channels {
        1 => img.data.clone(),
        _ => img
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect(),
    }
}

/// Half-pixel-centre bilinear resize with edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let coord = |dst: usize, scale: f64, len: usize| {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, sy, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, sx, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

pub fn preprocess_frame(img: &Image, opts: &PreprocessOptions) -> Result<Vec<f64>> {
    if !(opts.max_value > 0.0) {
        return Err(Error::arg("max_value must be positive"));
    }
    let gray = to_gray(img);
    let (rows, h) = if opts.lower_half && img.height >= 2 {
        let top = img.height / 2;
        (&gray[top * img.width..], img.height - top)
    } else {
        (&gray[..], img.height)
    };
    let resized = if (h, img.width) == (FACE_SIDE, FACE_SIDE) {
        rows.to_vec()
    } else {
        resize_bilinear(rows, h, img.width, FACE_SIDE, FACE_SIDE)
    };
    Ok(resized
        .into_iter()
        .map(|v| (v / opts.max_value).clamp(0.0, 1.0))
        .collect())
}

pub fn preprocess_frames(frames: &[Image], opts: &PreprocessOptions, fps: f64) -> Result<VideoFrameTensor> {
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    Ok(VideoFrameTensor {
        frames: frames
            .iter()
            .map(|f| preprocess_frame(f, opts))
            .collect::<Result<_>>()?,
        fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NO_CROP: PreprocessOptions = PreprocessOptions {
        lower_half: false,
        max_value: 1.0,
    };

    #[test]
    fn identity_at_target_size() {
        let data: Vec<f64> = (0..112 * 112).map(|i| (i % 97) as f64 / 96.0).collect();
        let img = Image::gray(112, 112, data.clone()).unwrap();
        let out = preprocess_frames(&[img], &NO_CROP, 25.0).unwrap();
        assert_eq!(out.frames[0], data);
    }

    #[test]
    fn resizing_a_constant_keeps_it_constant() {
        let img = Image::filled(224, 224, 0.5);
        let out = preprocess_frame(&img, &NO_CROP).unwrap();
        assert_eq!(out.len(), 112 * 112);
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn lower_half_crop_keeps_only_bottom_content() {
        let mut data = vec![0.2; 224 * 224];
        data[112 * 224..].iter_mut().for_each(|v| *v = 0.8);
        let img = Image::gray(224, 224, data).unwrap();
        let out = preprocess_frame(&img, &PreprocessOptions::default()).unwrap();
        assert!(out.iter().all(|&v| (v - 0.8).abs() < 1e-12));
    }

    #[test]
    fn rgb_uses_luma_weights_and_scaling() {
        let img = Image::new(1, 1, 3, vec![255.0, 0.0, 0.0]).unwrap();
        let opts = PreprocessOptions {
            lower_half: false,
            max_value: 255.0,
        };
        let out = preprocess_frame(&img, &opts).unwrap();
        assert!(out.iter().all(|&v| (v - 0.299).abs() < 1e-12));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert!(preprocess_frames(&[], &NO_CROP, 25.0).is_err());
    }

    proptest! {
        #[test]
        fn output_shape_and_range(h in 1usize..60, w in 1usize..60, seed in any::<u32>(), crop in any::<bool>()) {
            let data: Vec<f64> = (0..h * w).map(|i| ((i as u64 * 2654435761 + seed as u64) % 1000) as f64 / 400.0 - 0.5).collect();
            let img = Image::gray(h, w, data).unwrap();
            let out = preprocess_frame(&img, &PreprocessOptions { lower_half: crop, max_value: 1.0 }).unwrap();
            prop_assert_eq!(out.len(), FACE_SIDE * FACE_SIDE);
            prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
