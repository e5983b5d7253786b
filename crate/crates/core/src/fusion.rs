//! Staged feature fusion from the coarsest level up to image resolution.
//!
//! Stage `i` takes the aligned main/side features of level `i` (and, below the
//! coarsest stage, the previous stage's output), mixes them with a channel
//! shuffle and a depthwise-separable convolution, then upsamples by two. The
//! last stage emits an image-sized residual.

use crate::error::{Error, Result};
use crate::nn::{conv2d, leaky_relu, upsample_nearest2, ConvSpec};
use crate::tensor::{FeatureMap, ImagePlane};
use crate::weights::NetworkWeights;

/// Transposes the `(group, channel-in-group)` grid of channel indices.
pub fn channel_shuffle(t: &FeatureMap, groups: usize) -> Result<FeatureMap> {
    let c = t.channels();
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::input(format!("{c} channels cannot be shuffled in {groups} groups")));
    }
    let per = c / groups;
    let n = t.plane_len();
    let mut data = vec![0.0f32; t.data().len()];
    for g in 0..groups {
        for k in 0..per {
            let dst = k * groups + g;
            data[dst * n..(dst + 1) * n].copy_from_slice(t.channel(g * per + k));
        }
    }
    FeatureMap::new(c, t.height(), t.width(), data)
}

/// Output of fusion stage `level`, already at the resolution of level `level - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub level: usize,
    pub map: FeatureMap,
}

fn run(weights: &NetworkWeights, name: &str, spec: &ConvSpec, x: &FeatureMap) -> Result<FeatureMap> {
    let (w, b) = weights.layer(name, spec)?;
    conv2d(x, spec, w, b).map_err(|e| match e {
        Error::Shape(msg) => Error::weights(name, msg),
        other => other,
    })
}

/// One fusion stage; `prev` must be absent exactly for stage 4.
pub fn fff_stage(
    level: usize,
    prev: Option<&FusionState>,
    h_x: &FeatureMap,
    h_y: &FeatureMap,
    weights: &NetworkWeights,
) -> Result<FusionState> {
    if !(1..=4).contains(&level) {
        return Err(Error::input(format!("fusion stage {level} outside 1..=4")));
    }
    let mut inputs: Vec<&FeatureMap> = Vec::with_capacity(3);
    match (level, prev) {
        (4, None) => {}
        (4, Some(_)) => return Err(Error::input("stage 4 takes no previous state")),
        (_, None) => return Err(Error::input(format!("stage {level} needs the output of stage {}", level + 1))),
        (_, Some(p)) => {
            if p.level != level + 1 {
                return Err(Error::input(format!("stage {level} fed the output of stage {}", p.level)));
            }
            if p.map.dims() != h_x.dims() {
                return Err(Error::shape(format!(
                    "previous state {} vs level {level} features {}",
                    p.map.dims(),
                    h_x.dims()
                )));
            }
            inputs.push(&p.map);
        }
    }
    inputs.push(h_x);
    inputs.push(h_y);
    let x = channel_shuffle(&FeatureMap::concat(&inputs)?, inputs.len())?;

    let layers = weights.config().fusion_stage_layers(level);
    let [dw1, pw1, dw2, pw2] = [0, 1, 2, 3].map(|i| &layers[i]);
    let x = run(weights, &dw1.0, &dw1.1, &x)?;
    let x = leaky_relu(run(weights, &pw1.0, &pw1.1, &x)?);
    let x = upsample_nearest2(&x);
    let x = run(weights, &dw2.0, &dw2.1, &x)?;
    let x = run(weights, &pw2.0, &pw2.1, &x)?;
    let map = if level == 1 { x } else { leaky_relu(x) };
    Ok(FusionState { level, map })
}

/// Chains stages 4 down to 1 and returns the image-resolution residual.
/// `h_x[i]` and `h_y[i]` are the level `i + 1` features.
pub fn fuse_features(h_x: &[FeatureMap], h_y: &[FeatureMap], weights: &NetworkWeights) -> Result<FeatureMap> {
    if h_x.len() != 4 || h_y.len() != 4 {
        return Err(Error::input("fusion needs four levels of main and side features"));
    }
    let mut state: Option<FusionState> = None;
    for level in (1..=4).rev() {
        state = Some(fff_stage(level, state.as_ref(), &h_x[level - 1], &h_y[level - 1], weights)?);
    }
    Ok(state.expect("four stages ran").map)
}

/// `clamp(x_hat + residual, 0, 1)`.
pub fn fuse_reconstruct(x_hat: &ImagePlane, residual: &FeatureMap) -> Result<ImagePlane> {
    if residual.channels() != x_hat.channels() || residual.dims() != x_hat.dims() {
        return Err(Error::shape(format!(
            "residual {}x{} for image {}x{}",
            residual.channels(),
            residual.dims(),
            x_hat.channels(),
            x_hat.dims()
        )));
    }
    let data = x_hat.samples().iter().zip(residual.data()).map(|(&a, &b)| (a + b).clamp(0.0, 1.0)).collect();
    ImagePlane::new(x_hat.channels(), x_hat.height(), x_hat.width(), data)
}
