//! Flow fields and differentiable warping of probability maps.
//!
//! Convention: a field is stored on the TARGET frame's grid as a backward
//! displacement — `warp` gathers the source at `p + flow(p)` for every
//! target pixel `p`. Forward splatting of probability maps is ill-defined
//! (holes and collisions), so any forward-convention field must be
//! inverted into this form before use. Flow is always a constant with
//! respect to autodiff; gradients flow through the warped source only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::synthdata::{MotionMode, VideoClip};
use crate::tensor::{ops, Tensor};

/// Per-pixel (dy, dx) displacement map on the grid of frame `dst_index`,
/// looking back into frame `src_index`.
#[derive(Clone, Debug)]
pub struct FlowField {
    /// Shape (1, 2, H, W): channel 0 = dy, channel 1 = dx, in pixels.
    pub grid: Tensor,
    pub src_index: usize,
    pub dst_index: usize,
}

impl FlowField {
    pub fn new(grid: Tensor, src_index: usize, dst_index: usize) -> Result<FlowField> {
        match *grid.shape() {
            [1, 2, _, _] => {}
            _ => {
                return Err(Error::invalid(format!(
                    "flow grid must be (1,2,H,W), got {:?}",
                    grid.shape()
                )))
            }
        }
        if grid.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("flow displacements must be finite"));
        }
        Ok(FlowField {
            grid,
            src_index,
            dst_index,
        })
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[3]
    }

    /// 1 where `p + flow(p)` lands inside the frame, 0 where the sample
    /// would clamp at the border. Shape (1,1,H,W).
    pub fn validity_mask(&self) -> Tensor {
        let (h, w) = (self.height(), self.width());
        let g = self.grid.data();
        let plane = h * w;
        let mut out = vec![0.0f32; plane];
        for y in 0..h {
            for x in 0..w {
                let sy = y as f32 + g[y * w + x];
                let sx = x as f32 + g[plane + y * w + x];
                let inside =
                    sy >= 0.0 && sy <= (h - 1) as f32 && sx >= 0.0 && sx <= (w - 1) as f32;
                out[y * w + x] = if inside { 1.0 } else { 0.0 };
            }
        }
        drop(g);
        Tensor::from_vec(&[1, 1, h, w], out).unwrap()
    }
}

/// Resample `source_map` along the flow: `warped(p) = source(p + flow(p))`
/// with bilinear taps and clamp-to-edge. Differentiable w.r.t. the source.
pub fn warp(source_map: &Tensor, flow: &FlowField) -> Result<Tensor> {
    match *source_map.shape() {
        [1, _, h, w] if h == flow.height() && w == flow.width() => {}
        _ => {
            return Err(Error::ShapeMismatch {
                op: "warp",
                lhs: source_map.shape().to_vec(),
                rhs: flow.grid.shape().to_vec(),
            })
        }
    }
    ops::bilinear_sample(source_map, &flow.grid)
}

/// Exact displacement field of a synthetic scene from frame `f` into the
/// grid of frame `k`, reconstructed from the generator's motion records.
pub fn gt_flow(clip: &VideoClip, f: usize, k: usize) -> Result<FlowField> {
    if f >= clip.len() || k >= clip.len() {
        return Err(Error::invalid(format!(
            "frame indices ({f},{k}) out of range for clip of {} frames",
            clip.len()
        )));
    }
    let (h, w) = (clip.h, clip.w);
    let plane = h * w;
    let mut grid = vec![0.0f32; 2 * plane];
    match clip.motion {
        MotionMode::Global => {
            let dy = (clip.global_offsets[f].0 - clip.global_offsets[k].0) as f32;
            let dx = (clip.global_offsets[f].1 - clip.global_offsets[k].1) as f32;
            grid[..plane].fill(dy);
            grid[plane..].fill(dx);
        }
        MotionMode::PerShape => {
            // background is static; each target pixel owned by a shape looks
            // back to where that shape was at frame f
            let owner = &clip.owners[k];
            for p in 0..plane {
                let s = owner[p];
                if s >= 0 {
                    let track = &clip.shapes[s as usize];
                    grid[p] = (track.positions[f].0 - track.positions[k].0) as f32;
                    grid[plane + p] = (track.positions[f].1 - track.positions[k].1) as f32;
                }
            }
        }
    }
    FlowField::new(Tensor::from_vec(&[1, 2, h, w], grid)?, f, k)
}

/// Where estimated motion comes from: stored ground truth, ground truth
/// with seeded Gaussian perturbation, or patch-wise SAD block matching.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowProvider {
    GroundTruth,
    Noisy { sigma: f32, seed: u64 },
    BlockMatch { patch: usize, radius: usize },
}

/// Estimate the flow from frame `f` into the grid of frame `k`. The
/// ground-truth-backed kinds need the clip; block matching works from the
/// frames alone.
pub fn estimate_flow(
    provider: &FlowProvider,
    x_f: &Tensor,
    x_k: &Tensor,
    f: usize,
    k: usize,
    clip: Option<&VideoClip>,
) -> Result<FlowField> {
    if x_f.shape() != x_k.shape() {
        return Err(Error::ShapeMismatch {
            op: "estimate_flow",
            lhs: x_f.shape().to_vec(),
            rhs: x_k.shape().to_vec(),
        });
    }
    match provider {
        FlowProvider::GroundTruth => {
            let clip = clip.ok_or_else(|| {
                Error::invalid("ground_truth flow requested without a clip carrying stored motion")
            })?;
            gt_flow(clip, f, k)
        }
        FlowProvider::Noisy { sigma, seed } => {
            let clip = clip.ok_or_else(|| {
                Error::invalid("noisy flow requested without a clip carrying stored motion")
            })?;
            let base = gt_flow(clip, f, k)?;
            if *sigma == 0.0 {
                return Ok(base);
            }
            // mix the pair into the stream so each (f,k) gets its own noise
            let pair_seed = seed
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add((f as u64) << 32 | k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
            let normal = Normal::new(0.0f32, *sigma).map_err(|e| Error::invalid(e.to_string()))?;
            let noised: Vec<f32> = base
                .grid
                .data()
                .iter()
                .map(|v| v + normal.sample(&mut rng))
                .collect();
            FlowField::new(Tensor::from_vec(base.grid.shape(), noised)?, f, k)
        }
        FlowProvider::BlockMatch { patch, radius } => {
            block_match(x_f, x_k, *patch, *radius, f, k)
        }
    }
}

/// Integer displacement per target pixel minimizing the sum of absolute
/// differences between patches of `x_k` (around p) and `x_f` (around
/// p + d), searched over d in [-radius, radius]². Scan order breaks ties.
fn block_match(
    x_f: &Tensor,
    x_k: &Tensor,
    patch: usize,
    radius: usize,
    f: usize,
    k: usize,
) -> Result<FlowField> {
    let (c, h, w) = match *x_k.shape() {
        [1, c, h, w] => (c, h, w),
        _ => {
            return Err(Error::invalid(format!(
                "block_match expects (1,C,H,W) frames, got {:?}",
                x_k.shape()
            )))
        }
    };
    if radius == 0 {
        return Err(Error::invalid("block_match radius must be >= 1"));
    }
    let kf = x_f.data();
    let kk = x_k.data();
    let plane = h * w;
    let p = patch as isize;
    let r = radius as isize;
    let mut grid = vec![0.0f32; 2 * plane];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut best = f64::INFINITY;
            let mut best_d = (0i64, 0i64);
            for dy in -r..=r {
                for dx in -r..=r {
                    let mut sad = 0.0f64;
                    let mut count = 0usize;
                    for oy in -p..=p {
                        let ty = y + oy;
                        let sy = y + dy + oy;
                        if ty < 0 || ty >= h as isize || sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for ox in -p..=p {
                            let tx = x + ox;
                            let sx = x + dx + ox;
                            if tx < 0 || tx >= w as isize || sx < 0 || sx >= w as isize {
                                continue;
                            }
                            for ch in 0..c {
                                let a = kk[ch * plane + ty as usize * w + tx as usize];
                                let b = kf[ch * plane + sy as usize * w + sx as usize];
                                sad += (a - b).abs() as f64;
                            }
                            count += 1;
                        }
                    }
                    if count == 0 {
                        continue;
                    }
                    let score = sad / count as f64;
                    if score < best {
                        best = score;
                        best_d = (dy as i64, dx as i64);
                    }
                }
            }
            grid[(y * w as isize + x) as usize] = best_d.0 as f32;
            grid[plane + (y * w as isize + x) as usize] = best_d.1 as f32;
        }
    }
    drop(kf);
    drop(kk);
    FlowField::new(Tensor::from_vec(&[1, 2, h, w], grid)?, f, k)
}
