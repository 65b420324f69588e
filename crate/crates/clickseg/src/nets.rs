//! Tiny teacher/student convolutional segmentation nets.
//!
//! Two 3×3 conv+relu blocks around a single 2× down/up pair, then a 3×3
//! head to `num_classes` channels and a channel softmax. The teacher is
//! the same shape at higher width; capacity ordering (teacher > student)
//! is what the distillation losses rely on. Probabilities, not logits,
//! cross module boundaries.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ops, read_tensor, write_tensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Student,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Teacher => write!(f, "teacher"),
            Role::Student => write!(f, "student"),
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Role> {
        match s {
            "teacher" => Ok(Role::Teacher),
            "student" => Ok(Role::Student),
            other => Err(Error::invalid(format!("unknown role {other:?}"))),
        }
    }
}

struct ConvLayer {
    weight: Tensor, // (out, in, 3, 3)
    bias: Tensor,   // (out)
}

impl ConvLayer {
    fn init(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> ConvLayer {
        // uniform fan-in scaling
        let bound = 1.0 / ((cin * 9) as f32).sqrt();
        let w: Vec<f32> = (0..cout * cin * 9)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b: Vec<f32> = (0..cout).map(|_| rng.random_range(-bound..bound)).collect();
        ConvLayer {
            weight: Tensor::param(&[cout, cin, 3, 3], w).unwrap(),
            bias: Tensor::param(&[cout], b).unwrap(),
        }
    }

    fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Segmentation net `F(x)`: frame (1,3,H,W) → per-pixel class probabilities
/// (1,C,H,W).
pub struct SegNet {
    pub role: Role,
    pub channels: usize,
    pub num_classes: usize,
    pub seed: u64,
    blocks: Vec<ConvLayer>,
    head: ConvLayer,
}

/// Build a deterministic net. Two conv blocks at `channels` width plus a
/// classification head; all weights require grad.
pub fn build(role: Role, channels: usize, num_classes: usize, seed: u64) -> Result<SegNet> {
    if channels < 4 {
        return Err(Error::invalid(format!(
            "channels must be >= 4, got {channels}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::invalid(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = vec![
        ConvLayer::init(&mut rng, 3, channels),
        ConvLayer::init(&mut rng, channels, channels),
    ];
    let head = ConvLayer::init(&mut rng, channels, num_classes);
    Ok(SegNet {
        role,
        channels,
        num_classes,
        seed,
        blocks,
        head,
    })
}

/// 2× box downsampling as a fixed bilinear gather: sampling at the center
/// of each 2×2 block averages it exactly.
fn downsample2x(t: &Tensor) -> Result<Tensor> {
    let (h, w) = (t.shape()[2], t.shape()[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut grid = vec![0.0f32; 2 * oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            grid[y * ow + x] = y as f32 + 0.5;
            grid[oh * ow + y * ow + x] = x as f32 + 0.5;
        }
    }
    let grid = Tensor::from_vec(&[1, 2, oh, ow], grid)?;
    ops::bilinear_sample(t, &grid)
}

impl SegNet {
    fn forward_with(&self, frame: &Tensor, detached: bool) -> Result<Tensor> {
        match *frame.shape() {
            [1, 3, h, w] => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::invalid(format!(
                        "forward requires H and W divisible by 2 (one 2x down/up pair), got {h}x{w}"
                    )));
                }
            }
            _ => {
                return Err(Error::invalid(format!(
                    "forward expects a (1,3,H,W) frame, got shape {:?}",
                    frame.shape()
                )))
            }
        }
        let grab = |t: &Tensor| if detached { t.detach() } else { t.clone() };

        let mut t = ops::conv2d(frame, &grab(&self.blocks[0].weight), &grab(&self.blocks[0].bias))?;
        t = ops::relu(&t)?;
        t = downsample2x(&t)?;
        t = ops::conv2d(&t, &grab(&self.blocks[1].weight), &grab(&self.blocks[1].bias))?;
        t = ops::relu(&t)?;
        t = ops::upsample2x_bilinear(&t)?;
        t = ops::conv2d(&t, &grab(&self.head.weight), &grab(&self.head.bias))?;
        ops::softmax_channel(&t)
    }

    /// Probability map; records a gradient graph back to the weights.
    pub fn forward(&self, frame: &Tensor) -> Result<Tensor> {
        self.forward_with(frame, false)
    }

    /// Probability map with weights detached — same values, no graph.
    /// Used wherever this net's parameters are frozen.
    pub fn forward_frozen(&self, frame: &Tensor) -> Result<Tensor> {
        self.forward_with(frame, true)
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum::<usize>() + self.head.param_count()
    }

    /// Weight tensors in fixed order (block weights/biases, then head).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.weight);
            out.push(&b.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn zero_grads(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    /// Swap one weight tensor handle (indices follow [`SegNet::params`]).
    /// This is how external probes (finite-difference checks) splice a
    /// tracked leaf into the forward graph.
    pub fn replace_param(&mut self, index: usize, t: Tensor) -> Result<()> {
        let nb = self.blocks.len();
        let slot: &mut Tensor = if index < 2 * nb {
            let b = &mut self.blocks[index / 2];
            if index % 2 == 0 {
                &mut b.weight
            } else {
                &mut b.bias
            }
        } else {
            match index - 2 * nb {
                0 => &mut self.head.weight,
                1 => &mut self.head.bias,
                _ => return Err(Error::invalid(format!("param index {index} out of range"))),
            }
        };
        if t.shape() != slot.shape() {
            return Err(Error::ShapeMismatch {
                op: "replace_param",
                lhs: slot.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        *slot = t;
        Ok(())
    }

    /// Save as a checkpoint directory: WCT1 tensor files plus a plain-text
    /// manifest. `fingerprint` ties the checkpoint to the producing config.
    pub fn save(&self, dir: &Path, step: usize, fingerprint: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, t) in self.named_params() {
            write_tensor(&dir.join(format!("{name}.wct1")), t)?;
        }
        let manifest = format!(
            "role={}\nchannels={}\nnum_classes={}\nseed={}\nstep={}\nfingerprint={}\n",
            self.role, self.channels, self.num_classes, self.seed, step, fingerprint
        );
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}_weight"), &b.weight));
            out.push((format!("block{i}_bias"), &b.bias));
        }
        out.push(("head_weight".to_string(), &self.head.weight));
        out.push(("head_bias".to_string(), &self.head.bias));
        out
    }
}

/// Load a checkpoint directory written by [`SegNet::save`].
pub fn load(dir: &Path) -> Result<SegNet> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::bad_file(&manifest_path, format!("read failed: {e}")))?;
    let mut role = None;
    let mut channels = None;
    let mut num_classes = None;
    let mut seed = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::bad_file(&manifest_path, format!("bad line {line:?}")))?;
        match k {
            "role" => role = Some(v.parse::<Role>()?),
            "channels" => channels = v.parse::<usize>().ok(),
            "num_classes" => num_classes = v.parse::<usize>().ok(),
            "seed" => seed = v.parse::<u64>().ok(),
            "step" | "fingerprint" => {}
            other => {
                return Err(Error::bad_file(
                    &manifest_path,
                    format!("unknown manifest key {other:?}"),
                ))
            }
        }
    }
    let (role, channels, num_classes, seed) = match (role, channels, num_classes, seed) {
        (Some(r), Some(c), Some(n), Some(s)) => (r, c, n, s),
        _ => {
            return Err(Error::bad_file(
                &manifest_path,
                "manifest missing role/channels/num_classes/seed",
            ))
        }
    };
    let net = build(role, channels, num_classes, seed)?;
    for (name, target) in net.named_params() {
        let path = dir.join(format!("{name}.wct1"));
        let loaded = read_tensor(&path)?;
        if target.shape() != loaded.shape() {
            return Err(Error::bad_file(
                &path,
                format!(
                    "shape {:?} does not match manifest architecture {:?}",
                    loaded.shape(),
                    target.shape()
                ),
            ));
        }
        target.with_data_mut(|d| d.copy_from_slice(&loaded.data()));
    }
    Ok(net)
}

/// Read the `step`/`fingerprint` fields back from a checkpoint manifest.
pub fn checkpoint_meta(dir: &Path) -> Result<(usize, String)> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::bad_file(&manifest_path, format!("read failed: {e}")))?;
    let mut step = 0usize;
    let mut fingerprint = String::new();
    for line in text.lines() {
        if let Some((k, v)) = line.trim().split_once('=') {
            match k {
                "step" => step = v.parse().unwrap_or(0),
                "fingerprint" => fingerprint = v.to_string(),
                _ => {}
            }
        }
    }
    Ok((step, fingerprint))
}
