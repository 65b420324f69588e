//! Procedural video corpus: rigidly moving colored shapes over a textured
//! background, with dense per-frame masks and motion records exact enough
//! to reconstruct the flow between any frame pair.
//!
//! Rendering quantizes shape centers to the pixel grid while the motion
//! records keep real positions, so stored flow stays exact even when
//! rendering rounds. Only one frame per clip (the target) is meant to
//! carry click supervision; all masks exist for evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disk,
    LShape,
}

impl ShapeKind {
    fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Disk => "disk",
            ShapeKind::LShape => "l_shape",
        }
    }

    fn parse(s: &str) -> Option<ShapeKind> {
        match s {
            "rectangle" => Some(ShapeKind::Rectangle),
            "disk" => Some(ShapeKind::Disk),
            "l_shape" => Some(ShapeKind::LShape),
            _ => None,
        }
    }
}

/// How the scene moves: independent per-shape velocities over a static
/// background, or one rigid translation of the whole scene (background
/// included) — the latter gives occlusion-free "pure translation" clips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionMode {
    PerShape,
    Global,
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub h: usize,
    pub w: usize,
    pub clip_len: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub kinds: Vec<ShapeKind>,
    /// Per-shape velocity range in pixels/frame: each component is drawn
    /// from [-max_speed, +max_speed] (integers unless `subpixel`).
    pub max_speed: f32,
    pub subpixel: bool,
    pub num_classes: usize,
    pub texture_seed: u64,
    pub allow_occlusion: bool,
    pub motion: MotionMode,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            h: 48,
            w: 48,
            clip_len: 5,
            min_shapes: 2,
            max_shapes: 3,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::LShape],
            max_speed: 2.0,
            subpixel: false,
            num_classes: 4,
            texture_seed: 0xC0FFEE,
            allow_occlusion: true,
            motion: MotionMode::PerShape,
        }
    }
}

/// One shape's geometry and exact per-frame center positions (row, col).
#[derive(Clone, Debug)]
pub struct ShapeTrack {
    pub kind: ShapeKind,
    pub class_id: i32,
    /// Half-extents (rows, cols); disks use `.0` as radius.
    pub size: (usize, usize),
    pub positions: Vec<(f64, f64)>,
    /// Per-shape speckle seed so the texture travels with the shape.
    pub speckle: u64,
}

impl ShapeTrack {
    fn contains(&self, frame: usize, r: usize, c: usize) -> bool {
        let (cy, cx) = self.positions[frame];
        let dr = r as i64 - cy.round() as i64;
        let dc = c as i64 - cx.round() as i64;
        let (sh, sw) = (self.size.0 as i64, self.size.1 as i64);
        match self.kind {
            ShapeKind::Rectangle => dr.abs() <= sh && dc.abs() <= sw,
            ShapeKind::Disk => dr * dr + dc * dc <= sh * sh,
            ShapeKind::LShape => dr.abs() <= sh && dc.abs() <= sw && !(dr < 0 && dc > 0),
        }
    }

    fn extent(&self) -> usize {
        self.size.0.max(self.size.1)
    }
}

#[derive(Clone, Debug)]
pub struct VideoClip {
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    /// RGB frames (1,3,H,W) in [0,1].
    pub frames: Vec<Tensor>,
    /// Dense class-id maps, row-major H×W.
    pub masks: Vec<Vec<i32>>,
    /// Top-most shape index per pixel, -1 for background.
    pub owners: Vec<Vec<i32>>,
    pub target_index: usize,
    pub shapes: Vec<ShapeTrack>,
    pub motion: MotionMode,
    /// Whole-scene offset per frame (zeros unless `MotionMode::Global`).
    pub global_offsets: Vec<(f64, f64)>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic per-pixel hash noise in [-1, 1].
fn hash_noise(seed: u64, a: i64, b: i64) -> f32 {
    let h = splitmix64(seed ^ (a as u64).wrapping_mul(0x9E3779B97F4A7C15) ^ (b as u64).rotate_left(32));
    (h >> 11) as f32 / (1u64 << 53) as f32 * 2.0 - 1.0
}

const PALETTE: [[f32; 3]; 8] = [
    [0.50, 0.48, 0.44], // background base
    [0.85, 0.20, 0.20],
    [0.18, 0.78, 0.25],
    [0.22, 0.35, 0.90],
    [0.90, 0.80, 0.15],
    [0.80, 0.25, 0.85],
    [0.15, 0.80, 0.80],
    [0.95, 0.55, 0.10],
];

/// Periodic value-noise background, sampled at integer scene coordinates
/// (wraps, so a globally translating scene stays seamless).
struct BackgroundTexture {
    h: usize,
    w: usize,
    grid: Vec<f32>, // (gh × gw × 3)
    gh: usize,
    gw: usize,
}

impl BackgroundTexture {
    const STEP: usize = 8;

    fn new(h: usize, w: usize, seed: u64) -> BackgroundTexture {
        let gh = h.div_ceil(Self::STEP).max(1);
        let gw = w.div_ceil(Self::STEP).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = (0..gh * gw * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        BackgroundTexture { h, w, grid, gh, gw }
    }

    fn at(&self, r: i64, c: i64, ch: usize) -> f32 {
        let r = r.rem_euclid(self.h as i64) as f32;
        let c = c.rem_euclid(self.w as i64) as f32;
        let gy = r / Self::STEP as f32;
        let gx = c / Self::STEP as f32;
        let y0 = gy.floor() as usize % self.gh;
        let x0 = gx.floor() as usize % self.gw;
        let y1 = (y0 + 1) % self.gh;
        let x1 = (x0 + 1) % self.gw;
        let fy = gy.fract();
        let fx = gx.fract();
        let g = |y: usize, x: usize| self.grid[(y * self.gw + x) * 3 + ch];
        let n = g(y0, x0) * (1.0 - fy) * (1.0 - fx)
            + g(y0, x1) * (1.0 - fy) * fx
            + g(y1, x0) * fy * (1.0 - fx)
            + g(y1, x1) * fy * fx;
        PALETTE[0][ch] + 0.08 * n
    }
}

/// Deterministic clip from a spec and seed. Masks stay consistent with the
/// rendered shapes; motion records hold the exact velocities used.
pub fn generate_clip(spec: &SceneSpec, seed: u64) -> Result<VideoClip> {
    if spec.h % 2 != 0 || spec.w % 2 != 0 {
        return Err(Error::invalid("scene H and W must be divisible by 2"));
    }
    if spec.num_classes < 2 {
        return Err(Error::invalid("scene needs >= 2 classes (background + 1)"));
    }
    if spec.clip_len == 0 {
        return Err(Error::invalid("clip length must be >= 1"));
    }
    if spec.min_shapes < 1 || spec.min_shapes > spec.max_shapes {
        return Err(Error::invalid("invalid shape count range"));
    }
    if spec.kinds.is_empty() {
        return Err(Error::invalid("at least one shape kind required"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5EED_C11Fu64));
    let len = spec.clip_len;
    let target_index = len / 2;

    let draw_velocity = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        if spec.subpixel {
            (
                rng.random_range(-spec.max_speed..=spec.max_speed) as f64,
                rng.random_range(-spec.max_speed..=spec.max_speed) as f64,
            )
        } else {
            let m = spec.max_speed.floor() as i64;
            (
                rng.random_range(-m..=m) as f64,
                rng.random_range(-m..=m) as f64,
            )
        }
    };

    let global_v = match spec.motion {
        MotionMode::Global => draw_velocity(&mut rng),
        MotionMode::PerShape => (0.0, 0.0),
    };
    let global_offsets: Vec<(f64, f64)> = (0..len)
        .map(|t| (global_v.0 * t as f64, global_v.1 * t as f64))
        .collect();

    let n_shapes = rng.random_range(spec.min_shapes..=spec.max_shapes);
    let mut shapes: Vec<ShapeTrack> = Vec::with_capacity(n_shapes);
    for si in 0..n_shapes {
        let mut placed = false;
        for attempt in 0..64 {
            let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
            let class_id = 1 + rng.random_range(0..spec.num_classes as i32 - 1);
            // half-extents scale with the frame so small corpora stay valid
            let hi_size = (spec.h.min(spec.w) / 7).clamp(2, 7);
            let lo_size = (hi_size / 2).max(2);
            let size = match kind {
                ShapeKind::Disk => {
                    let r = rng.random_range(lo_size..=hi_size);
                    (r, r)
                }
                _ => (
                    rng.random_range(lo_size..=hi_size),
                    rng.random_range(lo_size..=hi_size),
                ),
            };
            let extent = size.0.max(size.1) as f64 + 1.0;
            if 2.0 * extent + 2.0 >= spec.h.min(spec.w) as f64 {
                return Err(Error::invalid(format!(
                    "shape extent {extent} cannot fit a {}x{} frame",
                    spec.h, spec.w
                )));
            }
            let v = match spec.motion {
                MotionMode::Global => global_v,
                MotionMode::PerShape => draw_velocity(&mut rng),
            };
            // keep the whole trajectory in frame
            let travel_r = v.0 * (len - 1) as f64;
            let travel_c = v.1 * (len - 1) as f64;
            let lo_r = extent - travel_r.min(0.0);
            let hi_r = spec.h as f64 - 1.0 - extent - travel_r.max(0.0);
            let lo_c = extent - travel_c.min(0.0);
            let hi_c = spec.w as f64 - 1.0 - extent - travel_c.max(0.0);
            if lo_r >= hi_r || lo_c >= hi_c {
                continue; // too fast for this frame; redraw
            }
            let start = (
                rng.random_range(lo_r..hi_r).round(),
                rng.random_range(lo_c..hi_c).round(),
            );
            let positions: Vec<(f64, f64)> = (0..len)
                .map(|t| (start.0 + v.0 * t as f64, start.1 + v.1 * t as f64))
                .collect();
            let candidate = ShapeTrack {
                kind,
                class_id,
                size,
                positions,
                speckle: splitmix64(seed ^ (si as u64) << 8 ^ attempt),
            };
            if !spec.allow_occlusion {
                let overlaps = shapes.iter().any(|other| {
                    (0..len).any(|t| {
                        let (ay, ax) = candidate.positions[t];
                        let (by, bx) = other.positions[t];
                        let min_gap = (candidate.extent() + other.extent() + 2) as f64;
                        (ay - by).abs() < min_gap && (ax - bx).abs() < min_gap
                    })
                });
                if overlaps {
                    continue;
                }
            }
            shapes.push(candidate);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::invalid(
                "could not place shapes within the frame (occlusion-free placement failed)",
            ));
        }
    }

    let texture = BackgroundTexture::new(spec.h, spec.w, splitmix64(spec.texture_seed.wrapping_add(seed)));

    let (h, w) = (spec.h, spec.w);
    let mut frames = Vec::with_capacity(len);
    let mut masks = Vec::with_capacity(len);
    let mut owners = Vec::with_capacity(len);
    for t in 0..len {
        let mut frame = vec![0.0f32; 3 * h * w];
        let mut mask = vec![0i32; h * w];
        let mut owner = vec![-1i32; h * w];
        let (goy, gox) = (
            global_offsets[t].0.round() as i64,
            global_offsets[t].1.round() as i64,
        );
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                // top-most shape wins (later index = on top)
                let mut top: Option<usize> = None;
                for (si, s) in shapes.iter().enumerate() {
                    if s.contains(t, r, c) {
                        top = Some(si);
                    }
                }
                match top {
                    Some(si) => {
                        let s = &shapes[si];
                        mask[p] = s.class_id;
                        owner[p] = si as i32;
                        let (cy, cx) = s.positions[t];
                        let lr = r as i64 - cy.round() as i64;
                        let lc = c as i64 - cx.round() as i64;
                        let speck = 0.03 * hash_noise(s.speckle, lr, lc);
                        let base = PALETTE[(s.class_id as usize) % PALETTE.len()];
                        for ch in 0..3 {
                            frame[ch * h * w + p] = (base[ch] + speck).clamp(0.0, 1.0);
                        }
                    }
                    None => {
                        for ch in 0..3 {
                            frame[ch * h * w + p] =
                                texture.at(r as i64 - goy, c as i64 - gox, ch).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        frames.push(Tensor::from_vec(&[1, 3, h, w], frame)?);
        masks.push(mask);
        owners.push(owner);
    }

    Ok(VideoClip {
        h,
        w,
        num_classes: spec.num_classes,
        frames,
        masks,
        owners,
        target_index,
        shapes,
        motion: spec.motion,
        global_offsets,
    })
}

fn int_map_tensor(map: &[i32], h: usize, w: usize) -> Tensor {
    Tensor::from_vec(&[h, w], map.iter().map(|&v| v as f32).collect()).unwrap()
}

fn tensor_int_map(t: &Tensor, path: &Path) -> Result<Vec<i32>> {
    if t.shape().len() != 2 {
        return Err(Error::bad_file(path, format!("expected rank-2 map, got {:?}", t.shape())));
    }
    Ok(t.data().iter().map(|&v| v as i32).collect())
}

/// Persist a clip as a directory of WCT1 files plus a text manifest.
pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in clip.frames.iter().enumerate() {
        write_tensor(&dir.join(format!("frame_{i:03}.wct1")), f)?;
    }
    for (i, m) in clip.masks.iter().enumerate() {
        write_tensor(&dir.join(format!("mask_{i:03}.wct1")), &int_map_tensor(m, clip.h, clip.w))?;
    }
    for (i, o) in clip.owners.iter().enumerate() {
        write_tensor(&dir.join(format!("owner_{i:03}.wct1")), &int_map_tensor(o, clip.h, clip.w))?;
    }
    let mut manifest = String::new();
    manifest.push_str(&format!("h={}\n", clip.h));
    manifest.push_str(&format!("w={}\n", clip.w));
    manifest.push_str(&format!("frames={}\n", clip.len()));
    manifest.push_str(&format!("target_index={}\n", clip.target_index));
    manifest.push_str(&format!("num_classes={}\n", clip.num_classes));
    manifest.push_str(&format!(
        "motion={}\n",
        match clip.motion {
            MotionMode::PerShape => "per_shape",
            MotionMode::Global => "global",
        }
    ));
    for (t, (dy, dx)) in clip.global_offsets.iter().enumerate() {
        manifest.push_str(&format!("offset={t} {dy} {dx}\n"));
    }
    for s in &clip.shapes {
        let positions: Vec<String> = s.positions.iter().map(|(r, c)| format!("{r}:{c}")).collect();
        manifest.push_str(&format!(
            "shape={} class={} size={}x{} speckle={} positions={}\n",
            s.kind.name(),
            s.class_id,
            s.size.0,
            s.size.1,
            s.speckle,
            positions.join(";")
        ));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Load a clip saved by [`save_clip`], verifying the manifest against the
/// files actually present.
pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::bad_file(&manifest_path, format!("read failed: {e}")))?;

    let mut h = 0usize;
    let mut w = 0usize;
    let mut frames_n = 0usize;
    let mut target_index = 0usize;
    let mut num_classes = 0usize;
    let mut motion = MotionMode::PerShape;
    let mut global_offsets: Vec<(f64, f64)> = Vec::new();
    let mut shapes: Vec<ShapeTrack> = Vec::new();

    let bad = |msg: String| Error::bad_file(&manifest_path, msg);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("bad line {line:?}")))?;
        match k {
            "h" => h = v.parse().map_err(|_| bad(format!("bad h {v:?}")))?,
            "w" => w = v.parse().map_err(|_| bad(format!("bad w {v:?}")))?,
            "frames" => frames_n = v.parse().map_err(|_| bad(format!("bad frames {v:?}")))?,
            "target_index" => {
                target_index = v.parse().map_err(|_| bad(format!("bad target_index {v:?}")))?
            }
            "num_classes" => {
                num_classes = v.parse().map_err(|_| bad(format!("bad num_classes {v:?}")))?
            }
            "motion" => {
                motion = match v {
                    "per_shape" => MotionMode::PerShape,
                    "global" => MotionMode::Global,
                    other => return Err(bad(format!("unknown motion {other:?}"))),
                }
            }
            "offset" => {
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(format!("bad offset line {v:?}")));
                }
                let dy: f64 = parts[1].parse().map_err(|_| bad("bad offset dy".into()))?;
                let dx: f64 = parts[2].parse().map_err(|_| bad("bad offset dx".into()))?;
                global_offsets.push((dy, dx));
            }
            "shape" => {
                let mut class_id = None;
                let mut size = None;
                let mut speckle = 0u64;
                let mut positions = Vec::new();
                let mut fields = v.split_whitespace();
                let kind = fields
                    .next()
                    .and_then(ShapeKind::parse)
                    .ok_or_else(|| bad(format!("bad shape kind in {v:?}")))?;
                for field in fields {
                    let (fk, fv) = field
                        .split_once('=')
                        .ok_or_else(|| bad(format!("bad shape field {field:?}")))?;
                    match fk {
                        "class" => class_id = fv.parse::<i32>().ok(),
                        "size" => {
                            let (a, b) = fv
                                .split_once('x')
                                .ok_or_else(|| bad(format!("bad size {fv:?}")))?;
                            size = Some((
                                a.parse().map_err(|_| bad("bad size".into()))?,
                                b.parse().map_err(|_| bad("bad size".into()))?,
                            ));
                        }
                        "speckle" => speckle = fv.parse().map_err(|_| bad("bad speckle".into()))?,
                        "positions" => {
                            for p in fv.split(';') {
                                let (r, c) = p
                                    .split_once(':')
                                    .ok_or_else(|| bad(format!("bad position {p:?}")))?;
                                positions.push((
                                    r.parse().map_err(|_| bad("bad position row".into()))?,
                                    c.parse().map_err(|_| bad("bad position col".into()))?,
                                ));
                            }
                        }
                        other => return Err(bad(format!("unknown shape field {other:?}"))),
                    }
                }
                shapes.push(ShapeTrack {
                    kind,
                    class_id: class_id.ok_or_else(|| bad("shape missing class".into()))?,
                    size: size.ok_or_else(|| bad("shape missing size".into()))?,
                    positions,
                    speckle,
                });
            }
            other => return Err(bad(format!("unknown manifest key {other:?}"))),
        }
    }
    if frames_n == 0 || h == 0 || w == 0 {
        return Err(bad("manifest missing h/w/frames".into()));
    }
    if target_index >= frames_n {
        return Err(bad(format!(
            "target_index {target_index} out of range for {frames_n} frames"
        )));
    }
    if global_offsets.len() != frames_n {
        return Err(bad(format!(
            "manifest lists {} offsets for {} frames",
            global_offsets.len(),
            frames_n
        )));
    }
    for s in &shapes {
        if s.positions.len() != frames_n {
            return Err(bad(format!(
                "shape has {} positions for {} frames",
                s.positions.len(),
                frames_n
            )));
        }
    }
    let on_disk = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| {
            e.file_name()
                .to_string_lossy()
                .starts_with("frame_")
        })
        .count();
    if on_disk != frames_n {
        return Err(bad(format!(
            "manifest declares {frames_n} frames but {on_disk} frame files present"
        )));
    }

    let mut frames = Vec::with_capacity(frames_n);
    let mut masks = Vec::with_capacity(frames_n);
    let mut owners = Vec::with_capacity(frames_n);
    for i in 0..frames_n {
        let fp = dir.join(format!("frame_{i:03}.wct1"));
        let f = read_tensor(&fp)?;
        if f.shape() != [1, 3, h, w] {
            return Err(Error::bad_file(
                &fp,
                format!("frame shape {:?} does not match manifest {h}x{w}", f.shape()),
            ));
        }
        frames.push(f);
        let mp = dir.join(format!("mask_{i:03}.wct1"));
        masks.push(tensor_int_map(&read_tensor(&mp)?, &mp)?);
        let op = dir.join(format!("owner_{i:03}.wct1"));
        owners.push(tensor_int_map(&read_tensor(&op)?, &op)?);
    }

    Ok(VideoClip {
        h,
        w,
        num_classes,
        frames,
        masks,
        owners,
        target_index,
        shapes,
        motion,
        global_offsets,
    })
}

#[derive(Clone, Debug)]
pub struct ClipEntry {
    pub id: String,
    pub path: PathBuf,
    pub target_index: usize,
}

#[derive(Clone, Debug)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub train: Vec<ClipEntry>,
    pub val: Vec<ClipEntry>,
    pub test: Vec<ClipEntry>,
}

impl CorpusManifest {
    pub fn split(&self, name: &str) -> Result<&[ClipEntry]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Generate `num_clips` clips, write them under `out_dir`, and split them
/// into disjoint train/val/test sets by largest-remainder apportionment.
pub fn build_corpus(
    spec: &SceneSpec,
    num_clips: usize,
    split_ratios: (f64, f64, f64),
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    let (tr, va, te) = split_ratios;
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must sum to 1, got {tr}+{va}+{te}"
        )));
    }
    if num_clips < 3 {
        return Err(Error::invalid(format!(
            "need at least one clip per split, got {num_clips}"
        )));
    }
    fs::create_dir_all(out_dir)?;

    let mut entries = Vec::with_capacity(num_clips);
    for i in 0..num_clips {
        let clip = generate_clip(spec, splitmix64(seed).wrapping_add(i as u64))?;
        let id = format!("clip_{i:03}");
        let rel = PathBuf::from(&id);
        save_clip(&clip, &out_dir.join(&rel))?;
        entries.push(ClipEntry {
            id,
            path: rel,
            target_index: clip.target_index,
        });
    }

    // largest-remainder apportionment; ties favor the earlier split
    let ratios = [tr, va, te];
    let exact: Vec<f64> = ratios.iter().map(|r| r * num_clips as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = num_clips - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }

    let mut idx: Vec<usize> = (0..num_clips).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5F117));
    for i in (1..idx.len()).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let take = |idx: &[usize]| -> Vec<ClipEntry> {
        let mut v: Vec<ClipEntry> = idx.iter().map(|&i| entries[i].clone()).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    let train = take(&idx[..counts[0]]);
    let val = take(&idx[counts[0]..counts[0] + counts[1]]);
    let test = take(&idx[counts[0] + counts[1]..]);

    let manifest = CorpusManifest {
        root: out_dir.to_path_buf(),
        train,
        val,
        test,
    };
    for (name, list) in [("train", &manifest.train), ("val", &manifest.val), ("test", &manifest.test)] {
        let mut text = String::new();
        for e in list {
            text.push_str(&format!("{} {} {}\n", e.id, e.path.display(), e.target_index));
        }
        fs::write(out_dir.join(format!("{name}.txt")), text)?;
    }
    Ok(manifest)
}

/// Read a corpus manifest written by [`build_corpus`].
pub fn load_corpus(dir: &Path) -> Result<CorpusManifest> {
    let read_split = |name: &str| -> Result<Vec<ClipEntry>> {
        let path = dir.join(format!("{name}.txt"));
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::bad_file(&path, format!("read failed: {e}")))?;
        let mut out = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::bad_file(&path, format!("bad line {line:?}")));
            }
            out.push(ClipEntry {
                id: parts[0].to_string(),
                path: PathBuf::from(parts[1]),
                target_index: parts[2]
                    .parse()
                    .map_err(|_| Error::bad_file(&path, format!("bad target index in {line:?}")))?,
            });
        }
        Ok(out)
    };
    Ok(CorpusManifest {
        root: dir.to_path_buf(),
        train: read_split("train")?,
        val: read_split("val")?,
        test: read_split("test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneSpec::default();
        let a = generate_clip(&spec, 7).unwrap();
        let b = generate_clip(&spec, 7).unwrap();
        assert_eq!(a.masks, b.masks);
        for (f, g) in a.frames.iter().zip(&b.frames) {
            let (fv, gv) = (f.to_vec(), g.to_vec());
            assert!(fv.iter().zip(&gv).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn zero_velocity_freezes_the_scene() {
        let spec = SceneSpec {
            max_speed: 0.0,
            ..SceneSpec::default()
        };
        let clip = generate_clip(&spec, 3).unwrap();
        for t in 1..clip.len() {
            assert_eq!(clip.masks[t], clip.masks[0]);
            assert_eq!(clip.frames[t].to_vec(), clip.frames[0].to_vec());
        }
        for s in &clip.shapes {
            assert_eq!(s.positions[0], s.positions[clip.len() - 1]);
        }
    }

    #[test]
    fn constant_velocity_shifts_the_mask() {
        // one disk at (0,+2) px/frame: mask_2 is mask_0 shifted 4 columns
        let spec = SceneSpec {
            clip_len: 3,
            min_shapes: 1,
            max_shapes: 1,
            kinds: vec![ShapeKind::Disk],
            ..SceneSpec::default()
        };
        // search a seed whose velocity is exactly (0, 2)
        let clip = (0..200u64)
            .map(|s| generate_clip(&spec, s).unwrap())
            .find(|c| {
                let p = &c.shapes[0].positions;
                (p[1].0 - p[0].0).abs() < 1e-12 && (p[1].1 - p[0].1 - 2.0).abs() < 1e-12
            })
            .expect("no seed produced velocity (0,+2)");
        let (h, w) = (clip.h, clip.w);
        for r in 0..h {
            for c in 0..w.saturating_sub(4) {
                assert_eq!(
                    clip.masks[2][r * w + c + 4],
                    clip.masks[0][r * w + c],
                    "mismatch at ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn target_frame_has_at_least_two_classes() {
        let spec = SceneSpec::default();
        for seed in 0..25u64 {
            let clip = generate_clip(&spec, seed).unwrap();
            let mut classes: Vec<i32> = clip.masks[clip.target_index].clone();
            classes.sort_unstable();
            classes.dedup();
            assert!(classes.len() >= 2, "seed {seed}: classes {classes:?}");
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let clip = generate_clip(&SceneSpec::default(), 5).unwrap();
        save_clip(&clip, dir.path()).unwrap();
        let loaded = load_clip(dir.path()).unwrap();
        assert_eq!(loaded.masks, clip.masks);
        assert_eq!(loaded.owners, clip.owners);
        assert_eq!(loaded.target_index, clip.target_index);
        assert_eq!(loaded.shapes.len(), clip.shapes.len());
        for (a, b) in loaded.frames.iter().zip(&clip.frames) {
            let (av, bv) = (a.to_vec(), b.to_vec());
            assert!(av.iter().zip(&bv).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for (a, b) in loaded.shapes.iter().zip(&clip.shapes) {
            assert_eq!(a.positions, b.positions);
        }
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let clip = generate_clip(&SceneSpec::default(), 1).unwrap();
        save_clip(&clip, dir.path()).unwrap();
        let victim = dir.path().join("frame_000.wct1");
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0] = 0;
        fs::write(&victim, bytes).unwrap();
        let err = load_clip(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame_000.wct1"), "{err}");
    }

    #[test]
    fn manifest_frame_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let clip = generate_clip(&SceneSpec::default(), 1).unwrap();
        save_clip(&clip, dir.path()).unwrap();
        fs::remove_file(dir.path().join(format!("frame_{:03}.wct1", clip.len() - 1))).unwrap();
        let err = load_clip(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame files present"), "{err}");
    }

    #[test]
    fn corpus_split_is_16_2_2_for_20_clips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec {
            h: 16,
            w: 16,
            clip_len: 3,
            min_shapes: 1,
            max_shapes: 1,
            ..SceneSpec::default()
        };
        let m = build_corpus(&spec, 20, (0.8, 0.1, 0.1), 3, dir.path()).unwrap();
        assert_eq!(m.train.len(), 16);
        assert_eq!(m.val.len(), 2);
        assert_eq!(m.test.len(), 2);

        // same seed, same assignment
        let dir2 = tempfile::tempdir().unwrap();
        let m2 = build_corpus(&spec, 20, (0.8, 0.1, 0.1), 3, dir2.path()).unwrap();
        let ids = |v: &[ClipEntry]| v.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&m.train), ids(&m2.train));
        assert_eq!(ids(&m.val), ids(&m2.val));
        assert_eq!(ids(&m.test), ids(&m2.test));

        // disjoint union covers everything
        let mut all = ids(&m.train);
        all.extend(ids(&m.val));
        all.extend(ids(&m.test));
        let total = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), total);
        assert_eq!(all.len(), 20);

        let reloaded = load_corpus(dir.path()).unwrap();
        assert_eq!(ids(&reloaded.train), ids(&m.train));
    }
}
