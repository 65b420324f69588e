//! Single-click annotation generation from dense ground-truth masks.
//!
//! Per class, 8-connected components are enumerated (instance classes use
//! an instance map instead, bypassing the area filter); each retained
//! object gets exactly one click — the rounded centroid when it lands
//! inside the object, otherwise a seeded random pixel of the object.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::ClickMap;
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// One 8-connected region of a single class.
#[derive(Clone, Debug)]
pub struct Component {
    pub class_id: i32,
    /// Row-major ordered pixel list.
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    /// Mean (row, col) of the pixel set.
    pub centroid: (f64, f64),
    pub is_instance: bool,
}

impl Component {
    fn from_pixels(class_id: i32, pixels: Vec<(usize, usize)>, is_instance: bool) -> Component {
        let area = pixels.len();
        let (mut sr, mut sc) = (0.0f64, 0.0f64);
        for &(r, c) in &pixels {
            sr += r as f64;
            sc += c as f64;
        }
        Component {
            class_id,
            area,
            centroid: (sr / area as f64, sc / area as f64),
            pixels,
            is_instance,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.pixels.binary_search(&(r, c)).is_ok()
    }
}

/// Exhaustive 8-connected components of every class in `class_set`,
/// labeled in row-major order of each component's first pixel.
pub fn connected_components(mask: &[i32], h: usize, w: usize, class_set: &[i32]) -> Vec<Component> {
    assert_eq!(mask.len(), h * w, "mask length must be h*w");
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || !class_set.contains(&mask[start]) {
            continue;
        }
        let class_id = mask[start];
        // BFS flood fill over same-class 8-neighbors
        let mut pixels = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (r, c) = (p / w, p % w);
            pixels.push((r, c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nr >= h as i64 || nc < 0 || nc >= w as i64 {
                        continue;
                    }
                    let np = nr as usize * w + nc as usize;
                    if !seen[np] && mask[np] == class_id {
                        seen[np] = true;
                        queue.push_back(np);
                    }
                }
            }
        }
        pixels.sort_unstable();
        out.push(Component::from_pixels(class_id, pixels, false));
    }
    out
}

/// Regions of an instance map (ids >= 0; negative = no instance), one
/// object per id, in ascending id order. Class comes from the mask.
fn instance_objects(mask: &[i32], instance_map: &[i32], h: usize, w: usize) -> Vec<Component> {
    assert_eq!(instance_map.len(), h * w);
    let mut ids: Vec<i32> = instance_map.iter().copied().filter(|&v| v >= 0).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut out = Vec::new();
    for id in ids {
        let pixels: Vec<(usize, usize)> = (0..h * w)
            .filter(|&p| instance_map[p] == id)
            .map(|p| (p / w, p % w))
            .collect();
        let class_id = mask[pixels[0].0 * w + pixels[0].1];
        out.push(Component::from_pixels(class_id, pixels, true));
    }
    out
}

/// Round half-way cases toward the smaller index.
fn round_half_down(x: f64) -> i64 {
    (x - 0.5).ceil() as i64
}

/// One click per retained object. Objects are instance regions for classes
/// listed in `instance_classes` (area filter does not apply), and
/// 8-connected components with `area >= min_area` for everything else.
pub fn generate_clicks(
    mask: &[i32],
    h: usize,
    w: usize,
    instance_map: Option<&[i32]>,
    instance_classes: &[i32],
    min_area: usize,
    seed: u64,
) -> Result<ClickMap> {
    if min_area < 1 {
        return Err(Error::invalid("min_area must be >= 1"));
    }
    let mut classes: Vec<i32> = mask.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let non_instance: Vec<i32> = classes
        .iter()
        .copied()
        .filter(|c| !instance_classes.contains(c))
        .collect();

    let mut objects = Vec::new();
    if let Some(imap) = instance_map {
        objects.extend(
            instance_objects(mask, imap, h, w)
                .into_iter()
                .filter(|o| instance_classes.contains(&o.class_id)),
        );
    }
    objects.extend(
        connected_components(mask, h, w, &non_instance)
            .into_iter()
            .filter(|o| o.area >= min_area),
    );

    if objects.is_empty() {
        return Err(Error::invalid(
            "no retained objects: mask yields an unusable (all-zero) click map",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![-1i32; h * w];
    let mut click_mask = vec![0u8; h * w];
    for obj in &objects {
        let cr = round_half_down(obj.centroid.0);
        let cc = round_half_down(obj.centroid.1);
        let inside = cr >= 0
            && cc >= 0
            && (cr as usize) < h
            && (cc as usize) < w
            && obj.contains(cr as usize, cc as usize);
        let (r, c) = if inside {
            (cr as usize, cc as usize)
        } else {
            obj.pixels[rng.random_range(0..obj.pixels.len())]
        };
        labels[r * w + c] = obj.class_id;
        click_mask[r * w + c] = 1;
    }
    ClickMap::new(labels, click_mask, h, w)
}

/// Summary counts for a click map against its source mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ClickStats {
    /// (class id, click count), ascending by class.
    pub per_class: Vec<(i32, usize)>,
    pub annotated_fraction: f64,
    /// Classes present in the mask that received no click.
    pub unclicked_classes: Vec<i32>,
}

pub fn click_stats(clicks: &ClickMap, mask: &[i32]) -> ClickStats {
    let mut per_class: Vec<(i32, usize)> = Vec::new();
    let mut total = 0usize;
    for p in 0..clicks.len() {
        if clicks.mask()[p] == 1 {
            total += 1;
            let class = clicks.labels()[p];
            match per_class.iter_mut().find(|(c, _)| *c == class) {
                Some((_, n)) => *n += 1,
                None => per_class.push((class, 1)),
            }
        }
    }
    per_class.sort_unstable();
    let mut mask_classes: Vec<i32> = mask.to_vec();
    mask_classes.sort_unstable();
    mask_classes.dedup();
    let unclicked_classes = mask_classes
        .into_iter()
        .filter(|c| !per_class.iter().any(|(pc, _)| pc == c))
        .collect();
    ClickStats {
        per_class,
        annotated_fraction: total as f64 / clicks.len() as f64,
        unclicked_classes,
    }
}

/// Persist a click map as the WCT1 pair `<stem>_labels.wct1` (sentinel -1
/// as f32) and `<stem>_mask.wct1` (0/1).
pub fn save_clicks(clicks: &ClickMap, dir: &Path, stem: &str) -> Result<()> {
    let labels: Vec<f32> = clicks.labels().iter().map(|&v| v as f32).collect();
    let mask: Vec<f32> = clicks.mask().iter().map(|&v| v as f32).collect();
    let shape = [clicks.height(), clicks.width()];
    write_tensor(&dir.join(format!("{stem}_labels.wct1")), &Tensor::from_vec(&shape, labels)?)?;
    write_tensor(&dir.join(format!("{stem}_mask.wct1")), &Tensor::from_vec(&shape, mask)?)?;
    Ok(())
}

pub fn load_clicks(dir: &Path, stem: &str) -> Result<ClickMap> {
    let lp = dir.join(format!("{stem}_labels.wct1"));
    let mp = dir.join(format!("{stem}_mask.wct1"));
    let lt = read_tensor(&lp)?;
    let mt = read_tensor(&mp)?;
    if lt.shape() != mt.shape() || lt.shape().len() != 2 {
        return Err(Error::bad_file(
            &lp,
            format!("click tensors disagree: {:?} vs {:?}", lt.shape(), mt.shape()),
        ));
    }
    let (h, w) = (lt.shape()[0], lt.shape()[1]);
    let labels: Vec<i32> = lt.data().iter().map(|&v| v as i32).collect();
    let mask: Vec<u8> = mt.data().iter().map(|&v| v as u8).collect();
    ClickMap::new(labels, mask, h, w)
}
