//! Training objectives.
//!
//! All losses are scalar tensors on the autodiff tape, built from the
//! fixed op set so they gradient-check against central differences. The
//! student's probability maps are the only tracked inputs; click maps,
//! kernels, consistency weights and teacher predictions enter as
//! constants.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::nets::SegNet;
use crate::tensor::{ops, Tensor, LOG_FLOOR};

/// Sparse per-pixel annotations: class id at clicked pixels (sentinel -1
/// elsewhere) and the 0/1 indicator of which pixels are clicked.
#[derive(Clone, Debug, PartialEq)]
pub struct ClickMap {
    labels: Vec<i32>,
    mask: Vec<u8>,
    h: usize,
    w: usize,
}

impl ClickMap {
    pub fn new(labels: Vec<i32>, mask: Vec<u8>, h: usize, w: usize) -> Result<ClickMap> {
        if labels.len() != h * w || mask.len() != h * w {
            return Err(Error::invalid(format!(
                "click map buffers must be {h}x{w} = {} elements",
                h * w
            )));
        }
        for p in 0..h * w {
            match mask[p] {
                0 => {
                    if labels[p] != -1 {
                        return Err(Error::invalid(format!(
                            "pixel {p}: label {} defined where mask is 0",
                            labels[p]
                        )));
                    }
                }
                1 => {
                    if labels[p] < 0 {
                        return Err(Error::invalid(format!(
                            "pixel {p}: mask is 1 but label is undefined"
                        )));
                    }
                }
                other => {
                    return Err(Error::invalid(format!(
                        "pixel {p}: mask entry {other} not in {{0,1}}"
                    )))
                }
            }
        }
        Ok(ClickMap { labels, mask, h, w })
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn click_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

fn prob_map_dims(op: &'static str, pred: &Tensor) -> Result<(usize, usize, usize)> {
    match *pred.shape() {
        [1, c, h, w] => Ok((c, h, w)),
        _ => Err(Error::invalid(format!(
            "{op} expects a (1,C,H,W) probability map, got {:?}",
            pred.shape()
        ))),
    }
}

/// Cross-entropy averaged over clicked pixels only: the one-hot click
/// labels select `-log p` at each clicked pixel, normalized by the click
/// count. Differentiable w.r.t. `pred`.
pub fn partial_cross_entropy(pred: &Tensor, clicks: &ClickMap) -> Result<Tensor> {
    let (c, h, w) = prob_map_dims("partial_cross_entropy", pred)?;
    if (clicks.height(), clicks.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            op: "partial_cross_entropy",
            lhs: pred.shape().to_vec(),
            rhs: vec![clicks.height(), clicks.width()],
        });
    }
    let m_sum = clicks.click_count();
    if m_sum == 0 {
        return Err(Error::invalid(
            "partial_cross_entropy: click mask is all zeros (degenerate normalizer)",
        ));
    }
    let plane = h * w;
    let mut weights = vec![0.0f32; c * plane];
    for p in 0..plane {
        if clicks.mask()[p] == 1 {
            let label = clicks.labels()[p] as usize;
            if label >= c {
                return Err(Error::invalid(format!(
                    "click label {label} out of range for {c} classes"
                )));
            }
            weights[label * plane + p] = 1.0;
        }
    }
    let w_const = Tensor::from_vec(pred.shape(), weights)?;
    let picked = ops::mul(&w_const, &ops::log(pred)?)?;
    ops::mul(
        &ops::reduce_sum(&picked)?,
        &Tensor::scalar(-1.0 / m_sum as f32),
    )
}

/// Gaussian kernel parameters of the pairwise regularizer.
#[derive(Clone, Copy, Debug)]
pub struct KernelParams {
    /// Window radius (pairs up to Chebyshev distance r).
    pub radius: usize,
    pub sigma_xy: f32,
    pub sigma_rgb: f32,
    /// Stop gradients through clicked pixels' predictions (they are
    /// anchored by the click loss already).
    pub detach_clicked: bool,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            radius: 3,
            sigma_xy: 3.0,
            sigma_rgb: 0.1,
            detach_clicked: false,
        }
    }
}

/// Pairwise Gaussian-kernel compatibility penalty that propagates click
/// supervision to unlabeled neighbors:
/// `(1/Z) Σ_i Σ_{j∈N_r(i), j≠i} κ(i,j) Σ_c p_i(c)(1 − p_j(c))` with
/// `κ(i,j) = exp(−‖pos_i−pos_j‖²/2σ_xy² − ‖I_i−I_j‖²/2σ_rgb²)` and Z the
/// number of in-bounds ordered pairs.
pub fn gated_pairwise_regularizer(
    pred: &Tensor,
    frame: &Tensor,
    clicks: &ClickMap,
    kp: &KernelParams,
) -> Result<Tensor> {
    let (c, h, w) = prob_map_dims("gated_pairwise_regularizer", pred)?;
    if kp.radius < 1 {
        return Err(Error::invalid("kernel radius must be >= 1"));
    }
    if !(kp.sigma_xy > 0.0) || !(kp.sigma_rgb > 0.0) {
        return Err(Error::invalid("kernel bandwidths must be positive"));
    }
    match *frame.shape() {
        [1, 3, fh, fw] if fh == h && fw == w => {}
        _ => {
            return Err(Error::ShapeMismatch {
                op: "gated_pairwise_regularizer",
                lhs: pred.shape().to_vec(),
                rhs: frame.shape().to_vec(),
            })
        }
    }
    {
        let f = frame.data();
        if f.iter().any(|&v| !(-1e-6..=1.0 + 1e-6).contains(&v)) {
            return Err(Error::invalid("frame values must lie in [0,1]"));
        }
    }

    // optionally freeze clicked pixels' predictions
    let pred_used = if kp.detach_clicked && clicks.click_count() > 0 {
        let plane = h * w;
        let mut keep = vec![1.0f32; c * plane];
        let mut frozen = vec![0.0f32; c * plane];
        let detached = pred.detach();
        let dv = detached.data();
        for p in 0..plane {
            if clicks.mask()[p] == 1 {
                for ch in 0..c {
                    keep[ch * plane + p] = 0.0;
                    frozen[ch * plane + p] = dv[ch * plane + p];
                }
            }
        }
        drop(dv);
        let keep = Tensor::from_vec(pred.shape(), keep)?;
        let frozen = Tensor::from_vec(pred.shape(), frozen)?;
        ops::add(&ops::mul(pred, &keep)?, &frozen)?
    } else {
        pred.clone()
    };

    let plane = h * w;
    let fv = frame.to_vec();
    let r = kp.radius as i64;
    let inv_2sxy = 0.5 / (kp.sigma_xy as f64 * kp.sigma_xy as f64);
    let inv_2srgb = 0.5 / (kp.sigma_rgb as f64 * kp.sigma_rgb as f64);

    let mut total: Option<Tensor> = None;
    let mut pair_count = 0u64;
    for dy in -r..=r {
        for dx in -r..=r {
            if dy == 0 && dx == 0 {
                continue;
            }
            let spatial = (-((dy * dy + dx * dx) as f64) * inv_2sxy).exp();
            let mut kappa = vec![0.0f32; plane];
            let mut any = false;
            for y in 0..h as i64 {
                let jy = y + dy;
                if jy < 0 || jy >= h as i64 {
                    continue;
                }
                for x in 0..w as i64 {
                    let jx = x + dx;
                    if jx < 0 || jx >= w as i64 {
                        continue;
                    }
                    let i = (y * w as i64 + x) as usize;
                    let j = (jy * w as i64 + jx) as usize;
                    let mut color = 0.0f64;
                    for ch in 0..3 {
                        let d = (fv[ch * plane + i] - fv[ch * plane + j]) as f64;
                        color += d * d;
                    }
                    kappa[i] = (spatial * (-color * inv_2srgb).exp()) as f32;
                    pair_count += 1;
                    any = true;
                }
            }
            if !any {
                continue;
            }
            // tile κ across channels; Σ_c p_i(c)(1-p_j(c)) splits into
            // Σ κ⊙p  −  Σ κ⊙p⊙shift(p)
            let mut kappa_t = vec![0.0f32; c * plane];
            for ch in 0..c {
                kappa_t[ch * plane..(ch + 1) * plane].copy_from_slice(&kappa);
            }
            let kappa_t = Tensor::from_vec(pred.shape(), kappa_t)?;

            let mut grid = vec![0.0f32; 2 * plane];
            grid[..plane].fill(dy as f32);
            grid[plane..].fill(dx as f32);
            let grid = Tensor::from_vec(&[1, 2, h, w], grid)?;
            let shifted = ops::bilinear_sample(&pred_used, &grid)?;

            let weighted = ops::mul(&kappa_t, &pred_used)?;
            let unary = ops::reduce_sum(&weighted)?;
            let pairwise = ops::reduce_sum(&ops::mul(&weighted, &shifted)?)?;
            let term = ops::sub(&unary, &pairwise)?;
            total = Some(match total {
                Some(t) => ops::add(&t, &term)?,
                None => term,
            });
        }
    }

    let total = total.ok_or_else(|| Error::invalid("window contains no valid pixel pairs"))?;
    ops::mul(&total, &Tensor::scalar(1.0 / pair_count as f32))
}

/// Click loss on the target frame: pCE plus `lambda` times the pairwise
/// regularizer.
pub fn weakly_loss(
    pred_k: &Tensor,
    frame_k: &Tensor,
    clicks_k: &ClickMap,
    lambda: f32,
    kp: &KernelParams,
) -> Result<Tensor> {
    let pce = partial_cross_entropy(pred_k, clicks_k)?;
    if lambda == 0.0 {
        return Ok(pce);
    }
    let reg = gated_pairwise_regularizer(pred_k, frame_k, clicks_k, kp)?;
    ops::add(&pce, &ops::mul(&reg, &Tensor::scalar(lambda))?)
}

/// How per-pixel disagreement `d` maps to a consistency weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WfMode {
    /// `exp(+d)`: the literal formula; up-weights disagreement.
    PaperExp,
    /// `exp(−d)`: down-weights unreliable regions (the default).
    AttenuatingExp,
}

impl std::str::FromStr for WfMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<WfMode> {
        match s {
            "paper_exp" => Ok(WfMode::PaperExp),
            "attenuating_exp" => Ok(WfMode::AttenuatingExp),
            other => Err(Error::InvalidConfig(format!("unknown wf_mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for WfMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WfMode::PaperExp => write!(f, "paper_exp"),
            WfMode::AttenuatingExp => write!(f, "attenuating_exp"),
        }
    }
}

/// Per-pixel reliability weights for warped predictions, derived from
/// their agreement with the frozen teacher. Detached from the tape.
#[derive(Clone, Debug)]
pub struct ConsistencyMatrix {
    /// Shape (1,1,H,W), strictly positive.
    pub weights: Tensor,
    pub mode: WfMode,
}

/// `d(p)` = mean over classes of `|warped(p,c) − teacher(p,c)|`, then
/// `W = exp(d)` (paper_exp) or `W = exp(−d)` (attenuating_exp). Both maps
/// are read as values only; no gradient flows through `W`.
pub fn consistency_matrix(
    warped_student: &Tensor,
    teacher_k: &Tensor,
    mode: WfMode,
) -> Result<ConsistencyMatrix> {
    if warped_student.shape() != teacher_k.shape() {
        return Err(Error::ShapeMismatch {
            op: "consistency_matrix",
            lhs: warped_student.shape().to_vec(),
            rhs: teacher_k.shape().to_vec(),
        });
    }
    let (c, h, w) = prob_map_dims("consistency_matrix", warped_student)?;
    let plane = h * w;
    let wv = warped_student.data();
    let tv = teacher_k.data();
    let mut out = vec![0.0f32; plane];
    for p in 0..plane {
        let mut d = 0.0f64;
        for ch in 0..c {
            d += (wv[ch * plane + p] - tv[ch * plane + p]).abs() as f64;
        }
        d /= c as f64;
        out[p] = match mode {
            WfMode::PaperExp => d.exp() as f32,
            WfMode::AttenuatingExp => (-d).exp() as f32,
        };
    }
    drop(wv);
    drop(tv);
    Ok(ConsistencyMatrix {
        weights: Tensor::from_vec(&[1, 1, h, w], out)?,
        mode,
    })
}

/// Temporal distillation between a flow-warped neighbor prediction and the
/// target prediction: mean over pixels of `W(p) · Σ_c (warped − target)²`.
/// Gradients reach both student predictions; `W` is constant.
pub fn mfd_loss(
    warped_student: &Tensor,
    student_k: &Tensor,
    w: &ConsistencyMatrix,
) -> Result<Tensor> {
    if warped_student.shape() != student_k.shape() {
        return Err(Error::ShapeMismatch {
            op: "mfd_loss",
            lhs: warped_student.shape().to_vec(),
            rhs: student_k.shape().to_vec(),
        });
    }
    let (c, h, wdt) = prob_map_dims("mfd_loss", warped_student)?;
    if w.weights.shape() != [1, 1, h, wdt] {
        return Err(Error::ShapeMismatch {
            op: "mfd_loss",
            lhs: warped_student.shape().to_vec(),
            rhs: w.weights.shape().to_vec(),
        });
    }
    let plane = h * wdt;
    let wv = w.weights.data();
    let mut tiled = vec![0.0f32; c * plane];
    for ch in 0..c {
        tiled[ch * plane..(ch + 1) * plane].copy_from_slice(&wv);
    }
    drop(wv);
    let w_tiled = Tensor::from_vec(warped_student.shape(), tiled)?;
    let diff = ops::sub(warped_student, student_k)?;
    let sq = ops::mul(&diff, &diff)?;
    let weighted = ops::mul(&w_tiled, &sq)?;
    // mean over pixels of the per-pixel class sums = C * mean over elements
    ops::mul(&ops::reduce_mean(&weighted)?, &Tensor::scalar(c as f32))
}

/// Per-pixel KL(student ‖ teacher), mean over pixels. The teacher map is
/// always read as values only.
pub fn kd_loss(student_f: &Tensor, teacher_f: &Tensor) -> Result<Tensor> {
    if student_f.shape() != teacher_f.shape() {
        return Err(Error::ShapeMismatch {
            op: "kd_loss",
            lhs: student_f.shape().to_vec(),
            rhs: teacher_f.shape().to_vec(),
        });
    }
    let (c, _, _) = prob_map_dims("kd_loss", student_f)?;
    let log_teacher = Tensor::from_vec(
        teacher_f.shape(),
        teacher_f.data().iter().map(|v| v.max(LOG_FLOOR).ln()).collect(),
    )?;
    let elem = ops::mul(student_f, &ops::sub(&ops::log(student_f)?, &log_teacher)?)?;
    ops::mul(&ops::reduce_mean(&elem)?, &Tensor::scalar(c as f32))
}

/// Weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f32,
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.1,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("loss weight {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One training step's frames: the click-annotated target plus unlabeled
/// neighbors (frame indices retained for flow bookkeeping).
pub struct ClipBatch<'a> {
    pub target_index: usize,
    pub target_frame: &'a Tensor,
    pub neighbors: Vec<(usize, &'a Tensor)>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub weakly: f32,
    pub mfd: f32,
    pub kd: f32,
}

pub struct LossBreakdown {
    pub total: Tensor,
    /// Unweighted sub-totals for logging.
    pub terms: LossTerms,
}

/// The combined objective
/// `α·L_weakly(x_k) + β·Σ_f L_mfd(x_f,x_k) + γ·Σ_f L_kd(x_f)`,
/// with the KD sum running over the target frame as well. Teacher
/// predictions are supplied by `teacher_prob`, which must return detached
/// probability maps.
pub fn total_loss_with(
    student: &SegNet,
    mut teacher_prob: impl FnMut(usize, &Tensor) -> Result<Tensor>,
    batch: &ClipBatch,
    flows: &[FlowField],
    clicks: &ClickMap,
    weights: &LossWeights,
    wf_mode: WfMode,
    kp: &KernelParams,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let needs_mfd = weights.beta > 0.0 && !batch.neighbors.is_empty();
    let needs_kd = weights.gamma > 0.0;
    if weights.beta > 0.0 && flows.len() != batch.neighbors.len() {
        return Err(Error::invalid(format!(
            "{} flows supplied for {} neighbors",
            flows.len(),
            batch.neighbors.len()
        )));
    }

    let student_k = student.forward(batch.target_frame)?;
    let weakly = weakly_loss(&student_k, batch.target_frame, clicks, weights.lambda, kp)?;
    let mut terms = LossTerms {
        weakly: weakly.item(),
        ..LossTerms::default()
    };
    let mut total = ops::mul(&weakly, &Tensor::scalar(weights.alpha))?;

    let teacher_k = if needs_mfd || needs_kd {
        Some(teacher_prob(batch.target_index, batch.target_frame)?)
    } else {
        None
    };

    let mut mfd_sum: Option<Tensor> = None;
    let mut kd_sum: Option<Tensor> = None;
    if needs_mfd || needs_kd {
        for (i, (f_idx, f_frame)) in batch.neighbors.iter().enumerate() {
            let student_f = student.forward(f_frame)?;
            if needs_mfd {
                let flow = &flows[i];
                if (flow.src_index, flow.dst_index) != (*f_idx, batch.target_index) {
                    return Err(Error::invalid(format!(
                        "flow {} maps {}->{} but batch expects {}->{}",
                        i, flow.src_index, flow.dst_index, f_idx, batch.target_index
                    )));
                }
                let warped = crate::flow::warp(&student_f, flow)?;
                let w = consistency_matrix(&warped, teacher_k.as_ref().unwrap(), wf_mode)?;
                let term = mfd_loss(&warped, &student_k, &w)?;
                mfd_sum = Some(match mfd_sum {
                    Some(s) => ops::add(&s, &term)?,
                    None => term,
                });
            }
            if needs_kd {
                let t_f = teacher_prob(*f_idx, f_frame)?;
                let term = kd_loss(&student_f, &t_f)?;
                kd_sum = Some(match kd_sum {
                    Some(s) => ops::add(&s, &term)?,
                    None => term,
                });
            }
        }
    }
    if needs_kd {
        let term = kd_loss(&student_k, teacher_k.as_ref().unwrap())?;
        kd_sum = Some(match kd_sum {
            Some(s) => ops::add(&s, &term)?,
            None => term,
        });
    }

    if let Some(m) = mfd_sum {
        terms.mfd = m.item();
        total = ops::add(&total, &ops::mul(&m, &Tensor::scalar(weights.beta))?)?;
    }
    if let Some(k) = kd_sum {
        terms.kd = k.item();
        total = ops::add(&total, &ops::mul(&k, &Tensor::scalar(weights.gamma))?)?;
    }
    Ok(LossBreakdown { total, terms })
}

/// [`total_loss_with`] driven by a frozen teacher net.
pub fn total_loss(
    student: &SegNet,
    teacher: &SegNet,
    batch: &ClipBatch,
    flows: &[FlowField],
    clicks: &ClickMap,
    weights: &LossWeights,
    wf_mode: WfMode,
    kp: &KernelParams,
) -> Result<LossBreakdown> {
    total_loss_with(
        student,
        |_, frame| teacher.forward_frozen(frame),
        batch,
        flows,
        clicks,
        weights,
        wf_mode,
        kp,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{build, Role};
    use crate::tensor::grad_check;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prob_map(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let logits =
            Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
        ops::softmax_channel(&logits).unwrap()
    }

    fn single_click(h: usize, w: usize, at: usize, class: i32) -> ClickMap {
        let mut labels = vec![-1i32; h * w];
        let mut mask = vec![0u8; h * w];
        labels[at] = class;
        mask[at] = 1;
        ClickMap::new(labels, mask, h, w).unwrap()
    }

    #[test]
    fn click_map_enforces_label_mask_correspondence() {
        assert!(ClickMap::new(vec![0, -1], vec![1, 0], 1, 2).is_ok());
        assert!(ClickMap::new(vec![0, 3], vec![1, 0], 1, 2).is_err()); // label without mask
        assert!(ClickMap::new(vec![-1, -1], vec![1, 0], 1, 2).is_err()); // mask without label
        assert!(ClickMap::new(vec![0, -1], vec![2, 0], 1, 2).is_err()); // non-binary mask
    }

    #[test]
    fn pce_single_click_scalar_value() {
        // 2 pixels, C=2, click on pixel 0 class 0 with p=0.8 -> -ln 0.8
        let pred = Tensor::from_vec(&[1, 2, 1, 2], vec![0.8, 0.5, 0.2, 0.5]).unwrap();
        let clicks = single_click(1, 2, 0, 0);
        let loss = partial_cross_entropy(&pred, &clicks).unwrap().item();
        assert!((loss - 0.22314355).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn pce_is_zero_on_exact_one_hot_match() {
        let pred = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let clicks = single_click(1, 2, 0, 0);
        let loss = partial_cross_entropy(&pred, &clicks).unwrap().item();
        assert!(loss.abs() <= 1e-7, "{loss}");
    }

    #[test]
    fn pce_with_full_mask_equals_dense_cross_entropy_oracle() {
        let (c, h, w) = (3usize, 4usize, 4usize);
        let pred = prob_map(&[1, c, h, w], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let labels: Vec<i32> = (0..h * w).map(|_| rng.random_range(0..c as i32)).collect();
        let clicks = ClickMap::new(labels.clone(), vec![1u8; h * w], h, w).unwrap();
        let loss = partial_cross_entropy(&pred, &clicks).unwrap().item() as f64;

        // independent dense-CE scalar loop
        let pv = pred.to_vec();
        let plane = h * w;
        let mut oracle = 0.0f64;
        for p in 0..plane {
            let prob = pv[labels[p] as usize * plane + p] as f64;
            oracle -= prob.max(1e-8).ln();
        }
        oracle /= plane as f64;
        assert!((loss - oracle).abs() < 1e-6, "{loss} vs {oracle}");
    }

    #[test]
    fn pce_rejects_degenerate_inputs() {
        let pred = prob_map(&[1, 2, 2, 2], 0);
        let empty = ClickMap::new(vec![-1; 4], vec![0; 4], 2, 2).unwrap();
        assert!(partial_cross_entropy(&pred, &empty).is_err());
        let bad_label = single_click(2, 2, 0, 5);
        assert!(partial_cross_entropy(&pred, &bad_label).is_err());
    }

    #[test]
    fn regularizer_zero_for_uniform_one_hot_prediction() {
        // same one-hot vector everywhere: no pairwise disagreement
        let (h, w) = (4, 4);
        let mut data = vec![0.0f32; 2 * h * w];
        data[..h * w].fill(1.0);
        let pred = Tensor::from_vec(&[1, 2, h, w], data).unwrap();
        let frame = Tensor::full(&[1, 3, h, w], 0.5);
        let clicks = single_click(h, w, 0, 0);
        let kp = KernelParams {
            sigma_rgb: f32::INFINITY,
            ..KernelParams::default()
        };
        let loss = gated_pairwise_regularizer(&pred, &frame, &clicks, &kp)
            .unwrap()
            .item();
        assert!(loss.abs() < 1e-7, "{loss}");
    }

    #[test]
    fn regularizer_two_pixel_hand_value() {
        // ŷ = [(1,0),(0,1)], identical colors, r=1, σ_xy=1:
        // each ordered pair contributes exp(-1/2)·1
        let pred = Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let frame = Tensor::full(&[1, 3, 1, 2], 0.3);
        let clicks = single_click(1, 2, 0, 0);
        let kp = KernelParams {
            radius: 1,
            sigma_xy: 1.0,
            sigma_rgb: 0.1,
            detach_clicked: false,
        };
        let loss = gated_pairwise_regularizer(&pred, &frame, &clicks, &kp)
            .unwrap()
            .item();
        let per_pair = (-0.5f64).exp(); // 0.6065
        assert!((loss as f64 - per_pair).abs() < 1e-6, "{loss} vs {per_pair}");
    }

    #[test]
    fn regularizer_kappa_monotone_in_sigma_rgb() {
        let pred = prob_map(&[1, 3, 6, 6], 11);
        let frame = prob_map(&[1, 3, 6, 6], 12); // values in [0,1]
        let clicks = single_click(6, 6, 7, 1);
        let mut prev = -f32::INFINITY;
        for sigma_rgb in [0.05f32, 0.1, 0.3, 1.0, 10.0] {
            let kp = KernelParams {
                sigma_rgb,
                ..KernelParams::default()
            };
            let v = gated_pairwise_regularizer(&pred, &frame, &clicks, &kp)
                .unwrap()
                .item();
            assert!(v >= prev - 1e-7, "sigma_rgb {sigma_rgb}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn regularizer_rejects_zero_radius() {
        let pred = prob_map(&[1, 2, 2, 2], 0);
        let frame = Tensor::full(&[1, 3, 2, 2], 0.5);
        let clicks = single_click(2, 2, 0, 0);
        let kp = KernelParams {
            radius: 0,
            ..KernelParams::default()
        };
        assert!(gated_pairwise_regularizer(&pred, &frame, &clicks, &kp).is_err());
    }

    #[test]
    fn weakly_loss_decomposes() {
        let pred = prob_map(&[1, 3, 6, 6], 21);
        let frame = prob_map(&[1, 3, 6, 6], 22);
        let clicks = single_click(6, 6, 14, 2);
        let kp = KernelParams::default();

        let pce = partial_cross_entropy(&pred, &clicks).unwrap().item();
        let reg = gated_pairwise_regularizer(&pred, &frame, &clicks, &kp)
            .unwrap()
            .item();

        // λ = 0 equals pCE exactly
        let w0 = weakly_loss(&pred, &frame, &clicks, 0.0, &kp).unwrap().item();
        assert_eq!(w0, pce);

        // λ = 0.1: difference recovers λ·regularizer
        let w1 = weakly_loss(&pred, &frame, &clicks, 0.1, &kp).unwrap().item();
        assert!(((w1 - pce) - 0.1 * reg).abs() < 1e-6, "{w1} {pce} {reg}");
    }

    #[test]
    fn consistency_matrix_modes_and_hand_values() {
        let a = prob_map(&[1, 2, 2, 2], 31);
        let w = consistency_matrix(&a, &a, WfMode::PaperExp).unwrap();
        assert!(w.weights.data().iter().all(|&v| v == 1.0));
        let w = consistency_matrix(&a, &a, WfMode::AttenuatingExp).unwrap();
        assert!(w.weights.data().iter().all(|&v| v == 1.0));

        // single pixel: warped (1,0) vs teacher (0,1) -> d = 1
        let warped = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let teacher = Tensor::from_vec(&[1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
        let att = consistency_matrix(&warped, &teacher, WfMode::AttenuatingExp).unwrap();
        assert!((att.weights.item() - (-1.0f32).exp()).abs() < 1e-6);
        let pap = consistency_matrix(&warped, &teacher, WfMode::PaperExp).unwrap();
        assert!((pap.weights.item() - 1.0f32.exp()).abs() < 1e-6);
    }

    #[test]
    fn attenuating_weights_stay_in_unit_interval() {
        for seed in 0..10u64 {
            let a = prob_map(&[1, 4, 3, 3], 100 + seed);
            let b = prob_map(&[1, 4, 3, 3], 200 + seed);
            let w = consistency_matrix(&a, &b, WfMode::AttenuatingExp).unwrap();
            assert!(w
                .weights
                .data()
                .iter()
                .all(|&v| v > 0.0 && v <= 1.0 + 1e-7));
        }
    }

    #[test]
    fn mfd_loss_hand_values_and_linearity() {
        let a = prob_map(&[1, 3, 4, 4], 41);
        let w = consistency_matrix(&a, &a, WfMode::AttenuatingExp).unwrap();
        assert_eq!(mfd_loss(&a, &a, &w).unwrap().item(), 0.0);

        // single pixel, C=2: warped (1,0), target (0,1), W=1 -> 1+1 = 2
        let warped = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let target = Tensor::from_vec(&[1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
        let ones = ConsistencyMatrix {
            weights: Tensor::full(&[1, 1, 1, 1], 1.0),
            mode: WfMode::AttenuatingExp,
        };
        assert!((mfd_loss(&warped, &target, &ones).unwrap().item() - 2.0).abs() < 1e-6);

        // scaling W scales the loss
        let b = prob_map(&[1, 3, 4, 4], 42);
        let w1 = consistency_matrix(&a, &b, WfMode::AttenuatingExp).unwrap();
        let l1 = mfd_loss(&a, &b, &w1).unwrap().item();
        let w3 = ConsistencyMatrix {
            weights: Tensor::from_vec(&[1, 1, 4, 4], w1.weights.data().iter().map(|v| 3.0 * v).collect())
                .unwrap(),
            mode: w1.mode,
        };
        let l3 = mfd_loss(&a, &b, &w3).unwrap().item();
        assert!((l3 - 3.0 * l1).abs() < 1e-6 * l1.abs().max(1.0), "{l3} vs 3*{l1}");
    }

    #[test]
    fn kd_loss_values() {
        let a = prob_map(&[1, 3, 4, 4], 51);
        assert_eq!(kd_loss(&a, &a).unwrap().item(), 0.0);

        // single pixel: student (0.5,0.5), teacher (0.9,0.1)
        let s = Tensor::from_vec(&[1, 2, 1, 1], vec![0.5, 0.5]).unwrap();
        let t = Tensor::from_vec(&[1, 2, 1, 1], vec![0.9, 0.1]).unwrap();
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let got = kd_loss(&s, &t).unwrap().item() as f64;
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
        assert!((got - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn kd_loss_is_nonnegative() {
        for seed in 0..10u64 {
            let s = prob_map(&[1, 3, 4, 4], 300 + seed);
            let t = prob_map(&[1, 3, 4, 4], 400 + seed);
            let v = kd_loss(&s, &t).unwrap().item();
            assert!(v >= -1e-6, "seed {seed}: {v}");
        }
    }

    fn toy_setup(
        seed: u64,
    ) -> (
        SegNet,
        SegNet,
        Vec<Tensor>,
        ClickMap,
        Vec<FlowField>,
    ) {
        let student = build(Role::Student, 4, 3, seed).unwrap();
        let teacher = build(Role::Teacher, 8, 3, seed + 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let frames: Vec<Tensor> = (0..3)
            .map(|_| {
                Tensor::from_vec(
                    &[1, 3, 8, 8],
                    (0..192).map(|_| rng.random_range(0.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let clicks = {
            let mut labels = vec![-1i32; 64];
            let mut mask = vec![0u8; 64];
            labels[10] = 0;
            mask[10] = 1;
            labels[45] = 2;
            mask[45] = 1;
            ClickMap::new(labels, mask, 8, 8).unwrap()
        };
        let flows: Vec<FlowField> = (0..2)
            .map(|i| {
                let mut g = vec![0.4f32; 2 * 64];
                g[64..].fill(-0.6);
                FlowField::new(Tensor::from_vec(&[1, 2, 8, 8], g).unwrap(), i, 2).unwrap()
            })
            .collect();
        (student, teacher, frames, clicks, flows)
    }

    #[test]
    fn total_loss_reduces_to_weakly_when_beta_gamma_zero() {
        let (student, teacher, frames, clicks, flows) = toy_setup(7);
        let batch = ClipBatch {
            target_index: 2,
            target_frame: &frames[2],
            neighbors: vec![(0, &frames[0]), (1, &frames[1])],
        };
        let weights = LossWeights {
            lambda: 0.1,
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let kp = KernelParams::default();
        let b = total_loss(&student, &teacher, &batch, &flows, &clicks, &weights, WfMode::AttenuatingExp, &kp)
            .unwrap();
        let direct = {
            let p = student.forward(&frames[2]).unwrap();
            weakly_loss(&p, &frames[2], &clicks, 0.1, &kp).unwrap().item()
        };
        assert!((b.total.item() - direct).abs() < 1e-7);
        assert_eq!(b.terms.mfd, 0.0);
        assert_eq!(b.terms.kd, 0.0);
    }

    #[test]
    fn total_loss_with_no_neighbors_is_weakly_plus_kd() {
        let (student, teacher, frames, clicks, _) = toy_setup(8);
        let batch = ClipBatch {
            target_index: 2,
            target_frame: &frames[2],
            neighbors: vec![],
        };
        let weights = LossWeights::default();
        let kp = KernelParams::default();
        let b = total_loss(&student, &teacher, &batch, &[], &clicks, &weights, WfMode::AttenuatingExp, &kp)
            .unwrap();
        // recompute the two surviving terms independently
        let p = student.forward(&frames[2]).unwrap();
        let wl = weakly_loss(&p, &frames[2], &clicks, weights.lambda, &kp).unwrap().item();
        let t = teacher.forward_frozen(&frames[2]).unwrap();
        let kd = kd_loss(&p, &t).unwrap().item();
        assert!((b.total.item() - (wl + kd)).abs() < 1e-6, "{} vs {}", b.total.item(), wl + kd);
        assert_eq!(b.terms.mfd, 0.0); // empty MFD sum contributes zero
    }

    #[test]
    fn total_loss_gradients_reach_every_student_weight_and_no_teacher_weight() {
        let (student, teacher, frames, clicks, flows) = toy_setup(9);
        let batch = ClipBatch {
            target_index: 2,
            target_frame: &frames[2],
            neighbors: vec![(0, &frames[0]), (1, &frames[1])],
        };
        let b = total_loss(
            &student,
            &teacher,
            &batch,
            &flows,
            &clicks,
            &LossWeights::default(),
            WfMode::AttenuatingExp,
            &KernelParams::default(),
        )
        .unwrap();
        b.total.backward().unwrap();
        for p in student.params() {
            let g = p.grad_or_zeros();
            assert!(g.iter().any(|&v| v != 0.0), "student weight with all-zero grad");
        }
        for p in teacher.params() {
            assert!(p.grad().is_none(), "teacher weight received gradient");
            assert!(p.grad_or_zeros().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn teacher_perturbation_changes_value_but_never_gets_grads() {
        let (student, teacher, frames, clicks, flows) = toy_setup(10);
        let batch = ClipBatch {
            target_index: 2,
            target_frame: &frames[2],
            neighbors: vec![(0, &frames[0]), (1, &frames[1])],
        };
        let weights = LossWeights::default();
        let kp = KernelParams::default();
        let v1 = total_loss(&student, &teacher, &batch, &flows, &clicks, &weights, WfMode::AttenuatingExp, &kp)
            .unwrap()
            .total
            .item();
        teacher.params()[0].with_data_mut(|d| d[0] += 0.5);
        let v2 = total_loss(&student, &teacher, &batch, &flows, &clicks, &weights, WfMode::AttenuatingExp, &kp)
            .unwrap()
            .total
            .item();
        assert_ne!(v1, v2, "teacher weights must affect the loss value");
    }

    /// Student net whose relu pre-activations are strictly positive for
    /// [0,1] inputs: positive weights and floored biases. Central
    /// differences are undefined across relu kinks, so weight-space checks
    /// probe away from them (the relu branch itself has its own op check).
    fn kink_free_student(seed: u64) -> SegNet {
        let net = build(Role::Student, 4, 3, seed).unwrap();
        for p in net.params() {
            let positive: Vec<f32> = if p.shape().len() == 4 {
                // scaled so each layer's gain is ~1 and the softmax stays
                // unsaturated (saturated probs make the check ill-posed)
                p.data().iter().map(|v| (v.abs() / 3.0).max(0.01)).collect()
            } else {
                p.data().iter().map(|v| v.abs().max(0.05)).collect()
            };
            p.with_data_mut(|d| d.copy_from_slice(&positive));
        }
        net
    }

    /// Gradient check a loss against every weight tensor of the student.
    fn check_loss_against_weights(
        loss_of: impl Fn(&SegNet) -> Tensor,
        seed: u64,
        tol: f32,
    ) {
        let student = kink_free_student(seed);
        let n_params = student.params().len();
        for pi in 0..n_params {
            let base = student.params()[pi].to_vec();
            let shape = student.params()[pi].shape().to_vec();
            let x = Tensor::from_vec(&shape, base).unwrap();
            let err = grad_check(
                |t| {
                    // splice the probed tensor in as the pi-th weight
                    let mut net = kink_free_student(seed);
                    net.replace_param(pi, t.clone()).unwrap();
                    loss_of(&net)
                },
                &x,
                1e-2,
            );
            assert!(err < tol, "param {pi}: max_rel_error = {err}");
        }
    }

    #[test]
    fn every_loss_gradient_checks_against_net_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let frame = Tensor::from_vec(
            &[1, 3, 8, 8],
            (0..192).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let frame_f = Tensor::from_vec(
            &[1, 3, 8, 8],
            (0..192).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let clicks = {
            // a dozen clicks across all classes keeps every weight's
            // gradient component well away from zero
            let mut labels = vec![-1i32; 64];
            let mut mask = vec![0u8; 64];
            for (i, p) in (0..64).step_by(5).enumerate() {
                labels[p] = (i % 3) as i32;
                mask[p] = 1;
            }
            ClickMap::new(labels, mask, 8, 8).unwrap()
        };
        let teacher = build(Role::Teacher, 8, 3, 123).unwrap();
        let teacher_k = teacher.forward_frozen(&frame).unwrap();
        let flow = {
            let mut g = vec![0.3f32; 2 * 64];
            g[64..].fill(-0.4);
            FlowField::new(Tensor::from_vec(&[1, 2, 8, 8], g).unwrap(), 0, 1).unwrap()
        };
        let kp = KernelParams::default();

        // pCE
        check_loss_against_weights(
            |net| {
                let p = net.forward(&frame).unwrap();
                partial_cross_entropy(&p, &clicks).unwrap()
            },
            1,
            5e-3,
        );
        // regularizer
        check_loss_against_weights(
            |net| {
                let p = net.forward(&frame).unwrap();
                gated_pairwise_regularizer(&p, &frame, &clicks, &kp).unwrap()
            },
            2,
            5e-3,
        );
        // MFD through the warp, consistency matrix included
        check_loss_against_weights(
            |net| {
                let pf = net.forward(&frame_f).unwrap();
                let pk = net.forward(&frame).unwrap();
                let warped = crate::flow::warp(&pf, &flow).unwrap();
                let w = consistency_matrix(&warped, &teacher_k, WfMode::AttenuatingExp).unwrap();
                mfd_loss(&warped, &pk, &w).unwrap()
            },
            3,
            5e-3,
        );
        // KD
        check_loss_against_weights(
            |net| {
                let p = net.forward(&frame).unwrap();
                kd_loss(&p, &teacher_k).unwrap()
            },
            4,
            5e-3,
        );
    }
}
