//! Scalar objectives: silhouette IoU, multi-scale IoU, embedding cosine, viewpoint error and
//! their weighted sum.

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{invalid, Error, Result};
use crate::geom::Vec3;
use crate::mesh::{Mesh, Regularizer};
use crate::render::{
    downsample, downsample_adjoint, CameraPose, ColorRender, RenderConfig, RgbImage, SilhouetteImage,
    SilhouetteRender, FLAT_GREY,
};

/// Floor for the IoU denominator.
const MIN_UNION: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ms: f64,
    pub lambda_r: f64,
    pub lambda_clip: f64,
    pub lambda_v: f64,
    /// One weight per pyramid level, finest first.
    pub lambda_scales: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ms: 0.1,
            lambda_r: 0.1,
            lambda_clip: 0.1,
            lambda_v: 0.1,
            lambda_scales: vec![1.0 / 3.0; 3],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_ms, self.lambda_r, self.lambda_clip, self.lambda_v];
        if all.iter().chain(&self.lambda_scales).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(invalid("at least one loss weight must be positive"));
        }
        if self.lambda_scales.is_empty() {
            return Err(invalid("pyramid needs at least one level"));
        }
        Ok(())
    }

    pub fn pyramid_depth(&self) -> usize {
        self.lambda_scales.len()
    }
}

/// Loss value with gradients for both images.
#[derive(Debug, Clone)]
pub struct IouGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// `1 - sum(a * b) / sum(a + b - a * b)`.
pub fn iou_loss(a: &SilhouetteImage, b: &SilhouetteImage) -> Result<f64> {
    Ok(iou_loss_grad(a, b)?.value)
}

pub fn iou_loss_grad(a: &SilhouetteImage, b: &SilhouetteImage) -> Result<IouGrad> {
    if a.width != b.width || a.height != b.height {
        return Err(invalid(format!("image sizes differ: {}x{} vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    if a.values.iter().all(|&v| v == 0.0) && b.values.iter().all(|&v| v == 0.0) {
        return Err(invalid("IoU of two empty images is undefined"));
    }
    let (mut inter, mut union) = (0.0, 0.0);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        inter += x * y;
        union += x + y - x * y;
    }
    let u = union.max(MIN_UNION);
    let value = 1.0 - inter / u;
    // d(1 - I/U)/dx = -(y U - I (1 - y)) / U^2
    let clamped = union < MIN_UNION;
    let grad = |other: &[f64]| -> Vec<f64> {
        other
            .iter()
            .map(|&y| {
                let du = if clamped { 0.0 } else { 1.0 - y };
                -(y * u - inter * du) / (u * u)
            })
            .collect()
    };
    Ok(IouGrad { value, grad_a: grad(&b.values), grad_b: grad(&a.values) })
}

/// Full-resolution image followed by successive 2x box downsamples.
pub fn pyramid(img: &SilhouetteImage, depth: usize) -> Result<Vec<SilhouetteImage>> {
    if depth == 0 {
        return Err(invalid("pyramid depth must be at least 1"));
    }
    let mut levels = vec![img.clone()];
    for _ in 1..depth {
        let next = downsample(levels.last().expect("non-empty"), 2)?;
        levels.push(next);
    }
    Ok(levels)
}

/// `sum_i lambda_i * iou_loss(pred_i, target_i)`.
pub fn multiscale_iou_loss(pred: &[SilhouetteImage], target: &[SilhouetteImage], lambda_scales: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != lambda_scales.len() {
        return Err(invalid(format!(
            "pyramid depths differ: {} predicted, {} target, {} weights",
            pred.len(),
            target.len(),
            lambda_scales.len()
        )));
    }
    let mut total = 0.0;
    for ((p, t), &w) in pred.iter().zip(target).zip(lambda_scales) {
        total += w * iou_loss(p, t)?;
    }
    Ok(total)
}

/// Multi-scale IoU of a full-resolution prediction against a target pyramid, with the gradient for
/// the prediction's pixels.
pub fn multiscale_iou_grad(pred: &SilhouetteImage, target: &[SilhouetteImage], lambda_scales: &[f64]) -> Result<(f64, Vec<f64>)> {
    if target.len() != lambda_scales.len() {
        return Err(invalid("one weight per pyramid level required"));
    }
    let levels = pyramid(pred, target.len())?;
    let mut grad = vec![0.0; pred.values.len()];
    let mut total = 0.0;
    for (i, ((p, t), &w)) in levels.iter().zip(target).zip(lambda_scales).enumerate() {
        if p.width != t.width || p.height != t.height {
            return Err(invalid(format!("pyramid level {i} sizes differ")));
        }
        let g = iou_loss_grad(p, t)?;
        total += w * g.value;
        let factor = 1usize << i;
        let up = downsample_adjoint(&g.grad_a, p.width, factor);
        for (a, b) in grad.iter_mut().zip(up) {
            *a += w * b;
        }
    }
    Ok((total, grad))
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-4 {
        return Err(invalid(format!("{what} embedding has norm {n}, expected 1")));
    }
    Ok(())
}

/// `1 - <image, text>` for unit vectors.
pub fn clip_loss(image: &EmbeddingVector, text: &EmbeddingVector) -> Result<f64> {
    clip_loss_values(image.values(), text.values())
}

pub fn clip_loss_values(image: &[f64], text: &[f64]) -> Result<f64> {
    if image.len() != text.len() {
        return Err(invalid(format!("embedding dimensions differ: {} vs {}", image.len(), text.len())));
    }
    check_unit(image, "image")?;
    check_unit(text, "text")?;
    let c: f64 = image.iter().zip(text).map(|(a, b)| a * b).sum();
    Ok((1.0 - c).clamp(0.0, 2.0))
}

/// Signed angular difference wrapped to `(-180, 180]`.
pub fn wrapped_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 { d - 360.0 } else { d }
}

/// Mean of the squared azimuth and elevation errors, degrees squared.
pub fn viewpoint_loss(pred: &CameraPose, gt: &CameraPose) -> f64 {
    viewpoint_loss_grad(pred, gt).0
}

/// Loss and its derivatives with respect to the predicted azimuth and elevation.
pub fn viewpoint_loss_grad(pred: &CameraPose, gt: &CameraPose) -> (f64, [f64; 2]) {
    let da = wrapped_difference(pred.azimuth, gt.azimuth);
    let de = pred.elevation - gt.elevation;
    ((da * da + de * de) / 2.0, [da, de])
}

/// Unweighted loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub ms: f64,
    pub r: f64,
    pub clip: f64,
    pub v: f64,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("multi-scale IoU", parts.ms), ("regularizer", parts.r), ("embedding", parts.clip), ("viewpoint", parts.v)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { component: name });
        }
    }
    Ok(w.lambda_ms * parts.ms + w.lambda_r * parts.r + w.lambda_clip * parts.clip + w.lambda_v * parts.v)
}

/// What the image encoder sees of an uncolored mesh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedView {
    /// Depth-aggregated render with every vertex a flat grey.
    #[default]
    FlatGrey,
    /// Soft silhouette composited in the same grey over the background.
    Silhouette,
}

/// Grey view of `mesh` for the image encoder, with a closure mapping image gradients back to
/// vertex gradients.
pub fn embed_view(
    mesh: &Mesh,
    pose: &CameraPose,
    cfg: &RenderConfig,
    view: EmbedView,
) -> Result<(RgbImage, Box<dyn Fn(&[Vec3]) -> Vec<Vec3>>)> {
    match view {
        EmbedView::FlatGrey => {
            let r = ColorRender::new(&mesh.with_uniform_color([FLAT_GREY; 3]), pose, cfg)?;
            let image = r.image.clone();
            Ok((image, Box::new(move |g: &[Vec3]| r.backward(g).vertices)))
        }
        EmbedView::Silhouette => {
            let r = SilhouetteRender::new(mesh, pose, cfg)?;
            let bg = cfg.background;
            let image = RgbImage {
                width: cfg.width,
                height: cfg.height,
                pixels: r.image.values.iter().map(|&s| [0, 1, 2].map(|k| s * FLAT_GREY + (1.0 - s) * bg[k])).collect(),
            };
            let back = move |g: &[Vec3]| {
                let gs: Vec<f64> = g.iter().map(|p| (0..3).map(|k| p[k] * (FLAT_GREY - bg[k])).sum()).collect();
                r.backward(&gs)
            };
            Ok((image, Box::new(back)))
        }
    }
}

/// Embedding loss of a mesh over several views: the view embeddings are averaged, renormalized and
/// compared with the prompt embedding.
pub fn multiview_clip_loss(
    mesh: &Mesh,
    prompt: &str,
    poses: &[CameraPose],
    provider: &dyn EmbeddingProvider,
    cfg: &RenderConfig,
) -> Result<f64> {
    let text = provider.embed_text(prompt)?;
    Ok(multiview_clip(mesh, &text, poses, provider, cfg, EmbedView::default(), false)?.0)
}

/// As [`multiview_clip_loss`] with a precomputed prompt embedding, optionally returning the vertex
/// gradient (which requires a provider with image gradients).
pub fn multiview_clip(
    mesh: &Mesh,
    text: &EmbeddingVector,
    poses: &[CameraPose],
    provider: &dyn EmbeddingProvider,
    cfg: &RenderConfig,
    view: EmbedView,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Vec3>>)> {
    if poses.is_empty() {
        return Err(invalid("at least one pose required"));
    }
    if with_grad && !provider.supports_image_gradient() {
        return Err(invalid("provider does not supply image gradients"));
    }
    let dim = text.dimension();
    let mut views = Vec::with_capacity(poses.len());
    let mut mean = vec![0.0; dim];
    for (i, pose) in poses.iter().enumerate() {
        let wrap = |e: Error| Error::ViewEmbedding { pose_index: i, source: Box::new(e) };
        let (image, back) = embed_view(mesh, pose, cfg, view)?;
        let (e, vjp) = if with_grad {
            provider.embed_image_with_grad(&image).map_err(wrap)?
        } else {
            (provider.embed_image(&image).map_err(wrap)?, None)
        };
        if e.dimension() != dim {
            return Err(wrap(invalid(format!("image embedding has dimension {}, prompt {dim}", e.dimension()))));
        }
        for (m, v) in mean.iter_mut().zip(e.values()) {
            *m += v / poses.len() as f64;
        }
        views.push((back, vjp));
    }
    let len = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(len > 0.0) {
        return Err(Error::NonFinite { component: "embedding" });
    }
    let u: Vec<f64> = mean.iter().map(|m| m / len).collect();
    let value = clip_loss_values(&u, text.values())?;
    if !with_grad {
        return Ok((value, None));
    }
    // L = 1 - u.t with u = m / |m|:  dL/dm = -(t - u (u.t)) / |m|,  dL/de_i = dL/dm / N
    let ut: f64 = u.iter().zip(text.values()).map(|(a, b)| a * b).sum();
    let g_e: Vec<f64> = u
        .iter()
        .zip(text.values())
        .map(|(ui, ti)| -(ti - ui * ut) / len / poses.len() as f64)
        .collect();
    let mut grad = vec![[0.0; 3]; mesh.vertices.len()];
    for (back, vjp) in views {
        let vjp = vjp.ok_or_else(|| invalid("provider returned no image gradient"))?;
        let g_img = vjp(&g_e);
        for (g, d) in grad.iter_mut().zip(back(&g_img)) {
            crate::geom::add_assign(g, d);
        }
    }
    Ok((value, Some(grad)))
}

/// Mean over views of `1 - <E(render), E(prompt)>`.
pub fn style_loss(renders: &[RgbImage], prompt: &str, provider: &dyn EmbeddingProvider) -> Result<f64> {
    let text = provider.embed_text(prompt)?;
    Ok(style_loss_grad(renders, &text, provider, false)?.0)
}

/// Style loss with optional per-render pixel gradients.
pub fn style_loss_grad(
    renders: &[RgbImage],
    text: &EmbeddingVector,
    provider: &dyn EmbeddingProvider,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Vec<Vec3>>>)> {
    if renders.is_empty() {
        return Err(invalid("at least one render required"));
    }
    let n = renders.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::new();
    for (i, img) in renders.iter().enumerate() {
        let wrap = |e: Error| Error::ViewEmbedding { pose_index: i, source: Box::new(e) };
        if with_grad {
            let (e, vjp) = provider.embed_image_with_grad(img).map_err(wrap)?;
            total += clip_loss(&e, text)? / n;
            let vjp = vjp.ok_or_else(|| invalid("provider does not supply image gradients"))?;
            let g: Vec<f64> = text.values().iter().map(|t| -t / n).collect();
            grads.push(vjp(&g));
        } else {
            let e = provider.embed_image(img).map_err(wrap)?;
            total += clip_loss(&e, text)? / n;
        }
    }
    Ok((total, with_grad.then_some(grads)))
}

/// Multi-scale IoU of the rendered silhouette against `target` plus `lambda_r` times the
/// Laplacian and flatten terms, with the vertex gradient.
pub fn silhouette_objective(
    mesh: &Mesh,
    pose: &CameraPose,
    cfg: &RenderConfig,
    target: &[SilhouetteImage],
    lambda_scales: &[f64],
    lambda_r: f64,
) -> Result<(f64, Vec<Vec3>)> {
    let render = SilhouetteRender::new(mesh, pose, cfg)?;
    let (ms, g_img) = multiscale_iou_grad(&render.image, target, lambda_scales)?;
    let mut grad = render.backward(&g_img);
    let reg = Regularizer::new(mesh)?;
    let lap = reg.laplacian(&mesh.vertices)?;
    let flat = reg.flatten(&mesh.vertices)?;
    for ((g, a), b) in grad.iter_mut().zip(&lap.grad).zip(&flat.grad) {
        for k in 0..3 {
            g[k] += lambda_r * (a[k] + b[k]);
        }
    }
    Ok((ms + lambda_r * (lap.value + flat.value), grad))
}

/// Cosine between a prompt and the averaged embedding of grey views of a mesh.
pub fn clip_score(
    mesh: &Mesh,
    prompt: &str,
    poses: &[CameraPose],
    provider: &dyn EmbeddingProvider,
    cfg: &RenderConfig,
) -> Result<f64> {
    Ok(1.0 - multiview_clip_loss(mesh, prompt, poses, provider, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::toy_provider;
    use crate::mesh::make_icosphere;
    use crate::render::render_color;

    fn img(values: &[f64]) -> SilhouetteImage {
        SilhouetteImage::new(values.len(), 1, values.to_vec()).unwrap()
    }

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_unit(v.to_vec()).unwrap()
    }

    #[test]
    fn iou_examples() {
        let mask = img(&[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(iou_loss(&mask, &mask).unwrap(), 0.0);
        assert_eq!(iou_loss(&img(&[1.0, 0.0]), &img(&[0.0, 1.0])).unwrap(), 1.0);
        // Intersection 1, union 2.
        assert_eq!(iou_loss(&img(&[1.0, 0.0]), &img(&[1.0, 1.0])).unwrap(), 0.5);
        assert!(iou_loss(&img(&[0.0, 0.0]), &img(&[0.0, 0.0])).is_err());
        assert!(iou_loss(&img(&[0.0, 0.0]), &img(&[0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn iou_gradient_matches_finite_differences() {
        let a = img(&[0.2, 0.9, 0.5, 0.0, 0.7]);
        let b = img(&[0.6, 0.1, 0.5, 0.3, 1.0]);
        let g = iou_loss_grad(&a, &b).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            for (which, analytic) in [(0, g.grad_a[i]), (1, g.grad_b[i])] {
                let (mut p, mut m) = if which == 0 { (a.clone(), a.clone()) } else { (b.clone(), b.clone()) };
                p.values[i] += h;
                m.values[i] -= h;
                let (fp, fm) = if which == 0 {
                    (iou_loss(&p, &b).unwrap(), iou_loss(&m, &b).unwrap())
                } else {
                    (iou_loss(&a, &p).unwrap(), iou_loss(&a, &m).unwrap())
                };
                let num = (fp - fm) / (2.0 * h);
                assert!((num - analytic).abs() < 1e-7, "{which} {i}: {num} vs {analytic}");
            }
        }
    }

    #[test]
    fn multiscale_examples() {
        let a = img(&[1.0, 0.0]);
        let b = img(&[1.0, 1.0]);
        assert_eq!(
            multiscale_iou_loss(&[a.clone()], &[b.clone()], &[1.0]).unwrap(),
            iou_loss(&a, &b).unwrap()
        );
        // Level losses 0.5 and 0.25.
        let c = img(&[1.0, 0.0, 0.0, 0.0]);
        let d = img(&[1.0, 1.0, 1.0, 1.0]);
        let e = img(&[1.0, 1.0, 1.0, 0.0]);
        assert_eq!(iou_loss(&c, &d).unwrap(), 0.75);
        let l2 = iou_loss(&e, &d).unwrap();
        assert_eq!(l2, 0.25);
        assert_eq!(multiscale_iou_loss(&[a.clone(), e.clone()], &[b.clone(), d.clone()], &[1.0, 1.0]).unwrap(), 0.75);
        let sq = SilhouetteImage::new(4, 4, vec![1.0; 16]).unwrap();
        let pyr = pyramid(&sq, 3).unwrap();
        assert_eq!(pyr.iter().map(|p| p.width).collect::<Vec<_>>(), vec![4, 2, 1]);
        assert_eq!(multiscale_iou_loss(&pyr, &pyr, &[1.0 / 3.0; 3]).unwrap(), 0.0);
        assert!(multiscale_iou_loss(&pyr, &pyr[..2], &[1.0; 3]).is_err());
        assert!(multiscale_iou_loss(&pyr[1..], &pyr[..2], &[1.0; 2]).is_err());
    }

    #[test]
    fn multiscale_gradient_matches_finite_differences() {
        let n = 8;
        let pred = SilhouetteImage::new(n, n, (0..n * n).map(|i| ((i * 37) % 17) as f64 / 17.0).collect()).unwrap();
        let target = SilhouetteImage::new(n, n, (0..n * n).map(|i| ((i * 11) % 5 == 0) as u8 as f64).collect()).unwrap();
        let tp = pyramid(&target, 3).unwrap();
        let w = [0.5, 0.3, 0.2];
        let (v, g) = multiscale_iou_grad(&pred, &tp, &w).unwrap();
        assert!((v - multiscale_iou_loss(&pyramid(&pred, 3).unwrap(), &tp, &w).unwrap()).abs() < 1e-15);
        let h = 1e-6;
        for i in 0..n * n {
            let mut p = pred.clone();
            p.values[i] += h;
            let mut m = pred.clone();
            m.values[i] -= h;
            let f = |x: &SilhouetteImage| multiscale_iou_loss(&pyramid(x, 3).unwrap(), &tp, &w).unwrap();
            let num = (f(&p) - f(&m)) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn clip_examples() {
        let u = unit(&[1.0, 0.0]);
        assert_eq!(clip_loss(&u, &u).unwrap(), 0.0);
        assert_eq!(clip_loss(&u, &unit(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(clip_loss(&u, &unit(&[-1.0, 0.0])).unwrap(), 2.0);
        assert!(clip_loss_values(&[1.1, 0.0], &[1.0, 0.0]).is_err());
        assert!(clip_loss_values(&[1.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn viewpoint_examples() {
        let p = |a: f64, e: f64| CameraPose::at(a, e).unwrap();
        assert_eq!(viewpoint_loss(&p(30.0, 10.0), &p(30.0, 10.0)), 0.0);
        assert!((viewpoint_loss(&p(350.0, 5.0), &p(10.0, 5.0)) - 200.0).abs() < 1e-9);
        assert!((viewpoint_loss(&p(40.0, 10.0), &p(40.0, 0.0)) - 50.0).abs() < 1e-9);
        assert_eq!(wrapped_difference(180.0, 0.0), 180.0);
        assert_eq!(wrapped_difference(0.0, 180.0), 180.0);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        let parts = LossParts { ms: 0.5, r: 0.2, clip: 0.8, v: 100.0 };
        assert!((total_loss(&parts, &w).unwrap() - 10.15).abs() < 1e-12);
        assert_eq!(total_loss(&LossParts::default(), &w).unwrap(), 0.0);
        let only = LossWeights { lambda_ms: 0.0, lambda_r: 0.0, lambda_clip: 2.0, lambda_v: 0.0, ..w.clone() };
        assert_eq!(total_loss(&parts, &only).unwrap(), 1.6);
        match total_loss(&LossParts { clip: f64::NAN, ..parts }, &w) {
            Err(Error::NonFinite { component }) => assert_eq!(component, "embedding"),
            other => panic!("{other:?}"),
        }
        let zero = LossWeights { lambda_ms: 0.0, lambda_r: 0.0, lambda_clip: 0.0, lambda_v: 0.0, ..w };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn multiview_examples() {
        let p = toy_provider();
        let m = make_icosphere(2).unwrap();
        let cfg = RenderConfig::square(32);
        let pose = CameraPose::at(30.0, 10.0).unwrap();
        let single = multiview_clip_loss(&m, "sphere", &[pose], p, &cfg).unwrap();
        let img = render_color(&m.with_uniform_color([FLAT_GREY; 3]), &pose, &cfg).unwrap();
        let direct = clip_loss(&p.embed_image(&img).unwrap(), &p.embed_text("sphere").unwrap()).unwrap();
        assert!((single - direct).abs() < 1e-12);
        let dup = multiview_clip_loss(&m, "sphere", &[pose, pose, pose], p, &cfg).unwrap();
        assert!((dup - single).abs() < 1e-12);
        let chair = multiview_clip_loss(&m, "chair", &[pose], p, &cfg).unwrap();
        assert!(single < chair);
    }

    #[test]
    fn multiview_gradient_matches_finite_differences() {
        let p = toy_provider();
        let text = p.embed_text("A grey table").unwrap();
        let poses = [CameraPose::at(20.0, 10.0).unwrap(), CameraPose::at(200.0, -5.0).unwrap()];
        for view in [EmbedView::FlatGrey, EmbedView::Silhouette] {
            let cfg = RenderConfig { sigma: 3e-3, gamma: 1e-2, ..RenderConfig::square(16) };
            let loss = |m: &Mesh, _: &CameraPose, c: &RenderConfig| -> Result<(f64, Vec<Vec3>)> {
                let (v, g) = multiview_clip(m, &text, &poses, p, c, view, true)?;
                Ok((v, g.unwrap()))
            };
            let r = crate::render::grad_check(loss, &make_icosphere(1).unwrap(), &poses[0], &cfg, 1e-2).unwrap();
            assert!(r.checked > 20 && r.fraction_passing >= 0.99, "{view:?}: {r:?}");
        }
    }

    #[test]
    fn style_examples() {
        let p = toy_provider();
        let red = RgbImage::filled(16, 16, [1.0, 0.0, 0.0]);
        let text = p.embed_image(&red).unwrap();
        assert!(style_loss_grad(&[red.clone()], &text, p, false).unwrap().0.abs() < 1e-12);
        let v_red = style_loss(&[red.clone()], "red", p).unwrap();
        let v_blue = style_loss(&[red.clone()], "blue", p).unwrap();
        assert!(v_red < v_blue);
        let other = RgbImage::filled(16, 16, [0.2, 0.5, 0.3]);
        let mean = style_loss(&[red.clone(), other.clone()], "red", p).unwrap();
        let a = style_loss(&[red], "red", p).unwrap();
        let b = style_loss(&[other], "red", p).unwrap();
        assert!((mean - (a + b) / 2.0).abs() < 1e-12);
        assert!(style_loss(&[], "red", p).is_err());
    }
}
