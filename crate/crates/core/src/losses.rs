//! Image and mesh objectives with analytic adjoints.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::Image;
use crate::math::Vec3;
use crate::scene::Mesh;
use crate::{Error, Result};

/// A loss value and its gradient with respect to the loss input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPart<A> {
    pub value: f64,
    pub adjoint: A,
}

/// Weights of the silhouette, RGB and Laplacian terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_sil: f64,
    pub lambda_rgb: f64,
    pub lambda_lap: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_sil: 1.0,
            lambda_rgb: 1.0,
            lambda_lap: 3e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_sil, self.lambda_rgb, self.lambda_lap];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("loss weights must be finite and >= 0"))
        }
    }
}

/// `0.5 * ||rendered - target||^2`.
pub fn rgb_l2(target: &Image, rendered: &Image) -> Result<LossPart<Image>> {
    target.check_shape(rendered)?;
    let mut adjoint = Image::zeros(rendered.width, rendered.height, rendered.channels);
    let mut value = 0.0;
    for ((a, r), t) in adjoint.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let diff = r - t;
        value += diff * diff;
        *a = diff;
    }
    Ok(LossPart {
        value: 0.5 * value,
        adjoint,
    })
}

/// `||rendered - target||_1`; the adjoint is 0 where the images agree.
pub fn rgb_l1(target: &Image, rendered: &Image) -> Result<LossPart<Image>> {
    target.check_shape(rendered)?;
    let mut adjoint = Image::zeros(rendered.width, rendered.height, rendered.channels);
    let mut value = 0.0;
    for ((a, r), t) in adjoint.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let diff = r - t;
        value += diff.abs();
        *a = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    Ok(LossPart { value, adjoint })
}

/// `1 - sum(I * R) / sum(I + R - I * R)`, gradient taken with respect to the
/// rendered silhouette `R`. Two empty silhouettes give 0.
pub fn neg_iou(target: &Image, rendered: &Image) -> Result<LossPart<Image>> {
    target.check_shape(rendered)?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (t, r) in target.data.iter().zip(&rendered.data) {
        inter += t * r;
        union += t + r - t * r;
    }
    let mut adjoint = Image::zeros(rendered.width, rendered.height, rendered.channels);
    if union <= 0.0 {
        return Ok(LossPart { value: 0.0, adjoint });
    }
    let u2 = union * union;
    for (a, t) in adjoint.data.iter_mut().zip(&target.data) {
        *a = -(t * union - inter * (1.0 - t)) / u2;
    }
    Ok(LossPart {
        value: 1.0 - inter / union,
        adjoint,
    })
}

/// Sum over vertices of the squared distance to the centroid of their
/// neighbors. Isolated vertices contribute nothing.
pub fn laplacian_loss(mesh: &Mesh, vertices: &[Vec3]) -> Result<LossPart<Vec<Vec3>>> {
    let adjacency = mesh.adjacency();
    if vertices.len() != adjacency.len() {
        return Err(Error::DimensionMismatch {
            expected: adjacency.len(),
            got: vertices.len(),
        });
    }
    let mut value = 0.0;
    let mut adjoint = vec![Vec3::zeros(); vertices.len()];
    for (v, nb) in adjacency.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let inv = 1.0 / nb.len() as f64;
        let centroid = nb.iter().map(|&u| vertices[u]).sum::<Vec3>() * inv;
        let delta = vertices[v] - centroid;
        value += delta.norm_squared();
        adjoint[v] += delta * 2.0;
        for &u in nb {
            adjoint[u] -= delta * (2.0 * inv);
        }
    }
    Ok(LossPart { value, adjoint })
}

/// Weighted sum of the three objectives with correspondingly scaled
/// adjoints.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLoss {
    pub value: f64,
    pub silhouette: Option<Image>,
    pub rgb: Option<Image>,
    pub laplacian: Option<Vec<Vec3>>,
}

/// `lambda_sil L_sil + lambda_rgb L_rgb + lambda_lap L_lap`.
///
/// A part may be omitted only when its weight is zero.
pub fn composite_loss(
    weights: &LossWeights,
    silhouette: Option<LossPart<Image>>,
    rgb: Option<LossPart<Image>>,
    laplacian: Option<LossPart<Vec<Vec3>>>,
) -> Result<CompositeLoss> {
    weights.validate()?;
    let mut value = 0.0;
    let silhouette = scaled_image("silhouette", weights.lambda_sil, silhouette, &mut value)?;
    let rgb = scaled_image("rgb", weights.lambda_rgb, rgb, &mut value)?;
    let laplacian = match laplacian {
        Some(part) => {
            value += weights.lambda_lap * part.value;
            Some(part.adjoint.into_iter().map(|g| g * weights.lambda_lap).collect())
        }
        None if weights.lambda_lap > 0.0 => return Err(Error::MissingLossPart("laplacian")),
        None => None,
    };
    Ok(CompositeLoss {
        value,
        silhouette,
        rgb,
        laplacian,
    })
}

fn scaled_image(
    name: &'static str,
    weight: f64,
    part: Option<LossPart<Image>>,
    value: &mut f64,
) -> Result<Option<Image>> {
    match part {
        Some(mut part) => {
            *value += weight * part.value;
            part.adjoint.data.iter_mut().for_each(|g| *g *= weight);
            Ok(Some(part.adjoint))
        }
        None if weight > 0.0 => Err(Error::MissingLossPart(name)),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{NoisePrior, NoiseStream, Stage};

    fn image(w: usize, h: usize, c: usize, values: &[f64]) -> Image {
        Image::from_data(w, h, c, values.to_vec()).unwrap()
    }

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let s = NoiseStream::new(seed, Stage::Custom(3));
        let data = (0..w * h * c)
            .map(|i| NoisePrior::Uniform.sample(&s.at(i as u32, 0, 0)) + 0.5)
            .collect();
        Image::from_data(w, h, c, data).unwrap()
    }

    #[test]
    fn l2_values() {
        let a = Image::zeros(2, 2, 3);
        let part = rgb_l2(&a, &a).unwrap();
        assert_eq!(part.value, 0.0);
        assert!(part.adjoint.data.iter().all(|&g| g == 0.0));
        let mut b = a.clone();
        b.set(1, 0, 2, 0.5);
        assert_eq!(rgb_l2(&a, &b).unwrap().value, 0.125);
    }

    #[test]
    fn l2_taylor_step() {
        let t = random_image(4, 4, 3, 1);
        let r = random_image(4, 4, 3, 2);
        let part = rgb_l2(&t, &r).unwrap();
        let lr = 1e-4;
        let mut stepped = r.clone();
        for (x, g) in stepped.data.iter_mut().zip(&part.adjoint.data) {
            *x -= lr * g;
        }
        let predicted = lr * part.adjoint.data.iter().map(|g| g * g).sum::<f64>();
        let actual = part.value - rgb_l2(&t, &stepped).unwrap().value;
        assert!((actual - predicted).abs() < 0.01 * predicted);
    }

    #[test]
    fn l1_values() {
        let a = Image::zeros(2, 1, 3);
        assert_eq!(rgb_l1(&a, &a).unwrap().value, 0.0);
        let b = image(2, 1, 3, &[0.2, -0.1, 0.0, 0.0, 0.0, 0.0]);
        let part = rgb_l1(&a, &b).unwrap();
        assert!((part.value - 0.3).abs() < 1e-15);
        assert_eq!(&part.adjoint.data[..3], &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Image::zeros(2, 2, 3);
        let b = Image::zeros(2, 3, 3);
        assert!(matches!(rgb_l2(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(neg_iou(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn iou_values() {
        let i = image(4, 1, 1, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(neg_iou(&i, &i).unwrap().value, 0.0);
        let disjoint = image(4, 1, 1, &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(neg_iou(&i, &disjoint).unwrap().value, 1.0);
        let wider = image(4, 1, 1, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(neg_iou(&i, &wider).unwrap().value, 0.5);
        let empty = Image::zeros(4, 1, 1);
        let part = neg_iou(&empty, &empty).unwrap();
        assert_eq!(part.value, 0.0);
        assert!(part.adjoint.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn laplacian_chain_and_translation() {
        let vertices = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        let mesh = Mesh::with_uniform_color(vertices.clone(), vec![[0, 1, 2]], [1.0; 3]).unwrap();
        let base = laplacian_loss(&mesh, &vertices).unwrap().value;
        let shifted: Vec<Vec3> = vertices.iter().map(|v| v + Vec3::new(0.3, -2.0, 5.0)).collect();
        assert!((laplacian_loss(&mesh, &shifted).unwrap().value - base).abs() < 1e-12);
    }

    #[test]
    fn composite_arithmetic() {
        let img = |v: f64| LossPart {
            value: v,
            adjoint: Image::from_data(1, 1, 1, vec![1.0]).unwrap(),
        };
        let lap = LossPart {
            value: 10.0,
            adjoint: vec![Vec3::new(1.0, 0.0, 0.0)],
        };
        let w = LossWeights::default();
        let c = composite_loss(&w, Some(img(0.5)), Some(img(0.2)), Some(lap.clone())).unwrap();
        assert!((c.value - 0.73).abs() < 1e-12);
        assert!((c.laplacian.unwrap()[0].x - 3e-3).abs() < 1e-15);

        let zero = LossWeights {
            lambda_sil: 0.0,
            lambda_rgb: 0.0,
            lambda_lap: 0.0,
        };
        assert_eq!(composite_loss(&zero, None, None, None).unwrap().value, 0.0);

        let only_rgb = LossWeights {
            lambda_rgb: 2.0,
            ..zero
        };
        let c = composite_loss(&only_rgb, None, Some(img(0.2)), None).unwrap();
        assert_eq!(c.value, 0.4);
        assert_eq!(c.rgb.unwrap().data, vec![2.0]);
        assert_eq!(
            composite_loss(&w, None, Some(img(0.2)), Some(lap)),
            Err(Error::MissingLossPart("silhouette"))
        );
    }
}
