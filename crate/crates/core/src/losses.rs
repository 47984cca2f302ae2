//! Training objectives, built as nodes on a [`Graph`] so they can be
//! differentiated. All reductions are means.

use eventgan_grad::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the flow smoothness term.
    pub lambda_smooth: f64,
    pub weight_flow: f64,
    pub weight_recon: f64,
    pub weight_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_smooth: 0.5, weight_flow: 1.0, weight_recon: 1.0, weight_adv: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_smooth, self.weight_flow, self.weight_recon, self.weight_adv];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Which second term enters the cycle loss next to the flow loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleForm {
    /// Flow loss plus reconstruction loss.
    #[default]
    FlowRecon,
    /// Flow loss plus the generator's adversarial loss; the reconstruction
    /// network is then unused.
    FlowAdversarial,
}

/// `mean(relu(1 - D(real))) + mean(relu(1 + D(fake)))`.
pub fn hinge_d_loss<T: Real>(g: &mut Graph<T>, real: Var, fake: Var) -> Var {
    let r = real_term(g, real);
    let f = fake_term(g, fake);
    g.add(r, f)
}

/// As [`hinge_d_loss`], but real samples whose entry in `flipped` is set are
/// scored as fake (`relu(1 + D)`) instead.
pub fn hinge_d_loss_flipped<T: Real>(g: &mut Graph<T>, real: Var, fake: Var, flipped: &[bool]) -> Var {
    let [n, c, h, w] = g.shape(real);
    assert_eq!(flipped.len(), n, "one flip flag per real sample");
    let sign = Tensor::from_fn([n, c, h, w], |[i, ..]| if flipped[i] { -T::one() } else { T::one() });
    let s = g.constant(sign);
    let signed = g.mul(real, s);
    let r = real_term(g, signed);
    let f = fake_term(g, fake);
    g.add(r, f)
}

fn real_term<T: Real>(g: &mut Graph<T>, scores: Var) -> Var {
    let neg = g.scale(scores, -T::one());
    let margin = g.add_scalar(neg, T::one());
    let r = g.relu(margin);
    g.mean(r)
}

fn fake_term<T: Real>(g: &mut Graph<T>, scores: Var) -> Var {
    let margin = g.add_scalar(scores, T::one());
    let r = g.relu(margin);
    g.mean(r)
}

/// `-mean(D(fake))`.
pub fn hinge_g_loss<T: Real>(g: &mut Graph<T>, fake: Var) -> Var {
    let m = g.mean(fake);
    g.scale(m, -T::one())
}

/// Samples `image` at `x - flow(x)` bilinearly. Returns the warped image and
/// the validity mask (0 where the sample point left the image).
pub fn warp_image<T: Real>(g: &mut Graph<T>, image: Var, flow: Var) -> Result<(Var, Tensor<T>)> {
    let [n, c, h, w] = g.shape(image);
    let fs = g.shape(flow);
    if c != 1 || fs != [n, 2, h, w] {
        return Err(Error::ShapeMismatch(format!("warp of image {:?} by flow {fs:?}", [n, c, h, w])));
    }
    if !g.value(flow).all_finite() {
        return Err(Error::NonFinite("flow field"));
    }
    Ok(g.warp(image, flow))
}

pub struct FlowLoss {
    pub total: Var,
    pub photometric: Var,
    pub smoothness: Var,
}

/// Photometric L1 between the warped first image and the second image over
/// valid pixels, plus `lambda_smooth` times the mean absolute forward
/// differences of the flow in x and y.
pub fn flow_loss<T: Real>(g: &mut Graph<T>, i0: Var, i1: Var, flow: Var, lambda_smooth: f64) -> Result<FlowLoss> {
    if g.shape(i0) != g.shape(i1) {
        return Err(Error::ShapeMismatch("flow loss images differ in shape".into()));
    }
    let (warped, mask) = warp_image(g, i0, flow)?;
    let d = g.sub(warped, i1);
    let a = g.abs(d);
    let photometric = g.masked_mean(a, &mask);
    let dx = g.diff_x(flow);
    let dx = g.abs(dx);
    let dx = g.mean(dx);
    let dy = g.diff_y(flow);
    let dy = g.abs(dy);
    let dy = g.mean(dy);
    let smoothness = g.add(dx, dy);
    let weighted = g.scale(smoothness, T::of(lambda_smooth));
    let total = g.add(photometric, weighted);
    Ok(FlowLoss { total, photometric, smoothness })
}

/// `mean(|predicted - target|)`.
pub fn recon_loss<T: Real>(g: &mut Graph<T>, predicted: Var, target: Var) -> Result<Var> {
    if g.shape(predicted) != g.shape(target) {
        return Err(Error::ShapeMismatch("reconstruction and target differ in shape".into()));
    }
    let d = g.sub(predicted, target);
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// `weight_flow * flow + weight_recon * second`, where `second` is the
/// reconstruction loss (or the adversarial loss under
/// [`CycleForm::FlowAdversarial`], in which case it enters unweighted).
pub fn cycle_loss<T: Real>(g: &mut Graph<T>, flow: Var, second: Var, weights: &LossWeights, form: CycleForm) -> Var {
    let f = g.scale(flow, T::of(weights.weight_flow));
    let s = match form {
        CycleForm::FlowRecon => g.scale(second, T::of(weights.weight_recon)),
        CycleForm::FlowAdversarial => second,
    };
    g.add(f, s)
}

/// `weight_adv * adversarial + cycle`.
pub fn generator_step_loss<T: Real>(g: &mut Graph<T>, adversarial: Var, cycle: Var, weights: &LossWeights) -> Var {
    let a = g.scale(adversarial, T::of(weights.weight_adv));
    g.add(a, cycle)
}

/// The discriminator step optimizes its hinge loss alone.
pub fn discriminator_step_loss(d_loss: Var) -> Var {
    d_loss
}
