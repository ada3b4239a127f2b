//! Training objectives.
//!
//! * Segmentation: binary cross-entropy plus soft Dice on the decoder output.
//! * Contrastive: mean squared difference plus `1 - SSIM` between the latent
//!   of an image and the latent of its CLAHE-randomized copy.

use crate::error::{Error, Result};
use crate::imgproc::{SSIM_C1, SSIM_C2};
use crate::nn::{Bound, Network};
use crate::tensor::{Graph, Real, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the logs.
pub const PROB_EPS: f64 = 1e-7;
/// Added to the Dice denominator.
pub const DICE_SMOOTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub seg_ce: f64,
    pub seg_dice: f64,
    pub cont_l2: f64,
    pub cont_ssim: f64,
    pub total: f64,
    pub lambda_cont: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.seg_ce, self.seg_dice, self.cont_l2, self.cont_ssim, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SegTerms {
    pub total: Var,
    pub ce: Var,
    pub dice: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ContrastiveTerms {
    pub total: Var,
    pub l2: Var,
    pub ssim: Var,
}

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, g.shape(a), g.shape(b)));
    }
    Ok(())
}

fn one_minus<T: Real>(g: &mut Graph<T>, a: Var) -> Var {
    let neg = g.scale(a, -T::ONE);
    g.add_scalar(neg, T::ONE)
}

/// `-(1/N) Σ [y log ŷ + (1-y) log(1-ŷ)] + 1 - 2Σyŷ / (Σy² + Σŷ² + smooth)`,
/// sums taken over every element of the batch.
pub fn seg_loss<T: Real>(g: &mut Graph<T>, yhat: Var, y: Var) -> Result<SegTerms> {
    same_shape(g, "seg_loss", yhat, y)?;
    let eps = T::from_f64(PROB_EPS);
    let p = g.clamp(yhat, eps, T::ONE - eps);

    let log_p = g.log(p)?;
    let q = one_minus(g, p);
    let log_q = g.log(q)?;
    let not_y = one_minus(g, y);
    let pos = g.mul(y, log_p)?;
    let neg = g.mul(not_y, log_q)?;
    let ll = g.add(pos, neg)?;
    let mean_ll = g.mean_all(ll)?;
    let ce = g.scale(mean_ll, -T::ONE);

    let yp = g.mul(y, p)?;
    let inter = g.sum_all(yp)?;
    let yy = g.mul(y, y)?;
    let pp = g.mul(p, p)?;
    let sum_yy = g.sum_all(yy)?;
    let sum_pp = g.sum_all(pp)?;
    let denom = g.add(sum_yy, sum_pp)?;
    let denom = g.add_scalar(denom, T::from_f64(DICE_SMOOTH));
    let ratio = g.div(inter, denom)?;
    let ratio = g.scale(ratio, T::from_f64(2.0));
    let dice = one_minus(g, ratio);

    let total = g.add(ce, dice)?;
    Ok(SegTerms { total, ce, dice })
}

/// Per-sample global SSIM of two `[B, C, H, W]` tensors, shape `[B]`.
pub fn ssim_per_sample<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "ssim", a, b)?;
    let rank = g.shape(a).len();
    if rank < 2 {
        return Err(Error::invalid("ssim", "expected a batched tensor"));
    }
    let axes: Vec<usize> = (1..rank).collect();
    let c1 = T::from_f64(SSIM_C1);
    let c2 = T::from_f64(SSIM_C2);

    let mu_a = g.mean(a, &axes)?;
    let mu_b = g.mean(b, &axes)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.mean(aa, &axes)?;
    let e_bb = g.mean(bb, &axes)?;
    let e_ab = g.mean(ab, &axes)?;

    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let lum_num = g.scale(mu_ab, T::from_f64(2.0));
    let lum_num = g.add_scalar(lum_num, c1);
    let cs_num = g.scale(cov, T::from_f64(2.0));
    let cs_num = g.add_scalar(cs_num, c2);
    let lum_den = g.add(mu_aa, mu_bb)?;
    let lum_den = g.add_scalar(lum_den, c1);
    let cs_den = g.add(var_a, var_b)?;
    let cs_den = g.add_scalar(cs_den, c2);

    let num = g.mul(lum_num, cs_num)?;
    let den = g.mul(lum_den, cs_den)?;
    g.div(num, den)
}

/// `mean((z - z')²) + (1 - mean_b SSIM(z_b, z'_b))`.
pub fn contrastive_loss<T: Real>(g: &mut Graph<T>, z: Var, z_aug: Var) -> Result<ContrastiveTerms> {
    same_shape(g, "contrastive_loss", z, z_aug)?;
    let d = g.sub(z, z_aug)?;
    let sq = g.mul(d, d)?;
    let l2 = g.mean_all(sq)?;
    let s = ssim_per_sample(g, z, z_aug)?;
    let s = g.mean_all(s)?;
    let ssim = one_minus(g, s);
    let total = g.add(l2, ssim)?;
    Ok(ContrastiveTerms { total, l2, ssim })
}

/// The full training objective
/// `½[seg(D(E(x)), y) + seg(D(E(x')), y)] + λ · cont(E(x), E(x'))`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    encoder: &Network,
    enc: &Bound,
    decoder: &Network,
    dec: &Bound,
    x: Var,
    x_aug: Var,
    y: Var,
    lambda_cont: f64,
) -> Result<(Var, LossBreakdown)> {
    let z = encoder.forward(g, enc, x)?;
    let z_aug = encoder.forward(g, enc, x_aug)?;
    let yhat = decoder.forward(g, dec, z)?;
    let yhat_aug = decoder.forward(g, dec, z_aug)?;
    let seg = seg_loss(g, yhat, y)?;
    let seg_aug = seg_loss(g, yhat_aug, y)?;
    let cont = contrastive_loss(g, z, z_aug)?;

    let half = T::from_f64(0.5);
    let seg_sum = g.add(seg.total, seg_aug.total)?;
    let seg_mean = g.scale(seg_sum, half);
    let weighted = g.scale(cont.total, T::from_f64(lambda_cont));
    let total = g.add(seg_mean, weighted)?;

    let val = |g: &Graph<T>, v: Var| g.value(v).data()[0].to_f64();
    let breakdown = LossBreakdown {
        seg_ce: 0.5 * (val(g, seg.ce) + val(g, seg_aug.ce)),
        seg_dice: 0.5 * (val(g, seg.dice) + val(g, seg_aug.dice)),
        cont_l2: val(g, cont.l2),
        cont_ssim: val(g, cont.ssim),
        total: val(g, total),
        lambda_cont,
    };
    Ok((total, breakdown))
}

/// Segmentation-only objective for a single network (the baselines).
pub fn supervised_loss<T: Real>(
    g: &mut Graph<T>,
    net: &Network,
    bound: &Bound,
    x: Var,
    y: Var,
) -> Result<(Var, LossBreakdown)> {
    let yhat = net.forward(g, bound, x)?;
    let seg = seg_loss(g, yhat, y)?;
    let val = |v: Var| g.value(v).data()[0].to_f64();
    let breakdown = LossBreakdown {
        seg_ce: val(seg.ce),
        seg_dice: val(seg.dice),
        total: val(seg.total),
        ..Default::default()
    };
    Ok((seg.total, breakdown))
}
