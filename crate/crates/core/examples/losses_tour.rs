//! Evaluate every objective term on one forward/backward translation of a
//! freshly initialized toy model, then combine them with the default weights.

use derain_cyclegan::data::{procedural_scene, synth_rain, RainSynthSpec};
use derain_cyclegan::losses::{
    adversarial_losses, attention_loss_parts, cycle_loss, gmm_nll, perceptual_loss, reconstructive_loss, total_loss,
    AttentionPrior, FeatureExtractor, GmmModel, LossComponents, LossTerm, LossWeights,
};
use derain_cyclegan::model::{ModelBundle, ModelConfig};
use rand::SeedableRng;

fn main() -> derain_cyclegan::Result<()> {
    let bundle = ModelBundle::new(ModelConfig::toy())?;
    let (r, _) = synth_rain(&procedural_scene(3, 32, 32, 1), &RainSynthSpec { seed: 1, ..Default::default() })?;
    let n = procedural_scene(3, 32, 32, 2);

    let fwd = bundle.translate_forward(&r, &n)?;
    let bwd = bundle.translate_backward(&fwd.n_r, &fwd.r_n)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let target = AttentionPrior::default().sample_target(fwd.att_r.tensor().shape(), &mut rng);

    let mut c = LossComponents::default();
    let (att_r, att_n) = attention_loss_parts(&fwd.att_r, &fwd.att_n, &target)?;
    c.set(LossTerm::Att, att_r + att_n);
    let (_, g_n) = adversarial_losses(&bundle.discriminate(false, &n)?, &bundle.discriminate(false, &fwd.n_r)?)?;
    let (_, g_r) = adversarial_losses(&bundle.discriminate(true, &r)?, &bundle.discriminate(true, &fwd.r_n)?)?;
    c.set(LossTerm::Adv, g_n + g_r);
    c.set(LossTerm::Cc, cycle_loss(&r, &bwd.r_rec, &n, &bwd.n_rec)?);
    c.set(LossTerm::P, perceptual_loss(&fwd.n_r, &r, &FeatureExtractor::default())?);
    let residual = r.tensor().zip_map(fwd.n_r.tensor(), |a, b| a - b)?;
    c.set(LossTerm::Gmm, gmm_nll(&residual, &GmmModel::unit(3)?)?);
    c.set(LossTerm::R, reconstructive_loss(&fwd.att_r, &fwd.n_r, &r)?);

    let weights = LossWeights::default();
    for t in LossTerm::ALL {
        let mark = if weights.is_active(t) { "" } else { "  (inactive)" };
        println!("{:>4}: {:>10.6}  x {:<5}{mark}", t.name(), c.get(t), weights.weight(t));
    }
    println!("total: {:.6}", total_loss(&c, &weights)?);
    Ok(())
}
