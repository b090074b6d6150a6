//! Compare analytic gradients against central finite differences for the
//! U-ARSE and the generator on a small random input.

use derain_cyclegan::gradcheck::{check_input, check_params, sample_param_elements, DEFAULT_STEP};
use derain_cyclegan::model::{ModelBundle, ModelConfig};
use derain_cyclegan::tensor::Tensor;
use rand::{Rng, SeedableRng};

fn main() -> derain_cyclegan::Result<()> {
    let cfg = ModelConfig {
        uarse_stages: 2,
        uarse_width: 4,
        generator_width: 4,
        discriminator_width: 4,
        ..ModelConfig::toy()
    };
    let bundle = ModelBundle::new(cfg)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::new(vec![3, 8, 8], (0..192).map(|_| rng.gen_range(-0.9..0.9)).collect())?;

    let uarse = |g: &mut derain_cyclegan::autograd::Graph, x| {
        let out = bundle.uarse.forward(g, &bundle.store, x)?;
        Ok(g.mean(out.final_mask))
    };
    let c = check_input(&x, DEFAULT_STEP, uarse)?;
    println!("U-ARSE, input:        rel. err {:.2e}", c.relative_error());

    let generator = |g: &mut derain_cyclegan::autograd::Graph, x| {
        let att = bundle.uarse.forward(g, &bundle.store, x)?.final_mask;
        let y = bundle.g_n.forward(g, &bundle.store, att, x)?;
        Ok(g.mean(y))
    };
    let c = check_input(&x, DEFAULT_STEP, generator)?;
    println!("U-ARSE + G_N, input:  rel. err {:.2e}", c.relative_error());

    let probes = sample_param_elements(&bundle.store, 2);
    let c = check_params(&bundle.store, &probes, DEFAULT_STEP, |g, store| {
        let xi = g.constant(x.clone());
        let att = bundle.uarse.forward(g, store, xi)?.final_mask;
        let y = bundle.g_n.forward(g, store, att, xi)?;
        Ok(g.mean(y))
    })?;
    println!("U-ARSE + G_N, {} parameter probes: rel. err {:.2e}", probes.len(), c.relative_error());
    Ok(())
}
