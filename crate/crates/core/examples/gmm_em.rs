//! Fit the zero-mean streak prior by EM to samples from a known mixture
//! and print the NLL trajectory.

use derain_cyclegan::losses::{gmm_em_fit, GmmModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> derain_cyclegan::Result<()> {
    let truth = GmmModel::new(vec![0.7, 0.3], vec![0.01, 0.25])?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<f64> = (0..10_000)
        .map(|i| {
            let var = if i % 10 < 7 { 0.01 } else { 0.25 };
            Normal::new(0.0, f64::sqrt(var)).unwrap().sample(&mut rng)
        })
        .collect();

    let fit = gmm_em_fit(&samples, 2, 30, 0)?;
    for (i, nll) in fit.trajectory.iter().enumerate().step_by(5) {
        println!("iter {i:>2}  nll {nll:.6}");
    }
    println!("true    weights {:?} variances {:?}", truth.weights(), truth.variances());
    println!("fitted  weights {:.3?} variances {:.4?}", fit.model.weights(), fit.model.variances());
    println!("nll under truth {:.6}, under fit {:.6}", truth.nll(&samples), fit.model.nll(&samples));
    Ok(())
}
