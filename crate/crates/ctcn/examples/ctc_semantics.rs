//! What makes a concept-wise temporal convolution different from a plain
//! one: filters never mix concepts, the same filter bank serves every
//! concept, and the parameter count is independent of how many concepts
//! flow through it.

use ctcn::conv::{ctc_conv, CtcFilterBank};
use ctcn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::leaf(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (k_in, k_out, c, t, w) = (2usize, 3usize, 5usize, 16usize, 3usize);
    let bank = CtcFilterBank::new(
        rand_tensor(&mut rng, vec![k_out, k_in, w]),
        rand_tensor(&mut rng, vec![k_out]),
    )
    .unwrap();

    // Concept locality: poke one concept of the input, watch which output
    // concepts move.
    let x = rand_tensor(&mut rng, vec![k_in, c, t]);
    let y = ctc_conv(&x, &bank, 1).unwrap();
    let mut poked = x.data();
    let target_concept = 2usize;
    for k in 0..k_in {
        for j in 0..t {
            poked[(k * c + target_concept) * t + j] += 1.0;
        }
    }
    let xp = Tensor::leaf(vec![k_in, c, t], poked).unwrap();
    let yp = ctc_conv(&xp, &bank, 1).unwrap();
    let (yd, ypd) = (y.data(), yp.data());
    println!("perturbed input concept {target_concept}; per-concept output change:");
    for ci in 0..c {
        let delta: f64 = (0..k_out)
            .flat_map(|k| (0..t).map(move |j| (k, j)))
            .map(|(k, j)| (ypd[(k * c + ci) * t + j] - yd[(k * c + ci) * t + j]).abs())
            .sum();
        println!("  concept {ci}: total |delta| = {delta:.4}");
    }

    // Weight sharing: concept 0 and concept 4 see the same filters, so
    // feeding them identical signals yields identical responses.
    let mut shared = vec![0.0; k_in * c * t];
    let wave: Vec<f64> = (0..t).map(|j| (j as f64 * 0.7).sin()).collect();
    for k in 0..k_in {
        for j in 0..t {
            shared[(k * c) * t + j] = wave[j];
            shared[(k * c + 4) * t + j] = wave[j];
        }
    }
    let xs = Tensor::leaf(vec![k_in, c, t], shared).unwrap();
    let ys = ctc_conv(&xs, &bank, 1).unwrap().data();
    let max_dev: f64 = (0..k_out)
        .flat_map(|k| (0..t).map(move |j| (k, j)))
        .map(|(k, j)| (ys[(k * c) * t + j] - ys[(k * c + 4) * t + j]).abs())
        .fold(0.0, f64::max);
    println!("\nsame signal into concepts 0 and 4: max response difference = {max_dev:e}");

    // Parameter count versus concept count.
    println!("\nparameters of a {k_in}->{k_out} width-{w} layer:");
    println!("  ctc (any c):      {}", bank.parameter_count());
    for cc in [1usize, 4, 16, 64] {
        let std_params = (cc * k_out) * (cc * k_in) * w + cc * k_out;
        println!("  standard, c={cc:>2}:   {std_params}");
    }
}
