//! Every differentiable operation against central differences, 100 seeds each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srnn::lstm::{Lstm, LstmParams};
use srnn::tensor::{gradcheck, GradCheckOptions, Graph, ModelParams, Pointwise, Tensor, Var};
use srnn::Result;

const SEEDS: u64 = 100;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Runs `build` on random parameters of the given shapes for every seed.
/// The scalar loss is a random linear functional of the op output, so every
/// output coordinate gets a distinct upstream gradient.
fn check<F>(shapes: &[(&str, &[usize])], build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: ModelParams = shapes
            .iter()
            .map(|(name, shape)| (name.to_string(), random(&mut rng, shape)))
            .collect();
        let probe_seed = rng.random::<u64>();
        let report = gradcheck(
            |g, bound| {
                let vars: Vec<Var> = shapes.iter().map(|(n, _)| bound.get(n).unwrap()).collect();
                let out = build(g, &vars)?;
                let shape = g.shape(out).to_vec();
                let mut r = ChaCha8Rng::seed_from_u64(probe_seed);
                let w = g.constant(random(&mut r, &shape));
                let prod = g.mul(out, w)?;
                Ok(g.sum(prod))
            },
            &params,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(
            report.passed(),
            "seed {seed}: max rel error {:.3e}, worst {:?}",
            report.max_rel_error,
            report.worst.first()
        );
    }
}

#[test]
fn matmul() {
    check(&[("a", &[3, 4]), ("b", &[4, 2])], |g, v| g.matmul(v[0], v[1]));
}

#[test]
fn matmul_transposed_rhs() {
    check(&[("a", &[3, 4]), ("b", &[5, 4])], |g, v| g.matmul_nt(v[0], v[1]));
}

#[test]
fn transpose() {
    check(&[("a", &[3, 4])], |g, v| g.transpose(v[0]));
}

#[test]
fn add_same_shape_and_row_broadcast() {
    check(&[("a", &[3, 4]), ("b", &[3, 4])], |g, v| g.add(v[0], v[1]));
    check(&[("a", &[3, 4]), ("b", &[4])], |g, v| g.add(v[0], v[1]));
}

#[test]
fn mul_and_scale() {
    check(&[("a", &[2, 3]), ("b", &[2, 3])], |g, v| g.mul(v[0], v[1]));
    check(&[("a", &[2, 3])], |g, v| Ok(g.scale(v[0], -2.5)));
}

#[test]
fn pointwise_nonlinearities() {
    check(&[("a", &[2, 5])], |g, v| g.pointwise(Pointwise::Sigmoid, v[0], None));
    check(&[("a", &[2, 5])], |g, v| g.pointwise(Pointwise::Tanh, v[0], None));
}

#[test]
fn sum() {
    check(&[("a", &[4, 2])], |g, v| Ok(g.sum(v[0])));
}

#[test]
fn concat_vectors_and_matrices() {
    check(&[("a", &[3]), ("b", &[2]), ("c", &[4])], |g, v| g.concat(v));
    check(&[("a", &[2, 3]), ("b", &[2, 1])], |g, v| g.concat(v));
}

#[test]
fn column_slice_and_row_gather() {
    check(&[("a", &[3, 6])], |g, v| g.slice_cols(v[0], 2, 3));
    check(&[("a", &[4, 3])], |g, v| g.select_rows(v[0], &[3, 0, 3, 1]));
    check(&[("a", &[4, 3])], |g, v| g.row(v[0], 2));
}

#[test]
fn segment_sum_and_reshape() {
    check(&[("a", &[5, 2])], |g, v| {
        let s = g.segment_sum(v[0], &[vec![0, 4], vec![], vec![1, 2, 3], vec![2]])?;
        g.reshape(s, &[2, 4])
    });
}

#[test]
fn elementwise_max() {
    check(&[("a", &[6]), ("b", &[6]), ("c", &[6])], |g, v| g.elementwise_max(v));
}

#[test]
fn softmax_cross_entropy() {
    check(&[("z", &[7])], |g, v| g.softmax_cross_entropy(v[0], 3));
    check(&[("z", &[3, 5])], |g, v| g.softmax_cross_entropy_mean(v[0], &[4, 0, 2]));
}

#[test]
fn lstm_step_over_three_frames() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        LstmParams::init(3, 4, &mut rng).unwrap().insert_into(&mut params, "cell");
        for (_, t) in params.iter_mut() {
            for x in t.data_mut() {
                *x *= 2.0;
            }
        }
        let xs: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[2, 3])).collect();
        let report = gradcheck(
            |g, bound| {
                let cell = Lstm::bind(g, bound, "cell")?;
                let mut state = cell.zero_state(g, 2)?;
                for x in &xs {
                    let x = g.constant(x.clone());
                    state = cell.step(g, &state, x)?;
                }
                let both = g.concat(&[state.h, state.c])?;
                Ok(g.sum(both))
            },
            &params,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {:.3e}", report.max_rel_error);
    }
}
