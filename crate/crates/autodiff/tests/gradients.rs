use feeder_autodiff::gradcheck::check_gradients;
use feeder_autodiff::{AutodiffError, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPES_PER_OP: usize = 50;

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::uniform(r, c, 1.0, rng)
}

/// Entries bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let data = (0..r * c)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(r, c, data).unwrap()
}

/// Contracts the op output with fixed random weights so every output entry matters.
fn weighted(g: &mut Graph, out: Var, seed: u64) -> Result<Var, AutodiffError> {
    let [r, c] = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::uniform(r, c, 1.0, &mut rng));
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn run<G, F>(name: &str, mut gen: G, f: F)
where
    G: FnMut(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError> + Copy,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    for case in 0..SHAPES_PER_OP {
        let inputs = gen(&mut rng);
        let report = check_gradients(&inputs, 1e-5, 1e-2, |g, v| {
            let out = f(g, v)?;
            weighted(g, out, case as u64)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{name} case {case}: {report:?}");
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..6), rng.gen_range(1..6))
}

#[test]
fn broadcasting_arithmetic() {
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2), ("div", 3)] {
        run(
            name,
            |rng| {
                let (r, c) = dims(rng);
                let (br, bc) = match rng.gen_range(0..4) {
                    0 => (r, c),
                    1 => (1, c),
                    2 => (r, 1),
                    _ => (1, 1),
                };
                let b = if op == 3 { away_from_zero(rng, br, bc).map(|x| x + x.signum()) } else { rand_t(rng, br, bc) };
                let a = rand_t(rng, r, c);
                // Also exercise a broadcast left operand.
                if rng.gen_bool(0.3) { vec![b, a] } else { vec![a, b] }
            },
            move |g, v| match op {
                0 => g.add(v[0], v[1]),
                1 => g.sub(v[0], v[1]),
                2 => g.mul(v[0], v[1]),
                _ => {
                    let [r0, c0] = g.shape(v[0]);
                    let [r1, c1] = g.shape(v[1]);
                    // The divisor is whichever operand was made safe.
                    if r0 * c0 <= r1 * c1 && (r0, c0) != (r1, c1) { g.div(v[1], v[0]) } else { g.div(v[0], v[1]) }
                }
            },
        );
    }
}

#[test]
fn matmul_and_transpose() {
    run(
        "matmul",
        |rng| {
            let (m, k) = dims(rng);
            let n = rng.gen_range(1..6);
            vec![rand_t(rng, m, k), rand_t(rng, k, n)]
        },
        |g, v| g.matmul(v[0], v[1]),
    );
    run("transpose", |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r, c)] }, |g, v| Ok(g.transpose(v[0])));
}

#[test]
fn unary_ops() {
    run("relu", |rng| { let (r, c) = dims(rng); vec![away_from_zero(rng, r, c)] }, |g, v| Ok(g.relu(v[0])));
    run("abs", |rng| { let (r, c) = dims(rng); vec![away_from_zero(rng, r, c)] }, |g, v| Ok(g.abs(v[0])));
    run("square", |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r, c)] }, |g, v| Ok(g.square(v[0])));
    run("scale", |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r, c)] }, |g, v| Ok(g.scale(v[0], -2.5)));
    run("add_scalar", |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r, c)] }, |g, v| Ok(g.add_scalar(v[0], 0.7)));
}

#[test]
fn reductions_and_norms() {
    run("sum", |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r, c)] }, |g, v| Ok(g.sum(v[0])));
    run("mean", |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r, c)] }, |g, v| Ok(g.mean(v[0])));
    run("col_norm", |rng| { let (r, c) = dims(rng); vec![away_from_zero(rng, r, c)] }, |g, v| Ok(g.col_norm(v[0])));
}

#[test]
fn structural_ops() {
    run(
        "slice_cols",
        |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r, c + 2)] },
        |g, v| { let c = g.shape(v[0])[1]; g.slice_cols(v[0], 1, c - 1) },
    );
    run(
        "slice_rows",
        |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r + 2, c)] },
        |g, v| { let r = g.shape(v[0])[0]; g.slice_rows(v[0], 1, r) },
    );
    run(
        "concat_cols",
        |rng| { let (r, c) = dims(rng); let c2 = rng.gen_range(1..4); vec![rand_t(rng, r, c), rand_t(rng, r, c2)] },
        |g, v| g.concat_cols(v),
    );
    run(
        "concat_rows",
        |rng| { let (r, c) = dims(rng); let r2 = rng.gen_range(1..4); vec![rand_t(rng, r, c), rand_t(rng, r2, c)] },
        |g, v| g.concat_rows(v),
    );
    run(
        "reshape",
        |rng| { let (r, c) = dims(rng); vec![rand_t(rng, 2 * r, c)] },
        |g, v| { let [r, c] = g.shape(v[0]); g.reshape(v[0], r / 2, 2 * c) },
    );
    run("repeat_rows", |rng| { let (r, c) = dims(rng); vec![rand_t(rng, r, c)] }, |g, v| Ok(g.repeat_rows(v[0], 3)));
}

#[test]
fn layer_norm() {
    run(
        "layer_norm",
        |rng| {
            let r = rng.gen_range(1..5);
            let c = rng.gen_range(2..7);
            vec![rand_t(rng, r, c), rand_t(rng, 1, c), rand_t(rng, 1, c)]
        },
        |g, v| g.layer_norm(v[0], v[1], v[2]),
    );
}

#[test]
fn attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..SHAPES_PER_OP {
        let batch = rng.gen_range(1..3);
        let t = rng.gen_range(1..5);
        let heads = rng.gen_range(1..3);
        let d = heads * rng.gen_range(1..4);
        let inputs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(batch * t, d, 1.5, &mut rng)).collect();
        let report = check_gradients(&inputs, 1e-5, 1e-2, |g, v| {
            let out = g.attention(v[0], v[1], v[2], batch, heads)?;
            weighted(g, out, case as u64)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "attention case {case}: {report:?}");
    }
}

#[test]
fn dora_column_norm_path() {
    run(
        "dora",
        |rng| {
            let d = rng.gen_range(2..6);
            let k = rng.gen_range(2..6);
            let r = 1;
            vec![rand_t(rng, 3, d), rand_t(rng, d, k), rand_t(rng, d, r), rand_t(rng, r, k), away_from_zero(rng, 1, k)]
        },
        |g, v| {
            let ba = g.matmul(v[2], v[3])?;
            let ba = g.scale(ba, 4.0);
            let w = g.add(v[1], ba)?;
            let n = g.col_norm(w);
            let dir = g.div(w, n)?;
            let w = g.mul(dir, v[4])?;
            g.matmul(v[0], w)
        },
    );
}

#[test]
fn forward_examples() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::uniform(2, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
    let b = g.constant(Tensor::uniform(3, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(2)));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), [2, 2]);
    let i = g.constant(Tensor::identity(3));
    let n = g.col_norm(i);
    assert_eq!(g.value(n).data(), &[1.0, 1.0, 1.0]);
    let x = g.constant(Tensor::row(vec![-1.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);
    let err = g.matmul(a, a).unwrap_err();
    assert!(err.to_string().contains("matmul") && err.to_string().contains("[2, 3]"));
}

#[test]
fn backward_contracts() {
    let mut g = Graph::new();
    let w = g.leaf(Tensor::row(vec![1.0, 2.0]), true);
    let unused = g.param("unused", &Tensor::row(vec![3.0]), true);
    let x = g.constant(Tensor::row(vec![0.5, -1.5]));
    let y = g.mul(w, x).unwrap();
    assert!(matches!(g.backward(y), Err(AutodiffError::NonScalarLoss { .. })));
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(w).unwrap().data(), &[0.5, -1.5]);
    assert!(g.grad(unused).is_none());
    assert_eq!(g.param_grads()["unused"].data(), &[0.0]);
}
