//! Finite-difference cases for every differentiable graph op.

use dta_core::tensor::{Axis, Graph, Padding, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, random_tensor, FdReport};

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "relu",
    "exp",
    "matmul",
    "transpose",
    "add_row",
    "row_broadcast",
    "linear",
    "conv1d_same",
    "conv1d_valid",
    "conv_transpose1d",
    "topk_per_channel",
    "softmax_rows",
    "layer_norm",
    "embedding",
    "concat_rows",
    "concat_cols",
    "concat_vectors",
    "mean_rows",
    "mean_cols",
    "sum",
    "mean_all",
    "dropout",
    "slice_cols",
    "reshape",
    "mse_loss",
];

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=8)
}

/// Reduces an op output to a scalar with fixed random weights so every
/// output entry contributes to the checked gradient.
fn weighted_sum(g: &mut Graph, out: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

/// One random instance of `op`, checked by central differences.
pub fn check_op(op: &str, rng: &mut ChaCha8Rng) -> FdReport {
    let (r, c) = (dim(rng), dim(rng));

    let (inputs, f): (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Var>) = match op {
        "add" => (
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r, c])],
            Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
        ),
        "sub" => (
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r, c])],
            Box::new(|g, v| g.sub(v[0], v[1]).unwrap()),
        ),
        "mul" => (
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r, c])],
            Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
        ),
        "scale" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.scale(v[0], -1.7))),
        "sigmoid" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.sigmoid(v[0]))),
        "relu" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.relu(v[0]))),
        "exp" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.exp(v[0]))),
        "matmul" => {
            let k = dim(rng);
            (
                vec![random_tensor(rng, &[r, k]), random_tensor(rng, &[k, c])],
                Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()),
            )
        }
        "transpose" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.transpose(v[0]).unwrap())),
        "add_row" => (
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[c])],
            Box::new(|g, v| g.add_row(v[0], v[1]).unwrap()),
        ),
        "row_broadcast" => (vec![random_tensor(rng, &[c])], Box::new(move |g, v| g.row_broadcast(v[0], r).unwrap())),
        "linear" => {
            let k = dim(rng);
            (
                vec![random_tensor(rng, &[r, k]), random_tensor(rng, &[k, c]), random_tensor(rng, &[c])],
                Box::new(|g, v| g.linear(v[0], v[1], v[2]).unwrap()),
            )
        }
        "conv1d_same" | "conv1d_valid" => {
            let padding = if op == "conv1d_same" { Padding::Same } else { Padding::Valid };
            let len = dim(rng);
            let w = rng.gen_range(1..=len);
            let co = dim(rng);
            (
                vec![random_tensor(rng, &[len, c]), random_tensor(rng, &[w, c, co]), random_tensor(rng, &[co])],
                Box::new(move |g, v| g.conv1d(v[0], v[1], v[2], padding).unwrap()),
            )
        }
        "conv_transpose1d" => {
            let (w, co, stride) = (dim(rng), dim(rng), rng.gen_range(1..=3));
            (
                vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[w, co, c]), random_tensor(rng, &[co])],
                Box::new(move |g, v| g.conv_transpose1d(v[0], v[1], v[2], stride).unwrap()),
            )
        }
        "topk_per_channel" => {
            let k = rng.gen_range(1..=r);
            (vec![random_tensor(rng, &[r, c])], Box::new(move |g, v| g.topk_per_channel(v[0], k).unwrap().0))
        }
        "softmax_rows" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.softmax_rows(v[0]))),
        "layer_norm" => {
            let c = c.max(2);
            (
                vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[c]), random_tensor(rng, &[c])],
                Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
            )
        }
        "embedding" => {
            let vocab = dim(rng) + 1;
            let tokens: Vec<usize> = (0..r).map(|_| rng.gen_range(0..vocab)).collect();
            (vec![random_tensor(rng, &[vocab, c])], Box::new(move |g, v| g.embedding(v[0], &tokens, None).unwrap()))
        }
        "concat_rows" => {
            let r2 = dim(rng);
            (
                vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r2, c])],
                Box::new(|g, v| g.concat(&[v[0], v[1]], Axis::Rows).unwrap()),
            )
        }
        "concat_cols" => {
            let c2 = dim(rng);
            (
                vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r, c2])],
                Box::new(|g, v| g.concat(&[v[0], v[1]], Axis::Cols).unwrap()),
            )
        }
        "concat_vectors" => (
            vec![random_tensor(rng, &[r]), random_tensor(rng, &[c])],
            Box::new(|g, v| g.concat(&[v[0], v[1]], Axis::Rows).unwrap()),
        ),
        "mean_rows" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.mean(v[0], Axis::Rows))),
        "mean_cols" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.mean(v[0], Axis::Cols))),
        "sum" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.sum(v[0]))),
        "mean_all" => (vec![random_tensor(rng, &[r, c])], Box::new(|g, v| g.mean_all(v[0]))),
        "dropout" => {
            let seed: u64 = rng.gen();
            (
                vec![random_tensor(rng, &[r, c])],
                Box::new(move |g, v| {
                    let mut mask_rng = super::rng(seed);
                    g.dropout(v[0], 0.3, Some(&mut mask_rng)).unwrap()
                }),
            )
        }
        "slice_cols" => {
            let start = rng.gen_range(0..c);
            let len = rng.gen_range(1..=c - start);
            (vec![random_tensor(rng, &[r, c])], Box::new(move |g, v| g.slice_cols(v[0], start, len).unwrap()))
        }
        "reshape" => (vec![random_tensor(rng, &[r, c])], Box::new(move |g, v| g.reshape(v[0], &[c, r]).unwrap())),
        "mse_loss" => {
            (vec![random_tensor(rng, &[r]), random_tensor(rng, &[r])], Box::new(|g, v| g.mse_loss(v[0], v[1]).unwrap()))
        }
        other => panic!("no gradient case for {other}"),
    };
    let out_shape = {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
        let o = f(&mut g, &leaves);
        g.shape(o).to_vec()
    };
    let weights = random_tensor(rng, &out_shape);
    check_gradients(&inputs, STEP, FLOOR, |g, v| {
        let o = f(g, v);
        weighted_sum(g, o, &weights)
    })
}
