//! Central-finite-difference oracles for the reverse-mode tape. Used by unit
//! tests and the acceptance suite; f64 only.

use crate::error::Result;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Builds a tape from parameter values; returns the tape, the parameter node
/// handles (same order as the input slice), and the scalar loss node.
pub trait BuildGraph: Fn(&[Tensor<f64>]) -> Result<(Tape<f64>, Vec<NodeId>, NodeId)> {}
impl<T: Fn(&[Tensor<f64>]) -> Result<(Tape<f64>, Vec<NodeId>, NodeId)>> BuildGraph for T {}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
    Tensor::from_vec(shape, data).expect("shape/data agree")
}

fn eval_loss(params: &[Tensor<f64>], build: &impl BuildGraph) -> Result<f64> {
    let (tape, _, loss) = build(params)?;
    Ok(tape.value(loss).data()[0])
}

/// Directional derivative along a random unit direction: reverse-mode
/// ⟨∇L, v⟩ vs central difference (L(p+εv) − L(p−εv))/2ε. Returns the
/// relative error between the two.
pub fn max_rel_err(
    params: &[Tensor<f64>],
    build: impl BuildGraph,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let dirs: Vec<Tensor<f64>> = params.iter().map(|p| rand_tensor(rng, p.shape())).collect();
    let norm: f64 = dirs.iter().flat_map(|d| d.data()).map(|v| v * v).sum::<f64>().sqrt();
    let dirs: Vec<Tensor<f64>> = dirs.iter().map(|d| d.scale(1.0 / norm.max(1e-12))).collect();

    let (mut tape, ids, loss) = build(params)?;
    let mut grads = tape.backward(loss)?;
    let mut analytic = 0.0;
    for (id, dir) in ids.iter().zip(&dirs) {
        let g = grads.take(*id)?;
        analytic += g.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum::<f64>();
    }

    let shift = |sign: f64| -> Vec<Tensor<f64>> {
        params
            .iter()
            .zip(&dirs)
            .map(|(p, d)| {
                let data = p.data().iter().zip(d.data()).map(|(a, b)| a + sign * eps * b).collect();
                Tensor::from_vec(p.shape(), data).expect("shape preserved")
            })
            .collect()
    };
    let lp = eval_loss(&shift(1.0), &build)?;
    let lm = eval_loss(&shift(-1.0), &build)?;
    let fd = (lp - lm) / (2.0 * eps);

    Ok(rel_err(analytic, fd))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// One gradcheck instance per differentiable primitive; returns the worst
/// relative error across all of them for the given seed.
pub fn check_all_primitives(seed: u64) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1));
    let mut worst: f64 = 0.0;
    let eps = 1e-5;

    // Weighted sum turns any output into a scalar loss sensitive to every entry.
    fn weighted_loss(
        t: &mut Tape<f64>,
        out: NodeId,
        w: &Tensor<f64>,
    ) -> Result<NodeId> {
        let wl = t.leaf(w.clone());
        let prod = t.mul(out, wl)?;
        t.sum_all(prod)
    }

    macro_rules! check {
        ($shapes:expr, $body:expr) => {{
            let shapes: Vec<Vec<usize>> = $shapes;
            let params: Vec<Tensor<f64>> =
                shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
            let out_shape_probe: Result<(Tape<f64>, Vec<NodeId>, NodeId)> = {
                let body: &dyn Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId> = &$body;
                let mut t = Tape::new();
                let ids: Vec<NodeId> = params.iter().map(|p| t.var(p.clone())).collect();
                let out = body(&mut t, &ids)?;
                Ok((t, ids, out))
            };
            let (probe_tape, _, probe_out) = out_shape_probe?;
            let w = rand_tensor(&mut rng, probe_tape.value(probe_out).shape());
            let build = |ps: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<NodeId>, NodeId)> {
                let body: &dyn Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId> = &$body;
                let mut t = Tape::new();
                let ids: Vec<NodeId> = ps.iter().map(|p| t.var(p.clone())).collect();
                let out = body(&mut t, &ids)?;
                let loss = weighted_loss(&mut t, out, &w)?;
                Ok((t, ids, loss))
            };
            let e = max_rel_err(&params, build, eps, &mut rng)?;
            worst = worst.max(e);
        }};
    }

    check!(vec![vec![3, 4], vec![4, 2]], |t, ids| t.matmul(ids[0], ids[1]));
    check!(vec![vec![3, 4]], |t, ids| t.transpose(ids[0]));
    check!(vec![vec![2, 5], vec![2, 5]], |t, ids| t.add(ids[0], ids[1]));
    check!(vec![vec![4, 3], vec![1, 3]], |t, ids| t.add_row(ids[0], ids[1]));
    check!(vec![vec![2, 5], vec![2, 5]], |t, ids| t.sub(ids[0], ids[1]));
    check!(vec![vec![2, 5], vec![2, 5]], |t, ids| t.mul(ids[0], ids[1]));
    check!(vec![vec![3, 3]], |t, ids| t.add_scalar(ids[0], 0.7));
    check!(vec![vec![3, 3]], |t, ids| t.mul_scalar(ids[0], -1.3));
    check!(vec![vec![4, 4]], |t, ids| t.gelu(ids[0]));
    check!(vec![vec![3, 3]], |t, ids| t.exp(ids[0]));
    check!(vec![vec![4, 6], vec![1, 6], vec![1, 6]], |t, ids| {
        t.layer_norm(ids[0], ids[1], ids[2], 1e-5)
    });
    check!(vec![vec![4, 5]], |t, ids| t.softmax_rows(ids[0]));
    check!(vec![vec![5, 4]], |t, ids| {
        // fixed stream key: the mask is a function of the key, not the inputs,
        // so finite differences see the same mask
        let mut drng = ChaCha12Rng::seed_from_u64(99);
        t.dropout(ids[0], 0.3, &mut drng)
    });
    check!(vec![vec![3, 4]], |t, ids| t.sum_all(ids[0]));
    check!(vec![vec![3, 4]], |t, ids| t.mean_all(ids[0]));
    check!(vec![vec![3, 6]], |t, ids| t.slice_cols(ids[0], 1, 4));
    check!(vec![vec![3, 2], vec![3, 4]], |t, ids| t.concat_cols(&[ids[0], ids[1]]));
    // composite: attention-shaped block (matmul → softmax → matmul)
    check!(vec![vec![4, 3], vec![5, 3], vec![5, 2]], |t, ids| {
        let kt = t.transpose(ids[1])?;
        let s = t.matmul(ids[0], kt)?;
        let s = t.mul_scalar(s, 0.57735)?;
        let a = t.softmax_rows(s)?;
        t.matmul(a, ids[2])
    });

    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass_at_tight_tolerance() {
        for seed in [0, 1, 2] {
            let worst = check_all_primitives(seed).unwrap();
            assert!(worst < 1e-6, "seed {seed} worst {worst}");
        }
    }
}
