use super::*;
use crate::rng::{normal_vec, stream, StreamKind};

fn randn(n: usize, tag: u64) -> Vec<f64> {
    let mut rng = stream(99, StreamKind::MonteCarlo, tag, 0);
    normal_vec(&mut rng, n)
}

#[test]
fn exp_log_inverse_composition() {
    let mut t = Tape::<f64>::new();
    let xs: Vec<f64> = randn(16, 0).iter().map(|v| v.abs() + 0.1).collect();
    let x = t.constant(&[16], xs.clone()).unwrap();
    let y = t.log(x).unwrap();
    let z = t.exp(y).unwrap();
    for (a, b) in t.value(z).iter().zip(&xs) {
        assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
    }
}

#[test]
fn matmul_identity() {
    let mut t = Tape::<f64>::new();
    let n = 4;
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let a_data = randn(n * n, 1);
    let i_var = t.constant(&[n, n], eye).unwrap();
    let a = t.constant(&[n, n], a_data.clone()).unwrap();
    let out = t.matmul(i_var, a).unwrap();
    assert_eq!(t.value(out), a_data.as_slice());
}

#[test]
fn matmul_vector_rhs() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let v = t.constant(&[3], vec![1.0, 0.0, -1.0]).unwrap();
    let out = t.matmul(a, v).unwrap();
    assert_eq!(t.shape(out), &[2]);
    assert_eq!(t.value(out), &[-2.0, -2.0]);
}

#[test]
fn gradient_of_sum_of_squares_is_2x() {
    let mut t = Tape::<f64>::new();
    let xs = randn(8, 2);
    let x = t.leaf("x", &[8], xs.clone()).unwrap();
    let sq = t.mul(x, x).unwrap();
    let loss = t.sum(sq).unwrap();
    let g = t.backward(loss).unwrap();
    for (gv, xv) in g.get("x").unwrap().iter().zip(&xs) {
        assert!((gv - 2.0 * xv).abs() < 1e-12);
    }
}

#[test]
fn unreached_leaf_gets_zero_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf("x", &[3], vec![1.0, 2.0, 3.0]).unwrap();
    let _unused = t.leaf("unused", &[2], vec![5.0, 6.0]).unwrap();
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get("unused").unwrap(), &[0.0, 0.0]);
    assert_eq!(g.get("x").unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn constant_loss_gives_zero_gradient() {
    let mut t = Tape::<f64>::new();
    let _x = t.leaf("x", &[3], vec![1.0, 2.0, 3.0]).unwrap();
    let c = t.constant(&[2], vec![4.0, 5.0]).unwrap();
    let loss = t.sum(c).unwrap();
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get("x").unwrap(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf("x", &[3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(
        t.backward(x),
        Err(crate::error::Error::NonScalarLoss(_))
    ));
}

#[test]
fn backward_rejects_detached_var() {
    let mut t1 = Tape::<f64>::new();
    let mut t2 = Tape::<f64>::new();
    let _ = t1.leaf("x", &[1], vec![1.0]).unwrap();
    let y = t2.leaf("y", &[1], vec![1.0]).unwrap();
    let loss = t2.sum(y).unwrap();
    assert!(matches!(
        t1.backward(loss),
        Err(crate::error::Error::DetachedTape)
    ));
}

#[test]
fn non_finite_output_trips_error() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(&[2], vec![-1.0, 2.0]).unwrap();
    assert!(matches!(t.log(x), Err(crate::error::Error::NonFinite(_))));
}

#[test]
fn backward_is_deterministic() {
    let build = || {
        let mut t = Tape::<f64>::new();
        let x = t.leaf("x", &[6], randn(6, 3)).unwrap();
        let e = t.exp(x).unwrap();
        let s = t.silu(e).unwrap();
        let loss = t.mean(s).unwrap();
        (t, loss)
    };
    let (mut t1, l1) = build();
    let g1 = t1.backward(l1).unwrap();
    let g2 = t1.backward(l1).unwrap();
    assert_eq!(g1.get("x").unwrap(), g2.get("x").unwrap());
    let (mut t2, l2) = build();
    let g3 = t2.backward(l2).unwrap();
    assert_eq!(g1.get("x").unwrap(), g3.get("x").unwrap());
}

#[test]
fn primitives_do_not_mutate_inputs() {
    let mut t = Tape::<f64>::new();
    let xs = randn(8, 4);
    let x = t.constant(&[8], xs.clone()).unwrap();
    let _ = t.relu(x).unwrap();
    let _ = t.silu(x).unwrap();
    let _ = t.scale(x, 3.0).unwrap();
    let y = t.constant(&[8], randn(8, 5)).unwrap();
    let _ = t.mul(x, y).unwrap();
    assert_eq!(t.value(x), xs.as_slice());
}

#[test]
fn quadratic_finite_diff_is_near_exact() {
    // f(p) = sum(p * p): central differences are exact for quadratics.
    let mut params = ParamStore::<f64>::new();
    params.insert("p", &[5], randn(5, 6)).unwrap();
    let f = |p: &ParamStore<f64>| {
        let mut t = Tape::new();
        let b = t.bind_store(p)?;
        let v = b.var("p")?;
        let sq = t.mul(v, v)?;
        t.sum(sq).map(|l| t.scalar_value(l))
    };
    let grad = |p: &ParamStore<f64>| {
        let mut t = Tape::new();
        let b = t.bind_store(p)?;
        let v = b.var("p")?;
        let sq = t.mul(v, v)?;
        let l = t.sum(sq)?;
        t.backward(l)
    };
    let err = finite_diff_check(&f, &grad, &params, 1e-4).unwrap();
    assert!(err < 1e-9, "worst error {err}");
}

/// Builds a scalar loss exercising one primitive, projected onto a fixed
/// random direction so every output coordinate contributes to the adjoint.
fn primitive_loss(op: &str, p: &ParamStore<f64>) -> crate::error::Result<(Tape<f64>, Var)> {
    let mut t = Tape::new();
    let b = t.bind_store(p)?;
    let x = b.var("x")?;
    let out = match op {
        "add" => {
            let y = b.var("y")?;
            t.add(x, y)?
        }
        "sub" => {
            let y = b.var("y")?;
            t.sub(x, y)?
        }
        "mul" => {
            let y = b.var("y")?;
            t.mul(x, y)?
        }
        "scale" => t.scale(x, -1.7)?,
        "recip" => {
            // shift away from zero to keep 1/x well conditioned
            let c = t.constant(&[6], vec![3.0; 6])?;
            let shifted = t.add(x, c)?;
            t.recip(shifted)?
        }
        "exp" => t.exp(x)?,
        "log" => {
            let c = t.constant(&[6], vec![4.0; 6])?;
            let shifted = t.add(x, c)?;
            t.log(shifted)?
        }
        "silu" => t.silu(x)?,
        "relu" => t.relu(x)?,
        "clamp" => t.clamp(x, -0.5, 0.5)?,
        "sum" => {
            let s = t.sum(x)?;
            return Ok((t, s));
        }
        "mean" => {
            let m = t.mean(x)?;
            return Ok((t, m));
        }
        "matmul" => {
            let w = b.var("w")?;
            let xm = t.reshape(x, &[2, 3])?;
            let wm = t.reshape(w, &[3, 2])?;
            t.matmul(xm, wm)?
        }
        "matvec" => {
            let w = b.var("w")?;
            let xm = t.reshape(x, &[2, 3])?;
            let wv = t.slice(w, 0, 0, 3)?;
            t.matmul(xm, wv)?
        }
        "conv1d" => {
            let w = b.var("w")?;
            let bias = b.var("bias")?;
            let xm = t.reshape(x, &[2, 3])?;
            let wm = t.reshape(w, &[1, 2, 3])?;
            t.conv1d(xm, wm, Some(bias))?
        }
        "broadcast_scalar" => {
            let s = t.mean(x)?;
            t.broadcast(s, &[2, 3])?
        }
        "broadcast_rows" => {
            let c2 = b.var("c2")?;
            t.broadcast(c2, &[2, 3])?
        }
        "concat" => {
            let y = b.var("y")?;
            t.concat(&[x, y], 0)?
        }
        "slice" => t.slice(x, 0, 1, 3)?,
        "reshape" => t.reshape(x, &[3, 2])?,
        other => panic!("unknown primitive {other}"),
    };
    let shape = t.shape(out).to_vec();
    let n = t.value(out).len();
    let r = t.constant(&[n], randn(n, 77))?;
    let rr = t.reshape(r, &shape)?;
    let prod = t.mul(out, rr)?;
    let loss = t.sum(prod)?;
    Ok((t, loss))
}

#[test]
fn every_primitive_vjp_matches_finite_differences() {
    let ops = [
        "add",
        "sub",
        "mul",
        "scale",
        "recip",
        "exp",
        "log",
        "silu",
        "clamp",
        "sum",
        "mean",
        "matmul",
        "matvec",
        "conv1d",
        "broadcast_scalar",
        "broadcast_rows",
        "concat",
        "slice",
        "reshape",
    ];
    let mut params = ParamStore::<f64>::new();
    params.insert("x", &[6], randn(6, 10)).unwrap();
    params.insert("y", &[6], randn(6, 11)).unwrap();
    params.insert("w", &[6], randn(6, 12)).unwrap();
    params.insert("bias", &[1], randn(1, 14)).unwrap();
    params.insert("c2", &[2], randn(2, 15)).unwrap();
    for op in ops {
        let f = |p: &ParamStore<f64>| primitive_loss(op, p).map(|(t, l)| t.scalar_value(l));
        let grad = |p: &ParamStore<f64>| {
            let (mut t, l) = primitive_loss(op, p)?;
            t.backward(l)
        };
        let err = finite_diff_check(&f, &grad, &params, 1e-5).unwrap();
        assert!(err < 1e-5, "{op}: worst VJP error {err}");
    }
}

#[test]
fn relu_vjp_away_from_kink() {
    // Checked at points clear of the origin so the subgradient choice does
    // not contaminate the finite difference.
    let mut params = ParamStore::<f64>::new();
    let xs: Vec<f64> = randn(6, 20)
        .into_iter()
        .map(|v| if v.abs() < 0.3 { v + 0.5 } else { v })
        .collect();
    params.insert("x", &[6], xs).unwrap();
    let f = |p: &ParamStore<f64>| primitive_loss("relu", p).map(|(t, l)| t.scalar_value(l));
    let grad = |p: &ParamStore<f64>| {
        let (mut t, l) = primitive_loss("relu", p)?;
        t.backward(l)
    };
    let err = finite_diff_check(&f, &grad, &params, 1e-5).unwrap();
    assert!(err < 1e-5, "relu: worst VJP error {err}");
}

#[test]
fn conv1d_matches_direct_computation() {
    // 1 input channel, 1 output channel, kernel 3, length 4.
    let mut t = Tape::<f64>::new();
    let x = t.constant(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let w = t.constant(&[1, 1, 3], vec![0.5, 1.0, -1.0]).unwrap();
    let out = t.conv1d(x, w, None).unwrap();
    // out[i] = 0.5*x[i-1] + 1.0*x[i] - 1.0*x[i+1], zero padded
    assert_eq!(t.value(out), &[-1.0, -0.5, 0.0, 5.5]);
}

#[test]
fn shape_mismatch_errors() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(&[3], vec![1.0; 3]).unwrap();
    let b = t.constant(&[4], vec![1.0; 4]).unwrap();
    assert!(t.add(a, b).is_err());
    let m = t.constant(&[2, 3], vec![1.0; 6]).unwrap();
    assert!(t.matmul(m, b).is_err());
}
