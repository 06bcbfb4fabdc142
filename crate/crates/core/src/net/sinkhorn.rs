//! Sinkhorn normalisation made transpose-equivariant.
//!
//! Plain alternating normalisation depends on whether rows or columns go
//! first, so after a finite budget `S(Kᵀ) ≠ S(K)ᵀ`. Averaging the row-first
//! and column-first runs removes that bias: the row-first run on `Kᵀ` is the
//! transpose of the column-first run on `K`, operation for operation.

use crate::numcore::{NumError, Tape, Tensor, Var};

use super::NetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinkhornMode {
    /// Always run the full budget; keeps the recorded graph static for training.
    Unrolled,
    /// Stop once every row and column sum is within epsilon of 1.
    EarlyExit,
}

fn max_deviation(log_values: &[f64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        let row: f64 = log_values[i * n..(i + 1) * n].iter().map(|v| v.exp()).sum();
        let col: f64 = (0..n).map(|r| log_values[r * n + i].exp()).sum();
        worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
    }
    worst
}

fn one_order(tape: &mut Tape, log_k: Var, iters: usize, eps: f64, mode: SinkhornMode, rows_first: bool) -> Result<Var, NumError> {
    let n = tape.dims(log_k).0;
    let mut x = log_k;
    for _ in 0..iters {
        x = if rows_first { tape.row_log_normalize(x)? } else { tape.col_log_normalize(x)? };
        x = if rows_first { tape.col_log_normalize(x)? } else { tape.row_log_normalize(x)? };
        if mode == SinkhornMode::EarlyExit && max_deviation(tape.value(x), n) < eps {
            break;
        }
    }
    tape.exp(x)
}

/// Balanced Sinkhorn of `exp(log_k)` for a square `log_k` recorded on `tape`.
/// Normalisation runs on logarithms, so kernels whose entries would underflow
/// as plain exponentials stay well defined.
pub fn sinkhorn_on_tape(tape: &mut Tape, log_k: Var, iters: usize, eps: f64, mode: SinkhornMode) -> Result<Var, NumError> {
    let (r, c) = tape.dims(log_k);
    if r != c {
        return Err(NumError::ShapeMismatch {
            op: "sinkhorn",
            left: vec![r, c],
            right: vec![c, r],
        });
    }
    let by_rows = one_order(tape, log_k, iters, eps, mode, true)?;
    let by_cols = one_order(tape, log_k, iters, eps, mode, false)?;
    let sum = tape.add(by_rows, by_cols)?;
    tape.scale(sum, 0.5)
}

/// Doubly-stochastic normalisation of the strictly positive `k`, stopping
/// early at `eps`.
pub fn sinkhorn(k: &Tensor, iters: usize, eps: f64) -> Result<Tensor, NetError> {
    let (r, c) = k.dims2();
    if r != c {
        return Err(NetError::Contract(format!("sinkhorn needs a square matrix, got {r}×{c}")));
    }
    if let Some(v) = k.values().iter().find(|v| !(**v > 0.0)) {
        return Err(NetError::Contract(format!("sinkhorn input has non-positive entry {v}")));
    }
    let log_k = Tensor::matrix(r, c, k.values().iter().map(|v| v.ln()).collect())?;
    let mut tape = Tape::new();
    let x = tape.constant(log_k);
    let s = sinkhorn_on_tape(&mut tape, x, iters, eps, SinkhornMode::EarlyExit)?;
    Ok(tape.tensor(s))
}
