//! Task-level layers: global node/edge features, graph readout, predictors.

use std::sync::Arc;

use crate::error::Result;
use crate::grad::{BatchStats, Tape, Var};

/// How batch normalization is evaluated.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Batch statistics; falls back to `running` when there are fewer than
    /// two rows.
    Train {
        running: (&'a [f64], &'a [f64]),
    },
    Eval {
        running: (&'a [f64], &'a [f64]),
    },
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `relu(BN([X_1 ‖ … ‖ X_N] W))`. Returns the batch statistics when they were used.
pub fn global_features(tape: &mut Tape, xs: &[Var], w: Var, bn: BnMode) -> Result<(Var, Option<BatchStats>)> {
    let cat = if xs.len() == 1 { xs[0] } else { tape.concat_cols(xs)? };
    let h = tape.matmul(cat, w)?;
    let rows = tape.shape(h)[0];
    let (normed, stats) = match bn {
        BnMode::Train { .. } if rows >= 2 => {
            let (y, s) = tape.batch_norm(h, BN_EPS)?;
            (y, Some(s))
        }
        BnMode::Train { running: (mean, var) } | BnMode::Eval { running: (mean, var) } => {
            (tape.batch_norm_eval(h, mean, var, BN_EPS)?, None)
        }
    };
    Ok((tape.relu(normed)?, stats))
}

/// Running-average update `r ← (1 − μ) r + μ b`.
pub fn update_running(running: &mut [f64], batch: &[f64]) {
    for (r, b) in running.iter_mut().zip(batch) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
    }
}

/// `[mean_rows(V_g) ‖ mean_rows(E_g)]` as a `1 × (d_V + d_E)` row. An empty
/// edge set contributes zeros.
pub fn graph_readout(tape: &mut Tape, vg: Var, eg: Option<Var>) -> Result<Var> {
    let pv = tape.mean_axis(vg, 0)?;
    match eg {
        None => Ok(pv),
        Some(eg) => {
            let pe = tape.mean_axis(eg, 0)?;
            tape.concat_cols(&[pv, pe])
        }
    }
}

/// Linear predictor `X C`.
pub fn predict(tape: &mut Tape, x: Var, c: Var) -> Result<Var> {
    tape.matmul(x, c)
}

/// Edge predictor without relation features: `[V_g[src] ‖ V_g[dst]] C`.
pub fn predict_edge_from_nodes(tape: &mut Tape, vg: Var, src: Arc<[usize]>, dst: Arc<[usize]>, c: Var) -> Result<Var> {
    let a = tape.gather_rows(vg, src)?;
    let b = tape.gather_rows(vg, dst)?;
    let cat = tape.concat_cols(&[a, b])?;
    tape.matmul(cat, c)
}
