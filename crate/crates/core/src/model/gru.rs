use super::GruParams;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Tape handles for [`GruParams`].
#[derive(Clone, Copy, Debug)]
pub struct GruStepVars {
    pub w_xr: Var,
    pub w_xz: Var,
    pub w_xh: Var,
    pub w_hr: Var,
    pub w_hz: Var,
    pub w_hh: Var,
    pub b_r: Var,
    pub b_z: Var,
    pub b_h: Var,
    pub w_l: Var,
    pub b_l: Var,
}

impl GruStepVars {
    pub fn all(&self) -> Vec<Var> {
        vec![
            self.w_xr, self.w_xz, self.w_xh, self.w_hr, self.w_hz, self.w_hh, self.b_r, self.b_z, self.b_h, self.w_l,
            self.b_l,
        ]
    }
}

/// Handles produced by one recorded GRU step.
#[derive(Clone, Copy, Debug)]
pub struct GruStepOut {
    pub h: Var,
    pub a: Var,
    pub z: Var,
}

fn gate(tape: &mut Tape, wx: Var, f: Var, wh: Var, h: Var, b: Var) -> Result<Var> {
    let xf = tape.matvec(wx, f)?;
    let hh = tape.matvec(wh, h)?;
    let s = tape.add(xf, hh)?;
    tape.add(s, b)
}

/// Records one cell update on `tape`:
///
/// ```text
/// r = sigmoid(W_xr f + W_hr h_prev + b_r)
/// z = sigmoid(W_xz f + W_hz h_prev + b_z)
/// c = tanh(W_xh f + W_hh (r * h_prev) + b_h)
/// h = z * h_prev + (1 - z) * c
/// a = sigmoid(W_l h + b_l)
/// ```
pub fn gru_step_on_tape(tape: &mut Tape, p: &GruStepVars, h_prev: Var, f: Var) -> Result<GruStepOut> {
    let r_pre = gate(tape, p.w_xr, f, p.w_hr, h_prev, p.b_r)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = gate(tape, p.w_xz, f, p.w_hz, h_prev, p.b_z)?;
    let z = tape.sigmoid(z_pre);
    let rh = tape.hadamard(r, h_prev)?;
    let c_pre = gate(tape, p.w_xh, f, p.w_hh, rh, p.b_h)?;
    let c = tape.tanh(c_pre);
    let keep = tape.hadamard(z, h_prev)?;
    let one_minus_z = tape.one_minus(z);
    let fresh = tape.hadamard(one_minus_z, c)?;
    let h = tape.add(keep, fresh)?;
    let logit = tape.matvec(p.w_l, h)?;
    let logit = tape.add(logit, p.b_l)?;
    let a = tape.sigmoid(logit);
    Ok(GruStepOut { h, a, z })
}

/// Values of one GRU step, including both gates for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct GruOutput {
    pub h: Vec<f64>,
    pub a: f64,
    pub z: Vec<f64>,
}

pub fn gru_step(h_prev: &[f64], feature: &[f64], params: &GruParams) -> Result<GruOutput> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let h = tape.constant(Tensor::vector(h_prev.to_vec()));
    let f = tape.constant(Tensor::vector(feature.to_vec()));
    let out = gru_step_on_tape(&mut tape, &vars, h, f)?;
    Ok(GruOutput {
        h: tape.value(out.h).data().to_vec(),
        a: tape.value(out.a).item(),
        z: tape.value(out.z).data().to_vec(),
    })
}
