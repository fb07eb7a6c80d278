use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};

/// Parameters of an additive attention gate: `wg: [I, Cg]`, `wx: [I, Cx]`,
/// `psi_w: [1, I]` with matching biases.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub wg: Var,
    pub bg: Var,
    pub wx: Var,
    pub bx: Var,
    pub psi_w: Var,
    pub psi_b: Var,
}

/// `α = σ(ψ(gelu(W_g g + W_x x)))`, returning `(α ⊙ x, α)`.
///
/// The gating signal may be at the skip resolution or half of it; a coarse
/// signal is brought up by nearest-neighbour upsampling after `W_g`.
pub fn attention_gate<T: Element>(tape: &mut Tape<T>, gating: Var, skip: Var, p: &GateVars) -> Result<(Var, Var)> {
    let gs = tape.value(gating).shape().to_vec();
    let xs = tape.value(skip).shape().to_vec();
    if gs.len() != 5 || xs.len() != 5 {
        return Err(shape_err(
            "attention_gate",
            format!("gating {gs:?} and skip {xs:?} must be 5-D"),
        ));
    }
    let mut theta_g = tape.conv1x1(gating, p.wg, p.bg)?;
    if gs[2..] != xs[2..] {
        if gs[2..].iter().zip(&xs[2..]).all(|(g, x)| 2 * g == *x) {
            theta_g = tape.upsample2(theta_g)?;
        } else {
            return Err(shape_err(
                "attention_gate",
                format!(
                    "gating spatial {:?} must equal or halve skip spatial {:?}",
                    &gs[2..],
                    &xs[2..]
                ),
            ));
        }
    }
    let theta_x = tape.conv1x1(skip, p.wx, p.bx)?;
    let sum = tape.add(theta_g, theta_x)?;
    let act = tape.gelu(sum);
    let logits = tape.conv1x1(act, p.psi_w, p.psi_b)?;
    let alpha = tape.sigmoid(logits);
    let out = tape.gate(alpha, skip)?;
    Ok((out, alpha))
}
