use super::{gru_step_on_tape, Datm, Mode, Model, ModelConfig, ModelVars};
use crate::autodiff::{Tape, Tensor, Var};
use crate::diagram::{DiagramObject, RelationCandidate};
use crate::error::Result;
use crate::mask::{encode_on_tape, rasterize};

/// Probabilities recorded on a tape, aligned with the input candidates.
pub struct TapeForward {
    pub probabilities: Vec<Var>,
    /// Update-gate activations per step (empty for the fully-connected mode).
    pub gates: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub probabilities: Vec<f64>,
    pub gates: Vec<Vec<f64>>,
}

fn global_on_tape(tape: &mut Tape, config: &ModelConfig, vars: &ModelVars, objects: &[DiagramObject]) -> Result<Var> {
    match (&vars.encoder, config.needs_global()) {
        (Some(enc), true) => encode_on_tape(tape, enc, &rasterize(objects)),
        _ => Ok(tape.constant(Tensor::zeros(&[config.hidden_dim]))),
    }
}

/// Mask-encoder feature for `objects`, or zeros when the configuration does
/// not use it.
pub fn global_feature(model: &Model, objects: &[DiagramObject]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let g = global_on_tape(&mut tape, &model.config, &vars, objects)?;
    Ok(tape.value(g).data().to_vec())
}

/// Records the whole candidate sequence on `tape`. When `global` is `None`
/// the global feature is computed from the bound encoder.
pub fn forward_on_tape(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    objects: &[DiagramObject],
    candidates: &[RelationCandidate],
    global: Option<Var>,
) -> Result<TapeForward> {
    if candidates.is_empty() {
        return Ok(TapeForward {
            probabilities: Vec::new(),
            gates: Vec::new(),
        });
    }
    let g = match global {
        Some(g) => g,
        None => global_on_tape(tape, config, vars, objects)?,
    };
    match config.mode {
        Mode::Dggn => dggn_sequence(tape, config, vars, g, objects.len(), candidates),
        Mode::VanillaGru => vanilla_sequence(tape, vars, g, candidates),
        Mode::FullyConnected => fc_sequence(tape, vars, candidates),
    }
}

fn feature_var(tape: &mut Tape, c: &RelationCandidate) -> Var {
    tape.constant(Tensor::vector(c.feature.values().to_vec()))
}

fn dggn_sequence(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    g: Var,
    n: usize,
    candidates: &[RelationCandidate],
) -> Result<TapeForward> {
    let m = config.hidden_dim;
    let mut memory = Datm::new(n, m);
    let mut cells: Vec<Option<(Var, Var)>> = if config.backprop_through_memory {
        vec![None; n * n]
    } else {
        Vec::new()
    };
    let zeros = vec![0.0; m];
    let mut probabilities = Vec::with_capacity(candidates.len());
    let mut gates = Vec::with_capacity(candidates.len());

    for c in candidates {
        let (i, j) = (c.src, c.dst);
        let h_prev = if config.backprop_through_memory {
            // Validates indices before touching `cells`.
            memory.retrieve(i, j, &zeros, config.weighted_pool)?;
            let written: Vec<(Var, Var)> = memory
                .incoming(i, j)
                .filter_map(|(r, col)| cells[r * n + col])
                .collect();
            if config.weighted_pool {
                let mut terms = Vec::with_capacity(written.len() + 1);
                for (a, h) in written {
                    terms.push(tape.scale_by(a, h)?);
                }
                terms.push(g);
                tape.sum_n(&terms)?
            } else if written.is_empty() {
                g
            } else {
                let hs: Vec<Var> = written.iter().map(|&(_, h)| h).collect();
                let s = tape.sum_n(&hs)?;
                let mean = tape.scale(s, 1.0 / hs.len() as f64);
                tape.add(mean, g)?
            }
        } else {
            let mem = memory.retrieve(i, j, &zeros, config.weighted_pool)?;
            let mem = tape.constant(Tensor::vector(mem));
            tape.add(mem, g)?
        };
        let f = feature_var(tape, c);
        let out = gru_step_on_tape(tape, &vars.gru, h_prev, f)?;
        let a = tape.value(out.a).item();
        memory.update(i, j, a, tape.value(out.h).data())?;
        if config.backprop_through_memory {
            cells[i * n + j] = Some((out.a, out.h));
        }
        probabilities.push(out.a);
        gates.push(tape.value(out.z).data().to_vec());
    }
    Ok(TapeForward { probabilities, gates })
}

fn vanilla_sequence(
    tape: &mut Tape,
    vars: &ModelVars,
    g: Var,
    candidates: &[RelationCandidate],
) -> Result<TapeForward> {
    let mut h = g;
    let mut probabilities = Vec::with_capacity(candidates.len());
    let mut gates = Vec::with_capacity(candidates.len());
    for c in candidates {
        let f = feature_var(tape, c);
        let out = gru_step_on_tape(tape, &vars.gru, h, f)?;
        h = out.h;
        probabilities.push(out.a);
        gates.push(tape.value(out.z).data().to_vec());
    }
    Ok(TapeForward { probabilities, gates })
}

fn fc_sequence(tape: &mut Tape, vars: &ModelVars, candidates: &[RelationCandidate]) -> Result<TapeForward> {
    let fc = &vars.fc;
    let mut probabilities = Vec::with_capacity(candidates.len());
    for c in candidates {
        let f = feature_var(tape, c);
        let h1 = tape.matvec(fc.w1, f)?;
        let h1 = tape.add(h1, fc.b1)?;
        let h1 = tape.tanh(h1);
        let h2 = tape.matvec(fc.w2, h1)?;
        let h2 = tape.add(h2, fc.b2)?;
        let h2 = tape.tanh(h2);
        let logit = tape.matvec(vars.gru.w_l, h2)?;
        let logit = tape.add(logit, vars.gru.b_l)?;
        probabilities.push(tape.sigmoid(logit));
    }
    Ok(TapeForward {
        probabilities,
        gates: Vec::new(),
    })
}

fn collect(tape: &Tape, out: TapeForward) -> ForwardOutput {
    ForwardOutput {
        probabilities: out.probabilities.iter().map(|&p| tape.value(p).item()).collect(),
        gates: out.gates,
    }
}

/// Edge probabilities for `candidates`, processed in the given order.
pub fn forward_diagram(
    model: &Model,
    objects: &[DiagramObject],
    candidates: &[RelationCandidate],
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let out = forward_on_tape(&mut tape, &model.config, &vars, objects, candidates, None)?;
    Ok(collect(&tape, out))
}

/// Like [`forward_diagram`] with a precomputed global feature.
pub fn forward_with_global(
    model: &Model,
    objects: &[DiagramObject],
    candidates: &[RelationCandidate],
    global: &[f64],
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let vars = model.bind_without_encoder(&mut tape);
    let g = tape.constant(Tensor::vector(global.to_vec()));
    if global.len() != model.config.hidden_dim {
        return Err(crate::Error::Dimension {
            op: "global feature",
            lhs: vec![model.config.hidden_dim],
            rhs: vec![global.len()],
        });
    }
    let out = forward_on_tape(&mut tape, &model.config, &vars, objects, candidates, Some(g))?;
    Ok(collect(&tape, out))
}
