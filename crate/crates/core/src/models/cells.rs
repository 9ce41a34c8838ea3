//! GRU and LSTM steps over batched `[N, d]` states.

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Input kernel, recurrent kernel and bias of one gate.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub update: GateVars,
    pub reset: GateVars,
    pub candidate: GateVars,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub input: GateVars,
    pub forget: GateVars,
    pub output: GateVars,
    pub cell: GateVars,
}

/// `x W + h U + b`
fn gate(tape: &mut Tape, x: Var, h: Var, g: &GateVars) -> Result<Var> {
    let xw = tape.matmul(x, g.input)?;
    let hu = tape.matmul(h, g.recurrent)?;
    let s = tape.add(xw, hu)?;
    tape.add_bias(s, g.bias)
}

/// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
/// h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h), h' = (1 − z) ⊙ h + z ⊙ h̃.
pub fn gru_step(tape: &mut Tape, h: Var, x: Var, p: &GruVars) -> Result<Var> {
    let z = gate(tape, x, h, &p.update)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, x, h, &p.reset)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let candidate = gate(tape, x, rh, &p.candidate)?;
    let candidate = tape.tanh(candidate);
    let keep = tape.affine(z, -1.0, 1.0);
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, candidate)?;
    tape.add(old, new)
}

/// Standard LSTM: c' = f ⊙ c + i ⊙ g, h' = o ⊙ tanh(c'). Returns `(h', c')`.
pub fn lstm_step(tape: &mut Tape, h: Var, c: Var, x: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let i = gate(tape, x, h, &p.input)?;
    let i = tape.sigmoid(i);
    let f = gate(tape, x, h, &p.forget)?;
    let f = tape.sigmoid(f);
    let o = gate(tape, x, h, &p.output)?;
    let o = tape.sigmoid(o);
    let g = gate(tape, x, h, &p.cell)?;
    let g = tape.tanh(g);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N: usize = 2;
    const DX: usize = 3;
    const DH: usize = 4;

    fn gate_tensors(rng: &mut ChaCha8Rng, scale: f64, bias: f64) -> Vec<Tensor> {
        vec![
            Tensor::uniform(vec![DX, DH], scale, rng).unwrap(),
            Tensor::uniform(vec![DH, DH], scale, rng).unwrap(),
            Tensor::new(vec![DH], vec![bias; DH]).unwrap(),
        ]
    }

    fn gates(v: &[Var]) -> GateVars {
        GateVars {
            input: v[0],
            recurrent: v[1],
            bias: v[2],
        }
    }

    fn gru_vars(v: &[Var]) -> GruVars {
        GruVars {
            update: gates(&v[0..3]),
            reset: gates(&v[3..6]),
            candidate: gates(&v[6..9]),
        }
    }

    fn lstm_vars(v: &[Var]) -> LstmVars {
        LstmVars {
            input: gates(&v[0..3]),
            forget: gates(&v[3..6]),
            output: gates(&v[6..9]),
            cell: gates(&v[9..12]),
        }
    }

    fn zeros(shape: Vec<usize>) -> Tensor {
        Tensor::zeros(shape).unwrap()
    }

    #[test]
    fn zero_params_keep_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::uniform(vec![N, DX], 1.0, &mut rng).unwrap();

        let mut tape = Tape::new();
        let params: Vec<Var> = (0..3)
            .flat_map(|_| gate_tensors(&mut rng, 0.0, 0.0))
            .map(|t| tape.constant(t))
            .collect();
        let (h, xv) = (tape.constant(zeros(vec![N, DH])), tape.constant(x.clone()));
        let h1 = gru_step(&mut tape, h, xv, &gru_vars(&params)).unwrap();
        assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));

        let mut tape = Tape::new();
        let params: Vec<Var> = (0..4)
            .flat_map(|_| gate_tensors(&mut rng, 0.0, 0.0))
            .map(|t| tape.constant(t))
            .collect();
        let h = tape.constant(zeros(vec![N, DH]));
        let c = tape.constant(zeros(vec![N, DH]));
        let xv = tape.constant(x);
        let (h1, c1) = lstm_step(&mut tape, h, c, xv, &lstm_vars(&params)).unwrap();
        assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(c1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_forget_bias_scales_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tensors = Vec::new();
        for gate in 0..4 {
            let bias = if gate == 1 { 1.0 } else { 0.0 };
            tensors.extend(gate_tensors(&mut rng, 0.0, bias));
        }
        let c0 = Tensor::uniform(vec![N, DH], 1.0, &mut rng).unwrap();
        let x = Tensor::uniform(vec![N, DX], 1.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let params: Vec<Var> = tensors.into_iter().map(|t| tape.constant(t)).collect();
        let h = tape.constant(zeros(vec![N, DH]));
        let c = tape.constant(c0.clone());
        let xv = tape.constant(x);
        let (_, c1) = lstm_step(&mut tape, h, c, xv, &lstm_vars(&params)).unwrap();
        // i = σ(0) = 0.5 and g = tanh(0) = 0, so c' = σ(1)·c
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        for (a, b) in tape.value(c1).data().iter().zip(c0.data()) {
            assert!((a - s1 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params: Vec<Tensor> = (0..3)
            .flat_map(|_| gate_tensors(&mut rng, 0.8, 0.0))
            .collect();
        for p in params.iter_mut().skip(2).step_by(3) {
            *p = Tensor::uniform(vec![DH], 0.5, &mut rng).unwrap();
        }
        params.push(Tensor::uniform(vec![N, DH], 1.0, &mut rng).unwrap());
        params.push(Tensor::uniform(vec![N, DX], 1.0, &mut rng).unwrap());
        let f = |tape: &mut Tape, v: &[Var]| {
            let h1 = gru_step(tape, v[9], v[10], &gru_vars(&v[..9]))?;
            let sq = tape.mul(h1, h1)?;
            Ok(tape.sum(sq))
        };
        let err = grad_check(f, &params, 1e-5).unwrap();
        assert!(err < 1e-4, "gru max relative error {err}");
    }

    #[test]
    fn lstm_step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params: Vec<Tensor> = Vec::new();
        for _ in 0..4 {
            params.push(Tensor::uniform(vec![DX, DH], 0.8, &mut rng).unwrap());
            params.push(Tensor::uniform(vec![DH, DH], 0.8, &mut rng).unwrap());
            params.push(Tensor::uniform(vec![DH], 0.5, &mut rng).unwrap());
        }
        params.push(Tensor::uniform(vec![N, DH], 1.0, &mut rng).unwrap());
        params.push(Tensor::uniform(vec![N, DH], 1.0, &mut rng).unwrap());
        params.push(Tensor::uniform(vec![N, DX], 1.0, &mut rng).unwrap());
        let f = |tape: &mut Tape, v: &[Var]| {
            let (h1, c1) = lstm_step(tape, v[12], v[13], v[14], &lstm_vars(&v[..12]))?;
            let both = tape.concat(h1, c1)?;
            let sq = tape.mul(both, both)?;
            Ok(tape.sum(sq))
        };
        let err = grad_check(f, &params, 1e-5).unwrap();
        assert!(err < 1e-4, "lstm max relative error {err}");
    }

    #[test]
    fn mismatched_shapes_are_dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let params: Vec<Var> = (0..3)
            .flat_map(|_| gate_tensors(&mut rng, 0.5, 0.0))
            .map(|t| tape.constant(t))
            .collect();
        let h = tape.constant(zeros(vec![N, DH]));
        let x = tape.constant(zeros(vec![N, DX + 1]));
        assert!(matches!(
            gru_step(&mut tape, h, x, &gru_vars(&params)),
            Err(Error::Dimension { .. })
        ));
    }
}
