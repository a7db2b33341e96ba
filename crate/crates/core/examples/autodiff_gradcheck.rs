//! Builds a small two-layer classifier on the tape, backpropagates a
//! cross-entropy loss and compares the gradients with central differences.

use pushbound::tensor::gradcheck::{check_gradients, GradCheckConfig};
use pushbound::tensor::{Tape, Tensor, Var};

fn main() -> pushbound::Result<()> {
    let x = Tensor::from_rows(&[[0.2, -0.5, 1.0], [0.7, 0.1, -0.3], [-0.4, 0.9, 0.6], [0.0, -0.2, 0.4]])?;
    let labels = [0, 2, 1, 2];
    let w1 = Tensor::from_rows(&[[0.3, -0.1, 0.5, 0.2], [-0.4, 0.6, 0.1, -0.3], [0.2, 0.2, -0.5, 0.7]])?;
    let w2 = Tensor::from_rows(&[[0.5, -0.2, 0.1], [0.3, 0.4, -0.6], [-0.1, 0.2, 0.3], [0.6, -0.5, 0.2]])?;

    let loss = |tape: &mut Tape, v: &[Var]| -> pushbound::Result<Var> {
        let x = tape.constant(x.clone());
        let h = tape.matmul(x, v[0])?;
        let h = tape.relu(h);
        let logits = tape.matmul(h, v[1])?;
        let p = tape.softmax(logits)?;
        let picked = tape.pick(p, &labels)?;
        let logp = tape.log(picked);
        let mean = tape.mean(logp)?;
        Ok(tape.neg(mean))
    };

    let mut tape = Tape::new();
    let params = [tape.param(w1.clone()), tape.param(w2.clone())];
    let l = loss(&mut tape, &params)?;
    tape.backward(l)?;
    println!("loss {:.6}", tape.value(l).item().unwrap_or(f64::NAN));
    println!("dL/dW2 row 0: {:?}", tape.grad(params[1]).map(|g| g.row(0).to_vec()));

    let report = check_gradients(&[w1, w2], loss, &GradCheckConfig::default())?;
    println!(
        "{} coordinates compared, {} skipped at kinks, max relative error {:.2e}",
        report.checks.len(),
        report.skipped_kinks,
        report.max_rel_error()
    );
    Ok(())
}
