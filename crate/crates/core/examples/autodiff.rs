//! The tape autodiff on a two-layer network, checked against central
//! finite differences.

use tagkit::tensor::gradcheck::{check_gradients, FD_STEP};
use tagkit::tensor::{Tape, Tensor};

fn main() -> tagkit::Result<()> {
    let x = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let w1 = Tensor::new(vec![5, 3], (0..15).map(|i| (i as f64 * 0.71).cos() * 0.5).collect())?;
    let w2 = Tensor::new(vec![1, 5], vec![0.3, -0.2, 0.5, 0.1, -0.4])?;

    let net = |tape: &mut Tape, v: &[tagkit::tensor::Var]| -> tagkit::Result<tagkit::tensor::Var> {
        let h = tape.linear(v[0], v[1], None)?;
        let h = tape.tanh(h);
        let y = tape.linear(h, v[2], None)?;
        let y = tape.sigmoid(y);
        Ok(tape.mean(y))
    };

    let mut tape = Tape::new();
    let vars = [tape.constant(x.clone()), tape.variable(w1.clone()), tape.variable(w2.clone())];
    let loss = net(&mut tape, &vars)?;
    println!("loss {:.6}", tape.value(loss).item());
    let grads = tape.backward(loss)?;
    println!("d loss / d w2 = {:?}", grads.get(vars[2]).map(|g| g.data().to_vec()));

    let report = check_gradients(&[x, w1, w2], FD_STEP, None, net)?;
    println!("finite-difference check over {} entries: max relative error {:.2e}", report.checked, report.max_rel_error);
    Ok(())
}
