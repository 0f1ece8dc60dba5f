//! Records a small expression on the tape, runs the backward pass and compares
//! it against central finite differences.
//!
//!     cargo run --example gradcheck

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ktcore::ndmath::{grad_check, AdamConfig, AdamState, Tape, Tensor, Var};

// loss = sum(log σ(x W + b))
fn loss(t: &mut Tape, v: &[Var]) -> ktcore::Result<Var> {
    let h = t.matmul(v[0], v[1])?;
    let h = t.add_row(h, v[2])?;
    let y = t.log_sigmoid(h);
    Ok(t.sum(y))
}

fn main() -> ktcore::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::uniform(4, 3, 1.0, &mut rng);
    let w = Tensor::uniform(3, 2, 1.0, &mut rng);
    let b = Tensor::zeros(1, 2);

    let mut tape = Tape::new();
    let vars: Vec<Var> = [&x, &w, &b].iter().map(|p| tape.param((*p).clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    println!("loss {:.6}, tape of {} nodes", tape.value(out).item()?, tape.len());
    println!("dL/dW = {:?}", grads.get(vars[1]).map(Tensor::data));

    let worst = grad_check(loss, &[x.clone(), w.clone(), b.clone()], 1e-4)?;
    println!("largest relative error against finite differences: {worst:.2e}");

    // Climb the same objective with Adam.
    let mut params = vec![w, b];
    let mut adam = AdamState::new(AdamConfig::with_lr(0.05), &params);
    for step in 0..=100 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(params[0].clone());
        let bv = tape.param(params[1].clone());
        let l = loss(&mut tape, &[xv, wv, bv])?;
        let neg = tape.neg(l);
        let g = tape.backward(neg)?;
        if step % 25 == 0 {
            println!("step {step:>3}: loss {:.6}", tape.value(l).item()?);
        }
        let (gw, gb) = (g.get(wv).unwrap().clone(), g.get(bv).unwrap().clone());
        let mut refs: Vec<&mut Tensor> = params.iter_mut().collect();
        adam.step(&mut refs, &[&gw, &gb], &["w", "b"])?;
    }
    Ok(())
}
