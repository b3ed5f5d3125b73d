//! Total loss = base + lambda1 * task + lambda2 * sum(spec), with its
//! gradient checked against central differences.

use lrc::toyattn::{compose_total_loss, loss_gradient, LossTerms};

fn main() -> lrc::Result<()> {
    let terms = LossTerms {
        base: 0.5,
        task: 0.2,
        spec: vec![0.1, 0.3],
        lambda1: 0.7,
        lambda2: 0.25,
    };
    let total = compose_total_loss(&terms)?;
    let grad = loss_gradient(&terms)?;
    println!("total loss {total}");
    println!("d/d base {}  d/d task {}  d/d spec {:?}", grad.base, grad.task, grad.spec);

    let h = 1e-4;
    let mut plus = terms.clone();
    let mut minus = terms.clone();
    plus.task += h;
    minus.task -= h;
    let numeric = (compose_total_loss(&plus)? - compose_total_loss(&minus)?) / (2.0 * h);
    println!("finite-difference d/d task {numeric:.10}");
    Ok(())
}
