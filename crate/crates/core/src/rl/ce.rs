use crate::captioner::{Captioner, FeatureGrid, TokenSeq, PAD};
use crate::error::{Error, Result};
use crate::numcore::{AdamState, BoundParams, ModelParams, Tape, Var};

/// One teacher-forcing example: image features and a reference caption
/// (`BOS ... EOS`).
#[derive(Clone, Copy, Debug)]
pub struct CeExample<'a> {
    pub features: &'a FeatureGrid,
    pub caption: &'a TokenSeq,
}

/// Mean token cross-entropy over all non-PAD target positions in the batch.
pub fn ce_loss<'t>(
    model: &Captioner,
    p: &BoundParams<'t>,
    batch: &[CeExample<'_>],
) -> Result<Var<'t>> {
    if batch.is_empty() {
        return Err(Error::Data("cross-entropy step on an empty batch".into()));
    }
    let counts: Vec<usize> = batch
        .iter()
        .map(|ex| ex.caption.ids.iter().skip(1).filter(|&&t| t != PAD).count())
        .collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Data("batch has no target tokens".into()));
    }
    let mut loss: Option<Var<'t>> = None;
    for (ex, &n) in batch.iter().zip(&counts) {
        let ids = &ex.caption.ids;
        if n == 0 {
            continue;
        }
        let logits = model.forward(p, &ids[..ids.len() - 1], ex.features)?;
        let targets: Vec<Option<usize>> = ids[1..]
            .iter()
            .map(|&t| (t != PAD).then_some(t))
            .collect();
        let term = logits.cross_entropy(&targets)?.scale(n as f64 / total as f64)?;
        loss = Some(match loss {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(loss.expect("at least one sequence with targets"))
}

/// Teacher-forced cross-entropy plus one Adam update. Returns the loss
/// before the update.
pub fn ce_step(
    model: &Captioner,
    params: &mut ModelParams,
    opt: &mut AdamState,
    batch: &[CeExample<'_>],
    lr: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let p = params.bind(&tape, true);
    let loss = ce_loss(model, &p, batch)?;
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("cross-entropy loss is {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let grads = p.gradients(&mut grads);
    opt.update(params, &grads, lr)?;
    Ok(value)
}
