use rayon::prelude::*;

use super::{bce_loss, dot, multi_task_loss, Params, RerankerModel, Trace};
use crate::error::{Error, Result};

/// Items per work unit. Fixed so the floating-point reduction order does not
/// depend on the number of worker threads.
const CHUNK: usize = 8;

/// One training input: a feature vector and one 0/1 label per task.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub features: &'a [f64],
    pub labels: &'a [f64],
}

impl RerankerModel {
    pub fn item_loss(&self, item: &TrainItem, mask: Option<&[bool]>) -> Result<f64> {
        self.check_labels(item)?;
        let probs = self.forward(item.features, mask)?.probs();
        let losses: Vec<f64> = probs.iter().zip(item.labels).map(|(&p, &y)| bce_loss(p, y)).collect();
        Ok(multi_task_loss(&losses))
    }

    /// Mean item loss over a batch.
    pub fn batch_loss(&self, items: &[TrainItem], masks: Option<&[Vec<bool>]>) -> Result<f64> {
        check_masks(items, masks)?;
        let mut total = 0.0;
        for (i, item) in items.iter().enumerate() {
            total += self.item_loss(item, masks.map(|m| m[i].as_slice()))?;
        }
        Ok(total / items.len().max(1) as f64)
    }

    /// Mean loss and its gradient with respect to every parameter.
    ///
    /// The logit gradient is `(p - y) / N` per task, i.e. the probability
    /// clamp inside the loss is not differentiated.
    pub fn batch_gradients(&self, items: &[TrainItem], masks: Option<&[Vec<bool>]>) -> Result<(f64, Params)> {
        check_masks(items, masks)?;
        if items.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let partials: Vec<Result<(f64, Params)>> = items
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut grads = self.params.zeros_like();
                let mut loss = 0.0;
                for (j, item) in chunk.iter().enumerate() {
                    let mask = masks.map(|m| m[c * CHUNK + j].as_slice());
                    loss += self.accumulate_item(item, mask, &mut grads)?;
                }
                Ok((loss, grads))
            })
            .collect();
        let mut loss = 0.0;
        let mut grads = self.params.zeros_like();
        for part in partials {
            let (l, g) = part?;
            loss += l;
            grads.add_scaled(&g, 1.0);
        }
        let scale = 1.0 / items.len() as f64;
        grads.for_each_mut(|t| t.iter_mut().for_each(|x| *x *= scale));
        Ok((loss * scale, grads))
    }

    fn check_labels(&self, item: &TrainItem) -> Result<()> {
        if item.labels.len() != self.num_tasks() {
            return Err(Error::DimensionMismatch {
                expected: self.num_tasks(),
                found: item.labels.len(),
            });
        }
        Ok(())
    }

    /// Adds the gradient of one item's loss into `g` and returns the loss.
    fn accumulate_item(&self, item: &TrainItem, mask: Option<&[bool]>, g: &mut Params) -> Result<f64> {
        self.check_labels(item)?;
        let Trace {
            h1,
            x,
            experts,
            mixed,
            out,
        } = self.trace(item.features, mask)?;
        let p = &self.params;
        let n = self.num_tasks() as f64;
        let probs = out.probs();
        let losses: Vec<f64> = probs.iter().zip(item.labels).map(|(&p, &y)| bce_loss(p, y)).collect();

        let mut dx = vec![0.0; x.len()];
        let mut de: Vec<Vec<f64>> = experts
            .iter()
            .map(|e| e.as_ref().map_or_else(Vec::new, |(_, o)| vec![0.0; o.len()]))
            .collect();

        for k in 0..self.num_tasks() {
            let dz = (probs[k] - item.labels[k]) / n;
            let tower = &p.towers[k];
            let gt = &mut g.towers[k];
            for (gw, m) in gt.weight.data.iter_mut().zip(&mixed[k]) {
                *gw += dz * m;
            }
            gt.bias[0] += dz;
            let dm: Vec<f64> = tower.weight.data.iter().map(|w| dz * w).collect();

            let gates = &out.gates[k];
            let mut dg = vec![0.0; gates.len()];
            for (i, e) in experts.iter().enumerate() {
                if let Some((_, o)) = e {
                    dg[i] = dot(&dm, o);
                    for (d, m) in de[i].iter_mut().zip(&dm) {
                        *d += gates[i] * m;
                    }
                }
            }
            let weighted: f64 = gates.iter().zip(&dg).map(|(a, b)| a * b).sum();
            let gate_w = &p.gates[k];
            let gate_g = &mut g.gates[k];
            for (i, e) in experts.iter().enumerate() {
                if e.is_none() {
                    continue;
                }
                let da = gates[i] * (dg[i] - weighted);
                let cols = gate_w.cols;
                for (j, (gw, w)) in gate_g.data[i * cols..(i + 1) * cols]
                    .iter_mut()
                    .zip(gate_w.row(i))
                    .enumerate()
                {
                    *gw += da * x[j];
                    dx[j] += da * w;
                }
            }
        }

        for (i, e) in experts.iter().enumerate() {
            let Some((h, o)) = e else { continue };
            let [l1, l2] = &p.experts[i];
            let [g1, g2] = &mut g.experts[i];
            let d_out = relu_grad(&de[i], o);
            let dh = dense_backward(l2, g2, &d_out, h);
            let d_hidden = relu_grad(&dh, h);
            let dxi = dense_backward(l1, g1, &d_hidden, &x);
            for (a, b) in dx.iter_mut().zip(dxi) {
                *a += b;
            }
        }

        let d_x = relu_grad(&dx, &x);
        let dh1 = dense_backward(&p.bottom[1], &mut g.bottom[1], &d_x, &h1);
        let d_h1 = relu_grad(&dh1, &h1);
        dense_backward(&p.bottom[0], &mut g.bottom[0], &d_h1, item.features);

        Ok(multi_task_loss(&losses))
    }
}

fn check_masks(items: &[TrainItem], masks: Option<&[Vec<bool>]>) -> Result<()> {
    match masks {
        Some(m) if m.len() != items.len() => Err(Error::LengthMismatch {
            left: items.len(),
            right: m.len(),
        }),
        _ => Ok(()),
    }
}

/// Gradient through a ReLU given its output activation.
fn relu_grad(upstream: &[f64], activation: &[f64]) -> Vec<f64> {
    upstream
        .iter()
        .zip(activation)
        .map(|(&u, &a)| if a > 0.0 { u } else { 0.0 })
        .collect()
}

/// Accumulates weight and bias gradients of `y = W x + b` and returns dL/dx.
fn dense_backward(layer: &super::Dense, grad: &mut super::Dense, dy: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = layer.weight.cols;
    let mut dx = vec![0.0; cols];
    for (o, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.bias[o] += d;
        let grow = &mut grad.weight.data[o * cols..(o + 1) * cols];
        for ((gw, xi), (w, dxi)) in grow.iter_mut().zip(x).zip(layer.weight.row(o).iter().zip(dx.iter_mut())) {
            *gw += d * xi;
            *dxi += d * w;
        }
    }
    dx
}
