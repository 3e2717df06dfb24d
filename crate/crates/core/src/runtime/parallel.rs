use std::ops::Range;
use std::thread;

use crate::error::{Error, Result};
use crate::ptq::{QuantModel, UnitExecutor};
use crate::tensor::FloatTensor;

/// Splits `units` into at most `workers` contiguous blocks of equal size,
/// the last block taking the remainder.
pub fn partition(units: usize, workers: usize) -> Vec<Range<usize>> {
    let workers = workers.min(units).max(1);
    let block = units / workers;
    (0..workers)
        .map(|w| {
            let start = w * block;
            let end = if w + 1 == workers {
                units
            } else {
                start + block
            };
            start..end
        })
        .collect()
}

/// Executes unit kernels on at most `budget` threads, the calling thread
/// included.
#[derive(Debug, Clone, Copy)]
pub struct CoreBudget(pub usize);

impl UnitExecutor for CoreBudget {
    fn run(
        &self,
        units: usize,
        unit_len: usize,
        out: &mut [i8],
        kernel: &(dyn Fn(Range<usize>, &mut [i8]) + Sync),
    ) {
        let blocks = partition(units, self.0);
        if blocks.len() <= 1 {
            kernel(0..units, out);
            return;
        }
        thread::scope(|scope| {
            let mut rest = out;
            let mut local = None;
            for (i, block) in blocks.into_iter().enumerate() {
                let (chunk, tail) = rest.split_at_mut(block.len() * unit_len);
                rest = tail;
                if i == 0 {
                    local = Some((block, chunk));
                } else {
                    scope.spawn(move || kernel(block, chunk));
                }
            }
            if let Some((block, chunk)) = local {
                kernel(block, chunk);
            }
        });
    }
}

/// Quantized inference with conv/dense output units split over up to
/// `core_budget` workers. Output is bit-identical for every budget.
pub fn parallel_forward(
    m: &QuantModel,
    x: &FloatTensor,
    core_budget: usize,
) -> Result<FloatTensor> {
    if core_budget == 0 {
        return Err(Error::InvalidArgument(
            "core budget must be at least 1".into(),
        ));
    }
    m.forward_with(x, &CoreBudget(core_budget))
}
