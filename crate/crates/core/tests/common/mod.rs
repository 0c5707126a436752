//! Central finite-difference gradient checking shared by test targets.
#![allow(dead_code)]

use pcsr_core::autodiff::{Tape, Var};

/// Relative tolerance per entry: `|a − n| ≤ REL_TOL · max(|a|, |n|, FLOOR)`.
pub const REL_TOL: f64 = 1e-4;
pub const FLOOR: f64 = 1e-6;
pub const STEP: f64 = 1e-5;

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub checked: usize,
    /// Entries whose ±step straddles a relu kink, max tie or graph change.
    pub skipped: usize,
    pub worst: f64,
}

impl CheckStats {
    pub fn passed(&self) -> bool {
        self.worst <= REL_TOL && self.checked > 0
    }

    pub fn merge(&mut self, o: CheckStats) {
        self.checked += o.checked;
        self.skipped += o.skipped;
        self.worst = self.worst.max(o.worst);
    }
}

/// `build` records a scalar loss from the given leaf values and returns the
/// tape, one var per input tensor and the loss.
pub fn grad_check(inputs: &[Vec<f64>], build: impl Fn(&[Vec<f64>]) -> (Tape, Vec<Var>, Var)) -> CheckStats {
    let (tape, vars, loss) = build(inputs);
    let grads = tape.backward(loss).expect("scalar loss");
    let sig = tape.branch_signature();
    let mut stats = CheckStats::default();
    let mut probe = inputs.to_vec();
    for (t, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[t]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        for i in 0..input.len() {
            probe[t][i] = input[i] + STEP;
            let (tp, _, lp) = build(&probe);
            probe[t][i] = input[i] - STEP;
            let (tm, _, lm) = build(&probe);
            probe[t][i] = input[i];
            if tp.branch_signature() != sig || tm.branch_signature() != sig {
                stats.skipped += 1;
                continue;
            }
            let numeric = (tp.scalar(lp) - tm.scalar(lm)) / (2.0 * STEP);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            stats.worst = stats.worst.max(rel);
            stats.checked += 1;
        }
    }
    stats
}
