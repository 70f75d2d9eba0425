use rand::seq::index::sample;
use rand::Rng;

use super::{ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the probe crossed a ReLU or clamp kink.
    pub skipped: usize,
    /// Parameter name, flat index, analytic and numeric derivative at the
    /// worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub loss: f64,
}

/// Compares reverse-mode gradients of the scalar built by `f` with a
/// fourth-order central difference of step `h`, on up to `probes` random
/// coordinates per tensor.
///
/// Relative error is |a − n| / max(|a|, |n|, floor · max(1, |loss|)). The
/// loss-scaled floor reflects the resolution of an f32 loss: derivatives far
/// below |loss| · ε / h cannot be measured by differencing.
pub fn grad_check<R: Rng + ?Sized>(
    store: &ParamStore,
    f: &dyn Fn(&mut Tape, &ParamStore) -> Var,
    probes: usize,
    h: f32,
    floor: f64,
    rng: &mut R,
) -> GradCheckReport {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    let grads = tape.backward(loss);
    let analytic = tape.param_grads(&grads, store);
    let base_sig = tape.kink_signature();

    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = f(&mut t, s);
        (t.value(l).item() as f64, t.kink_signature())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
        loss: tape.value(loss).item() as f64,
    };
    let scaled_floor = floor * report.loss.abs().max(1.0);
    let mut probe = store.clone();
    for (k, (name, t)) in store.iter().enumerate() {
        let n = t.len();
        let coords: Vec<usize> = if n <= probes {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, probes).into_vec();
            v.sort_unstable();
            v
        };
        for i in coords {
            let orig = t.data()[i];
            let mut probe_at = |x: f32| {
                probe.tensors_mut()[k].data_mut()[i] = x;
                eval(&probe)
            };
            let (p1, s1) = probe_at(orig + h);
            let (m1, s2) = probe_at(orig - h);
            let (p2, s3) = probe_at(orig + 2.0 * h);
            let (m2, s4) = probe_at(orig - 2.0 * h);
            probe.tensors_mut()[k].data_mut()[i] = orig;
            if [s1, s2, s3, s4].iter().any(|&s| s != base_sig) {
                report.skipped += 1;
                continue;
            }
            // Fourth-order stencil over the steps actually representable in f32.
            let d1 = ((orig + h) as f64) - ((orig - h) as f64);
            let d2 = ((orig + 2.0 * h) as f64) - ((orig - 2.0 * h) as f64);
            let numeric = (4.0 * (p1 - m1) / d1 - (p2 - m2) / d2) / 3.0;
            let a = analytic[k].data()[i] as f64;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(scaled_floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.to_string(), i, a, numeric));
            }
        }
    }
    report
}
