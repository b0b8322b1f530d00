//! Central finite-difference checks of tape gradients.

use adfl_core::params::ParamStore;
use adfl_core::{Ctx, Mode, Result, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

/// `Σ y ⊙ R` for a fixed random `R`, so every output entry gets a distinct weight.
pub fn weighted_sum(ctx: &mut Ctx, y: Var, seed: u64) -> Result<Var> {
    let shape = ctx.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    let r = ctx.input(Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)));
    let p = ctx.tape.mul(y, r)?;
    Ok(ctx.tape.sum(p))
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Mismatches explained by the stencil straddling a ReLU or max-pool kink.
    pub kinks: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl FdReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.kinks * 10 <= self.checked
    }

    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
        self.failures.extend(other.failures);
    }
}

/// `at(d)` is the loss with the probed coordinate shifted by `d`.
fn compare(report: &mut FdReport, what: String, analytic: f64, at: &dyn Fn(f64) -> f64) {
    report.checked += 1;
    let (f0, fp, fm) = (at(0.0), at(STEP), at(-STEP));
    let numeric = (fp - fm) / (2.0 * STEP);
    let err = (analytic - numeric).abs();
    if err <= ABS_FLOOR {
        return;
    }
    let rel = err / analytic.abs().max(numeric.abs());
    if rel < REL_TOL {
        report.worst_rel = report.worst_rel.max(rel);
        return;
    }
    // On a smooth stretch the one-sided slopes differ by O(STEP) and halving
    // the step moves the estimate by O(STEP²). A kink inside the stencil
    // breaks both: with slope jump J at distance t the central difference is
    // off by J(STEP - t)/(2 STEP), half the one-sided gap.
    let (right, left) = ((fp - f0) / STEP, (f0 - fm) / STEP);
    let half = (at(STEP / 2.0) - at(-STEP / 2.0)) / STEP;
    if (right - left).abs() >= err || (half - numeric).abs() >= err / 2.0 {
        report.kinks += 1;
        return;
    }
    report.worst_rel = report.worst_rel.max(rel);
    report.failures.push(format!("{what}: analytic {analytic:e} numeric {numeric:e} rel {rel:e}"));
}

/// Compares tape gradients of `loss` against central differences for up to
/// `per_tensor` random entries of every parameter and of the input.
pub fn check(
    store: &ParamStore,
    input: &Tensor,
    mode: Mode,
    per_tensor: usize,
    seed: u64,
    loss: impl Fn(&mut Ctx, Var) -> Result<Var>,
) -> FdReport {
    let eval = |s: &ParamStore, x: &Tensor| -> f64 {
        let mut ctx = Ctx::new(s, mode);
        let v = ctx.input(x.clone());
        let l = loss(&mut ctx, v).expect("forward");
        ctx.value(l).item()
    };
    let mut grads = store.clone();
    grads.zero_grad();
    let input_grad = {
        let mut ctx = Ctx::new(store, mode);
        let v = ctx.input(input.clone());
        let l = loss(&mut ctx, v).expect("forward");
        let rec = ctx.finish();
        let g = rec.backward(l, &mut grads).expect("backward");
        g.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    let mut pick = |n: usize| -> Vec<usize> { sample(&mut rng, n, per_tensor.min(n)).into_vec() };
    for idx in pick(input.numel()) {
        let at = |d: f64| {
            let mut x = input.clone();
            x.data_mut()[idx] += d;
            eval(store, &x)
        };
        compare(&mut report, format!("input[{idx}]"), input_grad[idx], &at);
    }
    for id in store.ids() {
        let p = store.get(id);
        let analytic = grads.get(id).tensor.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
        for idx in pick(p.tensor.numel()) {
            let at = |d: f64| {
                let mut s = store.clone();
                s.get_mut(id).tensor.data_mut()[idx] += d;
                eval(&s, input)
            };
            compare(&mut report, format!("{}[{idx}]", p.name), analytic[idx], &at);
        }
    }
    report
}
