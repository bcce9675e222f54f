//! Central finite-difference gradient checking.
//!
//! The error is the norm-wise relative error
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over all checked
//! coordinates of all inputs. The same quantity per input is kept for
//! diagnosis; for inputs whose true gradient is zero or tiny it measures f32
//! noise rather than correctness. A coordinate whose perturbation moves any
//! ReLU or log-floor input across its kink, or whose one-sided slopes disagree
//! sharply, is skipped and counted: the central difference there mixes two
//! smooth pieces.
//!
//! [`grad_check_vjp`] checks a tensor-valued function along a random output
//! direction `w`, differentiating `sum(w * (f(x) - f(x0)))`. Subtracting the
//! reference output keeps the checked scalar near zero, so its own rounding
//! does not swamp the finite differences.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::AutodiffError;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f32,
    /// Check at most this many coordinates per input, sampled with `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
    pub norm_floor: f32,
    pub kink_tolerance: f32,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_coords: None,
            seed: 0,
            norm_floor: 1e-3,
            kink_tolerance: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f32,
    /// Error restricted to each input's coordinates.
    pub per_input: Vec<f32>,
    /// Norm of the analytic gradient over the checked coordinates.
    pub grad_norms: Vec<f32>,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f32) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks a function of one tensor; returns the max relative error.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f32) -> Result<f32, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    Ok(grad_check_vjp(f, std::slice::from_ref(point), &opts)?.max_rel_error)
}

/// Value of `f` and the side of each kink it passes through.
fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<bool>), AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    Ok((out.value().item() as f64, tape.kink_pattern()))
}

pub fn grad_check_inputs<F>(
    f: F,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let analytic: Vec<Vec<f32>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .map(|v| grads.get(*v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; v.value().len()]))
            .collect()
    };
    let (f0, kinks0) = evaluate(&f, inputs)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_input: Vec::with_capacity(inputs.len()),
        grad_norms: Vec::with_capacity(inputs.len()),
        checked: 0,
        skipped: 0,
    };
    let mut work = inputs.to_vec();
    let (mut total_diff2, mut total_a2, mut total_n2) = (0.0f64, 0.0f64, 0.0f64);
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &coords {
            let orig = input.data()[i];
            let (xp, xm) = (orig + opts.eps, orig - opts.eps);
            work[k].data_mut()[i] = xp;
            let (fp, kinks_p) = evaluate(&f, &work)?;
            work[k].data_mut()[i] = xm;
            let (fm, kinks_m) = evaluate(&f, &work)?;
            work[k].data_mut()[i] = orig;
            // Divide by the steps actually taken after f32 rounding.
            let (hp, hm) = ((xp - orig) as f64, (orig - xm) as f64);
            let right = (fp - f0) / hp;
            let left = (f0 - fm) / hm;
            let scale = right.abs().max(left.abs()).max(1e-2);
            let crossed = kinks_p != kinks0 || kinks_m != kinks0;
            if crossed || (right - left).abs() > opts.kink_tolerance as f64 * scale {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (hp + hm);
            let a = analytic[k][i] as f64;
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            report.checked += 1;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(opts.norm_floor as f64);
        let err = (diff2.sqrt() / denom) as f32;
        report.per_input.push(err);
        report.grad_norms.push(a2.sqrt() as f32);
        total_diff2 += diff2;
        total_a2 += a2;
        total_n2 += n2;
    }
    let denom = total_a2.sqrt().max(total_n2.sqrt()).max(opts.norm_floor as f64);
    report.max_rel_error = (total_diff2.sqrt() / denom) as f32;
    Ok(report)
}

/// Checks the vector-Jacobian product of a tensor-valued `f` along a random
/// direction drawn from `opts.seed`.
pub fn grad_check_vjp<F>(
    f: F,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let reference = {
        let tape = Tape::no_grad();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = f(&tape, &vars)?.value();
        (*y).clone()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_d1ec);
    let direction = Tensor::uniform(reference.shape(), 1.0, &mut rng);
    grad_check_inputs(
        |tape, vars| {
            let y = f(tape, vars)?;
            let y0 = tape.constant(reference.clone());
            let w = tape.constant(direction.clone());
            Ok(y.sub(y0)?.mul(w)?.sum())
        },
        inputs,
        opts,
    )
}
