//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per parameter tensor (sampled
    /// without replacement); `None` checks all of them.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_per_tensor: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(1, |a|, |n|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where every step size crossed a branch (relu kink,
    /// max tie, clamp boundary) and no clean difference was available.
    pub skipped: usize,
    /// `(tensor, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

struct Eval {
    loss: f64,
    signature: u64,
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, vars, loss))
}

fn eval_scalar<F>(f: &F, params: &[Tensor]) -> Result<Eval>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, _, loss) = evaluate(f, params)?;
    Ok(Eval { loss: tape.value(loss).item()?, signature: tape.branch_signature() })
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// A perturbation is only accepted if both shifted evaluations take the
/// same branches as the unperturbed one; otherwise the step is shrunk
/// (ε/10, ε/100, ε/1000) and the coordinate is skipped if none qualifies.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, vars, loss) = evaluate(&f, params)?;
    let base_loss = tape.value(loss).item()?;
    let base_sig = tape.branch_signature();
    let grads = tape.backward(loss)?;

    let again = eval_scalar(&f, params)?;
    if again.loss.to_bits() != base_loss.to_bits() || again.signature != base_sig {
        return Err(Error::NonDeterministic);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0, worst: None };
    let mut work: Vec<Tensor> = params.to_vec();

    for (t, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).data().to_vec();
        let n = params[t].len();
        let coords: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params[t].data()[i];
            let mut numeric = None;
            for shrink in [1.0, 1e-1, 1e-2, 1e-3] {
                let h = opts.eps * shrink;
                work[t].data_mut()[i] = orig + h;
                let plus = eval_scalar(&f, &work)?;
                work[t].data_mut()[i] = orig - h;
                let minus = eval_scalar(&f, &work)?;
                work[t].data_mut()[i] = orig;
                if plus.signature == base_sig && minus.signature == base_sig {
                    numeric = Some((plus.loss - minus.loss) / (2.0 * h));
                    break;
                }
            }
            match numeric {
                Some(num) => {
                    let err = relative_error(analytic[i], num);
                    report.checked += 1;
                    if err > report.max_rel_error || report.worst.is_none() {
                        report.max_rel_error = report.max_rel_error.max(err);
                        report.worst = Some((t, i));
                    }
                }
                None => report.skipped += 1,
            }
        }
    }
    Ok(report)
}
