//! Central finite-difference check of analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Graph, ModelParams, Tensor, Var};

/// Smallest subsample accepted when not every scalar is checked.
pub const MIN_SAMPLED_SCALARS: usize = 200;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many scalars, drawn without replacement; `None`
    /// checks every scalar.
    pub max_scalars: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            max_scalars: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    /// Largest errors first.
    pub worst: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn eval<F>(f: &F, params: &ModelParams) -> Result<f64>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = g.bind(params);
    let loss = f(&mut g, &bound)?;
    let v = g.value(loss);
    if v.numel() != 1 {
        return Err(Error::usage("gradcheck function must return a scalar"));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite ({v})")));
    }
    Ok(v)
}

fn check_options(opts: &GradCheckOptions) -> Result<()> {
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::usage(format!("eps {} outside [1e-7, 1e-3]", opts.eps)));
    }
    if let Some(n) = opts.max_scalars {
        if n < MIN_SAMPLED_SCALARS {
            return Err(Error::usage(format!(
                "subsample of {n} scalars is below the minimum of {MIN_SAMPLED_SCALARS}"
            )));
        }
    }
    Ok(())
}

fn analytic_gradient<F>(f: F, params: &ModelParams) -> Result<ModelParams>
where
    F: FnOnce(&mut Graph, &BoundParams) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = g.bind(params);
    let loss = f(&mut g, &bound)?;
    if !g.value(loss).is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok(g.backward(loss)?.for_params(&g, &bound))
}

/// Perturbs each picked scalar by ±eps; `diff(up, down)` returns
/// `f(up) − f(down)`.
fn compare<D>(params: &ModelParams, analytic: &ModelParams, opts: GradCheckOptions, mut diff: D) -> Result<GradCheckReport>
where
    D: FnMut(&ModelParams, &ModelParams) -> Result<f64>,
{
    let total = params.numel();
    let picks: Vec<usize> = match opts.max_scalars {
        Some(n) if n < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut v = index::sample(&mut rng, total, n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };

    let mut up = params.clone();
    let mut down = params.clone();
    let mut entries = Vec::with_capacity(picks.len());
    for k in picks {
        let (name, i) = params.locate(k).expect("index within parameter count");
        let name = name.to_string();
        let orig = params.get(&name)?.data()[i];

        up.get_mut(&name)?.data_mut()[i] = orig + opts.eps;
        down.get_mut(&name)?.data_mut()[i] = orig - opts.eps;
        let delta = diff(&up, &down)?;
        up.get_mut(&name)?.data_mut()[i] = orig;
        down.get_mut(&name)?.data_mut()[i] = orig;

        let numeric = delta / (2.0 * opts.eps);
        let a = analytic.get(&name)?.data()[i];
        entries.push(GradCheckEntry {
            rel_error: rel_error(a, numeric),
            name,
            index: i,
            analytic: a,
            numeric,
        });
    }

    entries.sort_by(|x, y| y.rel_error.total_cmp(&x.rel_error));
    let max_rel_error = entries.first().map_or(0.0, |e| e.rel_error);
    let checked = entries.len();
    entries.truncate(10);
    Ok(GradCheckReport {
        checked,
        max_rel_error,
        tol: opts.tol,
        worst: entries,
    })
}

/// Compares the tape gradient of `f` with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε`, scalar by scalar.
pub fn gradcheck<F>(f: F, params: &ModelParams, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Var>,
{
    check_options(&opts)?;
    let analytic = analytic_gradient(&f, params)?;
    compare(params, &analytic, opts, |up, down| Ok(eval(&f, up)? - eval(&f, down)?))
}

/// Softmax cross-entropy of every row of `logits` against its label,
/// each row weighted by `weight`.
#[derive(Debug, Clone)]
pub struct CrossEntropyTerm {
    /// `[K]` or `[rows × K]`
    pub logits: Var,
    pub labels: Vec<usize>,
    pub weight: f64,
}

/// `ce(zp, y) − ce(zm, y)` without forming either loss: the log-sum-exp
/// difference is `log1p(Σ e^{zm} expm1(zp − zm) / Σ e^{zm})`, so rounding
/// scales with the logit change rather than with the loss value.
fn cross_entropy_delta(zp: &[f64], zm: &[f64], label: usize) -> f64 {
    let m = zm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut base = 0.0;
    let mut change = 0.0;
    for (&p, &q) in zp.iter().zip(zm) {
        let e = (q - m).exp();
        base += e;
        change += e * (p - q).exp_m1();
    }
    (change / base).ln_1p() - (zp[label] - zm[label])
}

fn term_logits<F>(f: &F, params: &ModelParams) -> Result<Vec<(Tensor, Vec<usize>, f64)>>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Vec<CrossEntropyTerm>>,
{
    let mut g = Graph::new();
    let bound = g.bind(params);
    let terms = f(&mut g, &bound)?;
    terms
        .into_iter()
        .map(|t| {
            let z = g.value(t.logits).clone();
            if !z.is_finite() {
                return Err(Error::Numeric("logits are not finite".into()));
            }
            Ok((z, t.labels, t.weight))
        })
        .collect()
}

/// [`gradcheck`] for losses that are weighted sums of softmax
/// cross-entropies. The central difference is formed from the logits of
/// the two perturbed passes, which keeps it accurate for gradients far
/// smaller than the rounding unit of the loss itself.
pub fn gradcheck_cross_entropy<F>(f: F, params: &ModelParams, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<Vec<CrossEntropyTerm>>,
{
    check_options(&opts)?;
    let analytic = analytic_gradient(
        |g, bound| {
            let terms = f(g, bound)?;
            let mut parts = Vec::with_capacity(terms.len());
            for t in &terms {
                let ce = g.softmax_cross_entropy_mean(t.logits, &t.labels)?;
                parts.push(g.scale(ce, t.weight * t.labels.len() as f64));
            }
            let all = g.concat(&parts)?;
            Ok(g.sum(all))
        },
        params,
    )?;
    compare(params, &analytic, opts, |up, down| {
        let zp = term_logits(&f, up)?;
        let zm = term_logits(&f, down)?;
        let mut delta = 0.0;
        for ((p, labels, weight), (q, _, _)) in zp.iter().zip(&zm) {
            let k = *p.shape().last().expect("non-empty shape");
            for (r, &y) in labels.iter().enumerate() {
                let rows = r * k..(r + 1) * k;
                delta += weight * cross_entropy_delta(&p.data()[rows.clone()], &q.data()[rows], y);
            }
        }
        Ok(delta)
    })
}
