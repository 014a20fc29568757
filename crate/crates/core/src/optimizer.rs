//! Box-constrained Nelder-Mead simplex minimizer.
//!
//! Every trial point is clipped coordinate-wise into the box before it is
//! evaluated, so the objective is never called outside the bounds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmConfig {
    /// Reflection.
    pub alpha: f64,
    /// Expansion.
    pub gamma: f64,
    /// Contraction.
    pub beta: f64,
    /// Shrink.
    pub sigma: f64,
    pub x_tol: f64,
    pub f_tol: f64,
    pub max_iter: usize,
    pub init_step_rel: f64,
    /// Step used for coordinates that start at exactly zero.
    pub init_step_abs: f64,
}

impl Default for NmConfig {
    fn default() -> Self {
        NmConfig {
            alpha: 1.0,
            gamma: 2.0,
            beta: 0.5,
            sigma: 0.5,
            x_tol: 1e-4,
            f_tol: 1e-4,
            max_iter: 500,
            init_step_rel: 0.05,
            init_step_abs: 0.00025,
        }
    }
}

impl NmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.gamma > 1.0
            && self.beta > 0.0
            && self.beta < 1.0
            && self.sigma > 0.0
            && self.sigma < 1.0
            && self.x_tol > 0.0
            && self.f_tol > 0.0
            && self.max_iter >= 1
            && self.init_step_rel > 0.0
            && self.init_step_abs > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "invalid Nelder-Mead config {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::validation("bounds need matching non-empty lo/hi"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::validation(format!(
                "bounds require lo < hi: {lo:?} {hi:?}"
            )));
        }
        Ok(Bounds { lo, hi })
    }

    pub fn uniform(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Bounds::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    XTol,
    FTol,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmRecord {
    pub iteration: usize,
    pub best_f: f64,
    pub diameter: f64,
    pub n_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmTrace {
    pub records: Vec<NmRecord>,
    pub termination: Termination,
}

impl NmTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::validation(format!("csv: {e}"));
        w.write_record(["iteration", "best_f", "diameter", "n_evals"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.best_f.to_string(),
                r.diameter.to_string(),
                r.n_evals.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::validation(format!("csv flush: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmOutcome {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub trace: NmTrace,
}

struct Evaluator<'a, F> {
    objective: F,
    bounds: &'a Bounds,
    n_evals: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Evaluator<'_, F> {
    fn eval(&mut self, mut x: Vec<f64>) -> Result<(Vec<f64>, f64)> {
        self.bounds.clip(&mut x);
        let f = (self.objective)(&x)?;
        if !f.is_finite() {
            return Err(Error::ObjectiveFault { point: x, value: f });
        }
        self.n_evals += 1;
        if self.best.as_ref().is_none_or(|(_, b)| f < *b) {
            self.best = Some((x.clone(), f));
        }
        Ok((x, f))
    }

    fn best_f(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.1)
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let mut d2 = 0.0f64;
    for i in 0..simplex.len() {
        for j in i + 1..simplex.len() {
            let s: f64 = simplex[i]
                .iter()
                .zip(&simplex[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2 = d2.max(s);
        }
    }
    d2.sqrt()
}

/// `a + t * (b - a)` per coordinate.
fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
}

/// Minimize a fallible objective. Objective errors abort the search and
/// are returned unchanged.
pub fn try_nelder_mead<F>(
    objective: F,
    x0: &[f64],
    bounds: &Bounds,
    config: &NmConfig,
) -> Result<NmOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    config.validate()?;
    let n = x0.len();
    if n == 0 || bounds.dim() != n {
        return Err(Error::validation(format!(
            "x0 has dimension {n}, bounds have {}",
            bounds.dim()
        )));
    }
    if !bounds.contains(x0) {
        return Err(Error::validation(format!(
            "x0 {x0:?} lies outside the bounds"
        )));
    }

    let mut ev = Evaluator {
        objective,
        bounds,
        n_evals: 0,
        best: None,
    };

    let mut simplex = Vec::with_capacity(n + 1);
    let mut fvals = Vec::with_capacity(n + 1);
    let (v, f) = ev.eval(x0.to_vec())?;
    simplex.push(v);
    fvals.push(f);
    for i in 0..n {
        let step = if x0[i] != 0.0 {
            config.init_step_rel * x0[i].abs()
        } else {
            config.init_step_abs
        };
        let mut v = x0.to_vec();
        v[i] += step;
        bounds.clip(&mut v);
        if v[i] == x0[i] {
            // x0 sits on the upper bound; step inward instead
            v[i] = x0[i] - step;
            bounds.clip(&mut v);
        }
        let (v, f) = ev.eval(v)?;
        simplex.push(v);
        fvals.push(f);
    }

    let mut records = Vec::new();
    let mut termination = Termination::MaxIter;
    let mut iteration = 0;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fvals = order.iter().map(|&i| fvals[i]).collect();

        let diam = diameter(&simplex);
        records.push(NmRecord {
            iteration,
            best_f: ev.best_f(),
            diameter: diam,
            n_evals: ev.n_evals,
        });
        if diam < config.x_tol {
            termination = Termination::XTol;
            break;
        }
        if fvals[n] - fvals[0] < config.f_tol {
            termination = Termination::FTol;
            break;
        }
        if iteration >= config.max_iter {
            break;
        }
        iteration += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let worst = simplex[n].clone();
        let (xr, fr) = ev.eval(lerp(&centroid, &worst, -config.alpha))?;
        if fr < fvals[0] {
            let (xe, fe) = ev.eval(lerp(&centroid, &xr, config.gamma))?;
            if fe < fr {
                simplex[n] = xe;
                fvals[n] = fe;
            } else {
                simplex[n] = xr;
                fvals[n] = fr;
            }
            continue;
        }
        if fr < fvals[n - 1] {
            simplex[n] = xr;
            fvals[n] = fr;
            continue;
        }
        let accepted = if fr < fvals[n] {
            let (xc, fc) = ev.eval(lerp(&centroid, &xr, config.beta))?;
            (fc <= fr).then_some((xc, fc))
        } else {
            let (xc, fc) = ev.eval(lerp(&centroid, &worst, config.beta))?;
            (fc < fvals[n]).then_some((xc, fc))
        };
        match accepted {
            Some((xc, fc)) => {
                simplex[n] = xc;
                fvals[n] = fc;
            }
            None => {
                let anchor = simplex[0].clone();
                for i in 1..=n {
                    let (v, f) = ev.eval(lerp(&anchor, &simplex[i], config.sigma))?;
                    simplex[i] = v;
                    fvals[i] = f;
                }
            }
        }
    }

    let (x_best, f_best) = ev.best.expect("x0 was evaluated");
    Ok(NmOutcome {
        x_best,
        f_best,
        trace: NmTrace {
            records,
            termination,
        },
    })
}

/// Minimize an infallible objective.
pub fn nelder_mead<F>(
    mut objective: F,
    x0: &[f64],
    bounds: &Bounds,
    config: &NmConfig,
) -> Result<NmOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    try_nelder_mead(|x| Ok(objective(x)), x0, bounds, config)
}
