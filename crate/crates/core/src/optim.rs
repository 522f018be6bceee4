//! Derivative-free minimization used for the nonsmooth rank objectives.

/// Outcome of [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop when `max f − min f` over the simplex falls to this level.
    pub ftol: f64,
    pub max_iters: usize,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
    /// Restarts from the best vertex after convergence; a restart that does
    /// not improve ends the search.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-10,
            max_iters: 5000,
            initial_step: 0.1,
            restarts: 2,
        }
    }
}

/// Standard Nelder–Mead (reflection 1, expansion 2, contraction and shrink ½).
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut start = x0.to_vec();
    let mut step = opts.initial_step;
    let mut total_iters = 0;
    let mut best = run_simplex(&mut f, &start, step, opts, &mut total_iters);
    for _ in 0..opts.restarts {
        if !best.converged {
            break;
        }
        start.clone_from(&best.x);
        step = (step * 0.1).max(1e-6);
        let again = run_simplex(&mut f, &start, step, opts, &mut total_iters);
        let improved = again.value < best.value - opts.ftol;
        if again.value <= best.value {
            best = again;
        }
        if !improved {
            break;
        }
    }
    best.iterations = total_iters;
    best
}

fn run_simplex<F>(f: &mut F, x0: &[f64], step: f64, opts: &NelderMeadOptions, iters: &mut usize) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for j in 0..n {
        let mut v = x0.to_vec();
        v[j] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut converged = false;
    while *iters < opts.max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if values[n] - values[0] <= opts.ftol {
            converged = true;
            break;
        }
        *iters += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let reflected = along(1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(0.5);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = along(-0.5);
            let fc = f(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
            }
            values[i] = f(&simplex[i]);
        }
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&best).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter < 1e-14 * (1.0 + best.iter().map(|b| b.abs()).fold(0.0, f64::max)) {
            converged = true;
            break;
        }
    }
    let arg = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    NelderMeadResult {
        x: simplex[arg].clone(),
        value: values[arg],
        iterations: *iters,
        converged,
    }
}
