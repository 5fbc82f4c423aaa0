//! Derivative-free Nelder-Mead minimizer used by the decay fit.

/// Stopping rules for [`minimize`].
#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Stop once `(f_worst - f_best) <= rel_tol * |f_best|`.
    pub rel_tol: f64,
    /// Stop once every vertex lies within `x_tol` of the best one (max-norm).
    pub x_tol: f64,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            rel_tol: 1e-12,
            x_tol: 1e-13,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` starting from `x0` with an axis-aligned initial simplex
/// of edge lengths `steps`. Non-finite objective values are treated as +inf.
pub fn minimize<F>(f: F, x0: &[f64], steps: &[f64], opts: SimplexOptions) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x0.len(), steps.len());
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut verts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    verts.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x);
        verts.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        // Stable sort keeps the earlier vertex first on ties.
        verts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = verts[0].1;
        let worst = verts[n].1;
        let spread = worst - best;
        let diameter = verts[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&verts[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (best.is_finite() && spread <= opts.rel_tol * best.abs()) || diameter <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| verts[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&verts[n].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < verts[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe);
            verts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < verts[n - 1].1 {
            verts[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < verts[n].1 {
            let xc = along(REFLECT * CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < verts[n].1.min(fr) {
            verts[n] = (xc, fc);
            continue;
        }
        let x_best = verts[0].0.clone();
        for (x, v) in verts[1..].iter_mut() {
            for (xi, bi) in x.iter_mut().zip(&x_best) {
                *xi = bi + SHRINK * (*xi - bi);
            }
            *v = eval(x);
        }
    }
    verts.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = verts.swap_remove(0);
    SimplexResult {
        x,
        value,
        iterations,
        converged,
    }
}
