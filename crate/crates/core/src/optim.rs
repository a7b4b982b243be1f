//! Quasi-Newton minimization with finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged once the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Also converged once the quasi-Newton step `H⁻¹g` is below this in
    /// every coordinate (after the first curvature update).
    pub step_tol: f64,
    /// Step for central-difference gradients.
    pub fd_step: f64,
    /// Cap on the infinity norm of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            grad_tol: 1e-4,
            step_tol: 1e-6,
            fd_step: 1e-5,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Minimum {
    pub fn grad_norm(&self) -> f64 {
        self.gradient.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Central-difference gradient; non-finite values propagate.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian with step `h`; symmetric by construction.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> DMatrix<f64> {
    let p = x.len();
    let f0 = f(x);
    let mut hm = DMatrix::zeros(p, p);
    let mut xp = x.to_vec();
    for i in 0..p {
        let xi = xp[i];
        xp[i] = xi + h;
        let up = f(&xp);
        xp[i] = xi - h;
        let down = f(&xp);
        xp[i] = xi;
        hm[(i, i)] = (up - 2.0 * f0 + down) / (h * h);
        for j in 0..i {
            let xj = xp[j];
            let mut eval = |di: f64, dj: f64| {
                xp[i] = xi + di;
                xp[j] = xj + dj;
                let v = f(&xp);
                xp[i] = xi;
                xp[j] = xj;
                v
            };
            let v = (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}

/// BFGS with Armijo backtracking. Non-finite objective values are treated as
/// +inf during the line search.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: &BfgsOptions) -> Minimum {
    let p = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let mut g = DVector::from_vec(gradient(&f, x.as_slice(), opts.fd_step));
    let mut hinv = DMatrix::<f64>::identity(p, p);
    let mut first = true;
    let mut stalled = 0;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter;
        if g.amax() < opts.grad_tol || (!first && (&hinv * &g).amax() < opts.step_tol) {
            return Minimum {
                x: x.as_slice().to_vec(),
                value: fx,
                gradient: g.as_slice().to_vec(),
                iterations: iter,
                converged: true,
            };
        }
        let mut dir = -(&hinv * &g);
        if dir.dot(&g) >= 0.0 {
            // lost descent; restart from steepest descent
            hinv = DMatrix::identity(p, p);
            dir = -g.clone();
        }
        let dmax = dir.amax();
        if dmax > opts.max_step {
            dir *= opts.max_step / dmax;
        }

        let slope = dir.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * t;
            let ft = f(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let g_new = DVector::from_vec(gradient(&f, x_new.as_slice(), opts.fd_step));
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                hinv = DMatrix::identity(p, p) * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            hinv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        let improvement = fx - f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        if improvement <= 1e-15 * fx.abs().max(1.0) {
            stalled += 1;
            if stalled >= 5 {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    let converged = g.amax() < opts.grad_tol || (!first && (&hinv * &g).amax() < opts.step_tol);
    Minimum {
        x: x.as_slice().to_vec(),
        value: fx,
        gradient: g.as_slice().to_vec(),
        iterations: iterations + 1,
        converged,
    }
}
