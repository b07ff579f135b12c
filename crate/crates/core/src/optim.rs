//! First-order and quasi-Newton minimizers over flat parameter vectors.

/// Adam with bias correction. Non-finite coordinates (masked logits) are left untouched.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.step_masked(x, grad, None);
    }

    /// Update only coordinates with `mask[i] == true`; others keep their moments.
    pub fn step_masked(&mut self, x: &mut [f64], grad: &[f64], mask: Option<&[bool]>) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t);
        let b2t = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            if !x[i].is_finite() || mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            x[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig { max_iters: 200, memory: 10, grad_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().filter(|x| x.is_finite()).map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking. `f` returns value and gradient.
pub fn lbfgs<F>(mut f: F, x0: Vec<f64>, cfg: LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iters = 0;
    let mut converged = norm(&g) < cfg.grad_tol;
    while !converged && iters < cfg.max_iters {
        iters += 1;
        let mut q: Vec<f64> = g.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &q);
            for j in 0..q.len() {
                q[j] -= alphas[i] * y_hist[i][j];
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &q);
            for j in 0..q.len() {
                q[j] += s_hist[i][j] * (alphas[i] - beta);
            }
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| if v.is_finite() { -v } else { 0.0 }).collect();
            slope = dot(&g, &d);
        }
        let mut step = if k == 0 { (1.0 / norm(&g).max(1e-300)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| if a.is_finite() { a + step * b } else { *a }).collect();
            let (fn_, gn) = f(&xn);
            let armijo = fn_ <= fx + 1e-4 * step * slope;
            // Near the optimum value differences drown in rounding; fall back to the gradient.
            let flat = fn_ <= fx + 1e-14 * fx.abs().max(1e-300) && dot(&gn, &d).abs() <= 0.9 * slope.abs();
            if fn_.is_finite() && (armijo || flat) {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| if a.is_finite() { a - b } else { 0.0 }).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| if a.is_finite() && b.is_finite() { a - b } else { 0.0 }).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * norm(&s) * norm(&y) && sy > 0.0 {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let progress = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        converged = norm(&g) < cfg.grad_tol;
        if !converged && progress.abs() <= 1e-16 * fx.abs().max(1.0) && s_hist.is_empty() {
            break;
        }
    }
    let grad_norm = norm(&g);
    LbfgsResult { x, value: fx, grad: g, grad_norm, iters, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..2000 {
            let g = vec![2.0 * x[0], 4.0 * x[1]];
            opt.step(&mut x, &g);
        }
        assert!(norm(&x) < 1e-3);
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let r = lbfgs(f, vec![-1.2, 1.0], LbfgsConfig { max_iters: 500, memory: 10, grad_tol: 1e-10 });
        assert!(r.converged, "{r:?}");
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }
}
