//! Gauss–Hermite rules and a few special functions.

use std::f64::consts::PI;

/// Nodes and weights for `∫ e^{-x²} f(x) dx ≈ Σ w_i f(x_i)`, by Newton
/// iteration on the normalized Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// A rule for expectations under the standard normal: `E[f(Z)] ≈ Σ w_i f(z_i)`.
#[derive(Debug, Clone)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_hermite(n);
        let s = std::f64::consts::SQRT_2;
        let norm = PI.sqrt();
        NormalRule {
            nodes: x.iter().map(|v| v * s).collect(),
            weights: w.iter().map(|v| v / norm).collect(),
        }
    }

    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Standard-normal expectations of functions that are smooth except at one
/// known point: Gauss–Legendre on each side of the break, truncated at ±`span`.
#[derive(Debug, Clone)]
pub struct SplitNormalRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    span: f64,
}

impl SplitNormalRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        SplitNormalRule { nodes, weights, span: 10.0 }
    }

    fn segment(&self, f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let norm = (2.0 * PI).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| {
                let z = mid + half * t;
                w * f(z) * (-0.5 * z * z).exp() / norm
            })
            .sum::<f64>()
            * half
    }

    pub fn expect(&self, mut f: impl FnMut(f64) -> f64, break_at: f64) -> f64 {
        let (lo, hi) = (-self.span, self.span);
        if !(break_at > lo && break_at < hi) {
            // the break is in the negligible tail
            let mut total = 0.0;
            for k in 0..4 {
                let a = lo + (hi - lo) * k as f64 / 4.0;
                total += self.segment(&mut f, a, a + (hi - lo) / 4.0);
            }
            return total;
        }
        let mut total = 0.0;
        for (a, b) in [(lo, break_at), (break_at, hi)] {
            // subdivide long sides so the gaussian bump is resolved
            let pieces = ((b - a) / 2.5).ceil().max(1.0) as usize;
            for k in 0..pieces {
                let x0 = a + (b - a) * k as f64 / pieces as f64;
                let x1 = a + (b - a) * (k + 1) as f64 / pieces as f64;
                total += self.segment(&mut f, x0, x1);
            }
        }
        total
    }
}

/// Error function via the all-positive series `2/√π·e^{-x²}·Σ 2^n x^{2n+1}/(2n+1)!!`.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x > 6.0 {
        return 1.0;
    }
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > 1e-17 * sum {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / PI.sqrt() * (-x2).exp() * sum
}
