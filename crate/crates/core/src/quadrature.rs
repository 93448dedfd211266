//! Gauss-Legendre rules and scalar optimization helpers.

use std::sync::OnceLock;

const MAX_ORDER: usize = 48;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    fn compute(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess followed by Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussRule { nodes, weights }
    }

    /// Nodes and weights mapped to `[lo, hi]`.
    pub fn on(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (lo + hi);
        let r = 0.5 * (hi - lo);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (c + r * x, r * w))
    }

    pub fn integrate(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(lo, hi).map(|(x, w)| w * f(x)).sum()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached rule of order `n` (clamped to `1..=48`).
pub fn gauss_legendre(n: usize) -> &'static GaussRule {
    static RULES: OnceLock<Vec<GaussRule>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        (0..=MAX_ORDER)
            .map(|k| {
                if k == 0 {
                    GaussRule { nodes: vec![], weights: vec![] }
                } else if k == 1 {
                    GaussRule { nodes: vec![0.0], weights: vec![2.0] }
                } else {
                    GaussRule::compute(k)
                }
            })
            .collect()
    });
    &rules[n.clamp(1, MAX_ORDER)]
}

/// Rule order giving roughly machine precision for an integrand analytic on
/// `[lo, lo + len]` with a singularity at distance `gap` beyond one endpoint.
pub(crate) fn order_for_gap(gap: f64, len: f64) -> usize {
    let d = 1.0 + 2.0 * gap / len;
    let rho = d + (d * d - 1.0).sqrt();
    let n = (36.0 / (2.0 * rho.ln())).ceil() as usize + 1;
    n.clamp(4, MAX_ORDER)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a maximum of a unimodal `f` on `[lo, hi]`.
/// Returns `(argmax, max)`.
pub fn golden_max(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (hi - lo).abs() <= tol * (1.0 + x1.abs().max(x2.abs())) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Maximizes `f` over the geometric grid `lo * (hi/lo)^(k/(samples-1))` and
/// refines the best bracket by golden section. Returns `(argmax, max)`.
pub fn bracket_and_refine(lo: f64, hi: f64, samples: usize, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let samples = samples.max(3);
    let ratio = (hi / lo).ln() / (samples - 1) as f64;
    let ts: Vec<f64> = (0..samples).map(|k| lo * (ratio * k as f64).exp()).collect();
    let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    let (best, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    let l = ts[best.saturating_sub(1)];
    let r = ts[(best + 1).min(samples - 1)];
    let (t, v) = golden_max(l.ln(), r.ln(), 1e-12, |u| f(u.exp()));
    if v >= vals[best] {
        (t.exp(), v)
    } else {
        (ts[best], vals[best])
    }
}
