//! Independent oracles shared by the integration tests.

#![allow(dead_code, clippy::excessive_precision)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use upr_core::ingest::ReturnPanel;
use upr_core::risk::SplineQuantile;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn gaussian_panel(rng: &mut ChaCha20Rng, n: usize, p: usize, sd: f64) -> ReturnPanel {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..p)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    ReturnPanel::from_rows(&rows).unwrap()
}

// Gauss-Kronrod 7-15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod integral of `f` over `[a, b]`, pre-split at `breaks`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let share = tol / (pts.len() - 1) as f64;
    pts.windows(2)
        .map(|w| adapt(&f, w[0], w[1], share, 40))
        .sum()
}

fn pinball(alpha: f64, z: f64) -> f64 {
    (alpha - if z < 0.0 { 1.0 } else { 0.0 }) * z
}

/// Direct evaluation of `g(alpha) = gamma + sum_m b_m (alpha - d_m)_+`.
pub fn hinge_eval(model: &SplineQuantile, alpha: f64) -> f64 {
    model.gamma()
        + model
            .knots()
            .iter()
            .zip(model.slopes())
            .map(|(d, b)| b * (alpha - d).max(0.0))
            .sum::<f64>()
}

/// `int_eta^1 alpha^{-1} l_alpha(y - g(alpha)) d alpha` by quadrature.
pub fn truncated_risk_integral(model: &SplineQuantile, y: f64, eta: f64) -> f64 {
    let f = |a: f64| pinball(a, y - hinge_eval(model, a)) / a;
    // split at knots, at the crossing g(alpha) = y and on a log scale near eta
    let mut breaks: Vec<f64> = model.knots().to_vec();
    if let Some(c) = crossing(model, y, eta) {
        breaks.push(c);
    }
    let mut t = eta;
    while t < 1.0 {
        breaks.push(t);
        t *= 4.0;
    }
    integrate(f, eta, 1.0, &breaks, 1e-11)
}

/// Level where the spline crosses `y`, by bisection.
fn crossing(model: &SplineQuantile, y: f64, eta: f64) -> Option<f64> {
    let (mut lo, mut hi) = (eta, 1.0);
    if hinge_eval(model, lo) >= y || hinge_eval(model, hi) <= y {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if hinge_eval(model, m) < y {
            lo = m;
        } else {
            hi = m;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Euclidean projection of `x` onto `{A z = c}` via the full KKT system.
pub fn kkt_projection(x: &[f64], a: &DMatrix<f64>, c: &[f64]) -> Vec<f64> {
    let p = x.len();
    let k = a.nrows();
    let mut m = DMatrix::<f64>::zeros(p + k, p + k);
    for i in 0..p {
        m[(i, i)] = 1.0;
    }
    for r in 0..k {
        for j in 0..p {
            m[(p + r, j)] = a[(r, j)];
            m[(j, p + r)] = a[(r, j)];
        }
    }
    let mut rhs = DVector::<f64>::zeros(p + k);
    for i in 0..p {
        rhs[i] = x[i];
    }
    for r in 0..k {
        rhs[p + r] = c[r];
    }
    let sol = m.lu().solve(&rhs).expect("nonsingular KKT system");
    sol.iter().take(p).copied().collect()
}

/// Kendall's tau for continuous data: sort by `u`, count discordances by merge sort.
pub fn kendall_tau(pairs: &[(f64, f64)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut v: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; v.len()];
    let inversions = merge_count(&mut v, &mut buf);
    let n = pairs.len() as f64;
    1.0 - 4.0 * inversions as f64 / (n * (n - 1.0))
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv =
        merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    inv
}

/// Kolmogorov-Smirnov distance of a sample from U(0, 1).
pub fn ks_uniform(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| ((i as f64 + 1.0) / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut dn = x.to_vec();
    up[i] += h;
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / max(||b||, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(floor)
}

/// Random valid spline on `m` uniform knot intervals with all cumulative
/// slopes in `[lo, hi]`.
pub fn random_spline(
    rng: &mut ChaCha20Rng,
    m: usize,
    gamma: f64,
    lo: f64,
    hi: f64,
) -> SplineQuantile {
    let knots: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
    let deltas: Vec<f64> = (0..=m).map(|_| rng.random_range(lo..hi)).collect();
    SplineQuantile::from_deltas(gamma, knots, &deltas).unwrap()
}
