//! One-dimensional quadrature: globally adaptive Gauss–Kronrod (7/15) for smooth
//! panels, and the double-exponential rules (tanh-sinh on finite intervals,
//! exp-sinh on half lines) for endpoint singularities and algebraic tails.
//!
//! Every rule has a vector-valued form so that several moments of one
//! integrand can share the function evaluations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    fn accepts(&self, error: f64, value: f64) -> bool {
        error <= self.abs.max(self.rel * value.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-14, 1e-12)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct VecQuadResult {
    pub values: Vec<f64>,
    pub error: f64,
    pub evaluations: usize,
}

impl VecQuadResult {
    fn scalar(self) -> QuadResult {
        QuadResult {
            value: self.values[0],
            error: self.error,
            evaluations: self.evaluations,
        }
    }
}

// Kronrod abscissae and weights (15 points), Gauss weights (7 points), from QUADPACK.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

struct Panel {
    a: f64,
    b: f64,
    values: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod_panel<F>(f: &mut F, a: f64, b: f64, n: usize, buf: &mut [f64]) -> Result<Panel>
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; n];
    let mut gauss = vec![0.0; n];

    f(center, buf);
    for c in 0..n {
        kron[c] = WGK[7] * buf[c];
        gauss[c] = WG[3] * buf[c];
    }
    for (j, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        f(center - dx, buf);
        let left: Vec<f64> = buf.to_vec();
        f(center + dx, buf);
        for c in 0..n {
            let s = left[c] + buf[c];
            kron[c] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[c] += WG[j / 2] * s;
            }
        }
    }
    let mut error: f64 = 0.0;
    for c in 0..n {
        kron[c] *= half;
        gauss[c] *= half;
        if !kron[c].is_finite() {
            return Err(Error::numeric(
                format!("non-finite integrand on [{a}, {b}]"),
                f64::INFINITY,
            ));
        }
        // The raw Kronrod-Gauss difference overestimates badly for smooth
        // integrands; QUADPACK's (200 e)^1.5 rescaling is applied per component.
        let raw = (kron[c] - gauss[c]).abs();
        let scale = kron[c].abs().max(f64::MIN_POSITIVE);
        let rescaled = if raw > 0.0 {
            scale * (200.0 * raw / scale).powf(1.5).min(1.0)
        } else {
            0.0
        };
        error = error.max(rescaled.max(50.0 * f64::EPSILON * kron[c].abs()));
    }
    Ok(Panel {
        a,
        b,
        values: kron,
        error,
    })
}

/// Globally adaptive Gauss–Kronrod for an `n`-component integrand on `[a, b]`.
/// Convergence is judged on the component of largest magnitude.
pub fn gauss_kronrod_vec<F>(
    mut f: F,
    a: f64,
    b: f64,
    n: usize,
    tol: Tolerance,
    max_panels: usize,
) -> Result<VecQuadResult>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!(
            "Gauss-Kronrod needs finite limits, got [{a}, {b}]"
        )));
    }
    let mut buf = vec![0.0; n];
    if a == b {
        return Ok(VecQuadResult {
            values: vec![0.0; n],
            error: 0.0,
            evaluations: 0,
        });
    }
    let mut heap = BinaryHeap::new();
    heap.push(kronrod_panel(&mut f, a, b, n, &mut buf)?);
    let mut evaluations = 15;
    loop {
        let mut total = vec![0.0; n];
        let mut error = 0.0;
        for p in heap.iter() {
            for c in 0..n {
                total[c] += p.values[c];
            }
            error += p.error;
        }
        let magnitude = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if tol.accepts(error, magnitude) {
            return Ok(VecQuadResult {
                values: total,
                error,
                evaluations,
            });
        }
        if heap.len() >= max_panels {
            return Err(Error::numeric(
                format!("Gauss-Kronrod did not converge on [{a}, {b}] within {max_panels} panels"),
                error,
            ));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel can no longer be split in floating point; accept what we have.
            heap.push(worst);
            let mut values = vec![0.0; n];
            for p in heap.iter() {
                for c in 0..n {
                    values[c] += p.values[c];
                }
            }
            return Ok(VecQuadResult {
                values,
                error,
                evaluations,
            });
        }
        heap.push(kronrod_panel(&mut f, worst.a, mid, n, &mut buf)?);
        heap.push(kronrod_panel(&mut f, mid, worst.b, n, &mut buf)?);
        evaluations += 30;
    }
}

pub fn gauss_kronrod<F>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult>
where
    F: FnMut(f64) -> f64,
{
    gauss_kronrod_vec(|x, out| out[0] = f(x), a, b, 1, tol, 4000).map(VecQuadResult::scalar)
}

const DE_MAX_LEVEL: usize = 12;
const DE_MIN_LEVEL: usize = 3;

fn de_accumulate(
    total: &mut [f64],
    term: &[f64],
    weight: f64,
) -> std::result::Result<(), ()> {
    for (t, v) in total.iter_mut().zip(term) {
        let c = v * weight;
        if c.is_nan() {
            return Err(());
        }
        *t += c;
    }
    Ok(())
}

/// Double-exponential driver: `node(t)` maps the abscissa parameter to
/// `(x, jacobian)` or `None` when the node falls outside representable range.
fn double_exponential<F, M>(
    mut f: F,
    node: M,
    t_max: f64,
    n: usize,
    tol: Tolerance,
) -> Result<VecQuadResult>
where
    F: FnMut(f64, &mut [f64]),
    M: Fn(f64) -> Option<(f64, f64)>,
{
    let mut buf = vec![0.0; n];
    let mut sum = vec![0.0; n];
    let mut evaluations = 0;
    let mut add = |t: f64, sum: &mut [f64], evaluations: &mut usize| -> Result<()> {
        if let Some((x, w)) = node(t) {
            if w > 0.0 && w.is_finite() {
                f(x, &mut buf);
                *evaluations += 1;
                de_accumulate(sum, &buf, w).map_err(|_| {
                    Error::numeric(format!("NaN integrand at x = {x}"), f64::NAN)
                })?;
            }
        }
        Ok(())
    };

    // level 0: h = 1, integer nodes
    let k_max = t_max.floor() as i64;
    for k in -k_max..=k_max {
        add(k as f64, &mut sum, &mut evaluations)?;
    }
    let mut h = 1.0;
    let mut previous: Vec<f64> = sum.clone();
    let mut last_diff = f64::INFINITY;
    for level in 1..=DE_MAX_LEVEL {
        h *= 0.5;
        let steps = (t_max / h).floor() as i64;
        let mut k = 1;
        while k <= steps {
            let t = k as f64 * h;
            add(t, &mut sum, &mut evaluations)?;
            add(-t, &mut sum, &mut evaluations)?;
            k += 2;
        }
        let estimate: Vec<f64> = sum.iter().map(|s| s * h).collect();
        let diff = estimate
            .iter()
            .zip(&previous)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let magnitude = estimate.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if estimate.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite double-exponential sum", f64::INFINITY));
        }
        // Each level roughly squares the relative error, so `diff` bounds the
        // error of the previous level and over-estimates that of this one.
        if level >= DE_MIN_LEVEL && tol.accepts(diff, magnitude) {
            return Ok(VecQuadResult {
                values: estimate,
                error: diff,
                evaluations,
            });
        }
        last_diff = diff;
        previous = estimate;
    }
    Err(Error::numeric(
        "double-exponential quadrature did not converge",
        last_diff,
    ))
}

/// Tanh-sinh quadrature on `[a, b]`; tolerates integrable algebraic or
/// logarithmic singularities at either endpoint. Nodes are generated from
/// their distance to the nearer endpoint, so `f` sees e.g. `x - a` exactly
/// when `a = 0`. Near `b` the node is `b - dist` rounded, so a singularity
/// there should be moved to the left endpoint by the caller.
pub fn tanh_sinh_vec<F>(f: F, a: f64, b: f64, n: usize, tol: Tolerance) -> Result<VecQuadResult>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::Domain(format!("tanh-sinh needs a finite interval, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(VecQuadResult {
            values: vec![0.0; n],
            error: 0.0,
            evaluations: 0,
        });
    }
    let width = b - a;
    let node = move |t: f64| {
        let u = FRAC_PI_2 * t.sinh();
        // distance to the left endpoint is width / (1 + e^{-2u})
        let e = (-2.0 * u.abs()).exp();
        let near = width * e / (1.0 + e);
        if near <= 0.0 {
            return None;
        }
        let x = if u < 0.0 { a + near } else { b - near };
        if x <= a || x >= b {
            return None;
        }
        let cosh_u = u.cosh();
        let w = 0.5 * width * FRAC_PI_2 * t.cosh() / (cosh_u * cosh_u);
        Some((x, w))
    };
    double_exponential(f, node, 6.0, n, tol)
}

pub fn tanh_sinh<F>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult>
where
    F: FnMut(f64) -> f64,
{
    tanh_sinh_vec(|x, out| out[0] = f(x), a, b, 1, tol).map(VecQuadResult::scalar)
}

/// Exp-sinh quadrature on `[a, +inf)`; handles algebraic decay at infinity and
/// an integrable singularity at `a`.
pub fn exp_sinh_vec<F>(f: F, a: f64, n: usize, tol: Tolerance) -> Result<VecQuadResult>
where
    F: FnMut(f64, &mut [f64]),
{
    if !a.is_finite() {
        return Err(Error::Domain(format!("exp-sinh needs a finite left endpoint, got {a}")));
    }
    let node = move |t: f64| {
        let y = (FRAC_PI_2 * t.sinh()).exp();
        if y == 0.0 || !y.is_finite() {
            return None;
        }
        let x = a + y;
        if x <= a {
            return None;
        }
        Some((x, FRAC_PI_2 * t.cosh() * y))
    };
    double_exponential(f, node, 6.0, n, tol)
}

pub fn exp_sinh<F>(mut f: F, a: f64, tol: Tolerance) -> Result<QuadResult>
where
    F: FnMut(f64) -> f64,
{
    exp_sinh_vec(|x, out| out[0] = f(x), a, 1, tol).map(VecQuadResult::scalar)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
