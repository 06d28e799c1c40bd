//! Hyperboloid model of hyperbolic space with curvature `-1/K`.
//!
//! Points live on `{x : <x,x>_L = -K, x0 > 0}` where
//! `<x,y>_L = -x0*y0 + sum_i xi*yi`. Only maps based at the origin
//! `o = (sqrt(K), 0, ..., 0)` are provided; tangent vectors at `o` have a
//! zero time coordinate and are handled through their spatial part.

use crate::error::{Error, Result};

/// Below this `|v|/sqrt(K)` the `sinh(t)/t` style factors use their series.
const SERIES_CUTOFF: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct HyperbolicPoint {
    coords: Vec<f64>,
    k: f64,
}

pub fn minkowski_dot(x: &[f64], y: &[f64]) -> f64 {
    let spatial: f64 = x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum();
    -x[0] * y[0] + spatial
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("hyperbolic K must be positive, got {k}")))
    }
}

impl HyperbolicPoint {
    /// Validates the Minkowski constraint (relative tolerance `1e-8`) and
    /// the upper-sheet condition.
    pub fn new(coords: Vec<f64>, k: f64) -> Result<Self> {
        check_k(k)?;
        if coords.len() < 2 {
            return Err(Error::dim("hyperbolic point", "need at least one spatial coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::numeric("hyperbolic point", "non-finite coordinate"));
        }
        let residual = minkowski_dot(&coords, &coords) + k;
        let scale = 1.0 + coords[0] * coords[0];
        if residual.abs() > 1e-8 * scale || coords[0] <= 0.0 {
            return Err(Error::Contract(format!(
                "point is off the hyperboloid (residual {residual:e}, x0 {})",
                coords[0]
            )));
        }
        Ok(HyperbolicPoint { coords, k })
    }

    pub fn origin(dim: usize, k: f64) -> Result<Self> {
        check_k(k)?;
        let mut coords = vec![0.0; dim + 1];
        coords[0] = k.sqrt();
        Ok(HyperbolicPoint { coords, k })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Geodesic distance to the origin, `sqrt(K) * arccosh(-<o,x>_L / K)`.
    pub fn distance_from_origin(&self) -> f64 {
        let sk = self.k.sqrt();
        let ratio = (self.coords[0] / sk).max(1.0);
        sk * ratio.acosh()
    }
}

/// `exp_o(v)` for a tangent vector `v = (0, v1, ..., vd)`.
pub fn exp_map_origin(v: &[f64], k: f64) -> Result<HyperbolicPoint> {
    check_k(k)?;
    if v.len() < 2 {
        return Err(Error::dim("exp_map_origin", "need at least one spatial coordinate"));
    }
    if v[0] != 0.0 {
        return Err(Error::Contract(format!(
            "tangent vector at the origin must have zero time coordinate, got {}",
            v[0]
        )));
    }
    let mut coords = vec![0.0; v.len()];
    exp_origin_into(&v[1..], k, &mut coords)?;
    Ok(HyperbolicPoint { coords, k })
}

/// `log_o(x)`, returned as an ambient tangent vector with zero time coordinate.
pub fn log_map_origin(x: &HyperbolicPoint) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.coords.len()];
    log_origin_into(&x.coords[1..], x.k, &mut out)?;
    Ok(out)
}

// sqrt(K) sinh(r/sqrt(K)) / r
fn sinh_ratio(r: f64, sk: f64) -> f64 {
    let t = r / sk;
    if t < SERIES_CUTOFF {
        1.0 + t * t / 6.0
    } else {
        sk * t.sinh() / r
    }
}

// sqrt(K) asinh(r/sqrt(K)) / r
fn asinh_ratio(r: f64, sk: f64) -> f64 {
    let s = r / sk;
    if s < SERIES_CUTOFF {
        1.0 - s * s / 6.0
    } else {
        sk * s.asinh() / r
    }
}

/// Writes `exp_o` of the spatial tangent part `u` into `out` (`len = u.len() + 1`).
pub(crate) fn exp_origin_into(u: &[f64], k: f64, out: &mut [f64]) -> Result<()> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("exp_map_origin", "non-finite tangent vector"));
    }
    let sk = k.sqrt();
    let r = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let f = sinh_ratio(r, sk);
    out[0] = sk * (r / sk).cosh();
    for (o, &ui) in out[1..].iter_mut().zip(u) {
        *o = f * ui;
    }
    if !out[0].is_finite() {
        return Err(Error::numeric("exp_map_origin", format!("overflow at tangent norm {r}")));
    }
    Ok(())
}

/// Writes `log_o` of the point with spatial part `xs` into `out`
/// (`len = xs.len() + 1`, time coordinate zero). On the hyperboloid the
/// spatial part alone determines the point.
pub(crate) fn log_origin_into(xs: &[f64], k: f64, out: &mut [f64]) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("log_map_origin", "non-finite point"));
    }
    let sk = k.sqrt();
    let r = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = asinh_ratio(r, sk);
    out[0] = 0.0;
    for (o, &x) in out[1..].iter_mut().zip(xs) {
        *o = h * x;
    }
    Ok(())
}

/// Accumulates into `gu` the gradient w.r.t. the spatial tangent part `u`
/// given the upstream gradient `g` over all `d + 1` output coordinates.
pub(crate) fn exp_origin_vjp(u: &[f64], k: f64, g: &[f64], gu: &mut [f64]) {
    let sk = k.sqrt();
    let r2: f64 = u.iter().map(|v| v * v).sum();
    let r = r2.sqrt();
    let t = r / sk;
    let f = sinh_ratio(r, sk);
    // d f / dr divided by r, and sinh(t)/r.
    let (fprime_over_r, sinh_over_r) = if t < SERIES_CUTOFF {
        (1.0 / (3.0 * k), 1.0 / sk)
    } else {
        ((t.cosh() - f) / r2, t.sinh() / r)
    };
    let gs = &g[1..];
    let u_dot_g: f64 = u.iter().zip(gs).map(|(a, b)| a * b).sum();
    let radial = fprime_over_r * u_dot_g + g[0] * sinh_over_r;
    for i in 0..u.len() {
        gu[i] += f * gs[i] + radial * u[i];
    }
}

/// Accumulates into `gx` the gradient w.r.t. the spatial point part `xs`
/// given the upstream gradient `gs` over the spatial output coordinates.
pub(crate) fn log_origin_vjp(xs: &[f64], k: f64, gs: &[f64], gx: &mut [f64]) {
    let sk = k.sqrt();
    let r2: f64 = xs.iter().map(|v| v * v).sum();
    let r = r2.sqrt();
    let s = r / sk;
    let h = asinh_ratio(r, sk);
    let hprime_over_r = if s < SERIES_CUTOFF {
        -1.0 / (3.0 * k)
    } else {
        (1.0 / (1.0 + s * s).sqrt() - h) / r2
    };
    let x_dot_g: f64 = xs.iter().zip(gs).map(|(a, b)| a * b).sum();
    for i in 0..xs.len() {
        gx[i] += h * gs[i] + hprime_over_r * x_dot_g * xs[i];
    }
}
