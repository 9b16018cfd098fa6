//! Small numeric building blocks: symmetric 2x2 matrices, Gaussian /
//! Inverse-Wishart / Inverse-Gamma densities and samplers, and log-space
//! helpers.
//!
//! Cluster covariances have a free 2x2 longitude/latitude block and are
//! diagonal elsewhere, so a dedicated symmetric-2x2 type covers all linear
//! algebra the model needs.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Symmetric 2x2 matrix [[a, b], [b, c]].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Sym2 { a, b, c }
    }

    pub fn identity() -> Self {
        Sym2::new(1.0, 0.0, 1.0)
    }

    pub fn scaled_identity(s: f64) -> Self {
        Sym2::new(s, 0.0, s)
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn is_pd(&self) -> bool {
        self.a > 0.0 && self.det() > 0.0
    }

    pub fn inverse(&self) -> Result<Sym2> {
        let d = self.det();
        if !self.is_pd() {
            return Err(Error::InvalidState(format!(
                "2x2 block not positive definite (det {d})"
            )));
        }
        Ok(Sym2::new(self.c / d, -self.b / d, self.a / d))
    }

    /// Lower Cholesky factor L with self = L Lᵀ.
    pub fn cholesky(&self) -> Result<[f64; 3]> {
        if !self.is_pd() {
            return Err(Error::InvalidState(
                "2x2 block not positive definite".into(),
            ));
        }
        let l11 = self.a.sqrt();
        let l21 = self.b / l11;
        let l22 = (self.c - l21 * l21).sqrt();
        Ok([l11, l21, l22])
    }

    /// xᵀ self x for x = (x0, x1).
    pub fn quad_form(&self, x0: f64, x1: f64) -> f64 {
        self.a * x0 * x0 + 2.0 * self.b * x0 * x1 + self.c * x1 * x1
    }

    pub fn add(&self, other: &Sym2) -> Sym2 {
        Sym2::new(self.a + other.a, self.b + other.b, self.c + other.c)
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.a * s, self.b * s, self.c * s)
    }

    pub fn trace_product(&self, other: &Sym2) -> f64 {
        self.a * other.a + 2.0 * self.b * other.b + self.c * other.c
    }
}

/// Log density of N((x0,x1); (m0,m1), sigma).
pub fn ln_normal2(x0: f64, x1: f64, m0: f64, m1: f64, sigma: &Sym2) -> Result<f64> {
    let inv = sigma.inverse()?;
    let q = inv.quad_form(x0 - m0, x1 - m1);
    Ok(-LN_2PI - 0.5 * sigma.det().ln() - 0.5 * q)
}

/// Log density of N(x; m, v) with variance v.
pub fn ln_normal1(x: f64, m: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = x - m;
    -0.5 * (LN_2PI + v.ln()) - 0.5 * z * z / v
}

/// Natural log of the Gamma function (Lanczos approximation, |err| < 1e-13).
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, &g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// Log of the bivariate multivariate gamma function Γ₂(a).
pub fn ln_multigamma2(a: f64) -> f64 {
    0.5 * std::f64::consts::PI.ln() + ln_gamma(a) + ln_gamma(a - 0.5)
}

/// Log density of the Inverse-Wishart IW(nu, psi) at a 2x2 matrix `sigma`.
pub fn ln_inv_wishart2(sigma: &Sym2, nu: f64, psi: &Sym2) -> Result<f64> {
    let p = 2.0;
    let inv = sigma.inverse()?;
    Ok(0.5 * nu * psi.det().ln()
        - 0.5 * nu * p * std::f64::consts::LN_2
        - ln_multigamma2(0.5 * nu)
        - 0.5 * (nu + p + 1.0) * sigma.det().ln()
        - 0.5 * psi.trace_product(&inv))
}

/// Log density of the Inverse-Gamma IG(shape, scale) at x.
pub fn ln_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Draw from IW(nu, psi) on 2x2 matrices via a Bartlett-decomposed Wishart.
pub fn sample_inv_wishart2<R: Rng + ?Sized>(rng: &mut R, nu: f64, psi: &Sym2) -> Result<Sym2> {
    // W ~ Wishart(nu, psi⁻¹), then Σ = W⁻¹ ~ IW(nu, psi).
    let scale_inv = psi.inverse()?;
    let l = scale_inv.cholesky()?;
    let c1 = ChiSquared::new(nu).map_err(|e| Error::Internal(format!("chi2: {e}")))?;
    let c2 = ChiSquared::new(nu - 1.0).map_err(|e| Error::Internal(format!("chi2: {e}")))?;
    let a11 = c1.sample(rng).sqrt();
    let a22 = c2.sample(rng).sqrt();
    let a21: f64 = StandardNormal.sample(rng);
    // T = L·A (lower triangular), W = T Tᵀ.
    let t11 = l[0] * a11;
    let t21 = l[1] * a11 + l[2] * a21;
    let t22 = l[2] * a22;
    let w = Sym2::new(t11 * t11, t11 * t21, t21 * t21 + t22 * t22);
    w.inverse()
}

/// Draw from IG(shape, scale): the reciprocal of a Gamma(shape, rate=scale) draw.
pub fn sample_inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    let g = rand_distr::Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::Internal(format!("gamma: {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// Draw (x0, x1) ~ N((m0, m1), sigma).
pub fn sample_normal2<R: Rng + ?Sized>(
    rng: &mut R,
    m0: f64,
    m1: f64,
    sigma: &Sym2,
) -> Result<(f64, f64)> {
    let l = sigma.cholesky()?;
    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    Ok((m0 + l[0] * z0, m1 + l[1] * z0 + l[2] * z1))
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// log(Σ exp(xs)) computed stably.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sample mean and unbiased (n-1) variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}
