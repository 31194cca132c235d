//! Interaction potentials.
//!
//! A [`PotentialFamily`] is an even, nonpositive, compactly supported profile
//! `w` with its minimum at the origin. A [`PotentialSpec`] rescales it to the
//! 1-periodic kernel `W(x) = gamma * ell * w(x / ell)` on `|x| < 1/2`.
//!
//! Every supported family is piecewise polynomial of degree at most two on
//! `[0, s_w]`, which gives exact antiderivatives and Gaussian convolutions.

use std::path::Path;

use crate::error::{Error, Result};
use crate::quad::{self, QuadOptions};
use crate::torus;

/// `w(x) = c0 + c1 x + c2 x^2` for `x` in `[lo, hi)`, `x >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Piece {
    #[inline]
    fn value(&self, x: f64) -> f64 {
        self.c0 + x * (self.c1 + x * self.c2)
    }

    #[inline]
    fn slope(&self, x: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * x
    }

    /// Antiderivative vanishing at 0 (of the polynomial, not of the piece).
    #[inline]
    fn primitive(&self, x: f64) -> f64 {
        x * (self.c0 + x * (self.c1 / 2.0 + x * self.c2 / 3.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    HegselmannKrause,
    PiecewiseParabolic { alpha: f64, beta: f64, a: f64 },
    Tabulated { step: f64, values: Vec<f64> },
}

/// An admissible interaction profile `w` together with its derived constants.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialFamily {
    kind: FamilyKind,
    pieces: Vec<Piece>,
    wpp0: f64,
    support: f64,
}

impl PotentialFamily {
    /// `w(x) = (x^2 - 1) / 2` on `|x| <= 1`.
    pub fn hegselmann_krause() -> Self {
        Self {
            kind: FamilyKind::HegselmannKrause,
            pieces: vec![Piece { lo: 0.0, hi: 1.0, c0: -0.5, c1: 0.0, c2: 0.5 }],
            wpp0: 1.0,
            support: 1.0,
        }
    }

    /// Truncated piecewise parabola: curvature `alpha` on `|x| <= a`, `beta` on `a < |x| <= 1`.
    pub fn piecewise_parabolic(alpha: f64, beta: f64, a: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && a > 0.0 && a < 1.0) {
            return Err(Error::InvalidPotential(format!(
                "piecewise parabolic needs alpha, beta > 0 and a in (0,1), got ({alpha}, {beta}, {a})"
            )));
        }
        let inner_c0 = -alpha * a * a / 2.0 + beta * (a * a - 1.0) / 2.0;
        Ok(Self {
            kind: FamilyKind::PiecewiseParabolic { alpha, beta, a },
            pieces: vec![
                Piece { lo: 0.0, hi: a, c0: inner_c0, c1: 0.0, c2: alpha / 2.0 },
                Piece { lo: a, hi: 1.0, c0: -beta / 2.0, c1: 0.0, c2: beta / 2.0 },
            ],
            wpp0: alpha,
            support: 1.0,
        })
    }

    /// Linear interpolation of samples on a uniform grid.
    ///
    /// `xs` either starts at 0 (half profile) or is symmetric about 0. The last
    /// sample marks the support edge and must be zero. `wpp0` is the curvature
    /// at the origin, which a piecewise-linear table cannot supply.
    pub fn tabulated(xs: &[f64], ws: &[f64], wpp0: f64) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidPotential(msg));
        if xs.len() != ws.len() || xs.len() < 2 {
            return bad("tabulated potential needs at least two (x, w) samples".into());
        }
        if !(wpp0 > 0.0) {
            return bad(format!("w''(0) must be positive, got {wpp0}"));
        }
        let n = xs.len();
        let step = xs[1] - xs[0];
        if !(step > 0.0) {
            return bad("sample abscissae must be increasing".into());
        }
        for w in xs.windows(2) {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0) {
                return bad("sample abscissae must be uniformly spaced".into());
            }
        }
        let scale = ws.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let half: Vec<f64> = if xs[0].abs() <= 1e-12 * step {
            ws.to_vec()
        } else {
            if (xs[0] + xs[n - 1]).abs() > 1e-9 * step.max(1.0) || n.is_multiple_of(2) {
                return bad("samples must start at 0 or be symmetric about 0 with a node at 0".into());
            }
            for i in 0..n / 2 {
                if (ws[i] - ws[n - 1 - i]).abs() > 1e-12 * scale {
                    return bad(format!("samples are not even at x = {}", xs[n - 1 - i]));
                }
            }
            ws[n / 2..].to_vec()
        };
        if half.iter().any(|&v| v > 0.0) {
            return bad("w must be nonpositive".into());
        }
        if half.windows(2).any(|p| p[1] < p[0]) {
            return bad("w must be nondecreasing on [0, inf)".into());
        }
        if half[0] >= 0.0 {
            return bad("w must attain a negative minimum at 0".into());
        }
        let last = *half.last().unwrap();
        if last.abs() > 1e-12 * scale {
            return bad("the last sample must be zero (edge of the support)".into());
        }
        let mut values = half;
        *values.last_mut().unwrap() = 0.0;
        let support = step * (values.len() - 1) as f64;
        let pieces = values
            .windows(2)
            .enumerate()
            .map(|(i, v)| {
                let lo = step * i as f64;
                let slope = (v[1] - v[0]) / step;
                Piece { lo, hi: lo + step, c0: v[0] - slope * lo, c1: slope, c2: 0.0 }
            })
            .collect();
        Ok(Self { kind: FamilyKind::Tabulated { step, values }, pieces, wpp0, support })
    }

    /// Reads a two-column CSV `x,w` (an optional non-numeric header line is skipped).
    pub fn tabulated_from_csv(path: impl AsRef<Path>, wpp0: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (mut xs, mut ws) = (Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                return Err(Error::InvalidPotential(format!("line {}: expected two columns", lineno + 1)));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(w)) => {
                    xs.push(x);
                    ws.push(w);
                }
                _ if xs.is_empty() => continue,
                _ => return Err(Error::InvalidPotential(format!("line {}: not a number", lineno + 1))),
            }
        }
        Self::tabulated(&xs, &ws, wpp0)
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Depth `Delta = -inf w = -w(0)`.
    pub fn delta(&self) -> f64 {
        -self.pieces[0].c0
    }

    /// Curvature `w''(0)`.
    pub fn wpp0(&self) -> f64 {
        self.wpp0
    }

    /// Half-width `s_w` of the support.
    pub fn support(&self) -> f64 {
        self.support
    }

    #[inline]
    fn piece(&self, r: f64) -> &Piece {
        match &self.kind {
            FamilyKind::Tabulated { step, .. } => {
                let i = ((r / step) as usize).min(self.pieces.len() - 1);
                &self.pieces[i]
            }
            _ => self.pieces.iter().find(|p| r < p.hi).unwrap_or(self.pieces.last().unwrap()),
        }
    }

    /// `w(x)`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let r = x.abs();
        if r >= self.support {
            return 0.0;
        }
        self.piece(r).value(r)
    }

    /// `w'(x)`; zero outside the open support.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let r = x.abs();
        if r >= self.support {
            return 0.0;
        }
        let s = self.piece(r).slope(r);
        if x < 0.0 {
            -s
        } else {
            s
        }
    }

    /// `int_0^x w`, an odd function that is constant beyond the support.
    pub fn primitive(&self, x: f64) -> f64 {
        let r = x.abs().min(self.support);
        let mut acc = 0.0;
        for p in &self.pieces {
            if r <= p.lo {
                break;
            }
            let hi = r.min(p.hi);
            acc += p.primitive(hi) - p.primitive(p.lo);
        }
        if x < 0.0 {
            -acc
        } else {
            acc
        }
    }

    /// `int_R w`.
    pub fn total_integral(&self) -> f64 {
        2.0 * self.primitive(self.support)
    }
}

/// A family together with interaction strength `gamma` and range `ell`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub gamma: f64,
    pub ell: f64,
}

impl PotentialSpec {
    /// Requires `gamma >= 0`, `ell > 0` and `ell * s_w <= 1/2`.
    pub fn new(family: PotentialFamily, gamma: f64, ell: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(ell > 0.0) || ell * family.support() > 0.5 + 1e-15 {
            return Err(Error::InvalidParameter(format!(
                "ell must satisfy 0 < ell * s_w <= 1/2, got ell = {ell}, s_w = {}",
                family.support()
            )));
        }
        Ok(Self { family, gamma, ell })
    }

    pub fn hk(gamma: f64, ell: f64) -> Result<Self> {
        Self::new(PotentialFamily::hegselmann_krause(), gamma, ell)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.family.clone(), gamma, self.ell)
    }

    pub fn delta(&self) -> f64 {
        self.family.delta()
    }

    pub fn wpp0(&self) -> f64 {
        self.family.wpp0()
    }

    pub fn s_w(&self) -> f64 {
        self.family.support()
    }

    /// Radius `s_w * ell` beyond which `W` vanishes.
    pub fn interaction_radius(&self) -> f64 {
        self.family.support() * self.ell
    }

    /// `W(x)`, 1-periodic.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.gamma * self.ell * self.family.eval(torus::signed(x) / self.ell)
    }

    /// `W'(x)`, 1-periodic and odd in the wrapped argument.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        self.gamma * self.family.derivative(torus::signed(x) / self.ell)
    }

    /// `int_a^b W` for any `a <= b` (periodic extension included).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let scale = self.gamma * self.ell * self.ell;
        let lo = (a - 0.5).floor() as i64;
        let hi = (b + 0.5).ceil() as i64;
        let mut acc = 0.0;
        for n in lo..=hi {
            let n = n as f64;
            acc += self.family.primitive((b - n) / self.ell) - self.family.primitive((a - n) / self.ell);
        }
        scale * acc
    }

    /// `int_0^1 W(x) cos(k x) dx`; the `k = 0` value is `gamma ell^2 int w`.
    pub fn fourier(&self, k: f64) -> f64 {
        let scale = self.gamma * self.ell * self.ell;
        if let FamilyKind::HegselmannKrause = self.family.kind {
            return scale * hk_fourier_unit(k * self.ell);
        }
        if k == 0.0 {
            return scale * self.family.total_integral();
        }
        let kl = k * self.ell;
        let mut breaks = vec![0.0];
        breaks.extend(self.family.pieces().iter().map(|p| p.hi));
        let fam = &self.family;
        let mut f = |u: f64| fam.eval(u) * (kl * u).cos();
        let half = quad::integrate_with_breaks(&mut f, &breaks, QuadOptions::with_tol(1e-14, 1e-13))
            .expect("Fourier quadrature of a piecewise polynomial converges");
        2.0 * scale * half
    }
}

/// `ell^-2 * int W_{1,ell}(x) cos(k x) dx` for the HK profile, as a function of `y = k ell`.
fn hk_fourier_unit(y: f64) -> f64 {
    if y.abs() < 0.1 {
        // 2 (y cos y - sin y) / y^3 expanded in y^2.
        let y2 = y * y;
        let coeffs = [
            -1.0 / 3.0,
            1.0 / 30.0,
            -1.0 / 840.0,
            1.0 / 45_360.0,
            -1.0 / 3_991_680.0,
            1.0 / 518_918_400.0,
        ];
        2.0 * coeffs.iter().rev().fold(0.0, |acc, c| acc * y2 + c)
    } else {
        2.0 * (y * y.cos() - y.sin()) / (y * y * y)
    }
}
