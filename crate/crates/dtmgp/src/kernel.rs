//! One-dimensional Markov kernels and their tensor products.
//!
//! A Markov kernel factorizes as `k(x,y) = p(min(x,y)) * q(max(x,y))` with
//! `p/q` strictly increasing; this factorization is what every sparse
//! construction in the crate exploits. Kernels are extended to all of the
//! real line by their defining formulas (deep-layer inputs may leave the
//! unit interval), and `k(+-inf, x) = 0` by convention so that boundary
//! neighbors drop out of the local systems.

use crate::error::{Error, Result};

/// Built-in one-dimensional Markov kernels with their `p`/`q` factors and
/// one-sided derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkovKernel1D {
    /// `exp(-theta |x - y|)`, with `p = exp(theta x)`, `q = exp(-theta x)`.
    Laplace { theta: f64 },
    /// `1 + theta * min(x, y)`, with `p = 1 + theta x`, `q = 1`.
    BrownianSheet { theta: f64 },
    /// `min(x,y) (1 - max(x,y))`, with `p = x`, `q = 1 - x`. Degenerate at
    /// the right endpoint (`q(1) = 0`); valid on the open interval.
    BrownianBridge,
}

impl MarkovKernel1D {
    pub fn laplace(theta: f64) -> Self {
        MarkovKernel1D::Laplace { theta }
    }

    pub fn brownian_sheet(theta: f64) -> Self {
        MarkovKernel1D::BrownianSheet { theta }
    }

    pub fn p(&self, x: f64) -> f64 {
        match self {
            MarkovKernel1D::Laplace { theta } => (theta * x).exp(),
            MarkovKernel1D::BrownianSheet { theta } => 1.0 + theta * x,
            MarkovKernel1D::BrownianBridge => x,
        }
    }

    pub fn q(&self, x: f64) -> f64 {
        match self {
            MarkovKernel1D::Laplace { theta } => (-theta * x).exp(),
            MarkovKernel1D::BrownianSheet { .. } => 1.0,
            MarkovKernel1D::BrownianBridge => 1.0 - x,
        }
    }

    pub fn dp(&self, x: f64) -> f64 {
        match self {
            MarkovKernel1D::Laplace { theta } => theta * (theta * x).exp(),
            MarkovKernel1D::BrownianSheet { theta } => *theta,
            MarkovKernel1D::BrownianBridge => 1.0,
        }
    }

    pub fn dq(&self, x: f64) -> f64 {
        match self {
            MarkovKernel1D::Laplace { theta } => -theta * (-theta * x).exp(),
            MarkovKernel1D::BrownianSheet { .. } => 0.0,
            MarkovKernel1D::BrownianBridge => -1.0,
        }
    }

    /// `k(x, y) = p(min) q(max)`; zero when either argument is infinite.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        if x.is_infinite() || y.is_infinite() {
            return 0.0;
        }
        if x <= y {
            self.p(x) * self.q(y)
        } else {
            self.p(y) * self.q(x)
        }
    }

    /// Derivative of `k(a, .)` at `y`, using the one-sided derivative from
    /// the left at the kink `y == a`.
    pub fn eval_dy(&self, a: f64, y: f64) -> f64 {
        if a.is_infinite() || y.is_infinite() {
            return 0.0;
        }
        if y <= a {
            self.dp(y) * self.q(a)
        } else {
            self.p(a) * self.dq(y)
        }
    }

    /// Parses a kernel spec string: `laplace:theta=X`,
    /// `brownian_sheet:theta=X`, or `brownian_bridge`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (name, rest) = match spec.split_once(':') {
            Some((n, r)) => (n.trim(), Some(r.trim())),
            None => (spec, None),
        };
        let theta = |rest: Option<&str>| -> Result<f64> {
            let rest = rest
                .ok_or_else(|| Error::Config(format!("kernel `{name}` requires `theta=<value>`")))?;
            let (key, value) = rest
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed kernel parameter `{rest}`")))?;
            if key.trim() != "theta" {
                return Err(Error::Config(format!("unknown kernel parameter `{key}`")));
            }
            let theta: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid theta `{value}`")))?;
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(Error::Config(format!("theta must be positive, got {theta}")));
            }
            Ok(theta)
        };
        match name {
            "laplace" => Ok(MarkovKernel1D::Laplace { theta: theta(rest)? }),
            "brownian_sheet" => Ok(MarkovKernel1D::BrownianSheet { theta: theta(rest)? }),
            "brownian_bridge" => {
                if rest.is_some() {
                    return Err(Error::Config("brownian_bridge takes no parameters".into()));
                }
                Ok(MarkovKernel1D::BrownianBridge)
            }
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }

    pub fn spec_string(&self) -> String {
        match self {
            MarkovKernel1D::Laplace { theta } => format!("laplace:theta={theta}"),
            MarkovKernel1D::BrownianSheet { theta } => format!("brownian_sheet:theta={theta}"),
            MarkovKernel1D::BrownianBridge => "brownian_bridge".to_string(),
        }
    }

    /// Numerical validity check on a uniform interior grid: `p` and `q`
    /// positive, `p/q` strictly increasing. Report-only; failures list the
    /// offending abscissae.
    pub fn validate(&self, grid_size: usize) -> ValidationReport {
        assert!(grid_size >= 3, "validation grid needs at least 3 points");
        let mut report = ValidationReport {
            positive: true,
            strictly_increasing: true,
            offending: Vec::new(),
        };
        let mut prev_ratio = f64::NEG_INFINITY;
        for i in 0..grid_size {
            let x = (i as f64 + 1.0) / (grid_size as f64 + 1.0);
            let (p, q) = (self.p(x), self.q(x));
            if !(p > 0.0) || !(q > 0.0) {
                report.positive = false;
                report.offending.push(x);
                continue;
            }
            let ratio = p / q;
            if ratio <= prev_ratio {
                report.strictly_increasing = false;
                report.offending.push(x);
            }
            prev_ratio = ratio;
        }
        report
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub positive: bool,
    pub strictly_increasing: bool,
    /// Abscissae at which positivity or monotonicity failed.
    pub offending: Vec<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.positive && self.strictly_increasing
    }
}

/// Product of one-dimensional Markov kernels, one factor per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorMarkovKernel {
    factors: Vec<MarkovKernel1D>,
}

impl TensorMarkovKernel {
    pub fn new(factors: Vec<MarkovKernel1D>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Structural("tensor kernel needs at least one factor".into()));
        }
        Ok(Self { factors })
    }

    /// `d` copies of the same one-dimensional kernel.
    pub fn isotropic(factor: MarkovKernel1D, d: usize) -> Result<Self> {
        Self::new(vec![factor; d])
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[MarkovKernel1D] {
        &self.factors
    }

    pub fn factor(&self, j: usize) -> &MarkovKernel1D {
        &self.factors[j]
    }

    /// Product of factor evaluations; zero if any coordinate is infinite.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.factors.len() || y.len() != self.factors.len() {
            return Err(Error::Structural(format!(
                "tensor kernel of dimension {} applied to inputs of length {} and {}",
                self.factors.len(),
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.factors
            .iter()
            .zip(x.iter().zip(y))
            .map(|(k, (&xi, &yi))| k.eval(xi, yi))
            .product()
    }
}
