//! Gauss-Legendre rules and the two latent-process integration grids.

use crate::error::{Error, Result};
use crate::svcore::SvareParams;

pub const MAX_ORDER: usize = 512;
/// Default half-width of each grid in stationary standard deviations.
pub const DEFAULT_WIDTH_MULTIPLIER: f64 = 3.0;
pub const MIN_POINTS: usize = 3;
pub const MAX_POINTS: usize = 201;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GlRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GlRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integral of `f` over `[lower, upper]` with this rule mapped affinely.
    pub fn integrate(&self, lower: f64, upper: f64, f: impl Fn(f64) -> f64) -> f64 {
        let hw = 0.5 * (upper - lower);
        let c = 0.5 * (upper + lower);
        hw * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(c + hw * x))
            .sum::<f64>()
    }
}

/// Roots of the Legendre polynomial `P_order` by Newton iteration from
/// Chebyshev-like initial guesses, with the standard weight formula
/// `w = 2 / ((1 - x^2) P'(x)^2)`.
pub fn gl_rule(order: usize) -> Result<GlRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "Gauss-Legendre order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    let n = order;
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];

    // Returns (P_n(z), P_n'(z)).
    let legendre = |z: f64| -> (f64, f64) {
        let (mut p1, mut p2) = (1.0, 0.0);
        for j in 1..=n {
            let p3 = p2;
            p2 = p1;
            let jf = j as f64;
            p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
        }
        (p1, nf * (z * p1 - p2) / (z * z - 1.0))
    };

    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        if n % 2 == 1 && i == n / 2 {
            z = 0.0;
        }
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let step = p / dp;
            z -= step;
            if step.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(GlRule { nodes, weights })
}

/// One grid axis: mapped points inside `[lower, upper]` and the unmapped
/// Gauss-Legendre weights. The affine Jacobian `(upper - lower) / 2` is kept
/// separately, as in the quadrature formula of the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl Axis {
    pub fn from_rule(rule: &GlRule, lower: f64, upper: f64) -> Self {
        let hw = 0.5 * (upper - lower);
        let c = 0.5 * (upper + lower);
        Self {
            points: rule.nodes.iter().map(|x| c + hw * x).collect(),
            weights: rule.weights.clone(),
            lower,
            upper,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.upper + self.lower)
    }
}

/// Tensor grid for `(u, h)`; flattened index is `i + n_u * j` (u fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid {
    pub u: Axis,
    pub h: Axis,
}

impl QuadGrid {
    pub fn n_u(&self) -> usize {
        self.u.len()
    }

    pub fn n_h(&self) -> usize {
        self.h.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_u() * self.n_h()
    }

    /// `((b - a) / 2) * ((e - d) / 2)`.
    pub fn jacobian(&self) -> f64 {
        self.u.half_width() * self.h.half_width()
    }
}

fn check_count(name: &str, n: usize) -> Result<()> {
    if n < MIN_POINTS || n.is_multiple_of(2) || n > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "{name} must be odd and in {MIN_POINTS}..={MAX_ORDER}, got {n}"
        )));
    }
    Ok(())
}

/// Grid centered on the stationary means with half-width
/// `multiplier` stationary standard deviations on each axis.
pub fn build_grid_with(
    p: &SvareParams,
    n_u: usize,
    n_h: usize,
    multiplier: f64,
) -> Result<QuadGrid> {
    p.check_stationary()?;
    check_count("n_u", n_u)?;
    check_count("n_h", n_h)?;
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid multiplier must be positive, got {multiplier}"
        )));
    }
    let hw_u = multiplier * p.stationary_sd_u();
    let hw_h = multiplier * p.stationary_sd_h();
    let mu_h = p.stationary_mean_h();
    let u = Axis::from_rule(&gl_rule(n_u)?, -hw_u, hw_u);
    let h = Axis::from_rule(&gl_rule(n_h)?, mu_h - hw_h, mu_h + hw_h);
    if !(u.lower < u.upper && h.lower < h.upper) {
        return Err(Error::InvalidParams("degenerate integration limits".into()));
    }
    Ok(QuadGrid { u, h })
}

pub fn build_grid(p: &SvareParams, n_u: usize, n_h: usize) -> Result<QuadGrid> {
    build_grid_with(p, n_u, n_h, DEFAULT_WIDTH_MULTIPLIER)
}

/// Smallest odd `n >= 3` with `width / (n - 1) <= spacing`, capped at [`MAX_POINTS`].
fn points_for(width: f64, spacing: f64) -> usize {
    let ratio = width / spacing;
    let mut n = if ratio.is_finite() {
        (ratio.ceil().max(0.0) as usize).saturating_add(1)
    } else {
        usize::MAX
    };
    n = n.clamp(MIN_POINTS, MAX_POINTS + 2);
    if n % 2 == 0 {
        n += 1;
    }
    while n > MIN_POINTS && width / ((n - 3) as f64) <= spacing {
        n -= 2;
    }
    while n <= MAX_POINTS && width / ((n - 1) as f64) > spacing {
        n += 2;
    }
    if n > MAX_POINTS {
        log::warn!(
            "spacing rule asks for more than {MAX_POINTS} points per axis; capping at {MAX_POINTS}"
        );
        n = MAX_POINTS;
    }
    n
}

/// Point counts such that the average node spacing is at most `sigma_eta / 2`
/// on the u-axis and `sigma_nu / 2` on the h-axis.
pub fn default_point_counts_with(p: &SvareParams, multiplier: f64) -> (usize, usize) {
    let width_u = 2.0 * multiplier * p.stationary_sd_u();
    let width_h = 2.0 * multiplier * p.stationary_sd_h();
    (
        points_for(width_u, 0.5 * p.sigma_eta),
        points_for(width_h, 0.5 * p.sigma_nu),
    )
}

pub fn default_point_counts(p: &SvareParams) -> (usize, usize) {
    default_point_counts_with(p, DEFAULT_WIDTH_MULTIPLIER)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(rho: f64, sigma_eta: f64, alpha: f64, delta: f64, sigma_nu: f64) -> SvareParams {
        SvareParams {
            beta0: 0.0,
            beta: vec![],
            rho,
            sigma_eta,
            alpha,
            delta,
            sigma_nu,
        }
    }

    #[test]
    fn low_orders_are_analytic() {
        let r1 = gl_rule(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - 2.0).abs() < 1e-15);

        let r2 = gl_rule(2).unwrap();
        let x = 1.0 / 3f64.sqrt();
        assert!((r2.nodes[0] + x).abs() < 1e-15 && (r2.nodes[1] - x).abs() < 1e-15);
        assert!((r2.weights[0] - 1.0).abs() < 1e-14 && (r2.weights[1] - 1.0).abs() < 1e-14);

        let r3 = gl_rule(3).unwrap();
        let x = 0.6f64.sqrt();
        assert!((r3.nodes[0] + x).abs() < 1e-15);
        assert_eq!(r3.nodes[1], 0.0);
        assert!((r3.nodes[2] - x).abs() < 1e-15);
        assert!((r3.weights[0] - 5.0 / 9.0).abs() < 1e-15);
        assert!((r3.weights[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn order_bounds() {
        assert!(gl_rule(0).is_err());
        assert!(gl_rule(513).is_err());
        let r = gl_rule(512).unwrap();
        let s: f64 = r.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rule_invariants() {
        for n in [1, 2, 5, 17, 61, 128, 201, 333] {
            let r = gl_rule(n).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-12, "order {n}: sum {s}");
            for i in 0..n {
                assert!((r.nodes[i] + r.nodes[n - 1 - i]).abs() < 1e-12);
                assert!(r.weights[i] > 0.0);
                assert!(r.nodes[i] > -1.0 && r.nodes[i] < 1.0);
            }
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn normal_mass_over_three_sd() {
        let (mu, sd) = (1.3, 0.7);
        for n in [21, 31, 61] {
            let r = gl_rule(n).unwrap();
            let mass = r.integrate(mu - 3.0 * sd, mu + 3.0 * sd, |x| {
                crate::svcore::normal_pdf(x, mu, sd)
            });
            assert!(
                (mass - 0.997_300_203_936_74).abs() < 1e-6,
                "n={n} mass={mass}"
            );
        }
    }

    #[test]
    fn grid_limits() {
        let g = build_grid(&params(0.0, 1.0, 0.0, 0.0, 1.0), 5, 5).unwrap();
        assert!((g.u.lower + 3.0).abs() < 1e-15 && (g.u.upper - 3.0).abs() < 1e-15);

        let p = params(0.5, 0.145, -0.142, 0.931, 0.158f64.sqrt());
        let g = build_grid(&p, 7, 9).unwrap();
        assert!(
            (g.h.center() - (-2.057_971)).abs() < 1e-5,
            "{}",
            g.h.center()
        );
        assert!(
            (g.h.half_width() - 3.26689).abs() < 5e-5,
            "{}",
            g.h.half_width()
        );
        assert!(g.u.points.windows(2).all(|w| w[0] < w[1]));
        assert!(g.u.points.iter().all(|&x| x > g.u.lower && x < g.u.upper));
        assert_eq!(g.u.points[3], 0.0);
        assert!((g.jacobian() - g.u.half_width() * g.h.half_width()).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(build_grid(&params(1.0, 1.0, 0.0, 0.0, 1.0), 5, 5).is_err());
        assert!(build_grid(&params(0.0, 1.0, 0.0, -1.2, 1.0), 5, 5).is_err());
        assert!(build_grid(&params(0.0, 0.0, 0.0, 0.0, 1.0), 5, 5).is_err());
        assert!(build_grid(&params(0.0, 1.0, 0.0, 0.0, 1.0), 4, 5).is_err());
        assert!(build_grid(&params(0.0, 1.0, 0.0, 0.0, 1.0), 5, 1).is_err());
    }

    #[test]
    fn grid_is_deterministic() {
        let p = params(0.3, 0.4, 0.1, 0.5, 0.2);
        assert_eq!(
            build_grid(&p, 21, 31).unwrap(),
            build_grid(&p, 21, 31).unwrap()
        );
    }

    #[test]
    fn spacing_rule_rho_zero_gives_13() {
        let (nu, _) = default_point_counts(&params(0.0, 1.0, 0.0, 0.0, 1.0));
        assert_eq!(nu, 13);
    }

    #[test]
    fn spacing_rule_monotone_in_rho() {
        let mut last = 0;
        for rho in [0.0, 0.3, 0.6, 0.8, 0.9, 0.95, 0.99] {
            let (nu, _) = default_point_counts(&params(rho, 0.5, 0.0, 0.0, 1.0));
            assert!(nu >= last);
            last = nu;
        }
        assert!(last > 13);
    }

    proptest! {
        #[test]
        fn mapped_rule_is_exact_for_polynomials(order in 1usize..40, lo in -5.0f64..5.0, len in 0.1f64..6.0, seed in 0u64..1000) {
            let hi = lo + len;
            let r = gl_rule(order).unwrap();
            let deg = (2 * order - 1).min((seed % 40) as usize);
            // Monomial x^deg: exact integral (hi^{d+1} - lo^{d+1}) / (d+1).
            let exact = (hi.powi(deg as i32 + 1) - lo.powi(deg as i32 + 1)) / (deg as f64 + 1.0);
            let approx = r.integrate(lo, hi, |x| x.powi(deg as i32));
            let scale = exact.abs().max(hi.abs().max(lo.abs()).powi(deg as i32 + 1) * 1e-3).max(1e-300);
            prop_assert!((approx - exact).abs() <= 1e-10 * scale, "order={} deg={} exact={} approx={}", order, deg, exact, approx);
        }

        #[test]
        fn point_counts_satisfy_spacing_bound(rho in -0.99f64..0.99, delta in -0.99f64..0.99, se in 0.01f64..2.0, sn in 0.01f64..2.0) {
            let p = params(rho, se, 0.0, delta, sn);
            let (nu, nh) = default_point_counts(&p);
            for (n, width, sigma) in [(nu, 6.0 * p.stationary_sd_u(), se), (nh, 6.0 * p.stationary_sd_h(), sn)] {
                prop_assert!(n % 2 == 1 && (3..=MAX_POINTS).contains(&n));
                if n < MAX_POINTS {
                    prop_assert!(width / (n as f64 - 1.0) <= sigma / 2.0);
                }
                if n > 3 {
                    prop_assert!(width / (n as f64 - 3.0) > sigma / 2.0);
                }
            }
        }
    }
}
