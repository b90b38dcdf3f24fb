//! Privacy accounting: Rényi-DP curves, composition, conversion to
//! (ε, δ)-DP, amplification by subsampling and noise calibration.
//!
//! Every function here is pure over value types.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mechanisms::{MechanismSpec, NoiseFamily};

/// Default Rényi order grid.
pub const DEFAULT_ORDERS: [f64; 13] = [
    1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0,
];

/// Calibration search bracket for the noise scale.
pub const SCALE_BRACKET: (f64, f64) = (1e-4, 1e6);

/// Relative tolerance of the calibration search.
pub const SCALE_REL_TOL: f64 = 1e-6;

/// A privacy cost expressed as ε(α) over a grid of Rényi orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    orders: Vec<f64>,
    eps: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, eps: Vec<f64>) -> Result<Self> {
        validate_orders(&orders)?;
        if orders.len() != eps.len() {
            return Err(domain(format!(
                "{} orders but {} epsilon values",
                orders.len(),
                eps.len()
            )));
        }
        if let Some(e) = eps.iter().find(|e| e.is_nan() || **e < 0.0) {
            return Err(domain(format!("RDP epsilon must be >= 0, got {e}")));
        }
        Ok(Self { orders, eps })
    }

    /// The all-zero curve on `orders`.
    pub fn zero(orders: &[f64]) -> Result<Self> {
        Self::new(orders.to_vec(), vec![0.0; orders.len()])
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.eps
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    /// ε(α) multiplied by `k`: the k-fold self-composition.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            orders: self.orders.clone(),
            eps: self.eps.iter().map(|e| e * k).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.orders.iter().copied().zip(self.eps.iter().copied())
    }
}

fn validate_orders(orders: &[f64]) -> Result<()> {
    if let Some(a) = orders.iter().find(|a| !(**a > 1.0) || !a.is_finite()) {
        return Err(domain(format!("Rényi orders must be finite and > 1, got {a}")));
    }
    if orders.windows(2).any(|w| w[1] <= w[0]) {
        return Err(domain("Rényi orders must be strictly increasing"));
    }
    Ok(())
}

/// An (ε, δ)-DP guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
}

impl DpGuarantee {
    pub const ZERO: DpGuarantee = DpGuarantee { epsilon: 0.0, delta: 0.0 };

    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(domain(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(domain(format!("delta must lie in [0, 1], got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    /// True when `self` spends no more than `budget` in both coordinates.
    pub fn within(&self, budget: &DpGuarantee) -> bool {
        self.epsilon <= budget.epsilon && self.delta <= budget.delta
    }
}

/// Inclusion probability γ of a Poisson subsample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsamplingSpec {
    gamma: f64,
}

impl SubsamplingSpec {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(domain(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// How the subsample relates to the sequence of queries being accounted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsampleScope {
    /// A fresh subsample is drawn for every query (DP-SGD batches).
    /// Each query is amplified on its own and the amplified guarantees are
    /// summed with basic composition.
    FreshPerQuery,
    /// One subsample feeds every query (teachers trained once on Poisson
    /// subsamples, then queried repeatedly). Queries compose in RDP and the
    /// composed guarantee is amplified once.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subsampling {
    pub spec: SubsamplingSpec,
    pub scope: SubsampleScope,
}

impl Subsampling {
    pub fn fresh(gamma: f64) -> Result<Self> {
        Ok(Self { spec: SubsamplingSpec::new(gamma)?, scope: SubsampleScope::FreshPerQuery })
    }

    pub fn shared(gamma: f64) -> Result<Self> {
        Ok(Self { spec: SubsamplingSpec::new(gamma)?, scope: SubsampleScope::Shared })
    }
}

/// ε(α) = α Δ₂² / (2σ²) for the Gaussian mechanism.
pub fn gaussian_rdp(alpha: f64, sigma: f64, sensitivity: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(domain(format!("order must be > 1, got {alpha}")));
    }
    if !(sigma > 0.0) {
        return Err(domain(format!("sigma must be > 0, got {sigma}")));
    }
    if !(sensitivity >= 0.0) {
        return Err(domain(format!("sensitivity must be >= 0, got {sensitivity}")));
    }
    Ok(alpha * sensitivity * sensitivity / (2.0 * sigma * sigma))
}

pub fn rdp_curve_for_gaussian(sigma: f64, sensitivity: f64, orders: &[f64]) -> Result<RdpCurve> {
    validate_orders(orders)?;
    let eps = orders
        .iter()
        .map(|&a| gaussian_rdp(a, sigma, sensitivity))
        .collect::<Result<Vec<_>>>()?;
    RdpCurve::new(orders.to_vec(), eps)
}

/// Pointwise sum of RDP curves. The empty composition is the zero curve on
/// [`DEFAULT_ORDERS`].
pub fn compose(curves: &[RdpCurve]) -> Result<RdpCurve> {
    let Some(first) = curves.first() else {
        return RdpCurve::zero(&DEFAULT_ORDERS);
    };
    let mut eps = vec![0.0; first.len()];
    for c in curves {
        if c.orders != first.orders {
            return Err(Error::MismatchedOrders);
        }
        for (acc, e) in eps.iter_mut().zip(&c.eps) {
            *acc += e;
        }
    }
    Ok(RdpCurve { orders: first.orders.clone(), eps })
}

/// Converts an RDP curve to (ε, δ)-DP and reports the order that attains
/// the minimum. Ties go to the smallest order.
pub fn rdp_to_dp_with_order(curve: &RdpCurve, delta: f64) -> Result<(DpGuarantee, f64)> {
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(domain(format!("delta must lie in (0, 1], got {delta}")));
    }
    let log_inv_delta = -delta.ln();
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (alpha, e) in curve.iter() {
        let candidate = e + log_inv_delta / (alpha - 1.0);
        if candidate < best.0 {
            best = (candidate, alpha);
        }
    }
    Ok((DpGuarantee { epsilon: best.0, delta }, best.1))
}

/// (ε(α) + ln(1/δ)/(α−1), δ)-DP minimized over the curve's orders.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpGuarantee> {
    rdp_to_dp_with_order(curve, delta).map(|(g, _)| g)
}

/// Amplification by subsampling: (ln(1 + γ(e^ε − 1)), γδ).
pub fn amplify_by_subsampling(g: DpGuarantee, s: SubsamplingSpec) -> DpGuarantee {
    let gamma = s.gamma();
    if gamma == 1.0 {
        return g;
    }
    let epsilon = if g.epsilon <= 1.0 {
        (gamma * g.epsilon.exp_m1()).ln_1p()
    } else {
        // ε + ln(γ + (1 − γ)e^{−ε}), stable for large ε
        g.epsilon + (gamma + (1.0 - gamma) * (-g.epsilon).exp()).ln()
    };
    DpGuarantee { epsilon, delta: gamma * g.delta }
}

/// The cost of a single query before any subsampling.
enum QueryCost {
    Rdp(RdpCurve),
    PureDp(f64),
}

fn query_cost(mech: &MechanismSpec, orders: &[f64]) -> Result<QueryCost> {
    match mech.family() {
        NoiseFamily::Gaussian => Ok(QueryCost::Rdp(rdp_curve_for_gaussian(
            mech.scale(),
            mech.sensitivity(),
            orders,
        )?)),
        NoiseFamily::Laplace => Ok(QueryCost::PureDp(mech.sensitivity() / mech.scale())),
    }
}

/// Total guarantee of `num_queries` identical queries answered by `mech`.
///
/// Without subsampling the Gaussian queries compose in RDP and are converted
/// once at δ = `num_queries · delta_per_query`. With [`SubsampleScope::FreshPerQuery`]
/// every query is converted at `delta_per_query`, amplified, and the results
/// are summed. With [`SubsampleScope::Shared`] the composed guarantee is
/// amplified once. Laplace queries are pure ε-DP and contribute no δ.
pub fn account_pipeline(
    num_queries: u64,
    mech: &MechanismSpec,
    subsampling: Option<Subsampling>,
    delta_per_query: f64,
    orders: &[f64],
) -> Result<DpGuarantee> {
    if num_queries == 0 {
        return Ok(DpGuarantee::ZERO);
    }
    if !(delta_per_query > 0.0 && delta_per_query < 1.0) {
        return Err(domain(format!("per-query delta must lie in (0, 1), got {delta_per_query}")));
    }
    let q = num_queries as f64;
    let total_delta = (q * delta_per_query).min(1.0);
    let cost = query_cost(mech, orders)?;

    let composed = |cost: &QueryCost| -> Result<DpGuarantee> {
        match cost {
            QueryCost::Rdp(curve) => rdp_to_dp(&curve.scaled(q), total_delta),
            QueryCost::PureDp(eps) => Ok(DpGuarantee { epsilon: q * eps, delta: 0.0 }),
        }
    };

    match subsampling {
        None => composed(&cost),
        Some(Subsampling { spec, scope: SubsampleScope::Shared }) => {
            Ok(amplify_by_subsampling(composed(&cost)?, spec))
        }
        Some(Subsampling { spec, scope: SubsampleScope::FreshPerQuery }) => {
            let single = match &cost {
                QueryCost::Rdp(curve) => rdp_to_dp(curve, delta_per_query)?,
                QueryCost::PureDp(eps) => DpGuarantee { epsilon: *eps, delta: 0.0 },
            };
            let amplified = amplify_by_subsampling(single, spec);
            Ok(DpGuarantee {
                epsilon: q * amplified.epsilon,
                delta: (q * amplified.delta).min(1.0),
            })
        }
    }
}

/// `total / parts`, rounded down so that `parts` shares never add up to more
/// than `total` in floating point.
pub fn split_delta(total: f64, parts: u64) -> f64 {
    let n = parts.max(1) as f64;
    let mut share = total / n;
    while share > 0.0 && n * share > total {
        share = share.next_down();
    }
    share
}

/// Smallest noise scale for which `num_queries` queries of the given family
/// stay within `target`. The per-query δ is `target.delta / num_queries`.
///
/// The search is geometric bisection over [`SCALE_BRACKET`] to relative
/// tolerance [`SCALE_REL_TOL`]; the returned scale always passes forward
/// verification.
pub fn calibrate_scale(
    target: DpGuarantee,
    num_queries: u64,
    family: NoiseFamily,
    sensitivity: f64,
    subsampling: Option<Subsampling>,
    orders: &[f64],
) -> Result<f64> {
    if !(target.epsilon > 0.0) {
        return Err(domain(format!("target epsilon must be > 0, got {}", target.epsilon)));
    }
    if num_queries == 0 {
        return Err(domain("calibration needs at least one query"));
    }
    if !(target.delta > 0.0 && target.delta < 1.0) {
        return Err(domain(format!("target delta must lie in (0, 1), got {}", target.delta)));
    }
    validate_orders(orders)?;
    let delta_per_query = split_delta(target.delta, num_queries);
    let feasible = |scale: f64| -> Result<bool> {
        let mech = MechanismSpec::new(family, scale, sensitivity)?;
        Ok(account_pipeline(num_queries, &mech, subsampling, delta_per_query, orders)?
            .within(&target))
    };

    let (mut lo, mut hi) = SCALE_BRACKET;
    if !feasible(hi)? {
        return Err(Error::Infeasible(format!(
            "target (ε={}, δ={}) over {num_queries} queries is unreachable with scale <= {hi}",
            target.epsilon, target.delta
        )));
    }
    if feasible(lo)? {
        return Ok(lo);
    }
    while hi / lo - 1.0 > SCALE_REL_TOL {
        let mid = (lo * hi).sqrt();
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// [`calibrate_scale`] for the Gaussian mechanism.
pub fn calibrate_sigma(
    target: DpGuarantee,
    num_queries: u64,
    subsampling: Option<Subsampling>,
    sensitivity: f64,
    orders: &[f64],
) -> Result<f64> {
    calibrate_scale(target, num_queries, NoiseFamily::Gaussian, sensitivity, subsampling, orders)
}
