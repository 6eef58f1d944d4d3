//! Flow-driven price impact: the square-root law, self-inflated returns,
//! cross-fund spillovers, the transient-impact kernel, and the
//! arbitrage-induced-trading measures.
//!
//! All fund-level impact quantities in this module consume the DIRECT
//! illiquidity route (sigma (wA/V)^eta and its linear fund aggregate): the
//! self-inflated return identity R_self = theta f^eta I is the
//! portfolio-weighted sum of per-position impacts with Q = wF, and only the
//! direct route makes that aggregation exact.

use crate::illiquidity::MeasuresSet;
use crate::panel::{Day, FundId, MarketPanel, SecId};
use crate::util::signed_power;
use std::collections::HashMap;

// ============================================================
// Parameters and kernel
// ============================================================

/// Transient-impact decay: theta_0 on the trade day, then
/// theta_1 * exp(-lambda (s - 1)) at lag s >= 1.
#[derive(Debug, Clone, Copy)]
pub struct DecayKernel {
    pub theta0: f64,
    pub theta1: f64,
    pub lambda: f64,
    pub max_lag: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ImpactParams {
    /// Contemporaneous impact coefficient when no decay kernel is set.
    pub theta: f64,
    pub eta: f64,
    pub decay: Option<DecayKernel>,
}

impl Default for ImpactParams {
    fn default() -> Self {
        ImpactParams {
            theta: 0.78,
            eta: 0.5,
            decay: None,
        }
    }
}

impl ImpactParams {
    pub fn contemporaneous(theta: f64, eta: f64) -> Self {
        ImpactParams {
            theta,
            eta,
            decay: None,
        }
    }

    /// Kernel weight theta_s at lag s.
    pub fn kernel_weight(&self, s: usize) -> f64 {
        match (&self.decay, s) {
            (None, 0) => self.theta,
            (None, _) => 0.0,
            (Some(k), 0) => k.theta0,
            (Some(k), s) if s <= k.max_lag => k.theta1 * (-k.lambda * (s as f64 - 1.0)).exp(),
            (Some(_), _) => 0.0,
        }
    }

    pub fn max_lag(&self) -> usize {
        self.decay.map(|k| k.max_lag).unwrap_or(0)
    }

    /// Partial sum of kernel weights through lag `upto`.
    pub fn cumulative_kernel(&self, upto: usize) -> f64 {
        (0..=upto).map(|s| self.kernel_weight(s)).sum()
    }

    /// Long-run impact of a unit trade: the discrete kernel sum
    /// theta0 + theta1 / (1 - exp(-lambda)).
    pub fn long_run_impact(&self) -> f64 {
        match self.decay {
            None => self.theta,
            Some(k) => k.theta0 + k.theta1 / (1.0 - (-k.lambda).exp()),
        }
    }

    /// The continuum approximation as printed in the source material,
    /// theta0 - theta1 / lambda. Kept verbatim for comparison; the discrete
    /// sum above is the default everywhere.
    pub fn long_run_impact_continuum(&self) -> f64 {
        match self.decay {
            None => self.theta,
            Some(k) => k.theta0 - k.theta1 / k.lambda,
        }
    }
}

// ============================================================
// Scalar impact laws
// ============================================================

/// Price impact of a dollar trade Q against average volume V and
/// volatility sigma: sign(Q) theta sigma (|Q|/V)^eta.
pub fn price_impact(q: f64, v: f64, sigma: f64, params: &ImpactParams) -> f64 {
    params.kernel_weight(0) * sigma * signed_power(q / v, params.eta)
}

/// Self-inflated fund return R = theta sign(f)|f|^eta * fund_illiq, with
/// `fund_illiq` the linear direct-route aggregate.
pub fn self_inflated_return(flow_rel: f64, fund_illiq: f64, params: &ImpactParams) -> f64 {
    params.kernel_weight(0) * signed_power(flow_rel, params.eta) * fund_illiq
}

// ============================================================
// Cross-fund illiquidity and total impact
// ============================================================

/// Cross-fund illiquidity I_{ij} = sum_n w_{j,n} I_{i,n}: fund i's direct
/// position illiquidity aggregated with fund j's portfolio weights. Measures
/// how strongly flows into i move the book of j holds... read it as "impact
/// of i felt through j's weights". Equals fund i's own illiquidity when j
/// holds identical weights; zero for disjoint books.
pub fn cross_fund_illiquidity(
    panel: &MarketPanel,
    measures: &MeasuresSet,
    i: FundId,
    j: FundId,
    day: Day,
) -> Option<f64> {
    let mi = measures.get(i, day)?;
    let hj = panel.holdings(j, day)?;
    let mut total = 0.0;
    for p in &hj.holdings {
        if let Ok(k) = mi.positions.binary_search_by_key(&p.sec, |q| q.sec) {
            total += p.weight * mi.positions[k].illiq_direct;
        }
    }
    Some(total)
}

/// Per-security impact shocks: shock[n][t] = sum over funds j of
/// sigma_n sign(Q)(|Q_{j,n,t}|/V_n)^eta with Q = w_{j,t-1} F_{j,t}, i.e. the
/// kernel-free unit of impact landing on security n at day t.
///
/// Funds are accumulated in ascending id order; the sum order is part of the
/// determinism contract.
pub struct SecurityShocks {
    shocks: Vec<Vec<f64>>, // [sec][day]
}

impl SecurityShocks {
    pub fn compute(panel: &MarketPanel, measures: &MeasuresSet, params: &ImpactParams) -> Self {
        let n_days = panel.n_days();
        let mut shocks = vec![vec![0.0; n_days]; panel.n_securities()];
        for fund in 0..panel.n_funds() as FundId {
            let series = &panel.funds[fund as usize];
            for t in 1..n_days {
                let Some(flow) = series.flow[t] else { continue };
                if flow == 0.0 {
                    continue;
                }
                let Some(m) = measures.get(fund, (t - 1) as Day) else {
                    continue;
                };
                let fpow = signed_power(flow, params.eta);
                for p in &m.positions {
                    // sigma (|wF|/V)^eta = sigma (wA/V)^eta |f|^eta = I_n |f|^eta
                    shocks[p.sec as usize][t] += p.illiq_direct * fpow;
                }
            }
        }
        SecurityShocks { shocks }
    }

    pub fn get(&self, sec: SecId, day: Day) -> f64 {
        self.shocks[sec as usize][day as usize]
    }
}

/// Total impact return on fund i at day t: the kernel-weighted sum over lags
/// s of fund i's (t-1-s)-weights against the security shocks at t-s. Includes
/// the fund's own contemporaneous impact as the j = i, s = 0 term.
pub fn total_impact_at(
    measures: &MeasuresSet,
    shocks: &SecurityShocks,
    params: &ImpactParams,
    fund: FundId,
    day: Day,
) -> Option<f64> {
    let t = day as usize;
    if t == 0 {
        return None;
    }
    let mut total = 0.0;
    let max_lag = params.max_lag().min(t - 1);
    for s in 0..=max_lag {
        let k = params.kernel_weight(s);
        if k == 0.0 {
            continue;
        }
        let m = measures.get(fund, (t - 1 - s) as Day)?;
        let mut exposure = 0.0;
        for p in &m.positions {
            exposure += p.weight * shocks.get(p.sec, (t - s) as Day);
        }
        total += k * exposure;
    }
    Some(total)
}

/// One-off total impact: builds the shock table internally. Prefer
/// [`ImpactSeries::compute`] when the whole panel is needed.
pub fn total_impact(
    panel: &MarketPanel,
    measures: &MeasuresSet,
    params: &ImpactParams,
    fund: FundId,
    day: Day,
) -> Option<f64> {
    let shocks = SecurityShocks::compute(panel, measures, params);
    total_impact_at(measures, &shocks, params, fund, day)
}

// ============================================================
// Impact series over the panel
// ============================================================

#[derive(Debug, Clone)]
pub struct ImpactRow {
    pub fund: FundId,
    pub day: Day,
    /// Own contemporaneous self-inflated return theta f^eta I_{t-1}.
    pub r_self: Option<f64>,
    /// Total impact with spillovers and reversal per the kernel.
    pub r_total: Option<f64>,
}

pub struct ImpactSeries {
    pub rows: Vec<ImpactRow>,
    index: HashMap<(FundId, Day), usize>,
}

impl ImpactSeries {
    pub fn compute(panel: &MarketPanel, measures: &MeasuresSet, params: &ImpactParams) -> Self {
        let shocks = SecurityShocks::compute(panel, measures, params);
        let mut rows = Vec::new();
        for fund in 0..panel.n_funds() as FundId {
            let series = &panel.funds[fund as usize];
            for t in 1..panel.n_days() {
                let day = t as Day;
                let r_self = match (series.flow[t], measures.get(fund, day - 1)) {
                    (Some(f), Some(m)) => Some(self_inflated_return(f, m.illiq_direct, params)),
                    _ => None,
                };
                let r_total = total_impact_at(measures, &shocks, params, fund, day);
                if r_self.is_some() || r_total.is_some() {
                    rows.push(ImpactRow {
                        fund,
                        day,
                        r_self,
                        r_total,
                    });
                }
            }
        }
        let index = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.fund, r.day), i))
            .collect();
        ImpactSeries { rows, index }
    }

    pub fn get(&self, fund: FundId, day: Day) -> Option<&ImpactRow> {
        self.index.get(&(fund, day)).map(|&i| &self.rows[i])
    }
}

// ============================================================
// Arbitrage-induced trading (creation/redemption basket flows)
// ============================================================

/// Provider-specified creation baskets: dollars of each security delivered
/// per fund share, keyed by (fund, day, sec). When absent, baskets are
/// pro-rata: q = w * A / S.
#[derive(Debug, Default, Clone)]
pub struct BasketOverride {
    pub entries: HashMap<(FundId, Day, SecId), f64>,
}

#[derive(Debug, Clone)]
pub struct AitRow {
    pub sec: SecId,
    pub day: Day,
    /// sum_i dS_i q_i / M: basket trading as a fraction of market cap.
    pub ait: Option<f64>,
    /// Signed square-root transform: sign * sigma * sqrt(sum |dS| q / V).
    pub ait_hat: Option<f64>,
}

/// Basket dollars per share for (fund, sec) using prior-day weights, or the
/// override when present.
fn basket_dollars_per_share(
    panel: &MarketPanel,
    baskets: Option<&BasketOverride>,
    fund: FundId,
    day_prev: Day,
    sec: SecId,
    weight: f64,
) -> Option<f64> {
    if let Some(b) = baskets {
        if let Some(&q) = b.entries.get(&(fund, day_prev, sec)) {
            return Some(q);
        }
    }
    let f = &panel.funds[fund as usize];
    let aum = f.aum[day_prev as usize]?;
    let shares = f.shares[day_prev as usize]?;
    Some(weight * aum / shares)
}

/// Arbitrage-induced trading per (security, day).
pub fn ait_series(
    panel: &MarketPanel,
    baskets: Option<&BasketOverride>,
    sigma_floor: f64,
) -> Vec<AitRow> {
    let n_days = panel.n_days();
    let n_secs = panel.n_securities();
    // signed[n] = sum_i dS q ; absolute[n] = sum_i |dS| q
    let mut rows = Vec::new();
    for t in 1..n_days {
        let day = t as Day;
        let mut signed = vec![0.0f64; n_secs];
        let mut absolute = vec![0.0f64; n_secs];
        let mut touched = vec![false; n_secs];
        for fund in 0..panel.n_funds() as FundId {
            let f = &panel.funds[fund as usize];
            let (Some(s1), Some(s0)) = (f.shares[t], f.shares[t - 1]) else {
                continue;
            };
            let ds = s1 - s0;
            let Some(h) = panel.holdings(fund, day - 1) else {
                continue;
            };
            for p in &h.holdings {
                let Some(q) =
                    basket_dollars_per_share(panel, baskets, fund, day - 1, p.sec, p.weight)
                else {
                    continue;
                };
                signed[p.sec as usize] += ds * q;
                absolute[p.sec as usize] += ds.abs() * q;
                touched[p.sec as usize] = true;
            }
        }
        for sec in 0..n_secs {
            if !touched[sec] {
                continue;
            }
            let s = &panel.securities[sec];
            let ait = s.market_cap[t - 1].map(|m| signed[sec] / m);
            let ait_hat = match (panel.adv_floored(sec as SecId, day - 1), s.vol[t - 1]) {
                (Some(v), Some(vol)) => {
                    let sigma = vol.max(sigma_floor);
                    Some(signed[sec].signum() * sigma * (absolute[sec] / v).sqrt())
                }
                _ => None,
            };
            rows.push(AitRow {
                sec: sec as SecId,
                day,
                ait,
                ait_hat,
            });
        }
    }
    rows
}

// ============================================================
// Tests
// ============================================================
