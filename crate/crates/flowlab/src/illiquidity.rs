//! Fund illiquidity, concentration, and size measures.
//!
//! For a fund with weights w_n, AUM A, security volatility sigma_n and
//! average dollar volume V_n, the building blocks are
//!
//! * effective liquidity  Vt_n = V_n * sigma_n^(-1/eta),
//! * liquidity weights    v_n = Vt_n / sum(Vt) over the fund's own holdings,
//! * concentration        C_n = (w_n / v_n)^eta,
//! * size                 S = A / sum(Vt),
//! * position illiquidity I_n, reported through two routes:
//!   - canonical: I_n = C_n * S, which makes the fund-level identity
//!     I = C * S hold algebraically for every eta;
//!   - direct:    I_n = sigma_n * (w_n A / V_n)^eta, the raw price-impact
//!     form. The two coincide at eta = 1 and differ by the factor
//!     S^(1-eta) otherwise; both columns are reported so the gap acts as a
//!     diagnostic.
//!
//! Fund-level aggregates are the linear weighted sums I = sum(w I_n) and
//! C = sum(w C_n); the power-mean alternative (sum sigma w (wA/V)^eta)^(1/eta)
//! is carried alongside as `fund_illiq_power`.
//!
//! The impact and estimation pipeline consumes the DIRECT route (that is the
//! form the price-impact law aggregates to); sorting, identity checks, and
//! the concentration/size plane use the canonical columns.

use crate::error::Result;
use crate::panel::{Day, FundId, MarketPanel, SecId};
use std::collections::HashMap;

/// Floor applied to estimated volatility before it enters a denominator
/// or prefactor.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// What supplies the liquidity denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LiquidityBasis {
    /// Average dollar volume with the volatility prefactor (main form).
    #[default]
    DollarVolume,
    /// Market capitalization with a unit prefactor: the eta = 1 legacy
    /// ownership measure sum(w * z) with z = wA/M.
    MarketCapUnitVol,
}

#[derive(Debug, Clone, Copy)]
pub struct IlliqParams {
    pub eta: f64,
    pub basis: LiquidityBasis,
    pub sigma_floor: f64,
}

impl Default for IlliqParams {
    fn default() -> Self {
        IlliqParams {
            eta: 0.5,
            basis: LiquidityBasis::DollarVolume,
            sigma_floor: SIGMA_FLOOR,
        }
    }
}

impl IlliqParams {
    pub fn with_eta(eta: f64) -> Self {
        IlliqParams {
            eta,
            ..Default::default()
        }
    }
}

// ============================================================
// Scalar building blocks
// ============================================================

/// Effective liquidity Vt = V * sigma^(-1/eta).
pub fn effective_liquidity(v: f64, sigma: f64, eta: f64) -> f64 {
    v * sigma.powf(-1.0 / eta)
}

/// Direct position illiquidity sigma * (w A / V)^eta.
pub fn position_illiquidity(w: f64, aum: f64, v: f64, sigma: f64, eta: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    sigma * (w * aum / v).powf(eta)
}

/// Position concentration (w / v)^eta against the liquidity weight v.
pub fn position_concentration(w: f64, v_share: f64, eta: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    (w / v_share).powf(eta)
}

/// Fund size A / sum(Vt).
pub fn fund_size(aum: f64, total_effective_liquidity: f64) -> f64 {
    aum / total_effective_liquidity
}

// ============================================================
// Per fund-day measures
// ============================================================

#[derive(Debug, Clone)]
pub struct PositionMeasure {
    pub sec: SecId,
    pub weight: f64,
    /// Canonical C_n * S.
    pub illiq: f64,
    pub conc: f64,
    /// Direct sigma (wA/V)^eta.
    pub illiq_direct: f64,
}

#[derive(Debug, Clone)]
pub struct FundDayMeasures {
    pub fund: FundId,
    pub day: Day,
    /// Canonical fund illiquidity, equal to conc * size by construction.
    pub illiq: f64,
    pub conc: f64,
    pub size: f64,
    /// Linear aggregate of the direct route: sum w sigma (wA/V)^eta.
    pub illiq_direct: f64,
    /// Power-mean footnote variant (sum sigma w (wA/V)^eta)^(1/eta).
    pub illiq_power: f64,
    /// Relative gap between the canonical and direct fund aggregates.
    pub route_gap: f64,
    pub positions: Vec<PositionMeasure>,
}

/// Measures for one fund-day. `Ok(None)` when the fund has no usable
/// holdings or AUM that day; a diagnostic is pushed for skips caused by
/// missing liquidity inputs.
pub fn fund_measures(
    panel: &MarketPanel,
    fund: FundId,
    day: Day,
    params: &IlliqParams,
    diagnostics: &mut Vec<String>,
) -> Result<Option<FundDayMeasures>> {
    let Some(holdings) = panel.holdings(fund, day) else {
        return Ok(None);
    };
    let Some(aum) = panel.funds[fund as usize].aum[day as usize] else {
        return Ok(None);
    };
    let t = day as usize;

    let mut secs: Vec<(SecId, f64, f64, f64)> = Vec::with_capacity(holdings.holdings.len());
    for p in &holdings.holdings {
        let s = &panel.securities[p.sec as usize];
        let (supply, sigma) = match params.basis {
            LiquidityBasis::DollarVolume => {
                let Some(adv) = panel.adv_floored(p.sec, day) else {
                    diagnostics.push(format!(
                        "measures: {} on {}: no dollar volume for held security {}",
                        panel.funds[fund as usize].name,
                        panel.calendar.date(day),
                        s.name
                    ));
                    return Ok(None);
                };
                let Some(vol) = s.vol[t] else {
                    diagnostics.push(format!(
                        "measures: {} on {}: no volatility for held security {}",
                        panel.funds[fund as usize].name,
                        panel.calendar.date(day),
                        s.name
                    ));
                    return Ok(None);
                };
                (adv, vol.max(params.sigma_floor))
            }
            LiquidityBasis::MarketCapUnitVol => {
                let Some(mcap) = s.market_cap[t] else {
                    diagnostics.push(format!(
                        "measures: {} on {}: no market cap for held security {}",
                        panel.funds[fund as usize].name,
                        panel.calendar.date(day),
                        s.name
                    ));
                    return Ok(None);
                };
                (mcap, 1.0)
            }
        };
        secs.push((p.sec, p.weight, supply, sigma));
    }

    let eta = params.eta;
    let total_eff: f64 = secs
        .iter()
        .map(|&(_, _, supply, sigma)| effective_liquidity(supply, sigma, eta))
        .sum();
    if !(total_eff > 0.0) {
        diagnostics.push(format!(
            "measures: {} on {}: non-positive effective liquidity",
            panel.funds[fund as usize].name,
            panel.calendar.date(day)
        ));
        return Ok(None);
    }
    let size = fund_size(aum, total_eff);

    let mut positions = Vec::with_capacity(secs.len());
    let mut fund_conc = 0.0;
    let mut fund_illiq = 0.0;
    let mut fund_direct = 0.0;
    let mut power_sum = 0.0;
    for &(sec, w, supply, sigma) in &secs {
        let v_share = effective_liquidity(supply, sigma, eta) / total_eff;
        let conc = position_concentration(w, v_share, eta);
        let illiq = conc * size;
        let direct = position_illiquidity(w, aum, supply, sigma, eta);
        fund_conc += w * conc;
        fund_illiq += w * illiq;
        fund_direct += w * direct;
        power_sum += sigma * w * if w == 0.0 { 0.0 } else { (w * aum / supply).powf(eta) };
        positions.push(PositionMeasure {
            sec,
            weight: w,
            illiq,
            conc,
            illiq_direct: direct,
        });
    }
    let illiq_power = power_sum.powf(1.0 / eta);
    let route_gap = {
        let denom = fund_illiq.abs().max(fund_direct.abs()).max(1e-300);
        (fund_illiq - fund_direct).abs() / denom
    };

    Ok(Some(FundDayMeasures {
        fund,
        day,
        illiq: fund_illiq,
        conc: fund_conc,
        size,
        illiq_direct: fund_direct,
        illiq_power,
        route_gap,
        positions,
    }))
}

// ============================================================
// Panel-wide measures with lookup
// ============================================================

#[derive(Debug, Clone)]
pub struct MeasuresSet {
    pub params: IlliqParams,
    pub rows: Vec<FundDayMeasures>,
    index: HashMap<(FundId, Day), usize>,
}

impl MeasuresSet {
    pub fn compute(panel: &MarketPanel, params: IlliqParams) -> Result<(Self, Vec<String>)> {
        let mut diagnostics = Vec::new();
        let mut rows = Vec::new();
        for fund in 0..panel.n_funds() as FundId {
            for day in 0..panel.n_days() as Day {
                if let Some(m) = fund_measures(panel, fund, day, &params, &mut diagnostics)? {
                    rows.push(m);
                }
            }
        }
        let index = rows
            .iter()
            .enumerate()
            .map(|(i, m)| ((m.fund, m.day), i))
            .collect();
        Ok((
            MeasuresSet {
                params,
                rows,
                index,
            },
            diagnostics,
        ))
    }

    pub fn get(&self, fund: FundId, day: Day) -> Option<&FundDayMeasures> {
        self.index.get(&(fund, day)).map(|&i| &self.rows[i])
    }

    /// Direct-route position illiquidity for one security, zero when the
    /// fund reports holdings that day but does not hold the security.
    pub fn pos_illiq_direct(&self, fund: FundId, day: Day, sec: SecId) -> Option<f64> {
        let m = self.get(fund, day)?;
        match m.positions.binary_search_by_key(&sec, |p| p.sec) {
            Ok(i) => Some(m.positions[i].illiq_direct),
            Err(_) => Some(0.0),
        }
    }
}

// ============================================================
// Tests
// ============================================================
