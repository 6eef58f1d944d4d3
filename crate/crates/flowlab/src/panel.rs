//! Core market panel: securities, funds, and holdings on a shared
//! trading calendar.
//!
//! The panel is column-oriented and immutable once built. Raw inputs (returns,
//! prices, volumes, NAVs, shares, dollar positions) are ingested; everything
//! else (trailing volatility, average dollar volume, AUM, fund returns,
//! flows, portfolio weights) is derived here, never read from disk.
//!
//! Conventions that matter downstream:
//! * volatility is the trailing 60-business-day return standard deviation and
//!   needs at least 30 observations in the window;
//! * average dollar volume is the trailing 20-day mean of raw volume;
//! * the dollar flow between t-1 and t is F_t = (S_t - S_{t-1}) * P_{t-1},
//!   relative flow f_t = F_t / A_{t-1}; a fund's first day has no flow and a
//!   missing flow stays missing, it is never zero-filled;
//! * holdings gaps are forward-filled by carrying weights for at most five
//!   business days, after which the fund-day is treated as absent.

use crate::calendar::Calendar;
use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::collections::HashMap;

pub type SecId = u32;
pub type FundId = u32;
pub type Day = u32;

/// Trailing window for the volatility estimate (business days).
pub const VOL_WINDOW: usize = 60;
/// Minimum observations required inside the volatility window.
pub const VOL_MIN_OBS: usize = 30;
/// Trailing window for average dollar volume.
pub const ADV_WINDOW: usize = 20;
/// Maximum business days a holdings report may be carried forward.
pub const HOLDINGS_FFILL_LIMIT: u32 = 5;
/// Tolerance on |sum of weights - 1| before a holdings report is rejected.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

// ============================================================
// Raw input rows
// ============================================================

#[derive(Debug, Clone)]
pub struct SecurityRow {
    pub date: NaiveDate,
    pub id: String,
    pub ret: Option<f64>,
    pub close: f64,
    pub volume_usd: f64,
    pub market_cap: f64,
    pub shares_outstanding: f64,
}

#[derive(Debug, Clone)]
pub struct FundRow {
    pub date: NaiveDate,
    pub id: String,
    pub nav_price: f64,
    pub shares_outstanding: f64,
    pub is_active: bool,
}

#[derive(Debug, Clone)]
pub struct HoldingRow {
    pub date: NaiveDate,
    pub fund: String,
    pub sec: String,
    pub dollar_position: f64,
}

// ============================================================
// Series storage
// ============================================================

#[derive(Debug, Clone)]
pub struct SecuritySeries {
    pub name: String,
    pub ret: Vec<Option<f64>>,
    pub close: Vec<Option<f64>>,
    pub volume: Vec<Option<f64>>,
    pub market_cap: Vec<Option<f64>>,
    pub shares_out: Vec<Option<f64>>,
    /// Trailing 20-day mean dollar volume.
    pub adv: Vec<Option<f64>>,
    /// Trailing 60-day return standard deviation (min 30 observations).
    pub vol: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct FundSeries {
    pub name: String,
    pub nav: Vec<Option<f64>>,
    pub shares: Vec<Option<f64>>,
    pub active: Vec<Option<bool>>,
    pub aum: Vec<Option<f64>>,
    pub ret: Vec<Option<f64>>,
    /// Dollar flow F_t = (S_t - S_{t-1}) P_{t-1}.
    pub flow_usd: Vec<Option<f64>>,
    /// Relative flow f_t = F_t / A_{t-1}; winsorized in place when requested.
    pub flow: Vec<Option<f64>>,
    /// Pre-winsorization copy of `flow`.
    pub flow_raw: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct Holding {
    pub sec: SecId,
    pub weight: f64,
    pub dollars: f64,
}

#[derive(Debug, Clone)]
pub struct HoldingsDay {
    /// Sorted by security id; weights renormalized to sum to exactly 1.
    pub holdings: Vec<Holding>,
    /// True when carried forward from an earlier report.
    pub forward_filled: bool,
}

// ============================================================
// Panel
// ============================================================

#[derive(Debug, Clone)]
pub struct MarketPanel {
    pub calendar: Calendar,
    pub securities: Vec<SecuritySeries>,
    pub funds: Vec<FundSeries>,
    holdings: Vec<Vec<Option<HoldingsDay>>>,
    sec_index: HashMap<String, SecId>,
    fund_index: HashMap<String, FundId>,
    /// Per-day cross-sectional 1st-percentile floor for average dollar volume.
    pub adv_floor: Vec<Option<f64>>,
    /// Human-readable warnings accumulated during construction.
    pub diagnostics: Vec<String>,
}

impl MarketPanel {
    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_securities(&self) -> usize {
        self.securities.len()
    }

    pub fn n_funds(&self) -> usize {
        self.funds.len()
    }

    pub fn sec_id(&self, name: &str) -> Option<SecId> {
        self.sec_index.get(name).copied()
    }

    pub fn fund_id(&self, name: &str) -> Option<FundId> {
        self.fund_index.get(name).copied()
    }

    pub fn holdings(&self, fund: FundId, day: Day) -> Option<&HoldingsDay> {
        self.holdings[fund as usize][day as usize].as_ref()
    }

    /// Portfolio weight of `sec` in `fund` at `day` (0 when the fund reports
    /// holdings that day but does not hold the security).
    pub fn weight(&self, fund: FundId, day: Day, sec: SecId) -> Option<f64> {
        let h = self.holdings(fund, day)?;
        match h.holdings.binary_search_by_key(&sec, |p| p.sec) {
            Ok(i) => Some(h.holdings[i].weight),
            Err(_) => Some(0.0),
        }
    }

    /// Floored average dollar volume used wherever liquidity enters a
    /// denominator: max(security ADV, per-day 1st-percentile floor).
    pub fn adv_floored(&self, sec: SecId, day: Day) -> Option<f64> {
        let adv = self.securities[sec as usize].adv[day as usize]?;
        let floor = self.adv_floor[day as usize].unwrap_or(0.0);
        Some(adv.max(floor))
    }

    /// The flow-driven dollar trade in one security: Q = w_{t-1} * F_t.
    pub fn flow_driven_trade(&self, fund: FundId, day: Day, sec: SecId) -> Option<f64> {
        if day == 0 {
            return None;
        }
        let f_usd = self.funds[fund as usize].flow_usd[day as usize]?;
        let w = self.weight(fund, day - 1, sec)?;
        Some(w * f_usd)
    }

    /// All flow-driven trades of a fund on a day, keyed by security.
    pub fn flow_driven_trades(&self, fund: FundId, day: Day) -> Option<Vec<(SecId, f64)>> {
        if day == 0 {
            return None;
        }
        let f_usd = self.funds[fund as usize].flow_usd[day as usize]?;
        let h = self.holdings(fund, day - 1)?;
        Some(
            h.holdings
                .iter()
                .map(|p| (p.sec, p.weight * f_usd))
                .collect(),
        )
    }
}

// ============================================================
// Flow derivation
// ============================================================

/// Populate flow_usd / flow / flow_raw from NAV and share series.
/// Derived purely from stored inputs, so calling it twice is a no-op.
pub fn compute_flows(panel: &mut MarketPanel) {
    let n_days = panel.calendar.len();
    for fund in &mut panel.funds {
        fund.flow_usd = vec![None; n_days];
        fund.flow = vec![None; n_days];
        for t in 1..n_days {
            let (Some(s1), Some(s0), Some(p0)) =
                (fund.shares[t], fund.shares[t - 1], fund.nav[t - 1])
            else {
                continue;
            };
            let f_usd = (s1 - s0) * p0;
            fund.flow_usd[t] = Some(f_usd);
            if let Some(a0) = fund.aum[t - 1] {
                if a0 > 0.0 {
                    fund.flow[t] = Some(f_usd / a0);
                }
            }
        }
        fund.flow_raw = fund.flow.clone();
    }
}

/// Winsorize relative flows cross-sectionally at the given quantiles, per
/// day. Days with fewer than 20 funds reporting flows are skipped with a
/// diagnostic. Original values are retained in `flow_raw`.
pub fn winsorize_flows(panel: &mut MarketPanel, lower: f64, upper: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower >= upper {
        return Err(Error::Invalid(format!(
            "winsorize quantiles must satisfy 0 <= lower < upper <= 1, got ({}, {})",
            lower, upper
        )));
    }
    let n_days = panel.calendar.len();
    for t in 0..n_days {
        let mut values: Vec<f64> = panel
            .funds
            .iter()
            .filter_map(|f| f.flow[t])
            .collect();
        if values.is_empty() {
            continue;
        }
        if values.len() < 20 {
            panel.diagnostics.push(format!(
                "winsorize: skipped {} ({} funds with flows, need 20)",
                panel.calendar.date(t as u32),
                values.len()
            ));
            continue;
        }
        values.sort_by(|a, b| a.total_cmp(b));
        let lo = crate::util::quantile_sorted(&values, lower);
        let hi = crate::util::quantile_sorted(&values, upper);
        for fund in &mut panel.funds {
            if let Some(f) = fund.flow[t] {
                fund.flow[t] = Some(f.clamp(lo, hi));
            }
        }
    }
    Ok(())
}

// ============================================================
// Builder
// ============================================================

#[derive(Debug, Default)]
pub struct PanelBuilder {
    pub securities: Vec<SecurityRow>,
    pub funds: Vec<FundRow>,
    pub holdings: Vec<HoldingRow>,
    /// Optional explicit trading calendar. When absent, the sorted unique
    /// dates of the security rows serve as the declared business-day list.
    pub calendar: Option<Vec<NaiveDate>>,
}

impl PanelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(self) -> Result<MarketPanel> {
        let mut diagnostics = Vec::new();

        // ---- calendar ----
        let cal_days = match self.calendar {
            Some(days) => days,
            None => {
                let mut d: Vec<NaiveDate> = self.securities.iter().map(|r| r.date).collect();
                d.sort_unstable();
                d.dedup();
                d
            }
        };
        let calendar = Calendar::new(cal_days)?;
        let n_days = calendar.len();

        // ---- intern ids (sorted for a deterministic index order) ----
        let mut sec_names: Vec<String> = self.securities.iter().map(|r| r.id.clone()).collect();
        sec_names.sort_unstable();
        sec_names.dedup();
        let sec_index: HashMap<String, SecId> = sec_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as SecId))
            .collect();

        let mut fund_names: Vec<String> = self.funds.iter().map(|r| r.id.clone()).collect();
        fund_names.sort_unstable();
        fund_names.dedup();
        let fund_index: HashMap<String, FundId> = fund_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as FundId))
            .collect();

        // ---- security series ----
        let mut securities: Vec<SecuritySeries> = sec_names
            .iter()
            .map(|n| SecuritySeries {
                name: n.clone(),
                ret: vec![None; n_days],
                close: vec![None; n_days],
                volume: vec![None; n_days],
                market_cap: vec![None; n_days],
                shares_out: vec![None; n_days],
                adv: vec![None; n_days],
                vol: vec![None; n_days],
            })
            .collect();

        for row in &self.securities {
            let Some(day) = calendar.index_of(row.date) else {
                return Err(Error::Invalid(format!(
                    "securities: date {} for {} is not in the trading calendar",
                    row.date, row.id
                )));
            };
            let sid = sec_index[&row.id] as usize;
            let s = &mut securities[sid];
            let t = day as usize;
            if s.close[t].is_some() {
                return Err(Error::Invalid(format!(
                    "securities: duplicate row for {} on {}",
                    row.id, row.date
                )));
            }
            if let Some(r) = row.ret {
                if r <= -1.0 {
                    return Err(Error::Invalid(format!(
                        "securities: return {} for {} on {} is <= -100%",
                        r, row.id, row.date
                    )));
                }
            }
            s.ret[t] = row.ret;
            s.close[t] = Some(row.close);
            s.volume[t] = (row.volume_usd >= 0.0).then_some(row.volume_usd);
            s.market_cap[t] = (row.market_cap > 0.0).then_some(row.market_cap);
            s.shares_out[t] = (row.shares_outstanding > 0.0).then_some(row.shares_outstanding);
        }

        // trailing vol and ADV
        for s in &mut securities {
            for t in 0..n_days {
                let start = t.saturating_sub(VOL_WINDOW - 1);
                let window: Vec<f64> = (start..=t).filter_map(|u| s.ret[u]).collect();
                if window.len() >= VOL_MIN_OBS {
                    let sd = crate::util::sample_std(&window);
                    if sd.is_finite() {
                        s.vol[t] = Some(sd);
                    }
                }
                let vstart = t.saturating_sub(ADV_WINDOW - 1);
                let vwin: Vec<f64> = (vstart..=t).filter_map(|u| s.volume[u]).collect();
                if !vwin.is_empty() {
                    s.adv[t] = Some(crate::util::mean(&vwin));
                }
            }
        }

        // per-day ADV floor: cross-sectional 1st percentile
        let mut adv_floor = vec![None; n_days];
        for (t, slot) in adv_floor.iter_mut().enumerate() {
            let mut advs: Vec<f64> = securities.iter().filter_map(|s| s.adv[t]).collect();
            if !advs.is_empty() {
                advs.sort_by(|a, b| a.total_cmp(b));
                *slot = Some(crate::util::quantile_sorted(&advs, 0.01));
            }
        }

        // ---- fund series ----
        let mut funds: Vec<FundSeries> = fund_names
            .iter()
            .map(|n| FundSeries {
                name: n.clone(),
                nav: vec![None; n_days],
                shares: vec![None; n_days],
                active: vec![None; n_days],
                aum: vec![None; n_days],
                ret: vec![None; n_days],
                flow_usd: vec![None; n_days],
                flow: vec![None; n_days],
                flow_raw: vec![None; n_days],
            })
            .collect();

        for row in &self.funds {
            let Some(day) = calendar.index_of(row.date) else {
                return Err(Error::Invalid(format!(
                    "funds: date {} for {} is not in the trading calendar",
                    row.date, row.id
                )));
            };
            let fid = fund_index[&row.id] as usize;
            let t = day as usize;
            if row.nav_price <= 0.0 {
                diagnostics.push(format!(
                    "funds: rejected row for {} on {}: non-positive nav_price {}",
                    row.id, row.date, row.nav_price
                ));
                continue;
            }
            let f = &mut funds[fid];
            if f.nav[t].is_some() {
                return Err(Error::Invalid(format!(
                    "funds: duplicate row for {} on {}",
                    row.id, row.date
                )));
            }
            f.nav[t] = Some(row.nav_price);
            f.shares[t] = (row.shares_outstanding > 0.0).then_some(row.shares_outstanding);
            f.active[t] = Some(row.is_active);
        }

        for f in &mut funds {
            for t in 0..n_days {
                if let (Some(p), Some(s)) = (f.nav[t], f.shares[t]) {
                    f.aum[t] = Some(p * s);
                }
                if t > 0 {
                    if let (Some(p1), Some(p0)) = (f.nav[t], f.nav[t - 1]) {
                        f.ret[t] = Some(p1 / p0 - 1.0);
                    }
                }
            }
        }

        // ---- holdings ----
        let mut reported: Vec<HashMap<Day, Vec<(SecId, f64)>>> =
            vec![HashMap::new(); fund_names.len()];
        for row in &self.holdings {
            let Some(day) = calendar.index_of(row.date) else {
                return Err(Error::Invalid(format!(
                    "holdings: date {} for {} is not in the trading calendar",
                    row.date, row.fund
                )));
            };
            let Some(&fid) = fund_index.get(&row.fund) else {
                return Err(Error::Invalid(format!(
                    "holdings: unknown fund {} on {}",
                    row.fund, row.date
                )));
            };
            let Some(&sid) = sec_index.get(&row.sec) else {
                return Err(Error::Invalid(format!(
                    "holdings: unknown security {} on {}",
                    row.sec, row.date
                )));
            };
            if row.dollar_position < 0.0 {
                return Err(Error::Invalid(format!(
                    "holdings: negative position for {} / {} on {}",
                    row.fund, row.sec, row.date
                )));
            }
            reported[fid as usize]
                .entry(day)
                .or_default()
                .push((sid, row.dollar_position));
        }

        let mut holdings: Vec<Vec<Option<HoldingsDay>>> =
            vec![vec![None; n_days]; fund_names.len()];
        for (fid, days) in reported.into_iter().enumerate() {
            let mut days: Vec<(Day, Vec<(SecId, f64)>)> = days.into_iter().collect();
            days.sort_by_key(|(d, _)| *d);
            for (day, mut positions) in days {
                positions.sort_by_key(|(s, _)| *s);
                // duplicate securities within a report are summed
                let mut dedup: Vec<(SecId, f64)> = Vec::with_capacity(positions.len());
                for (s, d) in positions {
                    match dedup.last_mut() {
                        Some((ls, ld)) if *ls == s => *ld += d,
                        _ => dedup.push((s, d)),
                    }
                }
                let total: f64 = dedup.iter().map(|(_, d)| d).sum();
                let t = day as usize;
                let Some(aum) = funds[fid].aum[t] else {
                    diagnostics.push(format!(
                        "holdings: dropped report for {} on {}: no AUM that day",
                        fund_names[fid],
                        calendar.date(day)
                    ));
                    continue;
                };
                if total <= 0.0 || ((total / aum) - 1.0).abs() > WEIGHT_SUM_TOL {
                    diagnostics.push(format!(
                        "holdings: dropped report for {} on {}: positions sum to {} vs AUM {}",
                        fund_names[fid],
                        calendar.date(day),
                        total,
                        aum
                    ));
                    continue;
                }
                let hs: Vec<Holding> = dedup
                    .into_iter()
                    .map(|(sec, dollars)| Holding {
                        sec,
                        weight: dollars / total,
                        dollars,
                    })
                    .collect();
                holdings[fid][t] = Some(HoldingsDay {
                    holdings: hs,
                    forward_filled: false,
                });
            }

            // forward-fill weight vectors for short gaps
            let mut last_report: Option<Day> = None;
            for t in 0..n_days {
                if let Some(h) = &holdings[fid][t] {
                    if !h.forward_filled {
                        last_report = Some(t as Day);
                        continue;
                    }
                }
                let Some(src) = last_report else { continue };
                if (t as u32 - src) > HOLDINGS_FFILL_LIMIT {
                    continue;
                }
                let Some(aum) = funds[fid].aum[t] else { continue };
                let carried = holdings[fid][src as usize]
                    .as_ref()
                    .expect("source report exists")
                    .holdings
                    .iter()
                    .map(|p| Holding {
                        sec: p.sec,
                        weight: p.weight,
                        dollars: p.weight * aum,
                    })
                    .collect();
                holdings[fid][t] = Some(HoldingsDay {
                    holdings: carried,
                    forward_filled: true,
                });
            }
        }

        let mut panel = MarketPanel {
            calendar,
            securities,
            funds,
            holdings,
            sec_index,
            fund_index,
            adv_floor,
            diagnostics,
        };
        compute_flows(&mut panel);
        Ok(panel)
    }
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn day(i: u32) -> NaiveDate {
        // ten consecutive weekdays starting 2020-01-06
        Calendar::weekdays(NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(), 40).date(i)
    }

    fn tiny_panel() -> MarketPanel {
        let mut b = PanelBuilder::new();
        for t in 0..6u32 {
            for sec in ["AAA", "BBB"] {
                b.securities.push(SecurityRow {
                    date: day(t),
                    id: sec.into(),
                    ret: (t > 0).then_some(0.01),
                    close: 100.0,
                    volume_usd: 1_000_000.0,
                    market_cap: 1e9,
                    shares_outstanding: 1e7,
                });
            }
        }
        // fund F1: nav 10 flat, shares grow by 100 on day 1
        let shares = [10_000.0, 10_100.0, 10_100.0, 10_100.0, 10_100.0, 10_100.0];
        for t in 0..6u32 {
            b.funds.push(FundRow {
                date: day(t),
                id: "F1".into(),
                nav_price: 10.0,
                shares_outstanding: shares[t as usize],
                is_active: true,
            });
        }
        for t in 0..6u32 {
            let aum = 10.0 * shares[t as usize];
            b.holdings.push(HoldingRow {
                date: day(t),
                fund: "F1".into(),
                sec: "AAA".into(),
                dollar_position: 0.6 * aum,
            });
            b.holdings.push(HoldingRow {
                date: day(t),
                fund: "F1".into(),
                sec: "BBB".into(),
                dollar_position: 0.4 * aum,
            });
        }
        b.build().unwrap()
    }

    #[test]
    fn flows_from_share_changes() {
        let p = tiny_panel();
        let f = &p.funds[0];
        // day 1: delta shares 100 at prior nav 10 on prior AUM 100k
        assert_relative_eq!(f.flow_usd[1].unwrap(), 1000.0);
        assert_relative_eq!(f.flow[1].unwrap(), 0.01);
        // day 2: no share change
        assert_relative_eq!(f.flow_usd[2].unwrap(), 0.0);
        assert_relative_eq!(f.flow[2].unwrap(), 0.0);
        // first day has no flow at all
        assert!(f.flow_usd[0].is_none());
        assert!(f.flow[0].is_none());
    }

    #[test]
    fn compute_flows_is_idempotent() {
        let mut p = tiny_panel();
        let before: Vec<_> = p.funds[0].flow.clone();
        compute_flows(&mut p);
        compute_flows(&mut p);
        assert_eq!(p.funds[0].flow, before);
    }

    #[test]
    fn trades_split_flow_by_prior_weights() {
        let p = tiny_panel();
        let fid = p.fund_id("F1").unwrap();
        let aaa = p.sec_id("AAA").unwrap();
        let bbb = p.sec_id("BBB").unwrap();
        let qa = p.flow_driven_trade(fid, 1, aaa).unwrap();
        let qb = p.flow_driven_trade(fid, 1, bbb).unwrap();
        assert_relative_eq!(qa, 600.0, max_relative = 1e-12);
        assert_relative_eq!(qb, 400.0, max_relative = 1e-12);
        // zero flow means zero trade
        assert_relative_eq!(p.flow_driven_trade(fid, 2, aaa).unwrap(), 0.0);
        // trades sum back to the dollar flow
        let total: f64 = p
            .flow_driven_trades(fid, 1)
            .unwrap()
            .iter()
            .map(|(_, q)| q)
            .sum();
        assert_relative_eq!(total, 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn volatility_needs_thirty_observations() {
        let p = tiny_panel();
        // only 6 days of data: no volatility anywhere
        assert!(p.securities[0].vol.iter().all(|v| v.is_none()));
        // ADV is available from day 0 and equals the constant volume
        assert_relative_eq!(p.securities[0].adv[3].unwrap(), 1_000_000.0);
    }

    #[test]
    fn holdings_forward_fill_is_capped() {
        let mut b = PanelBuilder::new();
        for t in 0..10u32 {
            b.securities.push(SecurityRow {
                date: day(t),
                id: "AAA".into(),
                ret: (t > 0).then_some(0.0),
                close: 100.0,
                volume_usd: 1e6,
                market_cap: 1e9,
                shares_outstanding: 1e7,
            });
            b.funds.push(FundRow {
                date: day(t),
                id: "F1".into(),
                nav_price: 10.0,
                shares_outstanding: 1000.0,
                is_active: true,
            });
        }
        // single holdings report on day 0
        b.holdings.push(HoldingRow {
            date: day(0),
            fund: "F1".into(),
            sec: "AAA".into(),
            dollar_position: 10_000.0,
        });
        let p = b.build().unwrap();
        let fid = p.fund_id("F1").unwrap();
        assert!(!p.holdings(fid, 0).unwrap().forward_filled);
        for t in 1..=5u32 {
            let h = p.holdings(fid, t).expect("filled within limit");
            assert!(h.forward_filled);
            assert_relative_eq!(h.holdings[0].weight, 1.0);
        }
        assert!(p.holdings(fid, 6).is_none(), "fill stops after 5 days");
    }

    #[test]
    fn inconsistent_holdings_are_dropped_with_diagnostic() {
        let mut b = PanelBuilder::new();
        for t in 0..2u32 {
            b.securities.push(SecurityRow {
                date: day(t),
                id: "AAA".into(),
                ret: None,
                close: 100.0,
                volume_usd: 1e6,
                market_cap: 1e9,
                shares_outstanding: 1e7,
            });
            b.funds.push(FundRow {
                date: day(t),
                id: "F1".into(),
                nav_price: 10.0,
                shares_outstanding: 1000.0,
                is_active: true,
            });
        }
        // positions sum to half the AUM: report must be rejected
        b.holdings.push(HoldingRow {
            date: day(0),
            fund: "F1".into(),
            sec: "AAA".into(),
            dollar_position: 5_000.0,
        });
        let p = b.build().unwrap();
        assert!(p.holdings(0, 0).is_none());
        assert!(p.diagnostics.iter().any(|d| d.contains("positions sum")));
    }

    #[test]
    fn nonpositive_nav_rejects_row_not_file() {
        let mut b = PanelBuilder::new();
        b.securities.push(SecurityRow {
            date: day(0),
            id: "AAA".into(),
            ret: None,
            close: 100.0,
            volume_usd: 1e6,
            market_cap: 1e9,
            shares_outstanding: 1e7,
        });
        b.funds.push(FundRow {
            date: day(0),
            id: "F1".into(),
            nav_price: -3.0,
            shares_outstanding: 1000.0,
            is_active: true,
        });
        let p = b.build().unwrap();
        assert!(p.funds[0].nav[0].is_none());
        assert!(p.diagnostics.iter().any(|d| d.contains("nav_price")));
    }

    #[test]
    fn winsorize_clamps_to_rank_values() {
        // 101 funds with flows 0.00..=1.00 on one day
        let mut b = PanelBuilder::new();
        for t in 0..2u32 {
            b.securities.push(SecurityRow {
                date: day(t),
                id: "AAA".into(),
                ret: None,
                close: 100.0,
                volume_usd: 1e6,
                market_cap: 1e9,
                shares_outstanding: 1e7,
            });
        }
        for i in 0..101 {
            let name = format!("F{:03}", i);
            let s0 = 1000.0;
            let s1 = s0 * (1.0 + i as f64 / 100.0 / 10.0);
            b.funds.push(FundRow {
                date: day(0),
                id: name.clone(),
                nav_price: 10.0,
                shares_outstanding: s0,
                is_active: true,
            });
            b.funds.push(FundRow {
                date: day(1),
                id: name,
                nav_price: 10.0,
                shares_outstanding: s1,
                is_active: true,
            });
        }
        let mut p = b.build().unwrap();
        // flows on day 1 are exactly i/1000
        winsorize_flows(&mut p, 0.01, 0.99).unwrap();
        let flows: Vec<f64> = p.funds.iter().map(|f| f.flow[1].unwrap()).collect();
        let min = flows.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = flows.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(min, 0.001, max_relative = 1e-9);
        assert_relative_eq!(max, 0.099, max_relative = 1e-9);
        // interior values untouched
        assert_relative_eq!(p.funds[50].flow[1].unwrap(), 0.05, max_relative = 1e-9);
        assert_relative_eq!(
            p.funds[50].flow_raw[1].unwrap(),
            0.05,
            max_relative = 1e-9
        );
        // raw extremes preserved
        let raw_max = p
            .funds
            .iter()
            .filter_map(|f| f.flow_raw[1])
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(raw_max, 0.1, max_relative = 1e-9);
    }

    #[test]
    fn winsorize_skips_thin_days() {
        let mut p = tiny_panel();
        winsorize_flows(&mut p, 0.01, 0.99).unwrap();
        assert!(p
            .diagnostics
            .iter()
            .any(|d| d.contains("winsorize: skipped")));
        // identity when skipped
        assert_eq!(p.funds[0].flow[1], p.funds[0].flow_raw[1]);
    }
}
