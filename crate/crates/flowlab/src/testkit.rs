//! Shared test fixtures: a small deterministic panel exercising flows,
//! volatility windows, and multi-fund holdings. Test-only.

use crate::panel::{FundRow, HoldingRow, MarketPanel, PanelBuilder, SecurityRow};
use chrono::{Datelike, NaiveDate};

pub fn weekdays(n: usize) -> Vec<NaiveDate> {
    let mut days = Vec::with_capacity(n);
    let mut d = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    while days.len() < n {
        if d.weekday().num_days_from_monday() < 5 {
            days.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    days
}

/// 3 securities, 2 funds, `n_days` weekdays. Security returns are small
/// deterministic sinusoids; fund F1 takes steady inflows, F2 is flat with a
/// mid-sample redemption. Holdings reported daily and internally consistent.
pub fn tiny_panel(n_days: usize) -> MarketPanel {
    let days = weekdays(n_days);
    let secs = ["AAA", "BBB", "CCC"];
    let vols = [1.0e6, 4.0e6, 9.0e6];
    let mcaps = [1.0e8, 4.0e8, 9.0e8];
    let amp = [0.010, 0.014, 0.008];
    let freq = [0.7, 1.1, 0.4];

    let mut builder = PanelBuilder::new();
    builder.calendar = Some(days.clone());

    let mut closes = [100.0, 400.0, 900.0];
    for (t, &date) in days.iter().enumerate() {
        for k in 0..3 {
            let ret = if t == 0 {
                None
            } else {
                Some(amp[k] * (t as f64 * freq[k]).sin())
            };
            if let Some(r) = ret {
                closes[k] *= 1.0 + r;
            }
            builder.securities.push(SecurityRow {
                date,
                id: secs[k].to_string(),
                ret,
                close: closes[k],
                volume_usd: vols[k],
                market_cap: mcaps[k],
                shares_outstanding: mcaps[k] / closes[k],
            });
        }
    }

    // F1: nav drifts, shares grow (inflows). F2: flat nav, one redemption.
    let mut nav1 = 10.0;
    for (t, &date) in days.iter().enumerate() {
        if t > 0 {
            nav1 *= 1.0 + 0.001 * (t as f64 * 0.9).cos();
        }
        let shares1 = 1.0e6 + 2000.0 * t as f64;
        builder.funds.push(FundRow {
            date,
            id: "F1".to_string(),
            nav_price: nav1,
            shares_outstanding: shares1,
            is_active: true,
        });
        let shares2 = if t >= n_days / 2 { 1.9e6 } else { 2.0e6 };
        builder.funds.push(FundRow {
            date,
            id: "F2".to_string(),
            nav_price: 20.0,
            shares_outstanding: shares2,
            is_active: false,
        });

        let aum1 = nav1 * shares1;
        for (sec, w) in [("AAA", 0.6), ("BBB", 0.4)] {
            builder.holdings.push(HoldingRow {
                date,
                fund: "F1".to_string(),
                sec: sec.to_string(),
                dollar_position: w * aum1,
            });
        }
        let aum2 = 20.0 * shares2;
        for (sec, w) in [("BBB", 0.5), ("CCC", 0.5)] {
            builder.holdings.push(HoldingRow {
                date,
                fund: "F2".to_string(),
                sec: sec.to_string(),
                dollar_position: w * aum2,
            });
        }
    }

    let mut panel = builder.build().expect("fixture panel builds");
    crate::panel::compute_flows(&mut panel);
    panel
}

/// `n_funds` funds over `n_days` weekdays on two securities: AAA with thin
/// volume, BBB with deep volume. Funds whose index is a multiple of 10 hold
/// only AAA (one illiquid fund per ten), the rest hold only BBB. Relative
/// flows follow `flow_of(fund, t)` exactly (shares grow at that rate) and
/// NAV returns follow `ret_of(fund, t, flow_t)`, both for t >= 1.
pub fn fund_grid_panel(
    n_funds: usize,
    n_days: usize,
    flow_of: &dyn Fn(usize, usize) -> f64,
    ret_of: &dyn Fn(usize, usize, f64) -> f64,
) -> MarketPanel {
    let days = weekdays(n_days);
    let secs = ["AAA", "BBB"];
    let vols = [1.0e6, 1.0e9];
    let mcaps = [1.0e8, 5.0e10];
    let amp = [0.004, 0.006];
    let freq = [0.7, 1.1];

    let mut builder = PanelBuilder::new();
    builder.calendar = Some(days.clone());

    let mut closes = [100.0, 50.0];
    for (t, &date) in days.iter().enumerate() {
        for k in 0..2 {
            let ret = if t == 0 {
                None
            } else {
                Some(amp[k] * (t as f64 * freq[k]).sin())
            };
            if let Some(r) = ret {
                closes[k] *= 1.0 + r;
            }
            builder.securities.push(SecurityRow {
                date,
                id: secs[k].to_string(),
                ret,
                close: closes[k],
                volume_usd: vols[k],
                market_cap: mcaps[k],
                shares_outstanding: mcaps[k] / closes[k],
            });
        }
    }

    for fund in 0..n_funds {
        let name = format!("F{fund:03}");
        let sec = if fund % 10 == 0 { "AAA" } else { "BBB" };
        let mut nav = 10.0;
        let mut shares = 1.0e6;
        for (t, &date) in days.iter().enumerate() {
            if t > 0 {
                let f = flow_of(fund, t);
                nav *= 1.0 + ret_of(fund, t, f);
                shares *= 1.0 + f;
            }
            builder.funds.push(FundRow {
                date,
                id: name.clone(),
                nav_price: nav,
                shares_outstanding: shares,
                is_active: true,
            });
            builder.holdings.push(HoldingRow {
                date,
                fund: name.clone(),
                sec: sec.to_string(),
                dollar_position: nav * shares,
            });
        }
    }

    let mut panel = builder.build().expect("fixture panel builds");
    crate::panel::compute_flows(&mut panel);
    panel
}
