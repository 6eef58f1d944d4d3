//! Return decomposition, return-chasing measurement, Ponzi flows and
//! returns, wealth reallocation, flow-decile sorts, and run-up/bubble event
//! detection.

use crate::econ::design::{Design, Factor};
use crate::econ::ols::{ols_clustered, wald_equality, RegressionFit};
use crate::error::{Error, Result};
use crate::illiquidity::MeasuresSet;
use crate::impact::{ImpactParams, ImpactSeries};
use crate::panel::{Day, FundId, MarketPanel};
use crate::util::signed_power;
use ndarray::Array2;

// ============================================================
// Exponential weights
// ============================================================

/// Normalized exponential lag weights w_s = e^{-lambda s} / sum, s = 0..=l.
pub fn exp_weights(lambda: f64, l: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..=l).map(|s| (-lambda * s as f64).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

// ============================================================
// Decomposition
// ============================================================

/// Per-fund daily decomposition R = R_impact + R_orth, plus the
/// exponentially weighted versions over `lags` trailing days. The weighted
/// series require a complete window; the additive identities hold by
/// construction.
pub struct DecomposedReturns {
    pub lambda_beta: f64,
    pub lags: usize,
    /// Indexed [fund][day]; a day is present only when both the observed
    /// return and the total impact return exist.
    pub r: Vec<Vec<Option<f64>>>,
    pub r_impact: Vec<Vec<Option<f64>>>,
    pub r_orth: Vec<Vec<Option<f64>>>,
    pub rt: Vec<Vec<Option<f64>>>,
    pub rt_impact: Vec<Vec<Option<f64>>>,
    pub rt_orth: Vec<Vec<Option<f64>>>,
}

pub fn decompose(
    panel: &MarketPanel,
    measures: &MeasuresSet,
    params: &ImpactParams,
    lambda_beta: f64,
    lags: usize,
) -> DecomposedReturns {
    let impact = ImpactSeries::compute(panel, measures, params);
    let n_days = panel.n_days();
    let n_funds = panel.n_funds();
    let blank = || vec![vec![None; n_days]; n_funds];
    let (mut r, mut ri, mut ro) = (blank(), blank(), blank());
    for fund in 0..n_funds {
        let series = &panel.funds[fund];
        for t in 0..n_days {
            let (Some(ret), Some(row)) = (series.ret[t], impact.get(fund as FundId, t as Day))
            else {
                continue;
            };
            let Some(total) = row.r_total else { continue };
            r[fund][t] = Some(ret);
            ri[fund][t] = Some(total);
            ro[fund][t] = Some(ret - total);
        }
    }

    let w = exp_weights(lambda_beta, lags);
    let weighted = |series: &Vec<Vec<Option<f64>>>| -> Vec<Vec<Option<f64>>> {
        let mut out = vec![vec![None; n_days]; n_funds];
        for fund in 0..n_funds {
            for t in lags..n_days {
                let mut acc = 0.0;
                let mut ok = true;
                for (s, &ws) in w.iter().enumerate() {
                    match series[fund][t - s] {
                        Some(v) => acc += ws * v,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    out[fund][t] = Some(acc);
                }
            }
        }
        out
    };
    let rt_impact = weighted(&ri);
    let rt_orth = weighted(&ro);
    // the weighted total is the sum of the weighted parts, keeping the
    // identity exact in floating point
    let mut rt = vec![vec![None; n_days]; n_funds];
    for fund in 0..n_funds {
        for t in 0..n_days {
            if let (Some(a), Some(b)) = (rt_impact[fund][t], rt_orth[fund][t]) {
                rt[fund][t] = Some(a + b);
            }
        }
    }
    DecomposedReturns {
        lambda_beta,
        lags,
        r,
        r_impact: ri,
        r_orth: ro,
        rt,
        rt_impact,
        rt_orth,
    }
}

// ============================================================
// Chasing regressions
// ============================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSplit {
    All,
    ActiveOnly,
    PassiveOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct ChasingOpts {
    /// Number of own-flow lag controls f_t .. f_{t-(n-1)}.
    pub n_flow_lags: usize,
    /// Day fixed effects (the alpha_t term).
    pub fe_time: bool,
    /// Two-way clustering on (day, fund).
    pub cluster: bool,
    pub sample: SampleSplit,
}

impl Default for ChasingOpts {
    fn default() -> Self {
        ChasingOpts {
            n_flow_lags: 5,
            fe_time: true,
            cluster: true,
            sample: SampleSplit::All,
        }
    }
}

pub struct ChasingFit {
    pub fit: RegressionFit,
    /// Coefficient on the weighted impact return; None when that column is
    /// degenerate (no impact anywhere, e.g. theta = 0).
    pub beta1: Option<(f64, f64, f64)>,
    /// Coefficient on the weighted orthogonal return.
    pub beta2: (f64, f64, f64),
    /// Wald test of beta1 = beta2, when both are estimated.
    pub wald: Option<(f64, f64)>,
}

struct ChasingRow {
    y: f64,
    rt_impact: f64,
    rt_orth: f64,
    flow_lags: Vec<f64>,
    fund: FundId,
    day: u32,
}

fn chasing_rows(
    panel: &MarketPanel,
    dec: &DecomposedReturns,
    opts: &ChasingOpts,
) -> Vec<ChasingRow> {
    let n_days = panel.n_days();
    let mut rows = Vec::new();
    for fund in 0..panel.n_funds() {
        let series = &panel.funds[fund];
        for t in 0..n_days.saturating_sub(1) {
            if t + 1 < opts.n_flow_lags {
                continue;
            }
            match (opts.sample, series.active[t]) {
                (SampleSplit::All, _) => {}
                (SampleSplit::ActiveOnly, Some(true)) => {}
                (SampleSplit::PassiveOnly, Some(false)) => {}
                _ => continue,
            }
            let (Some(y), Some(rti), Some(rto)) = (
                series.flow[t + 1],
                dec.rt_impact[fund][t],
                dec.rt_orth[fund][t],
            ) else {
                continue;
            };
            let mut flow_lags = Vec::with_capacity(opts.n_flow_lags);
            let mut ok = true;
            for s in 0..opts.n_flow_lags {
                match series.flow[t - s] {
                    Some(f) => flow_lags.push(f),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            rows.push(ChasingRow {
                y,
                rt_impact: rti,
                rt_orth: rto,
                flow_lags,
                fund: fund as FundId,
                day: t as u32,
            });
        }
    }
    rows
}

fn chasing_design(
    rows: &[ChasingRow],
    opts: &ChasingOpts,
    columns: &[&str], // subset of {"rt_impact", "rt_orth", "rt"}
) -> Result<Design> {
    if rows.is_empty() {
        return Err(Error::Estimation(
            "chasing regression: no complete observations".into(),
        ));
    }
    let mut names: Vec<String> = columns.iter().map(|s| s.to_string()).collect();
    for s in 0..opts.n_flow_lags {
        names.push(format!("flow_lag{s}"));
    }
    if !opts.fe_time {
        names.push("const".into());
    }
    let k = names.len();
    let mut x = Array2::<f64>::zeros((rows.len(), k));
    let mut y = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let mut j = 0;
        for col in columns {
            x[[i, j]] = match *col {
                "rt_impact" => r.rt_impact,
                "rt_orth" => r.rt_orth,
                "rt" => r.rt_impact + r.rt_orth,
                other => unreachable!("unknown chasing column {other}"),
            };
            j += 1;
        }
        for (s, &f) in r.flow_lags.iter().enumerate() {
            x[[i, j + s]] = f;
        }
        j += opts.n_flow_lags;
        if !opts.fe_time {
            x[[i, j]] = 1.0;
        }
        y.push(r.y);
    }
    let mut design = Design::new(y, x, names);
    if opts.fe_time {
        design = design.with_fe(Factor::from_keys("day", rows.iter().map(|r| r.day)));
    }
    if opts.cluster {
        design = design
            .with_cluster(Factor::from_keys("day", rows.iter().map(|r| r.day)))
            .with_cluster(Factor::from_keys("fund", rows.iter().map(|r| r.fund)));
    }
    Ok(design)
}

/// Next-day flows on the decomposed weighted returns:
/// f_{t+1} = alpha_t + beta1 rt_impact_t + beta2 rt_orth_t + controls.
/// When the impact column is identically zero the model degenerates to the
/// undecomposed benchmark and beta1 is not estimated.
pub fn chasing_regression(
    panel: &MarketPanel,
    dec: &DecomposedReturns,
    opts: ChasingOpts,
) -> Result<ChasingFit> {
    let rows = chasing_rows(panel, dec, &opts);
    let degenerate = rows.iter().all(|r| r.rt_impact == 0.0);
    if degenerate {
        let design = chasing_design(&rows, &opts, &["rt_orth"])?;
        let fit = ols_clustered(design)?;
        let beta2 = fit.coef_by_name("rt_orth").expect("column exists");
        return Ok(ChasingFit {
            fit,
            beta1: None,
            beta2,
            wald: None,
        });
    }
    let design = chasing_design(&rows, &opts, &["rt_impact", "rt_orth"])?;
    let fit = ols_clustered(design)?;
    let beta1 = fit.coef_by_name("rt_impact").expect("column exists");
    let beta2 = fit.coef_by_name("rt_orth").expect("column exists");
    let wald = wald_equality(&fit, "rt_impact", "rt_orth").ok();
    Ok(ChasingFit {
        fit,
        beta1: Some(beta1),
        beta2,
        wald,
    })
}

/// Undecomposed benchmark: f_{t+1} on the weighted total return.
pub fn chasing_benchmark(
    panel: &MarketPanel,
    dec: &DecomposedReturns,
    opts: ChasingOpts,
) -> Result<RegressionFit> {
    let rows = chasing_rows(panel, dec, &opts);
    let design = chasing_design(&rows, &opts, &["rt"])?;
    ols_clustered(design)
}

// ============================================================
// Ponzi flows, returns, volume ratio, reallocation
// ============================================================

pub struct PonziSeries {
    pub beta1: f64,
    pub theta: f64,
    /// Ponzi flow f^P indexed [fund][day]; the value at day t+1 is
    /// beta1 * rt_impact_t.
    pub flow: Vec<Vec<Option<f64>>>,
    /// Ponzi return R^P = theta * illiq_direct_{t-1} * sign(f^P)|f^P|^eta.
    pub ret: Vec<Vec<Option<f64>>>,
    /// Per day: sum_i |f^P| A_{t-1} / sum_i |f| A_{t-1}.
    pub volume_ratio: Vec<Option<f64>>,
    /// Ratio above 1 (predicted ponzi flows exceed realized flows).
    pub ratio_flagged: Vec<bool>,
    /// Per day: sum_i |R^P_{i,t}| A_{i,t-1}, in dollars.
    pub reallocation: Vec<f64>,
    pub cum_reallocation: Vec<f64>,
}

pub fn ponzi_series(
    panel: &MarketPanel,
    measures: &MeasuresSet,
    dec: &DecomposedReturns,
    beta1: f64,
    theta: f64,
) -> PonziSeries {
    let eta = measures.params.eta;
    let n_days = panel.n_days();
    let n_funds = panel.n_funds();
    let mut flow = vec![vec![None; n_days]; n_funds];
    let mut ret = vec![vec![None; n_days]; n_funds];
    for fund in 0..n_funds {
        for t in 0..n_days.saturating_sub(1) {
            if let Some(rti) = dec.rt_impact[fund][t] {
                flow[fund][t + 1] = Some(beta1 * rti);
            }
        }
        for t in 1..n_days {
            let (Some(fp), Some(m)) = (flow[fund][t], measures.get(fund as FundId, (t - 1) as Day))
            else {
                continue;
            };
            ret[fund][t] = Some(theta * m.illiq_direct * signed_power(fp, eta));
        }
    }

    let mut volume_ratio = vec![None; n_days];
    let mut ratio_flagged = vec![false; n_days];
    let mut reallocation = vec![0.0; n_days];
    let mut cum_reallocation = vec![0.0; n_days];
    let mut running = 0.0;
    for t in 1..n_days {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut realloc = 0.0;
        for fund in 0..n_funds {
            let Some(aum_prev) = panel.funds[fund].aum[t - 1] else {
                continue;
            };
            if let (Some(fp), Some(f)) = (flow[fund][t], panel.funds[fund].flow[t]) {
                num += fp.abs() * aum_prev;
                den += f.abs() * aum_prev;
            }
            if let Some(rp) = ret[fund][t] {
                realloc += rp.abs() * aum_prev;
            }
        }
        if den > 0.0 {
            let ratio = num / den;
            volume_ratio[t] = Some(ratio);
            ratio_flagged[t] = ratio > 1.0;
        }
        reallocation[t] = realloc;
        running += realloc;
        cum_reallocation[t] = running;
    }

    PonziSeries {
        beta1,
        theta,
        flow,
        ret,
        volume_ratio,
        ratio_flagged,
        reallocation,
        cum_reallocation,
    }
}

// ============================================================
// Market return and flow-decile sorts
// ============================================================

/// AUM-weighted mean fund return per day (the panel's market proxy).
pub fn market_return(panel: &MarketPanel) -> Vec<Option<f64>> {
    let n_days = panel.n_days();
    let mut out = vec![None; n_days];
    for t in 1..n_days {
        let mut wsum = 0.0;
        let mut acc = 0.0;
        for fund in 0..panel.n_funds() {
            let series = &panel.funds[fund];
            if let (Some(a), Some(r)) = (series.aum[t - 1], series.ret[t]) {
                wsum += a;
                acc += a * r;
            }
        }
        if wsum > 0.0 {
            out[t] = Some(acc / wsum);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortKey {
    /// Rank on the relative flow f_t.
    Flow,
    /// Rank on f_t scaled by prior-day fund illiquidity (flows relative to
    /// the liquidity of what the fund holds).
    FlowOverLiquidity,
}

/// Mean returns by (illiquidity group x flow decile). Group 1 is the top
/// decile of prior-day fund illiquidity (canonical measure); group 0 is the
/// rest. Dates contribute only when a group has at least [`MIN_SORT_FUNDS`]
/// funds.
pub const MIN_SORT_FUNDS: usize = 10;

pub struct SortTable {
    /// [group][decile] mean market-excess return.
    pub mean_excess: [[f64; 10]; 2],
    /// [group][decile] mean raw return.
    pub mean_raw: [[f64; 10]; 2],
    /// [group][decile] mean beta-adjusted return (trailing-beta market
    /// adjustment).
    pub mean_adjusted: [[f64; 10]; 2],
    pub counts: [[usize; 10]; 2],
}

/// Trailing 60-day market beta per (fund, day), minimum 30 paired
/// observations; used by the beta-adjusted sort column.
fn trailing_beta(
    panel: &MarketPanel,
    mkt: &[Option<f64>],
    fund: usize,
    t: usize,
) -> Option<f64> {
    const WINDOW: usize = 60;
    const MIN_OBS: usize = 30;
    let lo = t.saturating_sub(WINDOW);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for u in lo..t {
        if let (Some(m), Some(r)) = (mkt[u], panel.funds[fund].ret[u]) {
            xs.push(m);
            ys.push(r);
        }
    }
    if xs.len() < MIN_OBS {
        return None;
    }
    let var = crate::util::sample_cov(&xs, &xs);
    if var <= 0.0 {
        return None;
    }
    Some(crate::util::sample_cov(&xs, &ys) / var)
}

pub fn flow_decile_sort(
    panel: &MarketPanel,
    measures: &MeasuresSet,
    key: SortKey,
) -> Result<SortTable> {
    let n_days = panel.n_days();
    let mkt = market_return(panel);
    let mut sums_excess = [[0.0f64; 10]; 2];
    let mut sums_raw = [[0.0f64; 10]; 2];
    let mut sums_adj = [[0.0f64; 10]; 2];
    let mut counts_adj = [[0usize; 10]; 2];
    let mut counts = [[0usize; 10]; 2];

    for t in 1..n_days {
        let Some(mret) = mkt[t] else { continue };
        // candidate funds: flow, return, and prior-day illiquidity present
        struct Cand {
            fund: usize,
            sort_val: f64,
            illiq: f64,
            ret: f64,
        }
        let mut cands = Vec::new();
        for fund in 0..panel.n_funds() {
            let series = &panel.funds[fund];
            let (Some(f), Some(r)) = (series.flow[t], series.ret[t]) else {
                continue;
            };
            let Some(m) = measures.get(fund as FundId, (t - 1) as Day) else {
                continue;
            };
            let sort_val = match key {
                SortKey::Flow => f,
                SortKey::FlowOverLiquidity => f * m.illiq,
            };
            cands.push(Cand {
                fund,
                sort_val,
                illiq: m.illiq,
                ret: r,
            });
        }
        if cands.len() < 2 * MIN_SORT_FUNDS {
            continue;
        }
        // group split: top illiquidity decile vs the rest
        let mut by_illiq: Vec<usize> = (0..cands.len()).collect();
        by_illiq.sort_by(|&a, &b| {
            cands[a]
                .illiq
                .partial_cmp(&cands[b].illiq)
                .expect("finite")
                .then(cands[a].fund.cmp(&cands[b].fund))
        });
        let cut = cands.len() - cands.len().div_ceil(10);
        let mut group = vec![0usize; cands.len()];
        for &i in &by_illiq[cut..] {
            group[i] = 1;
        }

        // within each group, decile-rank by the sort key (stable fund tie-break)
        for g in 0..2 {
            let members: Vec<usize> = (0..cands.len()).filter(|&i| group[i] == g).collect();
            if members.len() < MIN_SORT_FUNDS {
                continue;
            }
            let mut order = members.clone();
            order.sort_by(|&a, &b| {
                cands[a]
                    .sort_val
                    .partial_cmp(&cands[b].sort_val)
                    .expect("finite")
                    .then(cands[a].fund.cmp(&cands[b].fund))
            });
            let n = order.len();
            for (rank, &i) in order.iter().enumerate() {
                let decile = (rank * 10 / n).min(9);
                let c = &cands[i];
                sums_raw[g][decile] += c.ret;
                sums_excess[g][decile] += c.ret - mret;
                counts[g][decile] += 1;
                if let Some(beta) = trailing_beta(panel, &mkt, c.fund, t) {
                    sums_adj[g][decile] += c.ret - beta * mret;
                    counts_adj[g][decile] += 1;
                }
            }
        }
    }

    if counts.iter().flatten().all(|&c| c == 0) {
        return Err(Error::Estimation(
            "flow sort: no date had enough funds in any group".into(),
        ));
    }
    let mut table = SortTable {
        mean_excess: [[f64::NAN; 10]; 2],
        mean_raw: [[f64::NAN; 10]; 2],
        mean_adjusted: [[f64::NAN; 10]; 2],
        counts,
    };
    for g in 0..2 {
        for d in 0..10 {
            if counts[g][d] > 0 {
                table.mean_raw[g][d] = sums_raw[g][d] / counts[g][d] as f64;
                table.mean_excess[g][d] = sums_excess[g][d] / counts[g][d] as f64;
            }
            if counts_adj[g][d] > 0 {
                table.mean_adjusted[g][d] = sums_adj[g][d] / counts_adj[g][d] as f64;
            }
        }
    }
    Ok(table)
}

// ============================================================
// Run-up events and bubble subset
// ============================================================

#[derive(Debug, Clone, Copy)]
pub struct RunupParams {
    /// Trailing excess cumulative return that triggers an event.
    pub threshold: f64,
    /// Trailing window length (days) and the re-flag cool-off.
    pub window: usize,
    /// Fraction of events (by trailing cumulative ponzi flow) in the bubble
    /// subset.
    pub top_pct: f64,
    /// Post-event horizon for the mean path and summary.
    pub horizon: usize,
}

impl Default for RunupParams {
    fn default() -> Self {
        RunupParams {
            threshold: 0.5,
            window: 504,
            top_pct: 0.10,
            horizon: 252,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunupEvent {
    pub fund: FundId,
    pub day: Day,
    /// Cumulative ponzi flow over the trailing window.
    pub cum_ponzi: f64,
}

pub struct EventStudy {
    pub params: RunupParams,
    pub events: Vec<RunupEvent>,
    /// Indices into `events` forming the bubble subset.
    pub bubble: Vec<usize>,
    /// (offset, mean cumulative excess return relative to the event day,
    /// number of contributing events), offsets -window..=horizon.
    pub runup_path: Vec<(i64, f64, usize)>,
    pub bubble_path: Vec<(i64, f64, usize)>,
    /// Mean cumulative excess return from event day to event + horizon.
    pub runup_post_mean: Option<f64>,
    pub bubble_post_mean: Option<f64>,
}

/// Cumulative log-return series (NaN where the day return is missing);
/// prefix[t] = sum of log(1+r) through day t over present days, with
/// present[t] marking availability.
fn log_cum(rets: &[Option<f64>]) -> (Vec<f64>, Vec<bool>) {
    let n = rets.len();
    let mut prefix = vec![0.0f64; n + 1];
    let mut present = vec![false; n];
    for t in 0..n {
        let step = match rets[t] {
            Some(r) => {
                present[t] = true;
                (1.0 + r).ln()
            }
            None => 0.0,
        };
        prefix[t + 1] = prefix[t] + step;
    }
    (prefix, present)
}

fn all_present(present: &[bool], lo: usize, hi: usize) -> bool {
    present[lo..hi].iter().all(|&p| p)
}

/// Detect run-up events (trailing excess cumulative return above the
/// threshold, first crossing per fund with a cool-off of one window), rank
/// the bubble subset by trailing cumulative ponzi flow, and produce aligned
/// event-window mean cumulative excess return paths.
pub fn runup_and_bubble(
    panel: &MarketPanel,
    ponzi: &PonziSeries,
    params: RunupParams,
) -> EventStudy {
    let n_days = panel.n_days();
    let mkt = market_return(panel);
    let (mkt_cum, mkt_present) = log_cum(&mkt);
    let fund_cum: Vec<(Vec<f64>, Vec<bool>)> = (0..panel.n_funds())
        .map(|f| log_cum(&panel.funds[f].ret))
        .collect();

    let mut events = Vec::new();
    for fund in 0..panel.n_funds() {
        let (cum, present) = &fund_cum[fund];
        let mut blocked_until = 0usize;
        for t in params.window..n_days {
            if t < blocked_until {
                continue;
            }
            let lo = t - params.window;
            // both the fund and the market need complete windows
            if !all_present(&present, lo + 1, t + 1) || !all_present(&mkt_present, lo + 1, t + 1) {
                continue;
            }
            let fund_growth = (cum[t + 1] - cum[lo + 1]).exp();
            let mkt_growth = (mkt_cum[t + 1] - mkt_cum[lo + 1]).exp();
            if fund_growth - mkt_growth > params.threshold {
                let mut cum_ponzi = 0.0;
                for u in lo + 1..=t {
                    if let Some(fp) = ponzi.flow[fund][u] {
                        cum_ponzi += fp;
                    }
                }
                events.push(RunupEvent {
                    fund: fund as FundId,
                    day: t as Day,
                    cum_ponzi,
                });
                blocked_until = t + params.window;
            }
        }
    }

    // bubble subset: top `top_pct` of events by trailing cumulative ponzi flow
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[b]
            .cum_ponzi
            .partial_cmp(&events[a].cum_ponzi)
            .expect("finite")
            .then(events[a].day.cmp(&events[b].day))
            .then(events[a].fund.cmp(&events[b].fund))
    });
    let n_bubble = if events.is_empty() {
        0
    } else {
        ((events.len() as f64 * params.top_pct).ceil() as usize).clamp(1, events.len())
    };
    let bubble: Vec<usize> = order[..n_bubble].to_vec();

    let path_for = |subset: &[usize]| -> (Vec<(i64, f64, usize)>, Option<f64>) {
        let mut path = Vec::new();
        for offset in -(params.window as i64)..=(params.horizon as i64) {
            let mut acc = 0.0;
            let mut n = 0usize;
            for &ei in subset {
                let e = &events[ei];
                let fund = e.fund as usize;
                let day = e.day as i64 + offset;
                if day < 0 || day as usize >= n_days {
                    continue;
                }
                let (cum, present) = &fund_cum[fund];
                let (lo, hi) = if offset >= 0 {
                    (e.day as usize, day as usize)
                } else {
                    (day as usize, e.day as usize)
                };
                if !all_present(&present, lo + 1, hi + 1) || !all_present(&mkt_present, lo + 1, hi + 1)
                {
                    continue;
                }
                let sign = if offset >= 0 { 1.0 } else { -1.0 };
                let fund_growth = (sign * (cum[hi + 1] - cum[lo + 1])).exp();
                let mkt_growth = (sign * (mkt_cum[hi + 1] - mkt_cum[lo + 1])).exp();
                acc += fund_growth - mkt_growth;
                n += 1;
            }
            if n > 0 {
                path.push((offset, acc / n as f64, n));
            }
        }
        let post = path
            .iter()
            .find(|(o, _, _)| *o == params.horizon as i64)
            .map(|&(_, m, _)| m);
        (path, post)
    };

    let all: Vec<usize> = (0..events.len()).collect();
    let (runup_path, runup_post_mean) = path_for(&all);
    let (bubble_path, bubble_post_mean) = path_for(&bubble);

    EventStudy {
        params,
        events,
        bubble,
        runup_path,
        bubble_path,
        runup_post_mean,
        bubble_post_mean,
    }
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::illiquidity::IlliqParams;
    use crate::testkit::tiny_panel;
    use approx::assert_relative_eq;

    #[test]
    fn exp_weights_normalize_and_decay() {
        let w = exp_weights(0.0, 2);
        for v in &w {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let w = exp_weights(0.01, 200);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(w[0] / w[200], std::f64::consts::E.powi(2), epsilon = 1e-10);
        for s in 1..=200 {
            assert!(w[s] < w[s - 1]);
        }
        let w = exp_weights(50.0, 3);
        assert!(w[0] > 0.999_999);
    }

    fn fixture() -> (
        crate::panel::MarketPanel,
        crate::illiquidity::MeasuresSet,
        ImpactParams,
    ) {
        let panel = tiny_panel(120);
        let (measures, _) = crate::illiquidity::MeasuresSet::compute(&panel, IlliqParams::default())
            .unwrap();
        let params = ImpactParams::contemporaneous(0.78, 0.5);
        (panel, measures, params)
    }

    #[test]
    fn decomposition_is_exact() {
        let (panel, measures, params) = fixture();
        let dec = decompose(&panel, &measures, &params, 0.01, 10);
        let mut seen = 0;
        for fund in 0..panel.n_funds() {
            for t in 0..panel.n_days() {
                if let (Some(r), Some(ri), Some(ro)) = (
                    dec.r[fund][t],
                    dec.r_impact[fund][t],
                    dec.r_orth[fund][t],
                ) {
                    assert!((r - (ri + ro)).abs() <= 1e-14, "additive identity");
                    seen += 1;
                }
                if let (Some(rt), Some(rti), Some(rto)) = (
                    dec.rt[fund][t],
                    dec.rt_impact[fund][t],
                    dec.rt_orth[fund][t],
                ) {
                    assert_eq!(rt, rti + rto, "weighted identity is bit-exact");
                }
            }
        }
        assert!(seen > 50, "decomposition produced {seen} rows");
    }

    #[test]
    fn zero_theta_makes_orthogonal_equal_observed() {
        let (panel, measures, _) = fixture();
        let params = ImpactParams::contemporaneous(0.0, 0.5);
        let dec = decompose(&panel, &measures, &params, 0.01, 10);
        for fund in 0..panel.n_funds() {
            for t in 0..panel.n_days() {
                if let (Some(r), Some(ri), Some(ro)) = (
                    dec.r[fund][t],
                    dec.r_impact[fund][t],
                    dec.r_orth[fund][t],
                ) {
                    assert_eq!(ri, 0.0);
                    assert_eq!(ro, r);
                }
            }
        }
    }

    #[test]
    fn degenerate_decomposition_falls_back_to_benchmark() {
        let (panel, measures, _) = fixture();
        let params = ImpactParams::contemporaneous(0.0, 0.5);
        let dec = decompose(&panel, &measures, &params, 0.01, 10);
        let opts = ChasingOpts {
            n_flow_lags: 2,
            fe_time: false,
            cluster: false,
            sample: SampleSplit::All,
        };
        let split = chasing_regression(&panel, &dec, opts).unwrap();
        let bench = chasing_benchmark(&panel, &dec, opts).unwrap();
        assert!(split.beta1.is_none());
        assert!(split.wald.is_none());
        let (b2, _, _) = split.beta2;
        let (b, _, _) = bench.coef_by_name("rt").unwrap();
        assert_relative_eq!(b2, b, epsilon = 1e-12);
    }

    #[test]
    fn ponzi_arithmetic_and_reallocation_oracle() {
        let (panel, measures, params) = fixture();
        let dec = decompose(&panel, &measures, &params, 0.01, 10);
        let ponzi = ponzi_series(&panel, &measures, &dec, 0.2, 0.78);

        let mut checked_flow = 0;
        for fund in 0..panel.n_funds() {
            for t in 0..panel.n_days() - 1 {
                if let Some(rti) = dec.rt_impact[fund][t] {
                    let fp = ponzi.flow[fund][t + 1].unwrap();
                    assert_eq!(fp, 0.2 * rti);
                    if rti == 0.0 {
                        assert_eq!(fp, 0.0);
                    }
                    checked_flow += 1;
                }
            }
        }
        assert!(checked_flow > 20);

        // reallocation: direct summation oracle on every day
        for t in 1..panel.n_days() {
            let mut want = 0.0;
            for fund in 0..panel.n_funds() {
                if let (Some(rp), Some(a)) =
                    (ponzi.ret[fund][t], panel.funds[fund].aum[t - 1])
                {
                    want += rp.abs() * a;
                }
            }
            assert!((ponzi.reallocation[t] - want).abs() < 1e-9);
            assert!(ponzi.reallocation[t] >= 0.0);
        }
        // cumulative is a running sum
        let total: f64 = ponzi.reallocation.iter().sum();
        assert_relative_eq!(
            ponzi.cum_reallocation[panel.n_days() - 1],
            total,
            max_relative = 1e-12
        );
    }

    #[test]
    fn ponzi_example_arithmetic() {
        // beta1 = 0.2, rt_impact = 0.01 -> f^P = 0.002
        assert_relative_eq!(0.2 * 0.01, 0.002, epsilon = 1e-18);
        // R^P with theta=0.78, illiq=0.3, f^P=0.002, eta=0.5
        let rp = 0.78 * 0.3 * signed_power(0.002, 0.5);
        assert_relative_eq!(rp, 0.78 * 0.3 * 0.002f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn market_return_is_aum_weighted() {
        let (panel, _, _) = fixture();
        let mkt = market_return(&panel);
        let t = 40;
        let f1 = &panel.funds[0];
        let f2 = &panel.funds[1];
        let want = (f1.aum[t - 1].unwrap() * f1.ret[t].unwrap()
            + f2.aum[t - 1].unwrap() * f2.ret[t].unwrap())
            / (f1.aum[t - 1].unwrap() + f2.aum[t - 1].unwrap());
        assert_relative_eq!(mkt[t].unwrap(), want, epsilon = 1e-15);
    }

    #[test]
    fn identical_funds_make_deciles_equal() {
        use crate::testkit::fund_grid_panel;
        // same flows and same returns for every fund: decile means of raw
        // returns must coincide and excess returns vanish
        let flow = |_k: usize, t: usize| 0.002 * (0.31 * t as f64).sin();
        let ret = |_k: usize, t: usize, _f: f64| 0.0004 * (0.23 * t as f64).cos();
        let panel = fund_grid_panel(40, 80, &flow, &ret);
        let (measures, _) =
            crate::illiquidity::MeasuresSet::compute(&panel, IlliqParams::default()).unwrap();
        let table = flow_decile_sort(&panel, &measures, SortKey::Flow).unwrap();
        // the illiquid group has only 4 funds, below the cross-section
        // minimum, so only the liquid group reports
        assert!(table.counts[1].iter().all(|&c| c == 0));
        assert!(table.counts[0].iter().all(|&c| c > 0));
        let base = table.mean_raw[0][0];
        for d in 0..10 {
            assert_relative_eq!(table.mean_raw[0][d], base, epsilon = 1e-12);
            assert!(table.mean_excess[0][d].abs() < 1e-12);
        }
    }

    #[test]
    fn flow_coupled_returns_sort_monotonically() {
        use crate::testkit::fund_grid_panel;
        // each fund's return is proportional to its own flow, so higher flow
        // deciles must earn higher same-day returns
        let flow = |k: usize, t: usize| 0.01 * (0.9 * t as f64 + 0.37 * k as f64).sin();
        let ret = |_k: usize, _t: usize, f: f64| 0.3 * f;
        let panel = fund_grid_panel(40, 80, &flow, &ret);
        let (measures, _) =
            crate::illiquidity::MeasuresSet::compute(&panel, IlliqParams::default()).unwrap();
        let table = flow_decile_sort(&panel, &measures, SortKey::Flow).unwrap();
        for d in 1..10 {
            assert!(
                table.mean_raw[0][d] > table.mean_raw[0][d - 1],
                "raw decile means must increase: d={d}"
            );
            assert!(table.mean_excess[0][d] > table.mean_excess[0][d - 1]);
        }
    }

    #[test]
    fn runup_flags_persistent_outperformer_once() {
        use crate::testkit::fund_grid_panel;
        let flow = |_k: usize, _t: usize| 0.0;
        let ret = |k: usize, _t: usize, _f: f64| if k == 7 { 0.005 } else { 0.0 };
        let n_days = 160;
        let n_funds = 40;
        let panel = fund_grid_panel(n_funds, n_days, &flow, &ret);
        let ponzi = PonziSeries {
            beta1: 0.0,
            theta: 0.78,
            flow: vec![vec![Some(0.0); n_days]; n_funds],
            ret: vec![vec![Some(0.0); n_days]; n_funds],
            volume_ratio: vec![None; n_days],
            ratio_flagged: vec![false; n_days],
            reallocation: vec![0.0; n_days],
            cum_reallocation: vec![0.0; n_days],
        };
        let params = RunupParams {
            threshold: 0.5,
            window: 100,
            top_pct: 0.10,
            horizon: 20,
        };
        let study = runup_and_bubble(&panel, &ponzi, params);
        // +0.5% a day compounds to ~65% over the window against a nearly
        // flat market: flagged at the first full window, then blocked by the
        // cool-off for the rest of the sample
        assert_eq!(study.events.len(), 1);
        assert_eq!(study.events[0].fund, 7);
        assert_eq!(study.events[0].day, 100);
        assert_eq!(study.bubble, vec![0]);
        let at0 = study
            .runup_path
            .iter()
            .find(|(o, _, _)| *o == 0)
            .expect("offset 0 present");
        assert_eq!(at0.1, 0.0);
        assert!(study.runup_post_mean.unwrap() > 0.05);
    }

    #[test]
    fn runup_never_flags_market_tracker() {
        let (panel, measures, params) = fixture();
        let dec = decompose(&panel, &measures, &params, 0.01, 10);
        let ponzi = ponzi_series(&panel, &measures, &dec, 0.2, 0.78);
        // window longer than the sample: nothing can be flagged; also a
        // single-fund market tracks itself exactly
        let study = runup_and_bubble(
            &panel,
            &ponzi,
            RunupParams {
                threshold: 0.5,
                window: 200,
                top_pct: 0.1,
                horizon: 20,
            },
        );
        assert!(study.events.is_empty());
        assert!(study.runup_post_mean.is_none());
    }
}
