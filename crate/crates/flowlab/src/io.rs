//! CSV and structured-text input/output.
//!
//! One directory holds one panel: `securities.csv`, `funds.csv`,
//! `holdings.csv`, and optionally `truth.csv` when the panel came from the
//! simulator. All files are UTF-8 with a header row, ISO-8601 dates, and
//! `.` decimal separators; every float is written in a fixed
//! 17-significant-digit format that round-trips exactly, so identical inputs
//! produce byte-identical outputs. Missing values are empty fields.
//!
//! Fit results use a line-oriented text schema versioned by a
//! `schema_version` field (see [`write_fit_text`]).

use crate::analytics::{DecomposedReturns, EventStudy, PonziSeries, SortTable};
use crate::econ::{KernelFit, RegressionFit};
use crate::error::{Error, Result};
use crate::illiquidity::MeasuresSet;
use crate::impact::{AitRow, ImpactSeries};
use crate::panel::{FundRow, HoldingRow, MarketPanel, PanelBuilder, SecurityRow};
use crate::sim::{RecoveryReport, SimTruth};
use crate::util::fmt_g17;
use chrono::NaiveDate;
use std::fs;
use std::io::Write;
use std::path::Path;

// ============================================================
// Small helpers
// ============================================================

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_g17).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_emit(path: &Path, w: &mut csv::Writer<fs::File>, record: &[String]) -> Result<()> {
    w.write_record(record)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))
}

fn csv_finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

struct Columns {
    file: String,
    idx: Vec<usize>,
}

impl Columns {
    /// Locate every required column in the header, by name; a missing one is
    /// reported with the file and column name.
    fn locate(path: &Path, headers: &csv::StringRecord, required: &[&str]) -> Result<Columns> {
        let file = path.display().to_string();
        let mut idx = Vec::with_capacity(required.len());
        for col in required {
            match headers.iter().position(|h| h.trim() == *col) {
                Some(p) => idx.push(p),
                None => {
                    return Err(Error::MissingColumn {
                        file,
                        column: col.to_string(),
                    })
                }
            }
        }
        Ok(Columns { file, idx })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, slot: usize, line: u64) -> Result<&'r str> {
        record.get(self.idx[slot]).ok_or_else(|| Error::Malformed {
            file: self.file.clone(),
            line,
            msg: format!("row has too few fields (needs column #{})", self.idx[slot] + 1),
        })
    }
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_date(file: &str, line: u64, s: &str) -> Result<NaiveDate> {
    s.trim().parse().map_err(|_| Error::Malformed {
        file: file.to_string(),
        line,
        msg: format!("cannot parse `{s}` as an ISO-8601 date"),
    })
}

fn parse_f64(file: &str, line: u64, field: &str, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Malformed {
        file: file.to_string(),
        line,
        msg: format!("cannot parse {field} `{s}` as a number"),
    })
}

fn parse_opt_f64(file: &str, line: u64, field: &str, s: &str) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(None);
    }
    parse_f64(file, line, field, t).map(Some)
}

fn parse_bool(file: &str, line: u64, field: &str, s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Malformed {
            file: file.to_string(),
            line,
            msg: format!("cannot parse {field} `{other}` as a boolean"),
        }),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

// ============================================================
// Panel readers
// ============================================================

pub fn read_securities_csv(path: &Path) -> Result<Vec<SecurityRow>> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?
        .clone();
    let cols = Columns::locate(
        path,
        &headers,
        &[
            "date",
            "security_id",
            "ret",
            "close",
            "volume_usd",
            "market_cap",
            "shares_outstanding",
        ],
    )?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Malformed {
            file: cols.file.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        let line = record_line(&record);
        out.push(SecurityRow {
            date: parse_date(&cols.file, line, cols.get(&record, 0, line)?)?,
            id: cols.get(&record, 1, line)?.to_string(),
            ret: parse_opt_f64(&cols.file, line, "ret", cols.get(&record, 2, line)?)?,
            close: parse_f64(&cols.file, line, "close", cols.get(&record, 3, line)?)?,
            volume_usd: parse_f64(&cols.file, line, "volume_usd", cols.get(&record, 4, line)?)?,
            market_cap: parse_f64(&cols.file, line, "market_cap", cols.get(&record, 5, line)?)?,
            shares_outstanding: parse_f64(
                &cols.file,
                line,
                "shares_outstanding",
                cols.get(&record, 6, line)?,
            )?,
        });
    }
    Ok(out)
}

pub fn read_funds_csv(path: &Path) -> Result<Vec<FundRow>> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?
        .clone();
    let cols = Columns::locate(
        path,
        &headers,
        &["date", "fund_id", "nav_price", "shares_outstanding", "is_active"],
    )?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Malformed {
            file: cols.file.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        let line = record_line(&record);
        out.push(FundRow {
            date: parse_date(&cols.file, line, cols.get(&record, 0, line)?)?,
            id: cols.get(&record, 1, line)?.to_string(),
            nav_price: parse_f64(&cols.file, line, "nav_price", cols.get(&record, 2, line)?)?,
            shares_outstanding: parse_f64(
                &cols.file,
                line,
                "shares_outstanding",
                cols.get(&record, 3, line)?,
            )?,
            is_active: parse_bool(&cols.file, line, "is_active", cols.get(&record, 4, line)?)?,
        });
    }
    Ok(out)
}

pub fn read_holdings_csv(path: &Path) -> Result<Vec<HoldingRow>> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?
        .clone();
    let cols = Columns::locate(
        path,
        &headers,
        &["date", "fund_id", "security_id", "dollar_position"],
    )?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Malformed {
            file: cols.file.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
        let line = record_line(&record);
        out.push(HoldingRow {
            date: parse_date(&cols.file, line, cols.get(&record, 0, line)?)?,
            fund: cols.get(&record, 1, line)?.to_string(),
            sec: cols.get(&record, 2, line)?.to_string(),
            dollar_position: parse_f64(
                &cols.file,
                line,
                "dollar_position",
                cols.get(&record, 3, line)?,
            )?,
        });
    }
    Ok(out)
}

/// Read `securities.csv`, `funds.csv`, `holdings.csv` from a directory,
/// build the panel, and derive flows.
pub fn load_panel(dir: &Path) -> Result<MarketPanel> {
    let mut builder = PanelBuilder::new();
    builder.securities = read_securities_csv(&dir.join("securities.csv"))?;
    builder.funds = read_funds_csv(&dir.join("funds.csv"))?;
    builder.holdings = read_holdings_csv(&dir.join("holdings.csv"))?;
    let mut panel = builder.build()?;
    crate::panel::compute_flows(&mut panel);
    Ok(panel)
}

// ============================================================
// Panel writers
// ============================================================

/// Write the three panel CSVs into a directory.
pub fn write_panel_dir(dir: &Path, panel: &MarketPanel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let days = panel.calendar.days();

    let path = dir.join("securities.csv");
    let mut w = csv_writer(&path)?;
    csv_emit(
        &path,
        &mut w,
        &[
            "date".into(),
            "security_id".into(),
            "ret".into(),
            "close".into(),
            "volume_usd".into(),
            "market_cap".into(),
            "shares_outstanding".into(),
        ],
    )?;
    for (t, date) in days.iter().enumerate() {
        for sec in &panel.securities {
            if sec.close[t].is_none() && sec.ret[t].is_none() {
                continue;
            }
            csv_emit(
                &path,
                &mut w,
                &[
                    date.to_string(),
                    sec.name.clone(),
                    fmt_opt(sec.ret[t]),
                    fmt_opt(sec.close[t]),
                    fmt_opt(sec.volume[t]),
                    fmt_opt(sec.market_cap[t]),
                    fmt_opt(sec.shares_out[t]),
                ],
            )?;
        }
    }
    csv_finish(&path, w)?;

    let path = dir.join("funds.csv");
    let mut w = csv_writer(&path)?;
    csv_emit(
        &path,
        &mut w,
        &[
            "date".into(),
            "fund_id".into(),
            "nav_price".into(),
            "shares_outstanding".into(),
            "is_active".into(),
        ],
    )?;
    for (t, date) in days.iter().enumerate() {
        for fund in &panel.funds {
            let (Some(nav), Some(shares)) = (fund.nav[t], fund.shares[t]) else {
                continue;
            };
            csv_emit(
                &path,
                &mut w,
                &[
                    date.to_string(),
                    fund.name.clone(),
                    fmt_g17(nav),
                    fmt_g17(shares),
                    fund.active[t].unwrap_or(false).to_string(),
                ],
            )?;
        }
    }
    csv_finish(&path, w)?;

    let path = dir.join("holdings.csv");
    let mut w = csv_writer(&path)?;
    csv_emit(
        &path,
        &mut w,
        &[
            "date".into(),
            "fund_id".into(),
            "security_id".into(),
            "dollar_position".into(),
        ],
    )?;
    for (t, date) in days.iter().enumerate() {
        for (i, fund) in panel.funds.iter().enumerate() {
            let Some(day) = panel.holdings(i as u32, t as u32) else {
                continue;
            };
            // forward-filled days are derived, not reported holdings
            if day.forward_filled {
                continue;
            }
            for h in &day.holdings {
                csv_emit(
                    &path,
                    &mut w,
                    &[
                        date.to_string(),
                        fund.name.clone(),
                        panel.securities[h.sec as usize].name.clone(),
                        fmt_g17(h.dollars),
                    ],
                )?;
            }
        }
    }
    csv_finish(&path, w)
}

/// Write simulator ground truth: per fund-day return and flow components.
pub fn write_truth_csv(dir: &Path, panel: &MarketPanel, truth: &SimTruth) -> Result<()> {
    let path = dir.join("truth.csv");
    let mut w = csv_writer(&path)?;
    csv_emit(
        &path,
        &mut w,
        &[
            "date".into(),
            "fund_id".into(),
            "ret_fundamental".into(),
            "ret_impact".into(),
            "flow_chasing".into(),
            "flow_noise".into(),
        ],
    )?;
    for (t, date) in panel.calendar.days().iter().enumerate() {
        for (i, fund) in panel.funds.iter().enumerate() {
            if truth.ret_fundamental[i][t].is_none() && truth.flow_chasing[i][t].is_none() {
                continue;
            }
            csv_emit(
                &path,
                &mut w,
                &[
                    date.to_string(),
                    fund.name.clone(),
                    fmt_opt(truth.ret_fundamental[i][t]),
                    fmt_opt(truth.ret_impact[i][t]),
                    fmt_opt(truth.flow_chasing[i][t]),
                    fmt_opt(truth.flow_noise[i][t]),
                ],
            )?;
        }
    }
    csv_finish(&path, w)
}

// ============================================================
// Result writers
// ============================================================

pub fn write_measures_csv(path: &Path, panel: &MarketPanel, measures: &MeasuresSet) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &[
            "date".into(),
            "fund_id".into(),
            "illiq".into(),
            "conc".into(),
            "size".into(),
            "illiq_direct".into(),
            "illiq_power".into(),
            "route_gap".into(),
        ],
    )?;
    for m in &measures.rows {
        csv_emit(
            path,
            &mut w,
            &[
                panel.calendar.date(m.day).to_string(),
                panel.funds[m.fund as usize].name.clone(),
                fmt_g17(m.illiq),
                fmt_g17(m.conc),
                fmt_g17(m.size),
                fmt_g17(m.illiq_direct),
                fmt_g17(m.illiq_power),
                fmt_g17(m.route_gap),
            ],
        )?;
    }
    csv_finish(path, w)
}

pub fn write_impact_csv(path: &Path, panel: &MarketPanel, series: &ImpactSeries) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &[
            "date".into(),
            "fund_id".into(),
            "r_self".into(),
            "r_total".into(),
        ],
    )?;
    for row in &series.rows {
        csv_emit(
            path,
            &mut w,
            &[
                panel.calendar.date(row.day).to_string(),
                panel.funds[row.fund as usize].name.clone(),
                fmt_opt(row.r_self),
                fmt_opt(row.r_total),
            ],
        )?;
    }
    csv_finish(path, w)
}

pub fn write_ait_csv(path: &Path, panel: &MarketPanel, rows: &[AitRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &[
            "date".into(),
            "security_id".into(),
            "ait".into(),
            "ait_hat".into(),
        ],
    )?;
    for row in rows {
        csv_emit(
            path,
            &mut w,
            &[
                panel.calendar.date(row.day).to_string(),
                panel.securities[row.sec as usize].name.clone(),
                fmt_opt(row.ait),
                fmt_opt(row.ait_hat),
            ],
        )?;
    }
    csv_finish(path, w)
}

/// Cumulative distributed-lag coefficients: lag, estimate, standard error.
pub fn write_cumulative_csv(path: &Path, cum: &[(f64, f64)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &["lag".into(), "cumulative".into(), "se".into()],
    )?;
    for (lag, (est, se)) in cum.iter().enumerate() {
        csv_emit(
            path,
            &mut w,
            &[lag.to_string(), fmt_g17(*est), fmt_g17(*se)],
        )?;
    }
    csv_finish(path, w)
}

pub fn write_decomposition_csv(
    path: &Path,
    panel: &MarketPanel,
    dec: &DecomposedReturns,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &[
            "date".into(),
            "fund_id".into(),
            "r".into(),
            "r_impact".into(),
            "r_orth".into(),
            "rt".into(),
            "rt_impact".into(),
            "rt_orth".into(),
        ],
    )?;
    for (t, date) in panel.calendar.days().iter().enumerate() {
        for (i, fund) in panel.funds.iter().enumerate() {
            if dec.r[i][t].is_none() && dec.rt[i][t].is_none() {
                continue;
            }
            csv_emit(
                path,
                &mut w,
                &[
                    date.to_string(),
                    fund.name.clone(),
                    fmt_opt(dec.r[i][t]),
                    fmt_opt(dec.r_impact[i][t]),
                    fmt_opt(dec.r_orth[i][t]),
                    fmt_opt(dec.rt[i][t]),
                    fmt_opt(dec.rt_impact[i][t]),
                    fmt_opt(dec.rt_orth[i][t]),
                ],
            )?;
        }
    }
    csv_finish(path, w)
}

/// Two files: per fund-day ponzi flows/returns, and the per-day aggregates.
pub fn write_ponzi_csv(dir: &Path, panel: &MarketPanel, ponzi: &PonziSeries) -> Result<()> {
    let path = dir.join("ponzi.csv");
    let mut w = csv_writer(&path)?;
    csv_emit(
        &path,
        &mut w,
        &[
            "date".into(),
            "fund_id".into(),
            "ponzi_flow".into(),
            "ponzi_ret".into(),
        ],
    )?;
    for (t, date) in panel.calendar.days().iter().enumerate() {
        for (i, fund) in panel.funds.iter().enumerate() {
            if ponzi.flow[i][t].is_none() && ponzi.ret[i][t].is_none() {
                continue;
            }
            csv_emit(
                &path,
                &mut w,
                &[
                    date.to_string(),
                    fund.name.clone(),
                    fmt_opt(ponzi.flow[i][t]),
                    fmt_opt(ponzi.ret[i][t]),
                ],
            )?;
        }
    }
    csv_finish(&path, w)?;

    let path = dir.join("ponzi_daily.csv");
    let mut w = csv_writer(&path)?;
    csv_emit(
        &path,
        &mut w,
        &[
            "date".into(),
            "volume_ratio".into(),
            "ratio_flagged".into(),
            "reallocation_usd".into(),
            "cum_reallocation_usd".into(),
        ],
    )?;
    for (t, date) in panel.calendar.days().iter().enumerate() {
        csv_emit(
            &path,
            &mut w,
            &[
                date.to_string(),
                fmt_opt(ponzi.volume_ratio[t]),
                ponzi.ratio_flagged[t].to_string(),
                fmt_g17(ponzi.reallocation[t]),
                fmt_g17(ponzi.cum_reallocation[t]),
            ],
        )?;
    }
    csv_finish(&path, w)
}

pub fn write_sort_csv(path: &Path, table: &SortTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &[
            "group".into(),
            "decile".into(),
            "mean_raw".into(),
            "mean_excess".into(),
            "mean_adjusted".into(),
            "count".into(),
        ],
    )?;
    for g in 0..2 {
        let name = if g == 1 { "high_illiq" } else { "liquid" };
        for d in 0..10 {
            let cell = |x: f64| if x.is_nan() { String::new() } else { fmt_g17(x) };
            csv_emit(
                path,
                &mut w,
                &[
                    name.to_string(),
                    (d + 1).to_string(),
                    cell(table.mean_raw[g][d]),
                    cell(table.mean_excess[g][d]),
                    cell(table.mean_adjusted[g][d]),
                    table.counts[g][d].to_string(),
                ],
            )?;
        }
    }
    csv_finish(path, w)
}

pub fn write_events_csv(path: &Path, panel: &MarketPanel, study: &EventStudy) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &[
            "fund_id".into(),
            "date".into(),
            "cum_ponzi_flow".into(),
            "is_bubble".into(),
        ],
    )?;
    for (idx, e) in study.events.iter().enumerate() {
        csv_emit(
            path,
            &mut w,
            &[
                panel.funds[e.fund as usize].name.clone(),
                panel.calendar.date(e.day).to_string(),
                fmt_g17(e.cum_ponzi),
                study.bubble.contains(&idx).to_string(),
            ],
        )?;
    }
    csv_finish(path, w)
}

/// Aligned mean cumulative-excess-return paths for the run-up set and the
/// bubble subset, outer-joined on the event-time offset.
pub fn write_event_paths_csv(path: &Path, study: &EventStudy) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &[
            "offset".into(),
            "runup_mean".into(),
            "runup_n".into(),
            "bubble_mean".into(),
            "bubble_n".into(),
        ],
    )?;
    let lo = -(study.params.window as i64);
    let hi = study.params.horizon as i64;
    for offset in lo..=hi {
        let find = |p: &[(i64, f64, usize)]| p.iter().find(|(o, _, _)| *o == offset).copied();
        let a = find(&study.runup_path);
        let b = find(&study.bubble_path);
        if a.is_none() && b.is_none() {
            continue;
        }
        csv_emit(
            path,
            &mut w,
            &[
                offset.to_string(),
                a.map(|(_, m, _)| fmt_g17(m)).unwrap_or_default(),
                a.map(|(_, _, n)| n.to_string()).unwrap_or_default(),
                b.map(|(_, m, _)| fmt_g17(m)).unwrap_or_default(),
                b.map(|(_, _, n)| n.to_string()).unwrap_or_default(),
            ],
        )?;
    }
    csv_finish(path, w)
}

// ============================================================
// Fit text schema
// ============================================================

fn text_writer(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufWriter::new(file))
}

fn text_finish(path: &Path, mut w: std::io::BufWriter<fs::File>) -> Result<()> {
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Linear fit, schema_version 1:
///
/// ```text
/// schema_version = 1
/// kind = linear_fit
/// title = <free text>
/// n_obs = <int>
/// k_params = <int>
/// r2 = <g17>
/// within_r2 = <g17>            (only with fixed effects)
/// cov_clipped = true|false
/// <extra key> = <value>        (caller-provided lines)
/// coef <name> <estimate> <se> <t>
/// ```
pub fn write_fit_text(
    path: &Path,
    title: &str,
    fit: &RegressionFit,
    extras: &[(String, String)],
) -> Result<()> {
    let mut w = text_writer(path)?;
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "schema_version = 1").map_err(io_err)?;
    writeln!(w, "kind = linear_fit").map_err(io_err)?;
    writeln!(w, "title = {title}").map_err(io_err)?;
    writeln!(w, "n_obs = {}", fit.n_obs).map_err(io_err)?;
    writeln!(w, "k_params = {}", fit.k_params).map_err(io_err)?;
    writeln!(w, "r2 = {}", fmt_g17(fit.r2)).map_err(io_err)?;
    if fit.within_r2.is_finite() {
        writeln!(w, "within_r2 = {}", fmt_g17(fit.within_r2)).map_err(io_err)?;
    }
    writeln!(w, "cov_clipped = {}", fit.cov_clipped).map_err(io_err)?;
    for (dim, n) in fit.cluster_groups.iter().enumerate() {
        writeln!(w, "cluster_groups_{dim} = {n}").map_err(io_err)?;
    }
    for (key, value) in extras {
        writeln!(w, "{key} = {value}").map_err(io_err)?;
    }
    for (j, name) in fit.names.iter().enumerate() {
        writeln!(
            w,
            "coef {name} {} {} {}",
            fmt_g17(fit.coef[j]),
            fmt_g17(fit.se[j]),
            fmt_g17(fit.t[j]),
        )
        .map_err(io_err)?;
    }
    text_finish(path, w)
}

/// Kernel fit, schema_version 1: like the linear fit but with convergence
/// diagnostics and `coef <name> <estimate> <se>` lines.
pub fn write_kernel_fit_text(path: &Path, title: &str, fit: &KernelFit) -> Result<()> {
    let mut w = text_writer(path)?;
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "schema_version = 1").map_err(io_err)?;
    writeln!(w, "kind = kernel_fit").map_err(io_err)?;
    writeln!(w, "title = {title}").map_err(io_err)?;
    writeln!(w, "n_obs = {}", fit.n_obs).map_err(io_err)?;
    writeln!(w, "converged = {}", fit.converged).map_err(io_err)?;
    writeln!(w, "iterations = {}", fit.iterations).map_err(io_err)?;
    writeln!(w, "rss = {}", fmt_g17(fit.rss)).map_err(io_err)?;
    writeln!(w, "grad_norm = {}", fmt_g17(fit.grad_norm)).map_err(io_err)?;
    for (j, name) in fit.names.iter().enumerate() {
        writeln!(
            w,
            "coef {name} {} {}",
            fmt_g17(fit.params[j]),
            fmt_g17(fit.se[j]),
        )
        .map_err(io_err)?;
    }
    text_finish(path, w)
}

pub fn write_recovery_text(path: &Path, report: &RecoveryReport) -> Result<()> {
    let mut w = text_writer(path)?;
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "schema_version = 1").map_err(io_err)?;
    writeln!(w, "kind = recovery_report").map_err(io_err)?;
    writeln!(w, "n_seeds = {}", report.n_seeds).map_err(io_err)?;
    writeln!(w, "n_failures = {}", report.failures.len()).map_err(io_err)?;
    for stat in &report.stats {
        let coverage = stat
            .coverage
            .map(fmt_g17)
            .unwrap_or_else(|| "none".to_string());
        writeln!(
            w,
            "stat {} truth {} mean {} median {} bias {} coverage {} n {}",
            stat.name,
            fmt_g17(stat.truth),
            fmt_g17(stat.mean),
            fmt_g17(stat.median),
            fmt_g17(stat.bias),
            coverage,
            stat.estimates.len(),
        )
        .map_err(io_err)?;
    }
    for f in &report.failures {
        writeln!(w, "failure {f}").map_err(io_err)?;
    }
    text_finish(path, w)
}

// ============================================================
// Panel summary
// ============================================================

pub struct SummaryRow {
    pub name: String,
    pub n: usize,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Pooled fund-day summary: count, median, and 5th/95th percentiles of AUM,
/// holdings count, relative flow, fund illiquidity, concentration, size, and
/// the market-adjusted daily return (return minus the AUM-weighted mean fund
/// return).
pub fn summarize(panel: &MarketPanel, measures: &MeasuresSet) -> Result<Summary> {
    if panel.n_funds() == 0 || panel.n_days() == 0 {
        return Err(Error::Invalid("summarize: empty panel".into()));
    }
    let mkt = crate::analytics::market_return(panel);
    let mut aum = Vec::new();
    let mut n_holdings = Vec::new();
    let mut flow = Vec::new();
    let mut adj_ret = Vec::new();
    for (i, fund) in panel.funds.iter().enumerate() {
        for t in 0..panel.n_days() {
            if let Some(a) = fund.aum[t] {
                aum.push(a);
            }
            if let Some(day) = panel.holdings(i as u32, t as u32) {
                n_holdings.push(day.holdings.len() as f64);
            }
            if let Some(f) = fund.flow[t] {
                flow.push(f);
            }
            if let (Some(r), Some(m)) = (fund.ret[t], mkt[t]) {
                adj_ret.push(r - m);
            }
        }
    }
    let mut illiq = Vec::new();
    let mut conc = Vec::new();
    let mut size = Vec::new();
    for m in &measures.rows {
        illiq.push(m.illiq);
        conc.push(m.conc);
        size.push(m.size);
    }
    if aum.is_empty() {
        return Err(Error::Invalid(
            "summarize: panel has no fund-day observations".into(),
        ));
    }

    let build = |name: &str, mut values: Vec<f64>| -> SummaryRow {
        values.retain(|v| v.is_finite());
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let n = values.len();
        if n == 0 {
            return SummaryRow {
                name: name.to_string(),
                n,
                median: f64::NAN,
                p5: f64::NAN,
                p95: f64::NAN,
            };
        }
        SummaryRow {
            name: name.to_string(),
            n,
            median: crate::util::quantile_sorted(&values, 0.5),
            p5: crate::util::quantile_sorted(&values, 0.05),
            p95: crate::util::quantile_sorted(&values, 0.95),
        }
    };
    Ok(Summary {
        rows: vec![
            build("aum_usd", aum),
            build("holdings_count", n_holdings),
            build("flow_rel", flow),
            build("illiquidity", illiq),
            build("concentration", conc),
            build("size", size),
            build("market_adjusted_return", adj_ret),
        ],
    })
}

pub fn write_summary_csv(path: &Path, summary: &Summary) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_emit(
        path,
        &mut w,
        &[
            "measure".into(),
            "n".into(),
            "median".into(),
            "p5".into(),
            "p95".into(),
        ],
    )?;
    for row in &summary.rows {
        let cell = |x: f64| if x.is_nan() { String::new() } else { fmt_g17(x) };
        csv_emit(
            path,
            &mut w,
            &[
                row.name.clone(),
                row.n.to_string(),
                cell(row.median),
                cell(row.p5),
                cell(row.p95),
            ],
        )?;
    }
    csv_finish(path, w)
}

// ============================================================
// Tests
// ============================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::tiny_panel;

    #[test]
    fn panel_roundtrips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let panel = tiny_panel(40);
        write_panel_dir(dir.path(), &panel).unwrap();
        let back = load_panel(dir.path()).unwrap();
        assert_eq!(back.n_days(), panel.n_days());
        assert_eq!(back.n_funds(), panel.n_funds());
        assert_eq!(back.n_securities(), panel.n_securities());
        for i in 0..panel.n_funds() {
            assert_eq!(back.funds[i].nav, panel.funds[i].nav);
            assert_eq!(back.funds[i].shares, panel.funds[i].shares);
            assert_eq!(back.funds[i].flow, panel.funds[i].flow);
        }
        for n in 0..panel.n_securities() {
            assert_eq!(back.securities[n].ret, panel.securities[n].ret);
            assert_eq!(back.securities[n].vol, panel.securities[n].vol);
        }
    }

    #[test]
    fn writes_are_byte_identical() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let panel = tiny_panel(30);
        write_panel_dir(dir1.path(), &panel).unwrap();
        write_panel_dir(dir2.path(), &panel).unwrap();
        for file in ["securities.csv", "funds.csv", "holdings.csv"] {
            let a = fs::read(dir1.path().join(file)).unwrap();
            let b = fs::read(dir2.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between reruns");
        }
    }

    #[test]
    fn missing_column_names_file_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("securities.csv");
        fs::write(&path, "date,security_id,ret,close,volume_usd,market_cap\n").unwrap();
        let err = read_securities_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("securities.csv"), "message: {msg}");
        assert!(msg.contains("shares_outstanding"), "message: {msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn malformed_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("funds.csv");
        fs::write(
            &path,
            "date,fund_id,nav_price,shares_outstanding,is_active\n\
             2024-01-01,F1,10.0,1000,true\n\
             2024-01-02,F1,oops,1000,true\n",
        )
        .unwrap();
        let err = read_funds_csv(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "message: {msg}");
        assert!(msg.contains("nav_price"), "message: {msg}");
    }

    #[test]
    fn summary_single_row_panel() {
        let panel = tiny_panel(40);
        let (measures, _) = crate::illiquidity::MeasuresSet::compute(
            &panel,
            crate::illiquidity::IlliqParams::default(),
        )
        .unwrap();
        let summary = summarize(&panel, &measures).unwrap();
        assert_eq!(summary.rows.len(), 7);
        let aum = &summary.rows[0];
        assert!(aum.n > 0);
        assert!(aum.p5 <= aum.median && aum.median <= aum.p95);
    }

    #[test]
    fn fit_text_is_deterministic() {
        use crate::econ::{ols_clustered, Design};
        use ndarray::Array2;
        let n = 50;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                1.0
            } else {
                (i as f64 * 0.37).sin()
            }
        });
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 2.0 * (i as f64 * 0.37).sin())
            .collect();
        let fit =
            ols_clustered(Design::new(y, x, vec!["const".into(), "x".into()])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("fit1.txt");
        let p2 = dir.path().join("fit2.txt");
        write_fit_text(&p1, "demo", &fit, &[("note".into(), "extra".into())]).unwrap();
        write_fit_text(&p2, "demo", &fit, &[("note".into(), "extra".into())]).unwrap();
        let a = fs::read_to_string(&p1).unwrap();
        assert_eq!(a, fs::read_to_string(&p2).unwrap());
        assert!(a.starts_with("schema_version = 1\nkind = linear_fit\n"));
        assert!(a.contains("coef x "));
        assert!(a.contains("note = extra"));
    }
}
