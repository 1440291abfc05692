//! Long-format panel CSV: one row per (unit, period, outcome).
//!
//! Required columns are `unit_id`, `period`, `outcome_id`, `value` and
//! `treated`. Covariate and offset columns are named in the run config and
//! read from whichever rows of a (unit, period) carry them. A `value` of
//! `NA` or an empty field marks the record as missing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use tensorcf_causal::{ControlOutcome, NamedMatrix, PanelCovariates, PanelDataset, Transform};

use crate::config::RunConfig;
use crate::IoError;

/// Outcome name, values and missing mask.
type Layer<'a> = (&'a str, &'a DMatrix<f64>, Option<&'a DMatrix<bool>>);

const REQUIRED: [&str; 5] = ["unit_id", "period", "outcome_id", "value", "treated"];

/// A (unit, period, outcome) triple with no usable record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Gap {
    pub unit: String,
    pub period: i64,
    pub outcome: String,
}

/// What was found while assembling the panel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapReport {
    /// Absent or `NA` records, in unit, period, outcome order.
    pub gaps: Vec<Gap>,
    /// Rows whose outcome is neither the primary nor a listed control.
    pub ignored_rows: usize,
}

impl GapReport {
    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub dataset: PanelDataset,
    pub report: GapReport,
}

struct Columns {
    unit: usize,
    period: usize,
    outcome: usize,
    value: usize,
    treated: usize,
    covariates: Vec<usize>,
    offset: Option<usize>,
}

impl Columns {
    fn locate(headers: &csv::StringRecord, cfg: &RunConfig) -> Result<Self, IoError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| IoError::Parse { line: 1, message: format!("missing column '{name}'") })
        };
        let [unit, period, outcome, value, treated] = REQUIRED.map(find);
        Ok(Self {
            unit: unit?,
            period: period?,
            outcome: outcome?,
            value: value?,
            treated: treated?,
            covariates: cfg.covariates.unit_time.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
            offset: cfg.covariates.offset.as_deref().map(find).transpose()?,
        })
    }
}

fn is_na(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na")
}

fn number(field: &str, what: &str, line: u64) -> Result<f64, IoError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| IoError::Parse { line, message: format!("{what} '{field}' is not a number") })?;
    if !v.is_finite() {
        return Err(IoError::Parse { line, message: format!("{what} '{field}' is not finite") });
    }
    Ok(v)
}

struct Record {
    value: Option<f64>,
    treated: bool,
    line: u64,
}

/// Load a panel file; see [`read_panel`].
pub fn load_panel(path: &Path, cfg: &RunConfig) -> Result<LoadedPanel, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    read_panel(file, cfg)
}

/// Assemble dense `N x T` matrices per outcome from long-format rows.
/// Units are sorted as strings and periods numerically. Absent or `NA`
/// primary records become unrecorded cells, absent control records become
/// entries of that control's missing mask, and both are listed in the gap
/// report. Duplicate triples and malformed numbers are errors that carry
/// the offending line numbers (the header is line 1).
pub fn read_panel<R: Read>(reader: R, cfg: &RunConfig) -> Result<LoadedPanel, IoError> {
    if cfg.primary_outcome.is_empty() {
        return Err(IoError::Config("primary_outcome is required".into()));
    }
    let transform = cfg.transform()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| IoError::Parse { line: 1, message: e.to_string() })?.clone();
    let cols = Columns::locate(&headers, cfg)?;

    let outcome_index: HashMap<&str, usize> = std::iter::once(cfg.primary_outcome.as_str())
        .chain(cfg.control_outcomes.iter().map(String::as_str))
        .enumerate()
        .map(|(k, name)| (name, k))
        .collect();
    let mut records: BTreeMap<(String, i64, usize), Record> = BTreeMap::new();
    let mut units = BTreeSet::new();
    let mut periods = BTreeSet::new();
    let mut covariates: HashMap<(String, i64), Vec<Option<f64>>> = HashMap::new();
    let mut offsets: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    let mut report = GapReport::default();

    for row in rdr.records() {
        let row =
            row.map_err(|e| IoError::Parse { line: e.position().map_or(0, |p| p.line()), message: e.to_string() })?;
        let line = row.position().map_or(0, |p| p.line());
        let unit = row[cols.unit].to_string();
        if unit.is_empty() {
            return Err(IoError::Parse { line, message: "empty unit_id".into() });
        }
        let period: i64 = row[cols.period].parse().map_err(|_| IoError::Parse {
            line,
            message: format!("period '{}' is not an integer", &row[cols.period]),
        })?;
        units.insert(unit.clone());
        periods.insert(period);

        let covs = covariates.entry((unit.clone(), period)).or_insert_with(|| vec![None; cols.covariates.len()]);
        for (slot, &c) in covs.iter_mut().zip(&cols.covariates) {
            if !is_na(&row[c]) {
                let v = number(&row[c], &format!("covariate '{}'", &headers[c]), line)?;
                if slot.is_some_and(|old| old != v) {
                    return Err(IoError::Parse {
                        line,
                        message: format!(
                            "covariate '{}' disagrees with an earlier row for this unit and period",
                            &headers[c]
                        ),
                    });
                }
                *slot = Some(v);
            }
        }
        if let Some(c) = cols.offset {
            if !is_na(&row[c]) {
                let v = number(&row[c], "offset", line)?;
                match offsets.get(&unit) {
                    Some(&(old, first)) if old != v => {
                        return Err(IoError::Parse {
                            line,
                            message: format!("offset for unit '{unit}' differs from line {first}"),
                        })
                    }
                    Some(_) => {}
                    None => {
                        offsets.insert(unit.clone(), (v, line));
                    }
                }
            }
        }

        let outcome = &row[cols.outcome];
        let Some(&k) = outcome_index.get(outcome) else {
            report.ignored_rows += 1;
            continue;
        };
        let value = if is_na(&row[cols.value]) { None } else { Some(number(&row[cols.value], "value", line)?) };
        let treated = match row[cols.treated].trim() {
            "1" => true,
            "0" | "" => false,
            other => {
                return Err(IoError::Parse { line, message: format!("treated must be 0 or 1, got '{other}'") });
            }
        };
        if treated && k != 0 {
            return Err(IoError::Parse {
                line,
                message: format!("control outcome '{outcome}' cannot be marked treated"),
            });
        }
        let key = (unit.clone(), period, k);
        if let Some(prev) = records.get(&key) {
            return Err(IoError::Parse {
                line,
                message: format!(
                    "duplicate record for unit '{unit}', period {period}, outcome '{outcome}' (first at line {})",
                    prev.line
                ),
            });
        }
        records.insert(key, Record { value, treated, line });
    }
    if report.ignored_rows > 0 {
        log::warn!("ignored {} rows with outcomes not named in the config", report.ignored_rows);
    }

    let unit_ids: Vec<String> = units.into_iter().collect();
    let periods: Vec<i64> = periods.into_iter().collect();
    let (n, t, k_total) = (unit_ids.len(), periods.len(), 1 + cfg.control_outcomes.len());
    if n == 0 {
        return Err(IoError::Input("panel file has no data rows".into()));
    }
    let outcome_names: Vec<&str> =
        std::iter::once(cfg.primary_outcome.as_str()).chain(cfg.control_outcomes.iter().map(String::as_str)).collect();

    let mut values = vec![DMatrix::zeros(n, t); k_total];
    let mut missing = vec![DMatrix::from_element(n, t, false); k_total];
    let mut w = DMatrix::from_element(n, t, false);
    for (i, unit) in unit_ids.iter().enumerate() {
        for (p, &period) in periods.iter().enumerate() {
            for k in 0..k_total {
                match records.get(&(unit.clone(), period, k)) {
                    Some(Record { value: Some(v), treated, .. }) => {
                        values[k][(i, p)] = *v;
                        w[(i, p)] |= *treated && k == 0;
                    }
                    other => {
                        if let Some(r) = other {
                            w[(i, p)] |= r.treated && k == 0;
                        }
                        missing[k][(i, p)] = true;
                        report.gaps.push(Gap { unit: unit.clone(), period, outcome: outcome_names[k].to_string() });
                    }
                }
            }
        }
    }

    let mut covariate_values = PanelCovariates::default();
    for (c, name) in cfg.covariates.unit_time.iter().enumerate() {
        let mut m = DMatrix::zeros(n, t);
        for (i, unit) in unit_ids.iter().enumerate() {
            for (p, &period) in periods.iter().enumerate() {
                m[(i, p)] = covariates.get(&(unit.clone(), period)).and_then(|v| v[c]).ok_or_else(|| {
                    IoError::Input(format!("covariate '{name}' missing for unit '{unit}', period {period}"))
                })?;
            }
        }
        covariate_values.unit_time.push(NamedMatrix { name: name.clone(), values: m });
    }
    let offsets = match &cfg.covariates.offset {
        Some(name) => Some(
            unit_ids
                .iter()
                .map(|u| {
                    offsets
                        .get(u)
                        .map(|&(v, _)| v)
                        .ok_or_else(|| IoError::Input(format!("offset '{name}' missing for unit '{u}'")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };

    let mut values = values.into_iter();
    let mut missing = missing.into_iter();
    let y_obs = values.next().expect("primary layer");
    let y_missing = missing.next().expect("primary layer");
    let controls = cfg
        .control_outcomes
        .iter()
        .zip(values.zip(missing))
        .map(|(name, (v, m))| ControlOutcome {
            name: name.clone(),
            values: v,
            missing: m.iter().any(|&b| b).then_some(m),
        })
        .collect();
    let dataset = PanelDataset {
        unit_ids,
        periods,
        primary_name: cfg.primary_outcome.clone(),
        y_obs,
        y_missing: y_missing.iter().any(|&b| b).then_some(y_missing),
        w,
        controls,
        covariates: covariate_values,
        offsets,
        transform,
    };
    dataset.validate()?;
    Ok(LoadedPanel { dataset, report })
}

/// Write `d` in the long format read by [`read_panel`]. Unrecorded cells
/// are omitted. Covariates and offsets go in columns named after them;
/// the offset column is called `offset`. Unit and period covariate blocks
/// (`covariates.unit`, `covariates.time`) have no long-format column and
/// are rejected.
pub fn export_panel<W: Write>(d: &PanelDataset, writer: W) -> Result<(), IoError> {
    if d.covariates.unit.is_some() || d.covariates.time.is_some() {
        return Err(IoError::Input(
            "unit-level and period-level covariate blocks cannot be exported in long format".into(),
        ));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(d.covariates.unit_time.iter().map(|c| c.name.as_str()));
    if d.offsets.is_some() {
        header.push("offset");
    }
    wtr.write_record(&header)?;
    let layers: Vec<Layer> = std::iter::once((d.primary_name.as_str(), &d.y_obs, d.y_missing.as_ref()))
        .chain(d.controls.iter().map(|c| (c.name.as_str(), &c.values, c.missing.as_ref())))
        .collect();
    for (i, unit) in d.unit_ids.iter().enumerate() {
        for (p, period) in d.periods.iter().enumerate() {
            for (k, (name, values, missing)) in layers.iter().enumerate() {
                let absent = missing.is_some_and(|m| m[(i, p)]);
                // A treated cell without a record keeps its flag on an NA row.
                if absent && !(k == 0 && d.w[(i, p)]) {
                    continue;
                }
                let mut rec = vec![
                    unit.clone(),
                    period.to_string(),
                    name.to_string(),
                    if absent { "NA".into() } else { values[(i, p)].to_string() },
                    u8::from(k == 0 && d.w[(i, p)]).to_string(),
                ];
                rec.extend(d.covariates.unit_time.iter().map(|c| c.values[(i, p)].to_string()));
                if let Some(off) = &d.offsets {
                    rec.push(off[i].to_string());
                }
                wtr.write_record(&rec)?;
            }
        }
    }
    wtr.flush().map_err(|e| IoError::Io(e.to_string()))?;
    Ok(())
}

/// The run config that reads back a dataset written by [`export_panel`].
pub fn config_for(d: &PanelDataset) -> RunConfig {
    RunConfig {
        primary_outcome: d.primary_name.clone(),
        control_outcomes: d.controls.iter().map(|c| c.name.clone()).collect(),
        transform: match d.transform {
            Transform::Log1p => "log1p".into(),
            Transform::Identity => "none".into(),
        },
        covariates: crate::config::CovariateSpec {
            unit_time: d.covariates.unit_time.iter().map(|c| c.name.clone()).collect(),
            offset: d.offsets.as_ref().map(|_| "offset".to_string()),
        },
        ..RunConfig::default()
    }
}
