//! Firm-year panel and yearly aggregates: CSV reading, writing and checks.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChoicePair;

/// One firm-year record. Monetary values in constant-price thousands,
/// workers in thousands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub firm_id: String,
    pub year: i32,
    pub dom_revenue: f64,
    pub export_revenue: f64,
    pub total_wage: f64,
    pub intermediates: f64,
    pub workers: f64,
    pub new_product_value: f64,
    pub fixed_assets_net: f64,
    #[serde(default)]
    pub processing_flag: Option<u8>,
    #[serde(default)]
    pub state: Option<usize>,
}

impl PanelRow {
    /// Total variable cost `TW + M`.
    pub fn tvc(&self) -> f64 {
        self.total_wage + self.intermediates
    }

    /// Unit variable cost per worker `(TW + M) / TL`.
    pub fn wm(&self) -> f64 {
        self.tvc() / self.workers
    }

    /// Capital intensity: net fixed assets per worker.
    pub fn kl(&self) -> f64 {
        self.fixed_assets_net / self.workers
    }

    pub fn innovates(&self) -> bool {
        self.new_product_value > 0.0
    }

    pub fn exports(&self) -> bool {
        self.export_revenue > 0.0
    }

    pub fn choice(&self) -> ChoicePair {
        ChoicePair {
            innovate: self.innovates(),
            export: self.exports(),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let finite = [
            ("dom_revenue", self.dom_revenue),
            ("export_revenue", self.export_revenue),
            ("total_wage", self.total_wage),
            ("intermediates", self.intermediates),
            ("workers", self.workers),
            ("new_product_value", self.new_product_value),
            ("fixed_assets_net", self.fixed_assets_net),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        if self.firm_id.is_empty() {
            return Err("empty firm_id".into());
        }
        if !(self.dom_revenue > 0.0) {
            return Err(format!("dom_revenue = {} must be positive", self.dom_revenue));
        }
        if !(self.workers > 0.0) {
            return Err(format!("workers = {} must be positive", self.workers));
        }
        for (name, v) in [
            ("export_revenue", self.export_revenue),
            ("total_wage", self.total_wage),
            ("intermediates", self.intermediates),
            ("new_product_value", self.new_product_value),
            ("fixed_assets_net", self.fixed_assets_net),
        ] {
            if v < 0.0 {
                return Err(format!("{name} = {v} must be non-negative"));
            }
        }
        if !(self.tvc() > 0.0) {
            return Err("total_wage + intermediates must be positive".into());
        }
        if let Some(p) = self.processing_flag {
            if p > 1 {
                return Err(format!("processing_flag = {p} must be 0 or 1"));
            }
        }
        if self.state == Some(0) {
            return Err("state indices start at 1".into());
        }
        Ok(())
    }
}

/// Yearly aggregate demand measures and the trade regime dummy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub year: i32,
    pub gni_pc_home: f64,
    pub gni_pc_world: f64,
    pub dwto: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Panel {
    pub rows: Vec<PanelRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Aggregates {
    pub rows: Vec<AggregateRow>,
}

fn ingest<T, R>(reader: R, path: &str) -> Result<Vec<(u64, T)>>
where
    T: for<'de> Deserialize<'de>,
    R: Read,
{
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Ingest {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: T = rec.deserialize(Some(&headers)).map_err(|e| Error::Ingest {
            path: path.into(),
            line,
            reason: e.to_string(),
        })?;
        out.push((line, row));
    }
    Ok(out)
}

impl Panel {
    pub fn new(rows: Vec<PanelRow>) -> Result<Self> {
        let panel = Self { rows };
        panel.validate()?;
        Ok(panel)
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read(file, &path.display().to_string())
    }

    pub fn read<R: Read>(reader: R, name: &str) -> Result<Self> {
        let rows = ingest::<PanelRow, _>(reader, name)?;
        let mut seen = HashSet::new();
        for (line, row) in &rows {
            row.check().map_err(|reason| Error::Ingest {
                path: name.into(),
                line: *line,
                reason,
            })?;
            if !seen.insert((row.firm_id.clone(), row.year)) {
                return Err(Error::Ingest {
                    path: name.into(),
                    line: *line,
                    reason: format!("duplicate firm-year ({}, {})", row.firm_id, row.year),
                });
            }
        }
        Ok(Self {
            rows: rows.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, row) in self.rows.iter().enumerate() {
            row.check().map_err(|reason| Error::Ingest {
                path: "<memory>".into(),
                line: i as u64 + 2,
                reason,
            })?;
            if !seen.insert((&row.firm_id, row.year)) {
                return Err(Error::Ingest {
                    path: "<memory>".into(),
                    line: i as u64 + 2,
                    reason: format!("duplicate firm-year ({}, {})", row.firm_id, row.year),
                });
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.rows.iter().map(|r| r.year).collect()
    }

    pub fn firm_count(&self) -> usize {
        self.rows.iter().map(|r| &r.firm_id).collect::<HashSet<_>>().len()
    }

    pub fn has_state_column(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.state.is_some())
    }

    /// Rows grouped by firm, each group sorted by year; firms in first-seen
    /// order.
    pub fn by_firm(&self) -> Vec<Vec<&PanelRow>> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&PanelRow>> = BTreeMap::new();
        for row in &self.rows {
            let g = groups.entry(&row.firm_id).or_default();
            if g.is_empty() {
                order.push(&row.firm_id);
            }
            g.push(row);
        }
        order
            .into_iter()
            .map(|id| {
                let mut g = groups.remove(id).unwrap();
                g.sort_by_key(|r| r.year);
                g
            })
            .collect()
    }

    /// Drops rows flagged as processing trade. Returns the number removed.
    pub fn drop_processing(&mut self) -> usize {
        let before = self.rows.len();
        self.rows.retain(|r| r.processing_flag != Some(1));
        before - self.rows.len()
    }
}

impl Aggregates {
    pub fn new(rows: Vec<AggregateRow>) -> Result<Self> {
        let agg = Self { rows };
        agg.validate()?;
        Ok(agg)
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read(file, &path.display().to_string())
    }

    pub fn read<R: Read>(reader: R, name: &str) -> Result<Self> {
        let rows = ingest::<AggregateRow, _>(reader, name)?;
        let mut years = HashSet::new();
        for (line, row) in &rows {
            let reason = if !(row.gni_pc_home > 0.0 && row.gni_pc_world > 0.0) {
                Some("GNI per capita must be positive".to_string())
            } else if row.dwto > 1 {
                Some(format!("dwto = {} must be 0 or 1", row.dwto))
            } else if !years.insert(row.year) {
                Some(format!("duplicate year {}", row.year))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::Ingest {
                    path: name.into(),
                    line: *line,
                    reason,
                });
            }
        }
        Ok(Self {
            rows: rows.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut years = HashSet::new();
        for row in &self.rows {
            if !(row.gni_pc_home > 0.0 && row.gni_pc_world > 0.0) || row.dwto > 1 {
                return Err(Error::config(format!("invalid aggregates for {}", row.year)));
            }
            if !years.insert(row.year) {
                return Err(Error::config(format!("duplicate aggregate year {}", row.year)));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn get(&self, year: i32) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.year == year)
    }

    /// Errors with the list of panel years lacking aggregates.
    pub fn check_covers(&self, years: &BTreeSet<i32>) -> Result<()> {
        let missing: Vec<i32> = years
            .iter()
            .filter(|y| self.get(**y).is_none())
            .cloned()
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingAggregates(missing))
        }
    }

    pub fn post_years(&self) -> BTreeSet<i32> {
        self.rows
            .iter()
            .filter(|r| r.dwto == 1)
            .map(|r| r.year)
            .collect()
    }
}
