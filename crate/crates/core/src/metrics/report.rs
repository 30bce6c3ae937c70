//! Per-tooth results, aggregation and the JSON/CSV report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::write_json;
use crate::geom::FdiTooth;

/// Display scale of Chamfer distance.
pub const CD_SCALE: f64 = 100.0;
/// Display scale of EMD.
pub const EMD_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToothResult {
    pub case_id: u32,
    pub fdi: FdiTooth,
    pub iou: f64,
    pub cd: f64,
    pub emd: f64,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("statistics of an empty sample".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }

    pub fn scaled(self, k: f64) -> Self {
        Self { mean: self.mean * k, std: self.std * k }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdiRow {
    pub fdi: FdiTooth,
    pub count: usize,
    pub iou: Stat,
    pub cd: Stat,
    pub emd: Stat,
}

/// One method's aggregate. CD and EMD stats are raw; apply
/// [`CD_SCALE`] / [`EMD_SCALE`] for display.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub count: usize,
    pub iou: Stat,
    pub cd: Stat,
    pub emd: Stat,
    /// Present classes only, in FDI order.
    pub per_fdi: Vec<FdiRow>,
    pub results: Vec<ToothResult>,
}

pub fn aggregate(method: &str, results: &[ToothResult]) -> Result<MethodReport> {
    if results.is_empty() {
        return Err(Error::InvalidArgument(format!("no results to aggregate for {method}")));
    }
    if let Some(r) = results.iter().find(|r| ![r.iou, r.cd, r.emd].iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite(format!("metrics of case {} tooth {}", r.case_id, r.fdi)));
    }
    let col = |rs: &[&ToothResult], f: fn(&ToothResult) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
    let all: Vec<&ToothResult> = results.iter().collect();
    let mut groups: BTreeMap<FdiTooth, Vec<&ToothResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.fdi).or_default().push(r);
    }
    let per_fdi = groups
        .into_iter()
        .map(|(fdi, rs)| {
            Ok(FdiRow {
                fdi,
                count: rs.len(),
                iou: Stat::of(&col(&rs, |r| r.iou))?,
                cd: Stat::of(&col(&rs, |r| r.cd))?,
                emd: Stat::of(&col(&rs, |r| r.emd))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodReport {
        method: method.to_string(),
        count: results.len(),
        iou: Stat::of(&col(&all, |r| r.iou))?,
        cd: Stat::of(&col(&all, |r| r.cd))?,
        emd: Stat::of(&col(&all, |r| r.emd))?,
        per_fdi,
        results: results.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cd_scale: f64,
    pub emd_scale: f64,
    pub methods: Vec<MethodReport>,
}

impl Report {
    pub fn new(methods: Vec<MethodReport>) -> Self {
        Self { cd_scale: CD_SCALE, emd_scale: EMD_SCALE, methods }
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Summary block (one row per method and metric), a blank line, then
    /// mean IoU per FDI class with one row per method.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["method", "metric", "mean", "std", "scale", "display_mean", "display_std"])
            .map_err(csv_err)?;
        for m in &self.methods {
            for (name, stat, scale) in [("iou", m.iou, 1.0), ("cd", m.cd, self.cd_scale), ("emd", m.emd, self.emd_scale)] {
                let shown = stat.scaled(scale);
                let row = [m.method.clone(), name.to_string(), fmt(stat.mean), fmt(stat.std), fmt(scale), fmt(shown.mean), fmt(shown.std)];
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.write_record([""]).map_err(csv_err)?;
        let mut classes: Vec<FdiTooth> = self.methods.iter().flat_map(|m| m.per_fdi.iter().map(|r| r.fdi)).collect();
        classes.sort();
        classes.dedup();
        let mut header = vec!["method".to_string()];
        header.extend(classes.iter().map(|f| f.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for m in &self.methods {
            let mut row = vec![m.method.clone()];
            for c in &classes {
                row.push(m.per_fdi.iter().find(|r| r.fdi == *c).map_or(String::new(), |r| fmt(r.iou.mean)));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        std::fs::write(dir.join("report.csv"), self.to_csv()?)?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
