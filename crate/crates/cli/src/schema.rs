//! CSV ingestion: column-role schema parsing and dataset construction.

use std::collections::HashMap;
use std::path::Path;

use hdiv::demand::{DemandPanel, ProductRow};
use hdiv::{Error, IVDataset};
use nalgebra::{DMatrix, DVector};

/// Column-role assignments parsed from a `--schema` string of the form
/// `outcome=y;endogenous=d;controls=x1,x2;instruments=z1,z2`.
///
/// Recognized roles: `outcome`, `endogenous`, `controls`, `instruments`,
/// `market_id`, `firm_id`, `product_id`, `share`, `outside_share`, `price`,
/// `characteristics`.
#[derive(Debug, Clone, Default)]
pub struct CsvSchemaMap {
    pub outcome: Option<String>,
    pub endogenous: Option<String>,
    pub controls: Vec<String>,
    pub instruments: Vec<String>,
    pub market_id: Option<String>,
    pub firm_id: Option<String>,
    pub product_id: Option<String>,
    pub share: Option<String>,
    pub outside_share: Option<String>,
    pub price: Option<String>,
    pub characteristics: Vec<String>,
}

impl CsvSchemaMap {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut map = CsvSchemaMap::default();
        for part in text.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let (role, value) = part.split_once('=').ok_or_else(|| {
                Error::Input(format!("schema entry '{part}' is not of the form role=column"))
            })?;
            let role = role.trim();
            let single = || value.trim().to_string();
            let list = || -> Vec<String> {
                value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            };
            match role {
                "outcome" => map.outcome = Some(single()),
                "endogenous" => map.endogenous = Some(single()),
                "controls" | "control" => map.controls.extend(list()),
                "instruments" | "instrument" => map.instruments.extend(list()),
                "market_id" | "market" => map.market_id = Some(single()),
                "firm_id" | "firm" => map.firm_id = Some(single()),
                "product_id" | "product" => map.product_id = Some(single()),
                "share" => map.share = Some(single()),
                "outside_share" => map.outside_share = Some(single()),
                "price" => map.price = Some(single()),
                "characteristics" | "characteristic" => map.characteristics.extend(list()),
                other => {
                    return Err(Error::Input(format!("unknown schema role '{other}'")));
                }
            }
        }
        Ok(map)
    }
}

/// A CSV file loaded into named columns.
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

pub fn read_csv(path: &Path) -> Result<CsvTable, Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Input(format!("bad CSV header: {e}")))?
            .iter()
            .map(|h| h.to_string())
            .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Input(format!("row {}: malformed CSV: {e}", i + 2)))?;
        rows.push(record);
    }
    Ok(CsvTable { headers, rows })
}

impl CsvTable {
    fn column_index(&self, name: &str) -> Result<usize, Error> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Input(format!(
                "column '{name}' not found; available columns: {}",
                self.headers.join(", ")
            ))
        })
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>, Error> {
        let idx = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let cell = row.get(idx).unwrap_or("");
                cell.parse::<f64>().map_err(|_| {
                    Error::Input(format!(
                        "row {}, column '{name}': cannot parse '{cell}' as a number",
                        i + 2
                    ))
                })
            })
            .collect()
    }

    pub fn string_column(&self, name: &str) -> Result<Vec<String>, Error> {
        let idx = self.column_index(name)?;
        Ok(self.rows.iter().map(|row| row.get(idx).unwrap_or("").to_string()).collect())
    }
}

/// Builds an IV dataset from a CSV file under a fit-mode schema.
pub fn load_iv_dataset(path: &Path, schema: &CsvSchemaMap) -> Result<IVDataset, Error> {
    let outcome = schema
        .outcome
        .as_deref()
        .ok_or_else(|| Error::Input("schema must assign exactly one outcome column".into()))?;
    let endogenous = schema
        .endogenous
        .as_deref()
        .ok_or_else(|| Error::Input("schema must assign exactly one endogenous column".into()))?;

    let table = read_csv(path)?;
    let n = table.rows.len();
    if n < 3 {
        return Err(Error::Input(format!("need at least 3 data rows, found {n}")));
    }

    let y = DVector::from_vec(table.numeric_column(outcome)?);
    let d = DVector::from_vec(table.numeric_column(endogenous)?);

    if schema.controls.is_empty() {
        return Err(Error::Input("schema must assign at least one control column".into()));
    }
    let mut x = DMatrix::<f64>::zeros(n, schema.controls.len());
    for (j, name) in schema.controls.iter().enumerate() {
        x.set_column(j, &DVector::from_vec(table.numeric_column(name)?));
    }
    let mut z = DMatrix::<f64>::zeros(n, schema.instruments.len());
    for (j, name) in schema.instruments.iter().enumerate() {
        z.set_column(j, &DVector::from_vec(table.numeric_column(name)?));
    }

    IVDataset::new(y, d, x, z, None)
}

/// Builds a demand panel from a CSV file under a demand-mode schema.
pub fn load_demand_panel(path: &Path, schema: &CsvSchemaMap) -> Result<DemandPanel, Error> {
    let required = [
        ("market_id", schema.market_id.as_deref()),
        ("firm_id", schema.firm_id.as_deref()),
        ("product_id", schema.product_id.as_deref()),
        ("share", schema.share.as_deref()),
        ("outside_share", schema.outside_share.as_deref()),
        ("price", schema.price.as_deref()),
    ];
    let mut names = HashMap::new();
    for (role, value) in required {
        names.insert(
            role,
            value.ok_or_else(|| Error::Input(format!("schema must assign a {role} column")))?,
        );
    }
    if schema.characteristics.is_empty() {
        return Err(Error::Input("schema must assign at least one characteristic column".into()));
    }

    let table = read_csv(path)?;
    if table.rows.is_empty() {
        return Err(Error::Input("demand panel CSV has no data rows".into()));
    }

    let market = table.string_column(names["market_id"])?;
    let firm = table.string_column(names["firm_id"])?;
    let product = table.string_column(names["product_id"])?;
    let share = table.numeric_column(names["share"])?;
    let outside = table.numeric_column(names["outside_share"])?;
    let price = table.numeric_column(names["price"])?;
    let mut characteristics: Vec<Vec<f64>> = Vec::new();
    for name in &schema.characteristics {
        characteristics.push(table.numeric_column(name)?);
    }

    let rows: Vec<ProductRow> = (0..table.rows.len())
        .map(|i| ProductRow {
            market: market[i].clone(),
            firm: firm[i].clone(),
            product: product[i].clone(),
            share: share[i],
            outside_share: outside[i],
            price: price[i],
            characteristics: characteristics.iter().map(|c| c[i]).collect(),
        })
        .collect();
    DemandPanel::new(rows, schema.characteristics.clone())
}
