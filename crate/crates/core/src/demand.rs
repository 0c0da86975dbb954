//! Product-market panel utilities for logit demand estimation: outcome
//! construction, characteristic expansion, sum-of-characteristics
//! instruments, and own-price elasticity accounting.

use nalgebra::{DMatrix, DVector};
use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// One product-market observation.
#[derive(Debug, Clone)]
pub struct ProductRow {
    pub market: String,
    pub firm: String,
    pub product: String,
    pub share: f64,
    pub outside_share: f64,
    pub price: f64,
    pub characteristics: Vec<f64>,
}

/// Product-market panel with named characteristics.
#[derive(Debug, Clone)]
pub struct DemandPanel {
    rows: Vec<ProductRow>,
    characteristic_names: Vec<String>,
}

impl DemandPanel {
    pub fn new(rows: Vec<ProductRow>, characteristic_names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("demand panel has no rows".into()));
        }
        let mut seen_names = HashSet::new();
        for name in &characteristic_names {
            if !seen_names.insert(name.clone()) {
                return Err(Error::Input(format!("duplicate characteristic name '{name}'")));
            }
        }

        let mut market_share_sums: HashMap<&str, f64> = HashMap::new();
        let mut market_outside: HashMap<&str, f64> = HashMap::new();
        let mut keys = HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            if row.characteristics.len() != characteristic_names.len() {
                return Err(Error::Input(format!(
                    "row {i} (market {}, product {}) has {} characteristics, expected {}",
                    row.market,
                    row.product,
                    row.characteristics.len(),
                    characteristic_names.len()
                )));
            }
            if !(row.share > 0.0 && row.share < 1.0) {
                return Err(Error::Input(format!(
                    "row {i} (market {}, product {}): share {} outside (0, 1)",
                    row.market, row.product, row.share
                )));
            }
            if !(row.outside_share > 0.0 && row.outside_share < 1.0) {
                return Err(Error::Input(format!(
                    "row {i} (market {}, product {}): outside share {} outside (0, 1)",
                    row.market, row.product, row.outside_share
                )));
            }
            if !row.price.is_finite() || row.characteristics.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!(
                    "row {i} (market {}, product {}): non-finite value",
                    row.market, row.product
                )));
            }
            if !keys.insert((row.market.clone(), row.product.clone())) {
                return Err(Error::Input(format!(
                    "duplicate (market, product) pair ({}, {})",
                    row.market, row.product
                )));
            }
            *market_share_sums.entry(row.market.as_str()).or_insert(0.0) += row.share;
            match market_outside.get(row.market.as_str()) {
                Some(&existing) if (existing - row.outside_share).abs() > 1e-9 => {
                    return Err(Error::Input(format!(
                        "market {}: inconsistent outside shares {} vs {}",
                        row.market, existing, row.outside_share
                    )));
                }
                _ => {
                    market_outside.insert(row.market.as_str(), row.outside_share);
                }
            }
        }
        for (market, total) in &market_share_sums {
            let outside = market_outside[market];
            if total + outside > 1.0 + 1e-9 {
                return Err(Error::Input(format!(
                    "market {market}: inside shares plus outside share exceed one ({})",
                    total + outside
                )));
            }
        }
        Ok(Self { rows, characteristic_names })
    }

    pub fn rows(&self) -> &[ProductRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn characteristic_names(&self) -> &[String] {
        &self.characteristic_names
    }

    fn characteristic_column(&self, name: &str) -> Result<usize> {
        self.characteristic_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Input(format!("characteristic '{name}' not found in panel")))
    }

    /// Market identifiers in deterministic (numeric-aware) order.
    pub fn ordered_markets(&self) -> Vec<String> {
        let mut markets: Vec<String> = self
            .rows
            .iter()
            .map(|r| r.market.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        markets.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => x.total_cmp(&y),
            _ => a.cmp(b),
        });
        markets
    }
}

/// Which columns the characteristic expansion produces.
#[derive(Debug, Clone)]
pub struct ExpansionRecipe {
    /// Non-constant base characteristic names, in output order.
    pub base: Vec<String>,
    /// Subset of `base` that receives squares and cubes; the trend is added
    /// automatically when present.
    pub continuous: Vec<String>,
    pub include_constant: bool,
    pub include_trend: bool,
    /// Emit all first-order pairwise interactions among the non-constant
    /// base columns plus the trend.
    pub interactions: bool,
}

impl ExpansionRecipe {
    /// The automobile-demand schema: constant, air-conditioning dummy,
    /// horsepower/weight, miles per dollar, size, plus trend, polynomials,
    /// and interactions. Expands to 24 columns.
    pub fn blp() -> Self {
        Self {
            base: vec![
                "air_conditioning".into(),
                "hp_weight".into(),
                "miles_per_dollar".into(),
                "size".into(),
            ],
            continuous: vec!["hp_weight".into(), "miles_per_dollar".into(), "size".into()],
            include_constant: true,
            include_trend: true,
            interactions: true,
        }
    }

    /// Base columns only (constant plus the four characteristics).
    pub fn blp_base_only() -> Self {
        Self {
            base: vec![
                "air_conditioning".into(),
                "hp_weight".into(),
                "miles_per_dollar".into(),
                "size".into(),
            ],
            continuous: Vec::new(),
            include_constant: true,
            include_trend: false,
            interactions: false,
        }
    }

    /// Base columns only, for an arbitrary characteristic list.
    pub fn base_only(names: &[String]) -> Self {
        Self {
            base: names.to_vec(),
            continuous: Vec::new(),
            include_constant: true,
            include_trend: false,
            interactions: false,
        }
    }
}

/// Expanded control matrix with deterministic column names.
#[derive(Debug, Clone)]
pub struct ExpandedControls {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
    /// Index of the constant column, when present.
    pub constant_index: Option<usize>,
}

/// Per-row log share ratio `log(s_it) - log(s_0t)`.
pub fn build_logit_outcome(panel: &DemandPanel) -> DVector<f64> {
    DVector::from_fn(panel.len(), |i, _| {
        let row = &panel.rows[i];
        row.share.ln() - row.outside_share.ln()
    })
}

/// Deterministic characteristic expansion: base columns, standardized time
/// trend, squares and cubes of the continuous columns, and first-order
/// interactions.
pub fn expand_characteristics(
    panel: &DemandPanel,
    recipe: &ExpansionRecipe,
) -> Result<ExpandedControls> {
    let n = panel.len();
    for name in recipe.continuous.iter() {
        if !recipe.base.contains(name) {
            return Err(Error::Input(format!(
                "continuous column '{name}' is not among the base columns"
            )));
        }
    }

    // Named source columns: base characteristics plus the standardized trend.
    let mut source_names: Vec<String> = recipe.base.clone();
    let mut source_cols: Vec<DVector<f64>> = Vec::new();
    for name in &recipe.base {
        let k = panel.characteristic_column(name)?;
        source_cols.push(DVector::from_fn(n, |i, _| panel.rows[i].characteristics[k]));
    }
    if recipe.include_trend {
        let markets = panel.ordered_markets();
        let index_of: HashMap<&str, f64> = markets
            .iter()
            .enumerate()
            .map(|(i, m)| (m.as_str(), i as f64))
            .collect();
        let raw = DVector::from_fn(n, |i, _| index_of[panel.rows[i].market.as_str()]);
        let mean = raw.mean();
        let centered = raw.map(|v| v - mean);
        let sd = (centered.norm_squared() / n as f64).sqrt();
        let trend = if sd > 0.0 { centered.map(|v| v / sd) } else { centered };
        source_names.push("trend".into());
        source_cols.push(trend);
    }

    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<DVector<f64>> = Vec::new();
    let mut constant_index = None;
    if recipe.include_constant {
        constant_index = Some(0);
        names.push("const".into());
        columns.push(DVector::from_element(n, 1.0));
    }
    for (name, col) in source_names.iter().zip(source_cols.iter()) {
        names.push(name.clone());
        columns.push(col.clone());
    }

    // Squares and cubes for the continuous set (trend included).
    let mut poly_names: Vec<String> = recipe.continuous.clone();
    if recipe.include_trend {
        poly_names.push("trend".into());
    }
    for name in &poly_names {
        let idx = source_names.iter().position(|s| s == name).expect("source exists");
        let col = &source_cols[idx];
        names.push(format!("{name}_sq"));
        columns.push(col.map(|v| v * v));
        names.push(format!("{name}_cube"));
        columns.push(col.map(|v| v * v * v));
    }

    if recipe.interactions {
        for a in 0..source_names.len() {
            for b in (a + 1)..source_names.len() {
                names.push(format!("{}_x_{}", source_names[a], source_names[b]));
                columns.push(DVector::from_fn(n, |i, _| source_cols[a][i] * source_cols[b][i]));
            }
        }
    }

    let mut unique = HashSet::new();
    for name in &names {
        if !unique.insert(name.clone()) {
            return Err(Error::Input(format!("expansion produced duplicate column '{name}'")));
        }
    }

    let mut matrix = DMatrix::<f64>::zeros(n, columns.len());
    for (j, col) in columns.iter().enumerate() {
        matrix.set_column(j, col);
    }
    Ok(ExpandedControls { names, matrix, constant_index })
}

/// Sum-of-characteristics instruments: for every characteristic column, the
/// sum over the firm's other products in the market and the sum over rival
/// products in the market. Output has twice the input columns, own-firm sums
/// first.
pub fn build_sum_instruments(
    panel: &DemandPanel,
    characteristics: &DMatrix<f64>,
    names: &[String],
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let n = panel.len();
    if characteristics.nrows() != n {
        return Err(Error::Input(format!(
            "characteristic matrix has {} rows for a panel of {}",
            characteristics.nrows(),
            n
        )));
    }
    let k = characteristics.ncols();
    if names.len() != k {
        return Err(Error::Input("column name count does not match the matrix".into()));
    }

    let mut market_totals: HashMap<&str, DVector<f64>> = HashMap::new();
    let mut firm_totals: HashMap<(&str, &str), DVector<f64>> = HashMap::new();
    for (i, row) in panel.rows().iter().enumerate() {
        let values = DVector::from_fn(k, |j, _| characteristics[(i, j)]);
        market_totals
            .entry(row.market.as_str())
            .and_modify(|t| *t += &values)
            .or_insert_with(|| values.clone());
        firm_totals
            .entry((row.market.as_str(), row.firm.as_str()))
            .and_modify(|t| *t += &values)
            .or_insert(values);
    }

    let mut matrix = DMatrix::<f64>::zeros(n, 2 * k);
    for (i, row) in panel.rows().iter().enumerate() {
        let market = &market_totals[row.market.as_str()];
        let firm = &firm_totals[&(row.market.as_str(), row.firm.as_str())];
        for j in 0..k {
            let own = characteristics[(i, j)];
            matrix[(i, j)] = firm[j] - own;
            matrix[(i, k + j)] = market[j] - firm[j];
        }
    }
    let mut out_names = Vec::with_capacity(2 * k);
    for name in names {
        out_names.push(format!("own_sum_{name}"));
    }
    for name in names {
        out_names.push(format!("rival_sum_{name}"));
    }
    Ok((matrix, out_names))
}

/// Own-price elasticity entry for one product-market row.
#[derive(Debug, Clone)]
pub struct ElasticityEntry {
    pub market: String,
    pub product: String,
    pub price: f64,
    pub share: f64,
    pub elasticity: f64,
}

/// Elasticities `alpha_hat * p * (1 - s)` sorted ascending, with the count of
/// inelastic products (`|e| < 1`).
#[derive(Debug, Clone)]
pub struct ElasticityReport {
    pub entries: Vec<ElasticityEntry>,
    pub inelastic_count: usize,
}

pub fn elasticity_report(panel: &DemandPanel, alpha_hat: f64) -> ElasticityReport {
    let mut entries: Vec<ElasticityEntry> = panel
        .rows()
        .iter()
        .map(|row| ElasticityEntry {
            market: row.market.clone(),
            product: row.product.clone(),
            price: row.price,
            share: row.share,
            elasticity: alpha_hat * row.price * (1.0 - row.share),
        })
        .collect();
    let inelastic_count = entries.iter().filter(|e| e.elasticity.abs() < 1.0).count();
    entries.sort_by(|a, b| {
        a.elasticity
            .total_cmp(&b.elasticity)
            .then_with(|| a.market.cmp(&b.market))
            .then_with(|| a.product.cmp(&b.product))
    });
    ElasticityReport { entries, inelastic_count }
}
