//! Respondent covariates and the encoding table that turns raw survey answers
//! into numeric regressors.
//!
//! Raw values are carried per respondent as named labels or numbers. Models
//! ask the encoding for a numeric design row over a chosen list of covariate
//! names; categorical covariates expand to one indicator per non-reference
//! category, named `covariate:category`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Number(f64),
    Label(String),
}

impl fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateValue::Number(v) => write!(f, "{v}"),
            CovariateValue::Label(s) => f.write_str(s),
        }
    }
}

pub type CovariateRow = BTreeMap<String, CovariateValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Categorical,
    Ordinal,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    /// Ordered category labels; empty for continuous covariates.
    #[serde(default)]
    pub categories: Vec<String>,
    /// Reference level for binary and categorical covariates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Numeric codes for ordinal categories (same length as `categories`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub codes: Vec<f64>,
}

impl CovariateSpec {
    pub fn binary(name: &str, categories: [&str; 2]) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Binary,
            categories: categories.iter().map(|s| s.to_string()).collect(),
            reference: Some(categories[0].into()),
            codes: Vec::new(),
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical,
            categories: categories.iter().map(|s| s.to_string()).collect(),
            reference: Some(categories[0].into()),
            codes: Vec::new(),
        }
    }

    pub fn ordinal(name: &str, categories: &[&str], codes: &[f64]) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Ordinal,
            categories: categories.iter().map(|s| s.to_string()).collect(),
            reference: None,
            codes: codes.to_vec(),
        }
    }

    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Continuous,
            categories: Vec::new(),
            reference: None,
            codes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CovariateKind::Binary | CovariateKind::Categorical => {
                if self.categories.len() < 2
                    || (self.kind == CovariateKind::Binary && self.categories.len() != 2)
                {
                    return Err(Error::Config(format!(
                        "covariate `{}` has an invalid category list",
                        self.name
                    )));
                }
                let r = self.reference.as_ref().ok_or_else(|| {
                    Error::Config(format!("covariate `{}` has no reference level", self.name))
                })?;
                if self.categories.iter().filter(|c| *c == r).count() != 1 {
                    return Err(Error::Config(format!(
                        "covariate `{}`: reference level `{r}` must appear exactly once",
                        self.name
                    )));
                }
            }
            CovariateKind::Ordinal => {
                if self.categories.is_empty() || self.codes.len() != self.categories.len() {
                    return Err(Error::Config(format!(
                        "ordinal covariate `{}` needs one code per category",
                        self.name
                    )));
                }
            }
            CovariateKind::Continuous => {}
        }
        Ok(())
    }

    /// Encoded column names produced by this covariate.
    pub fn columns(&self) -> Vec<String> {
        match self.kind {
            CovariateKind::Categorical => {
                let r = self.reference.as_deref().unwrap_or_default();
                self.categories
                    .iter()
                    .filter(|c| c.as_str() != r)
                    .map(|c| format!("{}:{c}", self.name))
                    .collect()
            }
            _ => vec![self.name.clone()],
        }
    }

    /// Parses a raw CSV cell into the value type this covariate expects.
    pub fn parse_cell(&self, raw: &str) -> Result<CovariateValue> {
        match self.kind {
            CovariateKind::Continuous => raw
                .trim()
                .parse::<f64>()
                .map(CovariateValue::Number)
                .map_err(|_| {
                    Error::Input(format!(
                        "covariate `{}` expects a number, got `{raw}`",
                        self.name
                    ))
                }),
            _ => Ok(CovariateValue::Label(raw.trim().to_owned())),
        }
    }

    fn encode(&self, value: &CovariateValue, out: &mut Vec<f64>) -> Result<()> {
        let label = |v: &CovariateValue| -> Result<usize> {
            let s = match v {
                CovariateValue::Label(s) => s.clone(),
                CovariateValue::Number(n) => n.to_string(),
            };
            self.categories.iter().position(|c| *c == s).ok_or_else(|| {
                Error::Input(format!(
                    "unknown category `{s}` for covariate `{}`; allowed: [{}]",
                    self.name,
                    self.categories.join(", ")
                ))
            })
        };
        match self.kind {
            CovariateKind::Continuous => match value {
                CovariateValue::Number(v) if v.is_finite() => out.push(*v),
                other => {
                    return Err(Error::Input(format!(
                        "covariate `{}` expects a finite number, got `{other}`",
                        self.name
                    )))
                }
            },
            CovariateKind::Ordinal => {
                let i = label(value)?;
                out.push(self.codes[i]);
            }
            CovariateKind::Binary => {
                let i = label(value)?;
                let r = self.reference.as_deref().unwrap_or_default();
                out.push(if self.categories[i] == r { 0.0 } else { 1.0 });
            }
            CovariateKind::Categorical => {
                let i = label(value)?;
                let r = self.reference.as_deref().unwrap_or_default();
                for c in &self.categories {
                    if c == r {
                        continue;
                    }
                    out.push(if *c == self.categories[i] { 1.0 } else { 0.0 });
                }
            }
        }
        Ok(())
    }
}

/// Published mapping from raw covariate answers to numeric regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEncoding {
    pub covariates: Vec<CovariateSpec>,
}

impl Default for CovariateEncoding {
    fn default() -> Self {
        Self::standard()
    }
}

impl CovariateEncoding {
    pub fn new(covariates: Vec<CovariateSpec>) -> Result<Self> {
        let enc = Self { covariates };
        enc.validate()?;
        Ok(enc)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.covariates.iter().enumerate() {
            c.validate()?;
            if self.covariates[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate covariate `{}`", c.name)));
            }
        }
        Ok(())
    }

    /// The survey's covariate set. Reference level is the first listed
    /// category.
    pub fn standard() -> Self {
        Self {
            covariates: vec![
                CovariateSpec::ordinal(
                    "income",
                    &[
                        "under_4000",
                        "4000_8000",
                        "8000_12000",
                        "12000_16000",
                        "16000_20000",
                        "above_20000",
                    ],
                    &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                ),
                CovariateSpec::continuous("age"),
                CovariateSpec::binary("gender", ["male", "female"]),
                CovariateSpec::binary("hukou_type", ["agricultural", "urban"]),
                CovariateSpec::binary("hukou_locality", ["local", "non_local"]),
                CovariateSpec::categorical(
                    "marital",
                    &[
                        "single",
                        "married_with_spouse",
                        "married_apart",
                        "divorced_widowed",
                    ],
                ),
                CovariateSpec::ordinal(
                    "education",
                    &[
                        "primary",
                        "middle",
                        "high",
                        "vocational",
                        "associate",
                        "bachelor",
                        "master_plus",
                    ],
                    &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
                ),
                CovariateSpec::categorical(
                    "employment",
                    &["public", "soe", "private", "foreign", "self_employed", "other"],
                ),
                CovariateSpec::ordinal(
                    "children",
                    &["0", "1", "2", "3", "above_3"],
                    &[0.0, 1.0, 2.0, 3.0, 4.0],
                ),
                CovariateSpec::ordinal(
                    "elderly",
                    &["0", "1", "2", "3", "above_3"],
                    &[0.0, 1.0, 2.0, 3.0, 4.0],
                ),
                CovariateSpec::binary("license", ["no", "yes"]),
                CovariateSpec::binary("housework", ["no", "yes"]),
                CovariateSpec::continuous("commute_cost"),
                CovariateSpec::continuous("child_pickup_time"),
                CovariateSpec::continuous("online_shopping_freq"),
                CovariateSpec::continuous("food_delivery_freq"),
                CovariateSpec::continuous("online_shopping_exp"),
                CovariateSpec::continuous("food_delivery_exp"),
                CovariateSpec::binary("car_primary", ["no", "yes"]),
            ],
        }
    }

    pub fn spec(&self, name: &str) -> Option<&CovariateSpec> {
        self.covariates.iter().find(|c| c.name == name)
    }

    fn require(&self, name: &str) -> Result<&CovariateSpec> {
        self.spec(name).ok_or_else(|| {
            Error::Input(format!(
                "covariate `{name}` is not in the encoding table:\n{self}"
            ))
        })
    }

    pub fn columns(&self, names: &[String]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for n in names {
            out.extend(self.require(n)?.columns());
        }
        Ok(out)
    }

    /// Numeric design row for `names`, in order.
    pub fn encode(&self, names: &[String], row: &CovariateRow) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for n in names {
            let spec = self.require(n)?;
            let v = row
                .get(n)
                .ok_or_else(|| Error::Input(format!("missing covariate `{n}`")))?;
            spec.encode(v, &mut out).map_err(|e| match e {
                Error::Input(m) => Error::Input(format!("{m}\nencoding table:\n{self}")),
                other => other,
            })?;
        }
        Ok(out)
    }

    /// Raw-value parser for a CSV column. Columns outside the table are read
    /// as continuous.
    pub fn parse_cell(&self, name: &str, raw: &str) -> Result<CovariateValue> {
        match self.spec(name) {
            Some(spec) => spec.parse_cell(raw),
            None => CovariateSpec::continuous(name).parse_cell(raw),
        }
    }
}

impl fmt::Display for CovariateEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.covariates {
            write!(f, "  {} ({:?})", c.name, c.kind)?;
            if !c.categories.is_empty() {
                write!(f, ": [{}]", c.categories.join(", "))?;
            }
            if let Some(r) = &c.reference {
                write!(f, " reference={r}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Representative monthly income (yuan) for each income bracket label.
pub fn income_bracket_midpoint(label: &str) -> Option<f64> {
    match label {
        "under_4000" => Some(2000.0),
        "4000_8000" => Some(6000.0),
        "8000_12000" => Some(10000.0),
        "12000_16000" => Some(14000.0),
        "16000_20000" => Some(18000.0),
        "above_20000" => Some(22000.0),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(&str, CovariateValue)]) -> CovariateRow {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn standard_table_is_valid() {
        CovariateEncoding::standard().validate().unwrap();
    }

    #[test]
    fn categorical_expands_to_indicators() {
        let enc = CovariateEncoding::standard();
        let names = vec!["marital".to_string(), "gender".to_string()];
        assert_eq!(
            enc.columns(&names).unwrap(),
            vec![
                "marital:married_with_spouse",
                "marital:married_apart",
                "marital:divorced_widowed",
                "gender"
            ]
        );
        let r = row(&[
            ("marital", CovariateValue::Label("married_apart".into())),
            ("gender", CovariateValue::Label("female".into())),
        ]);
        assert_eq!(enc.encode(&names, &r).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn unknown_category_lists_table() {
        let enc = CovariateEncoding::standard();
        let r = row(&[("gender", CovariateValue::Label("other".into()))]);
        let err = enc.encode(&["gender".into()], &r).unwrap_err().to_string();
        assert!(err.contains("unknown category `other`"));
        assert!(err.contains("encoding table"));
        assert!(err.contains("hukou_type"));
    }

    #[test]
    fn duplicate_reference_rejected() {
        let mut spec = CovariateSpec::categorical("x", &["a", "b"]);
        spec.reference = Some("c".into());
        assert!(CovariateEncoding::new(vec![spec]).is_err());
    }
}
