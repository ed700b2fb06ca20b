//! Repeated cross-sectional data: CSV ingestion, dummy coding and hold-out splits.
//!
//! A [`Dataset`] is a sequence of time groups. Group `t` holds the `n_t` responses
//! observed in that period together with their `n_t x k` design matrix. The design
//! never contains an intercept column; every model carries its intercept(s) as
//! separate parameters.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations of one time period.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub y: DVector<f64>,
    /// `n_t x k` design, no intercept column.
    pub x: DMatrix<f64>,
}

impl Group {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    times: Vec<String>,
    groups: Vec<Group>,
    covariate_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from groups already in time order.
    ///
    /// Every group must be non-empty, have `covariate_names.len()` design columns and
    /// only finite values. Labels must be distinct.
    pub fn new(
        times: Vec<String>,
        groups: Vec<Group>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if times.len() != groups.len() {
            return Err(Error::Dataset(format!(
                "{} time labels for {} groups",
                times.len(),
                groups.len()
            )));
        }
        let k = covariate_names.len();
        let mut seen = std::collections::HashSet::new();
        for (label, g) in times.iter().zip(&groups) {
            if !seen.insert(label.as_str()) {
                return Err(Error::Dataset(format!("duplicate time label '{label}'")));
            }
            if g.is_empty() {
                return Err(Error::Dataset(format!("time group '{label}' is empty")));
            }
            if g.x.nrows() != g.y.len() || g.x.ncols() != k {
                return Err(Error::Dataset(format!(
                    "time group '{label}': design is {}x{}, expected {}x{}",
                    g.x.nrows(),
                    g.x.ncols(),
                    g.y.len(),
                    k
                )));
            }
            if g.y.iter().chain(g.x.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!(
                    "time group '{label}' has non-finite values"
                )));
            }
        }
        Ok(Self {
            times,
            groups,
            covariate_names,
        })
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, t: usize) -> &Group {
        &self.groups[t]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Number of time periods `T`.
    pub fn n_periods(&self) -> usize {
        self.groups.len()
    }

    /// Number of covariates `k`.
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_total(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Group::len).collect()
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.times.iter().position(|t| t == label)
    }

    pub(crate) fn require_periods(&self, min: usize) -> Result<()> {
        if self.n_periods() < min {
            return Err(Error::Dataset(format!(
                "at least {min} time periods required, found {}",
                self.n_periods()
            )));
        }
        Ok(())
    }

    /// All responses stacked in time order.
    pub fn stacked_y(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_total(),
            self.groups.iter().flat_map(|g| g.y.iter().copied()),
        )
    }

    /// All design rows stacked in time order (`n x k`).
    pub fn stacked_x(&self) -> DMatrix<f64> {
        let k = self.n_covariates();
        let mut x = DMatrix::zeros(self.n_total(), k);
        let mut row = 0;
        for g in &self.groups {
            x.view_mut((row, 0), (g.len(), k)).copy_from(&g.x);
            row += g.len();
        }
        x
    }

    /// Writes the dataset as CSV with columns `time`, `response` and one column per
    /// covariate. Values use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string(), "response".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for (label, g) in self.times.iter().zip(&self.groups) {
            for i in 0..g.len() {
                let mut rec = Vec::with_capacity(header.len());
                rec.push(label.clone());
                rec.push(format!("{}", g.y[i]));
                rec.extend(g.x.row(i).iter().map(|v| format!("{v}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum VariableKind {
    Numeric,
    Categorical {
        categories: Vec<String>,
        baseline: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

/// How raw covariate columns become design columns.
///
/// Categorical variables are one-hot coded with the baseline category dropped,
/// so an all-zero block means "baseline". Column names for dummies are
/// `name[category]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CodingPlan {
    #[serde(default)]
    pub variables: Vec<Variable>,
}

impl CodingPlan {
    /// Plan where every named column passes through unchanged.
    pub fn numeric<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            variables: names
                .iter()
                .map(|n| Variable {
                    name: n.as_ref().to_string(),
                    kind: VariableKind::Numeric,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for v in &self.variables {
            if !names.insert(v.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "variable '{}' listed twice in coding plan",
                    v.name
                )));
            }
            if let VariableKind::Categorical {
                categories,
                baseline,
            } = &v.kind
            {
                let mut cats = std::collections::HashSet::new();
                if !categories.iter().all(|c| cats.insert(c.as_str())) {
                    return Err(Error::InvalidArgument(format!(
                        "variable '{}' has duplicate categories",
                        v.name
                    )));
                }
                if !cats.contains(baseline.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "baseline '{}' of variable '{}' is not among its categories",
                        baseline, v.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Emitted design column names, in order.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for v in &self.variables {
            match &v.kind {
                VariableKind::Numeric => out.push(v.name.clone()),
                VariableKind::Categorical {
                    categories,
                    baseline,
                } => out.extend(
                    categories
                        .iter()
                        .filter(|c| *c != baseline)
                        .map(|c| format!("{}[{}]", v.name, c)),
                ),
            }
        }
        out
    }

    pub fn n_columns(&self) -> usize {
        self.variables
            .iter()
            .map(|v| match &v.kind {
                VariableKind::Numeric => 1,
                VariableKind::Categorical { categories, .. } => categories.len() - 1,
            })
            .sum()
    }
}

/// Ordering key for time labels: every run of digits is left-padded with zeros
/// so that "1998-2" sorts before "1998-10".
pub fn time_sort_key(label: &str) -> String {
    const WIDTH: usize = 20;
    let mut key = String::with_capacity(label.len() + WIDTH);
    let mut digits = String::new();
    let flush = |digits: &mut String, key: &mut String| {
        if !digits.is_empty() {
            for _ in digits.len()..WIDTH {
                key.push('0');
            }
            key.push_str(digits);
            digits.clear();
        }
    };
    for ch in label.chars() {
        if ch.is_ascii_digit() {
            digits.push(ch);
        } else {
            flush(&mut digits, &mut key);
            key.push(ch);
        }
    }
    flush(&mut digits, &mut key);
    key
}

pub fn compare_time_labels(a: &str, b: &str) -> Ordering {
    time_sort_key(a).cmp(&time_sort_key(b))
}

/// Coded rows of a CSV file, in file order.
#[derive(Debug, Clone)]
pub struct Table {
    pub times: Vec<String>,
    /// `None` when no response column was requested.
    pub response: Option<Vec<f64>>,
    pub x: DMatrix<f64>,
    pub covariate_names: Vec<String>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.times.len()
    }
}

#[derive(Debug, Clone)]
pub struct CsvSpec<'a> {
    pub plan: &'a CodingPlan,
    pub time_col: &'a str,
    /// When `None` the file is read without responses (forecast input).
    pub response_col: Option<&'a str>,
    pub log_transform: bool,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Load {
            row: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })
}

/// Reads and codes a CSV table. Rows keep file order.
pub fn read_table<R: Read>(reader: R, spec: &CsvSpec<'_>) -> Result<Table> {
    spec.plan.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let time_idx = column_index(&headers, spec.time_col)?;
    let resp_idx = spec
        .response_col
        .map(|c| column_index(&headers, c))
        .transpose()?;
    let var_idx = spec
        .plan
        .variables
        .iter()
        .map(|v| column_index(&headers, &v.name))
        .collect::<Result<Vec<_>>>()?;

    // Lookup of category -> dummy offset within each categorical block.
    let cat_maps: Vec<Option<HashMap<&str, Option<usize>>>> = spec
        .plan
        .variables
        .iter()
        .map(|v| match &v.kind {
            VariableKind::Numeric => None,
            VariableKind::Categorical {
                categories,
                baseline,
            } => {
                let mut m = HashMap::new();
                let mut pos = 0;
                for c in categories {
                    if c == baseline {
                        m.insert(c.as_str(), None);
                    } else {
                        m.insert(c.as_str(), Some(pos));
                        pos += 1;
                    }
                }
                Some(m)
            }
        })
        .collect();

    let k = spec.plan.n_columns();
    let mut times = Vec::new();
    let mut response = Vec::new();
    let mut values: Vec<f64> = Vec::new();

    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        let field = |idx: usize, col: &str| -> Result<&str> {
            rec.get(idx).map(str::trim).ok_or_else(|| Error::Load {
                row,
                column: col.to_string(),
                message: "missing field".into(),
            })
        };
        let label = field(time_idx, spec.time_col)?;
        if label.is_empty() {
            return Err(Error::Load {
                row,
                column: spec.time_col.to_string(),
                message: "empty time label".into(),
            });
        }
        times.push(label.to_string());

        if let (Some(idx), Some(col)) = (resp_idx, spec.response_col) {
            let raw = field(idx, col)?;
            let v: f64 = raw.parse().map_err(|_| Error::Load {
                row,
                column: col.to_string(),
                message: format!("cannot parse '{raw}' as a number"),
            })?;
            let v = if spec.log_transform {
                if v <= 0.0 {
                    return Err(Error::Load {
                        row,
                        column: col.to_string(),
                        message: format!("non-positive price {v} under log transform"),
                    });
                }
                v.log10()
            } else {
                v
            };
            if !v.is_finite() {
                return Err(Error::Load {
                    row,
                    column: col.to_string(),
                    message: "non-finite response".into(),
                });
            }
            response.push(v);
        }

        for ((var, &idx), cmap) in spec.plan.variables.iter().zip(&var_idx).zip(&cat_maps) {
            let raw = field(idx, &var.name)?;
            match cmap {
                None => {
                    let v: f64 = raw.parse().map_err(|_| Error::Load {
                        row,
                        column: var.name.clone(),
                        message: format!("cannot parse '{raw}' as a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Load {
                            row,
                            column: var.name.clone(),
                            message: "non-finite value".into(),
                        });
                    }
                    values.push(v);
                }
                Some(m) => {
                    let slot = m.get(raw).ok_or_else(|| Error::Load {
                        row,
                        column: var.name.clone(),
                        message: format!("unknown category '{raw}'"),
                    })?;
                    let width = m.len() - 1;
                    let start = values.len();
                    values.resize(start + width, 0.0);
                    if let Some(p) = slot {
                        values[start + p] = 1.0;
                    }
                }
            }
        }
    }

    let n = times.len();
    Ok(Table {
        times,
        response: resp_idx.map(|_| response),
        x: DMatrix::from_row_slice(n, k, &values),
        covariate_names: spec.plan.column_names(),
    })
}

impl Table {
    /// Groups rows by time label (sorted with [`time_sort_key`]); row order
    /// within a label follows the file.
    pub fn into_dataset(self) -> Result<Dataset> {
        let response = self
            .response
            .ok_or_else(|| Error::Dataset("table has no response column".into()))?;
        let mut by_label: BTreeMap<String, (String, Vec<usize>)> = BTreeMap::new();
        for (i, t) in self.times.iter().enumerate() {
            by_label
                .entry(time_sort_key(t))
                .or_insert_with(|| (t.clone(), Vec::new()))
                .1
                .push(i);
        }
        let k = self.x.ncols();
        let mut times = Vec::with_capacity(by_label.len());
        let mut groups = Vec::with_capacity(by_label.len());
        for (_, (label, rows)) in by_label {
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| response[r]));
            let x = DMatrix::from_fn(rows.len(), k, |i, j| self.x[(rows[i], j)]);
            times.push(label);
            groups.push(Group { y, x });
        }
        Dataset::new(times, groups, self.covariate_names)
    }
}

/// Loads a CSV file into a grouped [`Dataset`].
pub fn load_csv(
    path: impl AsRef<Path>,
    plan: &CodingPlan,
    time_col: &str,
    response_col: &str,
    log_transform: bool,
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let spec = CsvSpec {
        plan,
        time_col,
        response_col: Some(response_col),
        log_transform,
    };
    read_table(std::io::BufReader::new(file), &spec)?.into_dataset()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoldoutMode {
    /// Move the whole final period to the test set.
    LastPeriod,
    /// Remove `count` rows uniformly at random without emptying any period.
    RandomRows { count: usize, seed: u64 },
}

/// Splits a dataset into (train, test). The test set may contain zero periods.
pub fn split_holdout(d: &Dataset, mode: HoldoutMode) -> Result<(Dataset, Dataset)> {
    match mode {
        HoldoutMode::LastPeriod => {
            if d.n_periods() < 3 {
                return Err(Error::InvalidArgument(format!(
                    "last-period holdout needs at least 3 periods, found {}",
                    d.n_periods()
                )));
            }
            let t = d.n_periods() - 1;
            let train = Dataset {
                times: d.times[..t].to_vec(),
                groups: d.groups[..t].to_vec(),
                covariate_names: d.covariate_names.clone(),
            };
            let test = Dataset {
                times: vec![d.times[t].clone()],
                groups: vec![d.groups[t].clone()],
                covariate_names: d.covariate_names.clone(),
            };
            Ok((train, test))
        }
        HoldoutMode::RandomRows { count, seed } => {
            let removable = d.n_total() - d.n_periods();
            if count > removable {
                return Err(Error::InvalidArgument(format!(
                    "cannot hold out {count} rows: at most {removable} can be removed without emptying a period"
                )));
            }
            let mut all: Vec<(usize, usize)> = d
                .groups
                .iter()
                .enumerate()
                .flat_map(|(t, g)| (0..g.len()).map(move |i| (t, i)))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            all.shuffle(&mut rng);

            let mut remaining = d.group_sizes();
            let mut held: Vec<Vec<bool>> = d.groups.iter().map(|g| vec![false; g.len()]).collect();
            let mut taken = 0;
            for (t, i) in all {
                if taken == count {
                    break;
                }
                if remaining[t] > 1 {
                    remaining[t] -= 1;
                    held[t][i] = true;
                    taken += 1;
                }
            }

            let pick = |g: &Group, mask: &[bool], want: bool| -> Option<Group> {
                let rows: Vec<usize> = (0..g.len()).filter(|&i| mask[i] == want).collect();
                if rows.is_empty() {
                    return None;
                }
                Some(Group {
                    y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| g.y[r])),
                    x: DMatrix::from_fn(rows.len(), g.x.ncols(), |i, j| g.x[(rows[i], j)]),
                })
            };
            let mut train = Dataset {
                times: Vec::new(),
                groups: Vec::new(),
                covariate_names: d.covariate_names.clone(),
            };
            let mut test = train.clone();
            for ((label, g), mask) in d.times.iter().zip(&d.groups).zip(&held) {
                if let Some(tr) = pick(g, mask, false) {
                    train.times.push(label.clone());
                    train.groups.push(tr);
                }
                if let Some(te) = pick(g, mask, true) {
                    test.times.push(label.clone());
                    test.groups.push(te);
                }
            }
            Ok((train, test))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan_abc() -> CodingPlan {
        CodingPlan {
            variables: vec![Variable {
                name: "kind".into(),
                kind: VariableKind::Categorical {
                    categories: vec!["A".into(), "B".into(), "C".into()],
                    baseline: "A".into(),
                },
            }],
        }
    }

    fn read(text: &str, plan: &CodingPlan, log: bool) -> Result<Dataset> {
        let spec = CsvSpec {
            plan,
            time_col: "time",
            response_col: Some("price"),
            log_transform: log,
        };
        read_table(text.as_bytes(), &spec)?.into_dataset()
    }

    #[test]
    fn three_rows_two_periods_one_categorical() {
        let d = read(
            "time,price,kind\n2000-1,10,A\n2000-2,20,B\n2000-1,30,C\n",
            &plan_abc(),
            false,
        )
        .unwrap();
        assert_eq!(d.n_periods(), 2);
        assert_eq!(d.n_covariates(), 2);
        assert_eq!(d.covariate_names(), &["kind[B]", "kind[C]"]);
        assert_eq!(d.group(0).len(), 2);
        assert_eq!(
            d.group(0).x.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            d.group(0).x.row(1).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0]
        );
        assert_eq!(
            d.group(1).x.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0]
        );
    }

    #[test]
    fn log10_transform() {
        let d = read("time,price,kind\n1,100,A\n", &plan_abc(), true).unwrap();
        assert_eq!(d.group(0).y[0], 2.0);
    }

    #[test]
    fn nonpositive_price_is_rejected_with_location() {
        let err = read("time,price,kind\n1,100,A\n1,0,B\n", &plan_abc(), true).unwrap_err();
        match err {
            Error::Load { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "price");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_category_is_an_error() {
        let err = read("time,price,kind\n1,100,Z\n", &plan_abc(), false).unwrap_err();
        assert!(matches!(err, Error::Load { row: 2, ref column, .. } if column == "kind"));
    }

    #[test]
    fn missing_column_is_an_error() {
        let err = read("time,cost,kind\n1,100,A\n", &plan_abc(), false).unwrap_err();
        assert!(matches!(err, Error::Load { row: 1, ref column, .. } if column == "price"));
    }

    #[test]
    fn labels_sort_with_zero_padding() {
        let d = read(
            "time,price,kind\n1998-10,1,A\n1998-2,1,A\n1997-2,1,A\n1998-1,1,A\n",
            &plan_abc(),
            false,
        )
        .unwrap();
        assert_eq!(d.times(), &["1997-2", "1998-1", "1998-2", "1998-10"]);
    }

    #[test]
    fn group_of_73_rows() {
        let mut text = String::from("time,price,kind\n");
        for _ in 0..10 {
            text.push_str("2011-1,5,A\n");
        }
        for _ in 0..73 {
            text.push_str("2011-2,5,B\n");
        }
        let d = read(&text, &plan_abc(), false).unwrap();
        assert_eq!(d.group_sizes(), vec![10, 73]);
    }

    #[test]
    fn baseline_must_be_a_category() {
        let plan = CodingPlan {
            variables: vec![Variable {
                name: "kind".into(),
                kind: VariableKind::Categorical {
                    categories: vec!["A".into()],
                    baseline: "X".into(),
                },
            }],
        };
        assert!(plan.validate().is_err());
    }

    fn toy(groups: &[usize]) -> Dataset {
        let mut v = 0.0;
        let gs = groups
            .iter()
            .map(|&n| {
                let y = DVector::from_fn(n, |_, _| {
                    v += 1.0;
                    v
                });
                let x = DMatrix::from_fn(n, 1, |i, _| y[i] * 0.5);
                Group { y, x }
            })
            .collect();
        let times = (0..groups.len()).map(|t| format!("{}", t + 1)).collect();
        Dataset::new(times, gs, vec!["x".into()]).unwrap()
    }

    #[test]
    fn last_period_holdout() {
        let d = toy(&[3; 28]);
        let (train, test) = split_holdout(&d, HoldoutMode::LastPeriod).unwrap();
        assert_eq!(train.n_periods(), 27);
        assert_eq!(test.n_periods(), 1);
        assert_eq!(test.times(), &["28"]);
        assert!(split_holdout(&toy(&[2, 2]), HoldoutMode::LastPeriod).is_err());
    }

    #[test]
    fn random_holdout_zero_is_identity() {
        let d = toy(&[3, 4, 5]);
        let (train, test) =
            split_holdout(&d, HoldoutMode::RandomRows { count: 0, seed: 7 }).unwrap();
        assert_eq!(train, d);
        assert_eq!(test.n_periods(), 0);
    }

    #[test]
    fn random_holdout_recount() {
        let sizes: Vec<usize> = (0..28).map(|t| 200 + 20 * t).collect();
        let d = toy(&sizes);
        let n = d.n_total();
        let (train, test) = split_holdout(
            &d,
            HoldoutMode::RandomRows {
                count: 100,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(train.n_total(), n - 100);
        assert_eq!(test.n_total(), 100);
        // Recount per label: train + test sizes reproduce the input sizes.
        for (t, label) in d.times().iter().enumerate() {
            let a = train
                .period_index(label)
                .map_or(0, |i| train.group(i).len());
            let b = test.period_index(label).map_or(0, |i| test.group(i).len());
            assert!(a >= 1);
            assert_eq!(a + b, d.group(t).len());
        }
        // The union of responses is the input multiset (responses are unique here).
        let mut all: Vec<f64> = train
            .stacked_y()
            .iter()
            .chain(test.stacked_y().iter())
            .copied()
            .collect();
        all.sort_by(f64::total_cmp);
        let mut orig: Vec<f64> = d.stacked_y().iter().copied().collect();
        orig.sort_by(f64::total_cmp);
        assert_eq!(all, orig);
    }

    #[test]
    fn random_holdout_too_many() {
        let d = toy(&[2, 2]);
        assert!(split_holdout(&d, HoldoutMode::RandomRows { count: 3, seed: 1 }).is_err());
        assert!(split_holdout(&d, HoldoutMode::RandomRows { count: 2, seed: 1 }).is_ok());
    }
}
