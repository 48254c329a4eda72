//! Histograms, counting queries and grouped workloads.
//!
//! A histogram is a flat vector of nonnegative cell weights with a 1-D or
//! 2-D row-major shape. A counting query is a 0/1 indicator over those
//! cells; its answer is the dot product with the cell vector. Queries are
//! organized into named groups whose members are pairwise disjoint, and a
//! workload is an ordered list of groups.

use std::collections::HashSet;

use thiserror::Error;

use crate::mechanisms::NoiseSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape {shape:?} describes {expected} cells but {actual} were given")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("histograms must be 1-D or 2-D, got {0} dimensions")]
    BadRank(usize),
    #[error("cell {index} is negative or not finite ({value})")]
    NegativeCell { index: usize, value: f64 },
    #[error("query `{id}` has {actual} entries, histogram has {expected} cells")]
    DimensionMismatch { id: String, expected: usize, actual: usize },
    #[error("queries `{first}` and `{second}` in group `{group}` overlap at cell {cell}")]
    OverlappingQueries {
        group: String,
        first: String,
        second: String,
        cell: usize,
    },
    #[error("duplicate group name `{0}`")]
    DuplicateGroup(String),
    #[error("duplicate query id `{0}`")]
    DuplicateQuery(String),
    #[error("workload has no queries")]
    EmptyWorkload,
    #[error("workload `{0}` requires a 2-D shape")]
    NeedsTwoDims(&'static str),
}

/// Nonnegative cell weights with a 1-D or 2-D row-major shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    cells: Vec<f64>,
    shape: Vec<usize>,
}

impl Histogram {
    pub fn new(cells: Vec<f64>, shape: Vec<usize>) -> Result<Self, ModelError> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(ModelError::BadRank(shape.len()));
        }
        let expected: usize = shape.iter().product();
        if expected != cells.len() {
            return Err(ModelError::ShapeMismatch {
                shape,
                expected,
                actual: cells.len(),
            });
        }
        if let Some((index, &value)) = cells.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(ModelError::NegativeCell { index, value });
        }
        Ok(Self { cells, shape })
    }

    pub fn one_dim(cells: Vec<f64>) -> Result<Self, ModelError> {
        let n = cells.len();
        Self::new(cells, vec![n])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, ModelError> {
        let n = shape.iter().product();
        Self::new(vec![0.0; n], shape)
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    /// Same cells viewed under a different shape.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, ModelError> {
        Self::new(self.cells.clone(), shape)
    }

    pub fn into_cells(self) -> Vec<f64> {
        self.cells
    }
}

/// A 0/1 indicator over histogram cells with a stable string id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CountingQuery {
    id: String,
    indicator: Vec<bool>,
}

impl CountingQuery {
    pub fn new(id: impl Into<String>, indicator: Vec<bool>) -> Self {
        Self {
            id: id.into(),
            indicator,
        }
    }

    /// Query indicating exactly the given cells.
    pub fn from_cells(id: impl Into<String>, len: usize, cells: impl IntoIterator<Item = usize>) -> Self {
        let mut indicator = vec![false; len];
        for c in cells {
            indicator[c] = true;
        }
        Self::new(id, indicator)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    pub fn len(&self) -> usize {
        self.indicator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicator.is_empty()
    }

    /// Indices of indicated cells, ascending.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.indicator.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    /// Dot product with a raw cell vector; lengths must already agree.
    pub fn dot(&self, cells: &[f64]) -> f64 {
        debug_assert_eq!(cells.len(), self.indicator.len());
        self.support().map(|i| cells[i]).sum()
    }

    pub fn evaluate(&self, h: &Histogram) -> Result<f64, ModelError> {
        if h.len() != self.len() {
            return Err(ModelError::DimensionMismatch {
                id: self.id.clone(),
                expected: h.len(),
                actual: self.len(),
            });
        }
        Ok(self.dot(h.cells()))
    }
}

/// Answer of `query` on `h`.
pub fn evaluate(query: &CountingQuery, h: &Histogram) -> Result<f64, ModelError> {
    query.evaluate(h)
}

/// A named family of pairwise disjoint queries sharing one noise spec.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    name: String,
    queries: Vec<CountingQuery>,
    noise: Option<NoiseSpec>,
}

impl QueryGroup {
    pub fn new(name: impl Into<String>, queries: Vec<CountingQuery>) -> Result<Self, ModelError> {
        let name = name.into();
        let mut owner: Vec<Option<usize>> = Vec::new();
        for (qi, q) in queries.iter().enumerate() {
            if owner.len() < q.len() {
                owner.resize(q.len(), None);
            }
            for c in q.support() {
                if let Some(prev) = owner[c] {
                    return Err(ModelError::OverlappingQueries {
                        group: name,
                        first: queries[prev].id().to_string(),
                        second: q.id().to_string(),
                        cell: c,
                    });
                }
                owner[c] = Some(qi);
            }
        }
        Ok(Self {
            name,
            queries,
            noise: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn queries(&self) -> &[CountingQuery] {
        &self.queries
    }

    pub fn noise(&self) -> Option<&NoiseSpec> {
        self.noise.as_ref()
    }

    pub fn with_noise(mut self, spec: NoiseSpec) -> Self {
        self.noise = Some(spec);
        self
    }
}

/// Ordered list of query groups over one histogram shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    groups: Vec<QueryGroup>,
    cells: usize,
}

impl Workload {
    pub fn new(groups: Vec<QueryGroup>) -> Result<Self, ModelError> {
        let mut names = HashSet::new();
        let mut ids = HashSet::new();
        let mut cells = None;
        for g in &groups {
            if !names.insert(g.name().to_string()) {
                return Err(ModelError::DuplicateGroup(g.name().to_string()));
            }
            for q in g.queries() {
                if !ids.insert(q.id().to_string()) {
                    return Err(ModelError::DuplicateQuery(q.id().to_string()));
                }
                match cells {
                    None => cells = Some(q.len()),
                    Some(n) if n != q.len() => {
                        return Err(ModelError::DimensionMismatch {
                            id: q.id().to_string(),
                            expected: n,
                            actual: q.len(),
                        })
                    }
                    _ => {}
                }
            }
        }
        let cells = cells.ok_or(ModelError::EmptyWorkload)?;
        Ok(Self { groups, cells })
    }

    pub fn groups(&self) -> &[QueryGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&QueryGroup> {
        self.groups.iter().find(|g| g.name() == name)
    }

    /// Number of histogram cells the queries are dimensioned to.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn queries(&self) -> impl Iterator<Item = &CountingQuery> {
        self.groups.iter().flat_map(|g| g.queries().iter())
    }

    pub fn num_queries(&self) -> usize {
        self.groups.iter().map(|g| g.queries().len()).sum()
    }

    /// Replace each group's noise spec; `specs` is parallel to `groups()`.
    pub fn with_noise(&self, specs: &[NoiseSpec]) -> Self {
        assert_eq!(specs.len(), self.groups.len());
        let groups = self
            .groups
            .iter()
            .zip(specs)
            .map(|(g, s)| g.clone().with_noise(*s))
            .collect();
        Self {
            groups,
            cells: self.cells,
        }
    }

    /// Per-cell number of queries that indicate it.
    fn coverage(&self) -> Vec<usize> {
        let mut cover = vec![0usize; self.cells];
        for q in self.queries() {
            for c in q.support() {
                cover[c] += 1;
            }
        }
        cover
    }

    /// Sum query plus one identity query per cell.
    pub fn one_dim(cells: usize) -> Self {
        Self::new(vec![sum_group(cells), identity_group(cells)]).expect("well formed")
    }

    /// Sum, identity, then the two marginals of a row-major `rows x cols` grid.
    pub fn two_dim(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self::new(vec![
            sum_group(n),
            identity_group(n),
            marg1_group(rows, cols),
            marg2_group(rows, cols),
        ])
        .expect("well formed")
    }

    /// Default workload for a histogram shape.
    pub fn for_shape(shape: &[usize]) -> Result<Self, ModelError> {
        match shape {
            [n] => Ok(Self::one_dim(*n)),
            [r, c] => Ok(Self::two_dim(*r, *c)),
            other => Err(ModelError::BadRank(other.len())),
        }
    }
}

pub const SUM_GROUP: &str = "sum";
pub const IDENTITY_GROUP: &str = "id";
pub const MARG1_GROUP: &str = "marg1";
pub const MARG2_GROUP: &str = "marg2";

pub fn sum_group(cells: usize) -> QueryGroup {
    QueryGroup::new(SUM_GROUP, vec![CountingQuery::from_cells("sum", cells, 0..cells)]).expect("single query")
}

pub fn identity_group(cells: usize) -> QueryGroup {
    let qs = (0..cells)
        .map(|i| CountingQuery::from_cells(format!("id[{i}]"), cells, [i]))
        .collect();
    QueryGroup::new(IDENTITY_GROUP, qs).expect("disjoint")
}

/// One query per row, summing over columns.
pub fn marg1_group(rows: usize, cols: usize) -> QueryGroup {
    let n = rows * cols;
    let qs = (0..rows)
        .map(|r| CountingQuery::from_cells(format!("marg1[{r}]"), n, (0..cols).map(|c| r * cols + c)))
        .collect();
    QueryGroup::new(MARG1_GROUP, qs).expect("disjoint")
}

/// One query per column, summing over rows.
pub fn marg2_group(rows: usize, cols: usize) -> QueryGroup {
    let n = rows * cols;
    let qs = (0..cols)
        .map(|c| CountingQuery::from_cells(format!("marg2[{c}]"), n, (0..rows).map(|r| r * cols + c)))
        .collect();
    QueryGroup::new(MARG2_GROUP, qs).expect("disjoint")
}

/// Largest per-cell L1 column norm of the workload's query matrix.
pub fn l1_sensitivity(w: &Workload) -> Result<f64, ModelError> {
    if w.num_queries() == 0 {
        return Err(ModelError::EmptyWorkload);
    }
    Ok(w.coverage().into_iter().max().unwrap_or(0) as f64)
}

/// Largest per-cell L2 column norm of the workload's query matrix.
pub fn l2_sensitivity(w: &Workload) -> Result<f64, ModelError> {
    Ok(l1_sensitivity(w)?.sqrt())
}
