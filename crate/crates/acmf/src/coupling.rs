//! Item-item similarity from categorical attributes, the sparsified
//! neighbor graph and its Laplacian.
//!
//! Two metrics are available. SMS is the fraction of attributes on which
//! two items agree. COS combines, per attribute, an intra-coupled
//! similarity of the two value frequencies (IaAVS) with an inter-coupled
//! similarity aggregating conditional co-occurrence overlap across the
//! remaining attributes (IeAVS).
//!
//! Similarity is computed offline: [`build_graph`] keeps the `t` most
//! similar neighbors per item and retains the mutual selections, and the
//! result can be persisted with [`write_similarity_file`] and reloaded
//! later.

use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ItemAttributeTable;
use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Similarity metric selecting between plain matching and coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cos,
    Sms,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Cos => write!(f, "cos"),
            Metric::Sms => write!(f, "sms"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cos" => Ok(Metric::Cos),
            "sms" => Ok(Metric::Sms),
            other => Err(Error::InvalidConfig(format!(
                "unknown metric {other:?}, expected cos or sms"
            ))),
        }
    }
}

/// Parameters for similarity computation and graph sparsification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub metric: Metric,
    /// Neighbors kept per item before symmetrization.
    pub neighborhood_size: usize,
    /// Divide the COS sum by the attribute count so values stay in [0,1].
    pub normalize: bool,
    /// Base attribute weights for IeAVS; `None` means uniform. For a
    /// fixed target attribute `j` the remaining weights are renormalized
    /// to sum to one.
    pub weights: Option<Vec<f64>>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Cos,
            neighborhood_size: 40,
            normalize: true,
            weights: None,
        }
    }
}

impl CouplingConfig {
    fn validate(&self, n_attributes: usize) -> Result<()> {
        if self.neighborhood_size < 1 {
            return Err(Error::InvalidConfig(
                "neighborhood size must be at least 1".into(),
            ));
        }
        if let Some(w) = &self.weights {
            if w.len() != n_attributes {
                return Err(Error::InvalidConfig(format!(
                    "got {} attribute weights for {} attributes",
                    w.len(),
                    n_attributes
                )));
            }
            if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::InvalidConfig(
                    "attribute weights must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Renormalized weight of attribute `k` when computing IeAVS for
    /// target attribute `j`.
    fn alpha(&self, j: usize, k: usize, n_attributes: usize) -> Result<f64> {
        debug_assert_ne!(j, k);
        match &self.weights {
            None => Ok(1.0 / (n_attributes - 1) as f64),
            Some(w) => {
                let total: f64 = w
                    .iter()
                    .enumerate()
                    .filter(|(idx, _)| *idx != j)
                    .map(|(_, &x)| x)
                    .sum();
                if total <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "attribute weights excluding attribute {j} sum to zero"
                    )));
                }
                Ok(w[k] / total)
            }
        }
    }
}

/// Inverted index over attribute values: for each attribute `j` and
/// value code `x`, the set of items `g_j(x)`, plus the item rows.
#[derive(Debug, Clone)]
pub struct AttributeValueIndex {
    n_items: usize,
    /// `groups[j][code]` lists the items whose attribute `j` has `code`.
    groups: Vec<Vec<Vec<u32>>>,
    /// Per-item value codes, row-major.
    rows: Vec<Vec<u32>>,
}

/// Builds the inverted value index for a table. MISSING counts as an
/// ordinary value, so per attribute the group sizes sum to the item
/// count.
pub fn build_index(table: &ItemAttributeTable) -> AttributeValueIndex {
    let d = table.n_attributes();
    let n = table.n_items();
    let mut groups: Vec<Vec<Vec<u32>>> = (0..d)
        .map(|j| vec![Vec::new(); table.n_values(j) + 1])
        .collect();
    let mut rows = Vec::with_capacity(n);
    for item in 0..n as u32 {
        let row = table.row(item).to_vec();
        for (j, &code) in row.iter().enumerate() {
            groups[j][code as usize].push(item);
        }
        rows.push(row);
    }
    AttributeValueIndex {
        n_items: n,
        groups,
        rows,
    }
}

impl AttributeValueIndex {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_attributes(&self) -> usize {
        self.groups.len()
    }

    /// Item set `g_j(x)`.
    pub fn group(&self, attr: usize, code: u32) -> &[u32] {
        &self.groups[attr][code as usize]
    }

    /// Occurrence frequency `|g_j(x)|`.
    pub fn frequency(&self, attr: usize, code: u32) -> usize {
        self.groups[attr][code as usize].len()
    }

    pub fn row(&self, item: u32) -> &[u32] {
        &self.rows[item as usize]
    }

    fn check_observed(&self, attr: usize, code: u32) -> Result<()> {
        if (code as usize) < self.groups[attr].len() && self.frequency(attr, code) > 0 {
            Ok(())
        } else {
            Err(Error::UnknownId {
                kind: "attribute value",
                id: format!("code {code} of attribute {attr}"),
            })
        }
    }

    fn check_item(&self, item: u32) -> Result<()> {
        if (item as usize) < self.n_items {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                kind: "item",
                index: item as usize,
                len: self.n_items,
            })
        }
    }
}

/// Simple matching similarity: the fraction of attributes on which the
/// two items take identical values (MISSING matches MISSING).
pub fn sms(i: u32, j: u32, table: &ItemAttributeTable) -> Result<f64> {
    let n = table.n_items();
    for idx in [i, j] {
        if idx as usize >= n {
            return Err(Error::IndexOutOfRange {
                kind: "item",
                index: idx as usize,
                len: n,
            });
        }
    }
    let d = table.n_attributes();
    let matches = (0..d).filter(|&a| table.code(i, a) == table.code(j, a)).count();
    Ok(matches as f64 / d as f64)
}

/// Intra-coupled attribute value similarity, a function of the two
/// occurrence frequencies: `f·g / (f + g + f·g)`.
pub fn iaavs(attr: usize, x: u32, y: u32, index: &AttributeValueIndex) -> Result<f64> {
    index.check_observed(attr, x)?;
    index.check_observed(attr, y)?;
    let f = index.frequency(attr, x) as f64;
    let g = index.frequency(attr, y) as f64;
    Ok(f * g / (f + g + f * g))
}

/// Inter-coupled attribute value similarity: over every other attribute
/// `k`, the weighted overlap of the conditional value distributions of
/// `x` and `y`. With a single attribute the sum is empty and the
/// similarity is defined as 1.
pub fn ieavs(
    attr: usize,
    x: u32,
    y: u32,
    index: &AttributeValueIndex,
    config: &CouplingConfig,
) -> Result<f64> {
    index.check_observed(attr, x)?;
    index.check_observed(attr, y)?;
    let d = index.n_attributes();
    if d == 1 {
        return Ok(1.0);
    }

    // Conditional co-occurrence counts of every other attribute's codes
    // within g_attr(x) and g_attr(y).
    let count_codes = |code: u32| -> Vec<Vec<u32>> {
        let mut counts: Vec<Vec<u32>> = (0..d)
            .map(|k| vec![0u32; index.groups[k].len()])
            .collect();
        for &item in index.group(attr, code) {
            for (k, &w) in index.row(item).iter().enumerate() {
                counts[k][w as usize] += 1;
            }
        }
        counts
    };
    let cx = count_codes(x);
    let cy = count_codes(y);
    let fx = index.frequency(attr, x) as f64;
    let fy = index.frequency(attr, y) as f64;

    let mut total = 0.0;
    for k in 0..d {
        if k == attr {
            continue;
        }
        let alpha = config.alpha(attr, k, d)?;
        let mut overlap = 0.0;
        for w in 0..cx[k].len() {
            let nx = cx[k][w];
            let ny = cy[k][w];
            if nx > 0 && ny > 0 {
                overlap += (nx as f64 / fx).min(ny as f64 / fy);
            }
        }
        total += alpha * overlap;
    }
    Ok(total)
}

/// Coupled object similarity between two items: the per-attribute
/// product of IaAVS and IeAVS, summed over attributes and divided by the
/// attribute count when `normalize` is set.
pub fn cos(
    i: u32,
    j: u32,
    index: &AttributeValueIndex,
    config: &CouplingConfig,
) -> Result<f64> {
    index.check_item(i)?;
    index.check_item(j)?;
    let d = index.n_attributes();
    let mut sum = 0.0;
    for attr in 0..d {
        let x = index.row(i)[attr];
        let y = index.row(j)[attr];
        sum += iaavs(attr, x, y, index)? * ieavs(attr, x, y, index, config)?;
    }
    Ok(if config.normalize { sum / d as f64 } else { sum })
}

/// Per-attribute CAVS lookup tables over value-code pairs. Similarity
/// between two items is then a table lookup per attribute, which keeps
/// the pairwise pass cheap.
struct CavsTables {
    /// `tables[j][x * stride + y]` = IaAVS * IeAVS for codes (x, y).
    tables: Vec<Vec<f64>>,
    strides: Vec<usize>,
}

impl CavsTables {
    fn build(index: &AttributeValueIndex, config: &CouplingConfig) -> Result<CavsTables> {
        let d = index.n_attributes();
        let mut tables = Vec::with_capacity(d);
        let mut strides = Vec::with_capacity(d);
        for attr in 0..d {
            let n_codes = index.groups[attr].len();
            let mut table = vec![0.0; n_codes * n_codes];
            for x in 0..n_codes as u32 {
                if index.frequency(attr, x) == 0 {
                    continue;
                }
                for y in x..n_codes as u32 {
                    if index.frequency(attr, y) == 0 {
                        continue;
                    }
                    let value = iaavs(attr, x, y, index)?
                        * ieavs(attr, x, y, index, config)?;
                    table[x as usize * n_codes + y as usize] = value;
                    table[y as usize * n_codes + x as usize] = value;
                }
            }
            tables.push(table);
            strides.push(n_codes);
        }
        Ok(CavsTables { tables, strides })
    }

    #[inline]
    fn similarity(&self, row_i: &[u32], row_j: &[u32], normalize: bool) -> f64 {
        let d = self.tables.len();
        let mut sum = 0.0;
        for attr in 0..d {
            let stride = self.strides[attr];
            sum += self.tables[attr][row_i[attr] as usize * stride + row_j[attr] as usize];
        }
        if normalize {
            sum / d as f64
        } else {
            sum
        }
    }
}

/// Sparsified symmetric item-item similarity graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n_items: usize,
    /// Sorted neighbor lists `(neighbor, weight)`, symmetric, no self-loops.
    adjacency: Vec<Vec<(u32, f64)>>,
    /// Row sums of the similarity matrix.
    degree: Vec<f64>,
}

impl SimilarityGraph {
    /// Builds a graph from undirected edges; both directions are
    /// inserted, so the result is symmetric by construction.
    pub fn from_edges(n_items: usize, edges: &[(u32, u32, f64)]) -> Result<SimilarityGraph> {
        let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_items];
        for &(i, j, w) in edges {
            if i as usize >= n_items || j as usize >= n_items {
                return Err(Error::IndexOutOfRange {
                    kind: "item",
                    index: i.max(j) as usize,
                    len: n_items,
                });
            }
            if i == j {
                return Err(Error::InvalidConfig(format!("self-loop on item {i}")));
            }
            adjacency[i as usize].push((j, w));
            adjacency[j as usize].push((i, w));
        }
        for list in &mut adjacency {
            list.sort_unstable_by_key(|&(n, _)| n);
        }
        let degree = adjacency
            .iter()
            .map(|list| list.iter().map(|&(_, w)| w).sum())
            .collect();
        Ok(SimilarityGraph {
            n_items,
            adjacency,
            degree,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Neighbors of `item` with their similarity weights, ascending by
    /// neighbor index.
    pub fn neighbors(&self, item: u32) -> &[(u32, f64)] {
        &self.adjacency[item as usize]
    }

    /// Row sum of similarities for `item`.
    pub fn degree(&self, item: u32) -> f64 {
        self.degree[item as usize]
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges as `(i, j, weight)` with `i < j`, ordered.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, list)| {
            list.iter()
                .filter(move |&&(j, _)| (i as u32) < j)
                .map(move |&(j, w)| (i as u32, j, w))
        })
    }

    fn is_symmetric(&self) -> bool {
        for (i, list) in self.adjacency.iter().enumerate() {
            for &(j, w) in list {
                let back = &self.adjacency[j as usize];
                match back.binary_search_by_key(&(i as u32), |&(n, _)| n) {
                    Ok(pos) if back[pos].1 == w => {}
                    _ => return false,
                }
            }
        }
        true
    }
}

fn top_neighbors_row(
    item: u32,
    n_items: usize,
    t: usize,
    similarity: impl Fn(u32, u32) -> f64,
) -> Vec<(u32, f64)> {
    let mut candidates: Vec<(u32, f64)> = (0..n_items as u32)
        .filter(|&other| other != item)
        .filter_map(|other| {
            let s = similarity(item, other);
            (s > 0.0).then_some((other, s))
        })
        .collect();
    // Largest similarity first; ties go to the smaller dense index.
    candidates.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    candidates.truncate(t);
    candidates
}

fn assemble_graph(n_items: usize, rows: Vec<Vec<(u32, f64)>>) -> SimilarityGraph {
    // Mutual symmetrization: an edge survives only when both endpoints
    // selected each other, which caps every degree at t and keeps the
    // coupling strength commensurate with beta.
    let selected: Vec<std::collections::HashSet<u32>> = rows
        .iter()
        .map(|row| row.iter().map(|&(j, _)| j).collect())
        .collect();
    let mut edges: Vec<(u32, u32, f64)> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            if (i as u32) < j && selected[j as usize].contains(&(i as u32)) {
                edges.push((i as u32, j, w));
            }
        }
    }
    edges.sort_unstable_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    SimilarityGraph::from_edges(n_items, &edges).expect("edges are in range by construction")
}

fn graph_prepare<'a>(
    table: &'a ItemAttributeTable,
    config: &CouplingConfig,
) -> Result<(AttributeValueIndex, Option<CavsTables>)> {
    if table.n_items() < 2 {
        return Err(Error::InvalidConfig(
            "graph construction needs at least two items".into(),
        ));
    }
    config.validate(table.n_attributes())?;
    let index = build_index(table);
    let tables = match config.metric {
        Metric::Cos => Some(CavsTables::build(&index, config)?),
        Metric::Sms => None,
    };
    Ok((index, tables))
}

fn row_similarity<'a>(
    index: &'a AttributeValueIndex,
    tables: &'a Option<CavsTables>,
    config: &CouplingConfig,
) -> impl Fn(u32, u32) -> f64 + Sync + 'a {
    let normalize = config.normalize;
    let d = index.n_attributes() as f64;
    move |i: u32, j: u32| match tables {
        Some(t) => t.similarity(index.row(i), index.row(j), normalize),
        None => {
            let matches = index
                .row(i)
                .iter()
                .zip(index.row(j))
                .filter(|(a, b)| a == b)
                .count();
            matches as f64 / d
        }
    }
}

/// Builds the top-`t` neighbor graph sequentially.
pub fn build_graph_serial(
    table: &ItemAttributeTable,
    config: &CouplingConfig,
) -> Result<SimilarityGraph> {
    let (index, tables) = graph_prepare(table, config)?;
    let sim = row_similarity(&index, &tables, config);
    let n = table.n_items();
    let rows: Vec<Vec<(u32, f64)>> = (0..n as u32)
        .map(|i| top_neighbors_row(i, n, config.neighborhood_size, &sim))
        .collect();
    Ok(assemble_graph(n, rows))
}

/// Builds the top-`t` neighbor graph, using the rayon pool when the
/// `parallel` feature is enabled. Output is identical to
/// [`build_graph_serial`] regardless of thread count.
pub fn build_graph(
    table: &ItemAttributeTable,
    config: &CouplingConfig,
) -> Result<SimilarityGraph> {
    #[cfg(feature = "parallel")]
    {
        build_graph_parallel(table, config)
    }
    #[cfg(not(feature = "parallel"))]
    {
        build_graph_serial(table, config)
    }
}

/// Parallel graph construction over the rayon pool.
#[cfg(feature = "parallel")]
pub fn build_graph_parallel(
    table: &ItemAttributeTable,
    config: &CouplingConfig,
) -> Result<SimilarityGraph> {
    let (index, tables) = graph_prepare(table, config)?;
    let sim = row_similarity(&index, &tables, config);
    let n = table.n_items();
    let rows: Vec<Vec<(u32, f64)>> = (0..n as u32)
        .into_par_iter()
        .map(|i| top_neighbors_row(i, n, config.neighborhood_size, &sim))
        .collect();
    Ok(assemble_graph(n, rows))
}

/// The graph Laplacian `L = D - S` in sparse form.
pub struct LaplacianView<'a> {
    graph: &'a SimilarityGraph,
}

/// Wraps a symmetric similarity graph as its Laplacian.
pub fn laplacian(graph: &SimilarityGraph) -> Result<LaplacianView<'_>> {
    if !graph.is_symmetric() {
        return Err(Error::InvalidConfig(
            "Laplacian requires a symmetric graph".into(),
        ));
    }
    Ok(LaplacianView { graph })
}

impl LaplacianView<'_> {
    pub fn n_items(&self) -> usize {
        self.graph.n_items()
    }

    /// Row sum of `L`; zero up to rounding by construction.
    pub fn row_sum(&self, item: u32) -> f64 {
        let neighbor_sum: f64 = self.graph.neighbors(item).iter().map(|&(_, w)| w).sum();
        self.graph.degree(item) - neighbor_sum
    }

    /// Quadratic form `x^T L x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.graph.n_items());
        let mut total = 0.0;
        for i in 0..x.len() {
            total += self.graph.degree(i as u32) * x[i] * x[i];
            for &(j, w) in self.graph.neighbors(i as u32) {
                total -= w * x[i] * x[j as usize];
            }
        }
        total
    }

    /// `tr(Q L Q^T)` for `Q` given as `K` rows of length `n_items`.
    pub fn trace_quad(&self, q_rows: &[Vec<f64>]) -> f64 {
        q_rows.iter().map(|row| self.quad(row)).sum()
    }

    /// Dense `L` for small graphs; intended for tests and debugging.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.graph.n_items();
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            dense[i][i] = self.graph.degree(i as u32);
            for &(j, w) in self.graph.neighbors(i as u32) {
                dense[i][j as usize] = -w;
            }
        }
        dense
    }
}

/// Metadata stored in a similarity file header.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityFileMeta {
    pub metric: Metric,
    pub neighbors: usize,
    pub normalize: bool,
    pub n_items: usize,
    pub digest: String,
}

const SIMILARITY_MAGIC: &str = "#acmf-sim\tv1";

/// Writes the graph as TSV edges `i<TAB>j<TAB>weight` with `i < j` in
/// ascending pair order, preceded by a header recording the metric,
/// neighborhood size, normalization flag, item count and an input
/// content digest.
pub fn write_similarity_file<W: Write>(
    mut w: W,
    graph: &SimilarityGraph,
    meta: &SimilarityFileMeta,
) -> Result<()> {
    writeln!(
        w,
        "{SIMILARITY_MAGIC}\tmetric={}\tneighbors={}\tnormalize={}\tn_items={}\tdigest={}",
        meta.metric, meta.neighbors, meta.normalize, meta.n_items, meta.digest
    )?;
    for (i, j, weight) in graph.edges() {
        writeln!(w, "{i}\t{j}\t{weight}")?;
    }
    Ok(())
}

/// Reads a similarity file back into a graph plus its header metadata.
pub fn read_similarity_file<R: Read>(r: R) -> Result<(SimilarityGraph, SimilarityFileMeta)> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty similarity file".into(),
        })?;
    if !header.starts_with(SIMILARITY_MAGIC) {
        return Err(Error::Parse {
            line: 1,
            msg: "not a similarity file (missing header)".into(),
        });
    }
    let mut metric = None;
    let mut neighbors = None;
    let mut normalize = None;
    let mut n_items = None;
    let mut digest = None;
    for field in header.split('\t').skip(2) {
        let (key, value) = field.split_once('=').ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("malformed header field {field:?}"),
        })?;
        match key {
            "metric" => metric = Some(value.parse::<Metric>()?),
            "neighbors" => neighbors = value.parse::<usize>().ok(),
            "normalize" => normalize = value.parse::<bool>().ok(),
            "n_items" => n_items = value.parse::<usize>().ok(),
            "digest" => digest = Some(value.to_string()),
            _ => {}
        }
    }
    let meta = SimilarityFileMeta {
        metric: metric.ok_or_else(|| Error::Parse {
            line: 1,
            msg: "header missing metric".into(),
        })?,
        neighbors: neighbors.ok_or_else(|| Error::Parse {
            line: 1,
            msg: "header missing neighbors".into(),
        })?,
        normalize: normalize.unwrap_or(true),
        n_items: n_items.ok_or_else(|| Error::Parse {
            line: 1,
            msg: "header missing n_items".into(),
        })?,
        digest: digest.unwrap_or_default(),
    };

    let mut edges = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let lineno = n + 2;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let i: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad edge source".into()))?;
        let j: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad edge target".into()))?;
        let w: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad edge weight".into()))?;
        if i >= j {
            return Err(parse_err(format!("edge ({i}, {j}) is not ordered i < j")));
        }
        edges.push((i, j, w));
    }
    let graph = SimilarityGraph::from_edges(meta.n_items, &edges)?;
    Ok((graph, meta))
}
