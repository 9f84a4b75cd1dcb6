//! Dueling datasets: synthetic generators, CSV ingestion and export, splits,
//! and effective-feature detection.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{PrefShapError, Result};
use crate::kernel::{k_pref, CoalitionMask, FeatureKind, KernelParams};

/// A table of covariates keyed by string ids.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    pub features: DMatrix<f64>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, names: Vec<String>, features: DMatrix<f64>) -> Result<Self> {
        if ids.len() != features.nrows() {
            return Err(PrefShapError::Shape {
                context: "table ids vs rows",
                expected: features.nrows(),
                actual: ids.len(),
            });
        }
        if names.len() != features.ncols() {
            return Err(PrefShapError::Shape {
                context: "table names vs columns",
                expected: features.ncols(),
                actual: names.len(),
            });
        }
        let mut seen = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if let Some(prev) = seen.insert(id.as_str(), i) {
                return Err(PrefShapError::Input(format!(
                    "duplicate id {id:?} (rows {prev} and {i})"
                )));
            }
        }
        Ok(Self { ids, names, features })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    fn index_map(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }
}

pub type ItemTable = FeatureTable;
pub type ContextTable = FeatureTable;

/// One comparison. `y = +1` means the left item won.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Match {
    pub left: usize,
    pub right: usize,
    pub y: i8,
    pub context: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: ItemTable,
    pub matches: Vec<Match>,
    pub contexts: Option<ContextTable>,
    /// Per-item group tag, only used to filter explanations.
    pub clusters: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        items: ItemTable,
        matches: Vec<Match>,
        contexts: Option<ContextTable>,
        clusters: Option<Vec<String>>,
    ) -> Result<Self> {
        let ds = Self {
            items,
            matches,
            contexts,
            clusters,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.items.len();
        for (k, m) in self.matches.iter().enumerate() {
            if m.left >= n || m.right >= n {
                return Err(PrefShapError::Input(format!(
                    "match {k} references item index out of range ({}, {}) for {n} items",
                    m.left, m.right
                )));
            }
            if m.y != 1 && m.y != -1 {
                return Err(PrefShapError::Input(format!(
                    "match {k} has outcome {} outside {{-1, +1}}",
                    m.y
                )));
            }
            match (&self.contexts, m.context) {
                (Some(ctx), Some(c)) if c < ctx.len() => {}
                (Some(ctx), Some(c)) => {
                    return Err(PrefShapError::Input(format!(
                        "match {k} references context {c} but only {} exist",
                        ctx.len()
                    )))
                }
                (Some(_), None) => {
                    return Err(PrefShapError::Input(format!("match {k} has no context index")))
                }
                (None, Some(_)) => {
                    return Err(PrefShapError::Input(format!(
                        "match {k} has a context index but no context table is present"
                    )))
                }
                (None, None) => {}
            }
        }
        if let Some(c) = &self.clusters {
            if c.len() != n {
                return Err(PrefShapError::Shape {
                    context: "cluster labels",
                    expected: n,
                    actual: c.len(),
                });
            }
        }
        Ok(())
    }

    /// Dataset sharing this item and context tables, restricted to the given matches.
    pub fn with_matches(&self, indices: &[usize]) -> Self {
        Self {
            items: self.items.clone(),
            matches: indices.iter().map(|&i| self.matches[i]).collect(),
            contexts: self.contexts.clone(),
            clusters: self.clusters.clone(),
        }
    }

    /// Same matches with the context table dropped.
    pub fn without_contexts(&self) -> Self {
        Self {
            items: self.items.clone(),
            matches: self
                .matches
                .iter()
                .map(|m| Match { context: None, ..*m })
                .collect(),
            contexts: None,
            clusters: self.clusters.clone(),
        }
    }

    pub fn labels(&self) -> Vec<f64> {
        self.matches.iter().map(|m| m.y as f64).collect()
    }
}

pub const SYNTHETIC_FEATURES: [&str; 7] = [
    "x0", "xAB", "xAC", "xBC", "cluster_A", "cluster_B", "cluster_C",
];
const CLUSTER_NAMES: [&str; 3] = ["A", "B", "C"];

/// Column of the covariate deciding a match between clusters `a` and `b`.
fn inter_cluster_column(a: usize, b: usize) -> usize {
    match (a.min(b), a.max(b)) {
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 2) => 3,
        _ => unreachable!("clusters must differ"),
    }
}

/// The column that a flipped context uses instead: AB → AC → BC → AB.
fn rotated_column(col: usize) -> usize {
    match col {
        1 => 2,
        2 => 3,
        3 => 1,
        other => other,
    }
}

/// Outcome of the cluster game. Ties go to the left item.
pub fn cluster_game_outcome(
    left: &[f64],
    right: &[f64],
    left_cluster: usize,
    right_cluster: usize,
    flipped: bool,
) -> i8 {
    let col = if left_cluster == right_cluster {
        0
    } else {
        let c = inter_cluster_column(left_cluster, right_cluster);
        if flipped {
            rotated_column(c)
        } else {
            c
        }
    };
    if left[col] >= right[col] {
        1
    } else {
        -1
    }
}

fn check_sizes(n_items: usize, n_matches: usize) -> Result<()> {
    if n_items < 3 {
        return Err(PrefShapError::Input(format!("need at least 3 items, got {n_items}")));
    }
    if n_matches < 1 {
        return Err(PrefShapError::Input("need at least one match".into()));
    }
    Ok(())
}

fn cluster_items(n_items: usize, rng: &mut ChaCha8Rng) -> (ItemTable, Vec<usize>) {
    let mut clusters = Vec::with_capacity(n_items);
    let features = DMatrix::from_fn(n_items, 7, |_, _| 0.0);
    let mut features = features;
    for i in 0..n_items {
        for j in 0..4 {
            features[(i, j)] = rng.sample(StandardNormal);
        }
        let c = rng.random_range(0..3usize);
        features[(i, 4 + c)] = 1.0;
        clusters.push(c);
    }
    let table = FeatureTable {
        ids: (0..n_items).map(|i| format!("item{i}")).collect(),
        names: SYNTHETIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        features,
    };
    (table, clusters)
}

fn random_pair(n: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// The non-rankable cluster game: items carry `[x0, xAB, xAC, xBC]` drawn
/// from a standard normal plus a one-hot cluster in `{A, B, C}`. Matches
/// between clusters are won by the larger shared inter-cluster covariate;
/// matches within a cluster by the larger `x0`.
pub fn gen_synthetic(n_items: usize, n_matches: usize, seed: u64) -> Result<Dataset> {
    check_sizes(n_items, n_matches)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (items, clusters) = cluster_items(n_items, &mut rng);
    let mut matches = Vec::with_capacity(n_matches);
    for _ in 0..n_matches {
        let (l, r) = random_pair(n_items, &mut rng);
        let y = cluster_game_outcome(
            items.features.row(l).transpose().as_slice(),
            items.features.row(r).transpose().as_slice(),
            clusters[l],
            clusters[r],
            false,
        );
        matches.push(Match {
            left: l,
            right: r,
            y,
            context: None,
        });
    }
    Dataset::new(
        items,
        matches,
        None,
        Some(clusters.iter().map(|&c| CLUSTER_NAMES[c].to_string()).collect()),
    )
}

/// The cluster game with a two-column context `[flip, aux]`. Contexts with
/// `flip = 1` rotate which inter-cluster covariate decides the match; `aux`
/// is noise.
pub fn gen_context_synthetic(
    n_items: usize,
    n_contexts: usize,
    n_matches: usize,
    seed: u64,
) -> Result<Dataset> {
    check_sizes(n_items, n_matches)?;
    if n_contexts < 1 {
        return Err(PrefShapError::Input("need at least one context".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (items, clusters) = cluster_items(n_items, &mut rng);
    let mut ctx = DMatrix::zeros(n_contexts, 2);
    for i in 0..n_contexts {
        ctx[(i, 0)] = (i % 2) as f64;
        ctx[(i, 1)] = rng.sample(StandardNormal);
    }
    let contexts = FeatureTable {
        ids: (0..n_contexts).map(|i| format!("ctx{i}")).collect(),
        names: vec!["flip".into(), "aux".into()],
        features: ctx,
    };
    let mut matches = Vec::with_capacity(n_matches);
    for _ in 0..n_matches {
        let (l, r) = random_pair(n_items, &mut rng);
        let c = rng.random_range(0..n_contexts);
        let flipped = contexts.features[(c, 0)] == 1.0;
        let y = cluster_game_outcome(
            items.features.row(l).transpose().as_slice(),
            items.features.row(r).transpose().as_slice(),
            clusters[l],
            clusters[r],
            flipped,
        );
        matches.push(Match {
            left: l,
            right: r,
            y,
            context: Some(c),
        });
    }
    Dataset::new(
        items,
        matches,
        Some(contexts),
        Some(clusters.iter().map(|&c| CLUSTER_NAMES[c].to_string()).collect()),
    )
}

pub const GPM_DRAW_DIM: usize = 10;
pub const GPM_DRAW_DEFAULT_MATCHES: usize = 8000;
const GPM_DRAW_ANCHORS: usize = 20;

/// Matches sampled from a random skew-symmetric preference function.
///
/// Covariates are drawn from `N(0, 0.1 I)` in ten dimensions; only the first
/// two carry signal, the remaining eight are fixed at 0. The latent `g` is a
/// random combination of preferential kernels centred on anchor pairs, and
/// each outcome is a Bernoulli draw with `P(left wins) = σ(g)`.
pub fn gen_gpm_draw(n_items: usize, n_matches: usize, seed: u64) -> Result<Dataset> {
    check_sizes(n_items, n_matches)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = Normal::new(0.0, 0.1f64.sqrt()).expect("valid normal");
    let mut x = DMatrix::zeros(n_items, GPM_DRAW_DIM);
    for i in 0..n_items {
        x[(i, 0)] = cov.sample(&mut rng);
        x[(i, 1)] = cov.sample(&mut rng);
    }
    let anchors: Vec<([f64; 2], [f64; 2], f64)> = (0..GPM_DRAW_ANCHORS)
        .map(|_| {
            let a = [cov.sample(&mut rng), cov.sample(&mut rng)];
            let b = [cov.sample(&mut rng), cov.sample(&mut rng)];
            let w: f64 = rng.sample::<f64, _>(StandardNormal) * 4.0;
            (a, b, w)
        })
        .collect();
    let params = KernelParams::new(vec![0.3, 0.3], 1.0, vec![FeatureKind::Continuous; 2])?;
    let g = |l: &[f64], r: &[f64]| -> Result<f64> {
        let mut s = 0.0;
        for (a, b, w) in &anchors {
            s += w * k_pref((&a[..], &b[..]), (&l[..2], &r[..2]), &params)?;
        }
        Ok(s)
    };
    let mut matches = Vec::with_capacity(n_matches);
    for _ in 0..n_matches {
        let (l, r) = random_pair(n_items, &mut rng);
        let lv: Vec<f64> = x.row(l).iter().copied().collect();
        let rv: Vec<f64> = x.row(r).iter().copied().collect();
        let p = 1.0 / (1.0 + (-g(&lv, &rv)?).exp());
        let y = if rng.random::<f64>() < p { 1 } else { -1 };
        matches.push(Match {
            left: l,
            right: r,
            y,
            context: None,
        });
    }
    let items = FeatureTable {
        ids: (0..n_items).map(|i| format!("item{i}")).collect(),
        names: (0..GPM_DRAW_DIM).map(|j| format!("x{j}")).collect(),
        features: x,
    };
    Dataset::new(items, matches, None, None)
}

/// Seeded 80/10/10 partition of the matches. Items are shared.
pub fn split_dataset(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (train, val, test) = split_indices(ds.matches.len(), seed)?;
    Ok((ds.with_matches(&train), ds.with_matches(&val), ds.with_matches(&test)))
}

/// Index form of [`split_dataset`].
pub fn split_indices(m: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if m < 10 {
        return Err(PrefShapError::Input(format!(
            "need at least 10 matches to split, got {m}"
        )));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = m * 8 / 10;
    let n_val = m / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok((idx, val, test))
}

/// Columns with non-zero sample variance.
pub fn effective_features(x: &DMatrix<f64>) -> CoalitionMask {
    let bits = (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            col.iter().any(|v| *v != col[0])
        })
        .collect();
    CoalitionMask::new(bits)
}

fn parse_err(file: &Path, line: u64, message: impl Into<String>) -> PrefShapError {
    PrefShapError::Parse {
        file: file.display().to_string(),
        line: line as usize,
        message: message.into(),
    }
}

fn csv_error(file: &Path, e: csv::Error) -> PrefShapError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(file, line, e.to_string())
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| {
        PrefShapError::Input(format!("cannot open {}: {e}", path.display()))
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Reads `id,<feature names...>`.
pub fn load_table(path: &Path, id_column: &str) -> Result<FeatureTable> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some(id_column) {
        return Err(parse_err(
            path,
            1,
            format!("first column must be {id_column:?}, found {:?}", headers.get(0).unwrap_or("")),
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        ids.push(rec[0].to_string());
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(path, line, format!("column {:?}: cannot parse {field:?} as a number", names[j]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("column {:?}: non-finite value", names[j])));
            }
            values.push(v);
        }
    }
    let features = DMatrix::from_row_slice(ids.len(), names.len(), &values);
    FeatureTable::new(ids, names, features).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Reads `left_id,right_id,y[,context_id]`.
fn load_matches(
    path: &Path,
    items: &ItemTable,
    contexts: Option<&ContextTable>,
) -> Result<Vec<Match>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_ctx = match cols.as_slice() {
        ["left_id", "right_id", "y"] => false,
        ["left_id", "right_id", "y", "context_id"] => true,
        _ => {
            return Err(parse_err(
                path,
                1,
                format!("expected header left_id,right_id,y[,context_id], found {}", cols.join(",")),
            ))
        }
    };
    if has_ctx && contexts.is_none() {
        return Err(parse_err(path, 1, "context_id column present but no contexts file given"));
    }
    if !has_ctx && contexts.is_some() {
        return Err(parse_err(path, 1, "contexts file given but matches have no context_id column"));
    }
    let item_ix = items.index_map();
    let ctx_ix = contexts.map(|c| c.index_map());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let lookup = |id: &str| {
            item_ix
                .get(id)
                .copied()
                .ok_or_else(|| parse_err(path, line, format!("unknown item id {id:?}")))
        };
        let left = lookup(&rec[0])?;
        let right = lookup(&rec[1])?;
        let y: i64 = rec[2]
            .parse()
            .map_err(|_| parse_err(path, line, format!("cannot parse outcome {:?}", &rec[2])))?;
        let y = match y {
            1 => 1,
            -1 => -1,
            0 => return Err(parse_err(path, line, "draws (y = 0) are not supported")),
            other => return Err(parse_err(path, line, format!("outcome {other} outside {{-1, +1}}"))),
        };
        let context = match &ctx_ix {
            Some(map) => Some(
                map.get(&rec[3])
                    .copied()
                    .ok_or_else(|| parse_err(path, line, format!("unknown context id {:?}", &rec[3])))?,
            ),
            None => None,
        };
        out.push(Match {
            left,
            right,
            y,
            context,
        });
    }
    Ok(out)
}

fn load_clusters(path: &Path, items: &ItemTable) -> Result<Vec<String>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "cluster"] {
        return Err(parse_err(path, 1, "expected header id,cluster"));
    }
    let item_ix = items.index_map();
    let mut out: Vec<Option<String>> = vec![None; items.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let i = *item_ix
            .get(&rec[0])
            .ok_or_else(|| parse_err(path, line, format!("unknown item id {:?}", &rec[0])))?;
        out[i] = Some(rec[1].to_string());
    }
    out.into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| parse_err(path, 0, format!("no cluster for item {:?}", items.ids[i])))
        })
        .collect()
}

/// Loads `items.csv`, `matches.csv` and, when given, `contexts.csv`.
pub fn load_dataset(
    items_path: &Path,
    matches_path: &Path,
    contexts_path: Option<&Path>,
) -> Result<Dataset> {
    let items = load_table(items_path, "id")?;
    let contexts = contexts_path
        .map(|p| load_table(p, "context_id"))
        .transpose()?;
    let matches = load_matches(matches_path, &items, contexts.as_ref())?;
    Dataset::new(items, matches, contexts, None)
}

/// Loads a dataset directory holding `items.csv`, `matches.csv` and the
/// optional `contexts.csv` and `clusters.csv`.
pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    let ctx = dir.join("contexts.csv");
    let mut ds = load_dataset(
        &dir.join("items.csv"),
        &dir.join("matches.csv"),
        ctx.exists().then_some(ctx.as_path()),
    )?;
    let clusters = dir.join("clusters.csv");
    if clusters.exists() {
        ds.clusters = Some(load_clusters(&clusters, &ds.items)?);
    }
    Ok(ds)
}

fn write_table(path: &Path, id_column: &str, table: &FeatureTable) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    write!(w, "{id_column}")?;
    for n in &table.names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for (i, id) in table.ids.iter().enumerate() {
        write!(w, "{id}")?;
        for v in table.features.row(i).iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the dataset as CSV files into `dir`, creating it if needed.
pub fn save_dataset_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_table(&dir.join("items.csv"), "id", &ds.items)?;
    if let Some(ctx) = &ds.contexts {
        write_table(&dir.join("contexts.csv"), "context_id", ctx)?;
    }
    let mut w = std::io::BufWriter::new(File::create(dir.join("matches.csv"))?);
    if ds.contexts.is_some() {
        writeln!(w, "left_id,right_id,y,context_id")?;
    } else {
        writeln!(w, "left_id,right_id,y")?;
    }
    for m in &ds.matches {
        write!(w, "{},{},{}", ds.items.ids[m.left], ds.items.ids[m.right], m.y)?;
        if let (Some(ctx), Some(c)) = (&ds.contexts, m.context) {
            write!(w, ",{}", ctx.ids[c])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    if let Some(clusters) = &ds.clusters {
        let mut w = std::io::BufWriter::new(File::create(dir.join("clusters.csv"))?);
        writeln!(w, "id,cluster")?;
        for (id, c) in ds.items.ids.iter().zip(clusters) {
            writeln!(w, "{id},{c}")?;
        }
        w.flush()?;
    }
    Ok(())
}
