use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::panel::{read_records, ReturnsPanel};
use crate::error::{Error, Result};

/// One level of the classification: a total map from the units of the level
/// below (stocks for level 1) onto this level's clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Level {
    parent: Vec<usize>,
    names: Vec<String>,
}

impl Level {
    /// `parent[k]` is the cluster at this level that contains unit `k` of the
    /// level below.
    pub fn parent(&self) -> &[usize] {
        &self.parent
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_clusters(&self) -> usize {
        self.names.len()
    }
}

/// Nested P-level industry classification. Level 1 is the most granular.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TreeRepr")]
pub struct ClassificationTree {
    levels: Vec<Level>,
}

#[derive(Deserialize)]
struct TreeRepr {
    levels: Vec<Level>,
}

impl TryFrom<TreeRepr> for ClassificationTree {
    type Error = Error;

    fn try_from(r: TreeRepr) -> Result<Self> {
        Self::new(r.levels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeWarning {
    /// A cluster with a single member unit at the given level.
    SingletonCluster { level: usize, cluster: String },
}

impl ClassificationTree {
    /// Builds a tree from per-level parent maps with generated cluster names.
    pub fn from_maps(maps: Vec<Vec<usize>>) -> Result<Self> {
        let levels = maps
            .into_iter()
            .enumerate()
            .map(|(l, parent)| {
                let k = parent.iter().max().map_or(0, |m| m + 1);
                let names = (0..k).map(|a| format!("L{}_{a}", l + 1)).collect();
                Level { parent, names }
            })
            .collect();
        Self::new(levels)
    }

    /// Builds a tree from per-level parent maps and explicit cluster names.
    pub fn with_names(maps: Vec<Vec<usize>>, names: Vec<Vec<String>>) -> Result<Self> {
        if maps.len() != names.len() {
            return Err(Error::InvalidTree(format!(
                "{} maps but {} name lists",
                maps.len(),
                names.len()
            )));
        }
        let levels = maps
            .into_iter()
            .zip(names)
            .map(|(parent, names)| Level { parent, names })
            .collect();
        Self::new(levels)
    }

    /// Builds a tree from per-stock label rows, `labels[i][l]` being the
    /// label of stock `i` at level `l + 1`. Clusters are numbered in order of
    /// first appearance; a cluster is identified by its label within a level.
    pub fn from_labels<S: AsRef<str>>(labels: &[Vec<S>], tickers: &[String]) -> Result<Self> {
        let p = labels.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(Error::InvalidTree("no levels".into()));
        }
        let mut index: Vec<HashMap<&str, usize>> = vec![HashMap::new(); p];
        let mut names: Vec<Vec<String>> = vec![Vec::new(); p];
        let mut stock_cluster = vec![vec![0usize; labels.len()]; p];
        for (i, row) in labels.iter().enumerate() {
            let ticker = tickers.get(i).cloned().unwrap_or_else(|| i.to_string());
            if row.len() != p {
                return Err(Error::InvalidTree(format!(
                    "stock {ticker:?} has {} levels, expected {p}",
                    row.len()
                )));
            }
            for (l, lab) in row.iter().enumerate() {
                let lab = lab.as_ref();
                if lab.is_empty() {
                    return Err(Error::EmptyLevelLabel {
                        level: l + 1,
                        ticker,
                    });
                }
                let next = index[l].len();
                let a = *index[l].entry(lab).or_insert_with(|| {
                    names[l].push(lab.to_string());
                    next
                });
                stock_cluster[l][i] = a;
            }
        }

        let mut maps = Vec::with_capacity(p);
        maps.push(stock_cluster[0].clone());
        for l in 1..p {
            let mut parent: Vec<Option<usize>> = vec![None; names[l - 1].len()];
            for i in 0..labels.len() {
                let child = stock_cluster[l - 1][i];
                let up = stock_cluster[l][i];
                match parent[child] {
                    None => parent[child] = Some(up),
                    Some(prev) if prev != up => {
                        return Err(Error::InconsistentNesting {
                            level: l,
                            cluster: names[l - 1][child].clone(),
                            first: names[l][prev].clone(),
                            second: names[l][up].clone(),
                        })
                    }
                    _ => {}
                }
            }
            maps.push(parent.into_iter().map(|p| p.unwrap_or(0)).collect());
        }
        Self::with_names(maps, names)
    }

    fn new(levels: Vec<Level>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidTree("no levels".into()));
        }
        let mut below = levels[0].parent.len();
        if below == 0 {
            return Err(Error::InvalidTree("no stocks".into()));
        }
        for (l, level) in levels.iter().enumerate() {
            let lvl = l + 1;
            if level.parent.len() != below {
                return Err(Error::DimensionMismatch {
                    what: "level map length",
                    expected: below,
                    found: level.parent.len(),
                });
            }
            let k = level.names.len();
            let mut count = vec![0usize; k];
            for &a in &level.parent {
                if a >= k {
                    return Err(Error::InvalidTree(format!(
                        "level {lvl} maps to cluster {a} but has only {k} clusters"
                    )));
                }
                count[a] += 1;
            }
            if let Some(a) = count.iter().position(|&c| c == 0) {
                return Err(Error::EmptyCluster {
                    level: lvl,
                    cluster: a,
                });
            }
            let mut seen = HashMap::new();
            for (a, n) in level.names.iter().enumerate() {
                if let Some(b) = seen.insert(n.as_str(), a) {
                    return Err(Error::InvalidTree(format!(
                        "level {lvl} clusters {b} and {a} share the name {n:?}"
                    )));
                }
            }
            below = k;
        }
        Ok(Self { levels })
    }

    /// Number of levels P.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.levels[0].parent.len()
    }

    /// K^(level); level 0 counts stocks.
    pub fn n_clusters(&self, level: usize) -> usize {
        if level == 0 {
            self.n_stocks()
        } else {
            self.levels[level - 1].n_clusters()
        }
    }

    /// Level `level` in 1..=P.
    pub fn level(&self, level: usize) -> &Level {
        &self.levels[level - 1]
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// For each level-`level` cluster, the indices of its level-(`level`-1)
    /// member units, in increasing order.
    pub fn members(&self, level: usize) -> Vec<Vec<usize>> {
        let lv = self.level(level);
        let mut out = vec![Vec::new(); lv.n_clusters()];
        for (k, &a) in lv.parent.iter().enumerate() {
            out[a].push(k);
        }
        out
    }

    /// Composed map from stocks to their level-`level` cluster.
    pub fn stock_cluster(&self, level: usize) -> Vec<usize> {
        let mut map: Vec<usize> = (0..self.n_stocks()).collect();
        for l in 1..=level {
            let parent = &self.levels[l - 1].parent;
            for m in map.iter_mut() {
                *m = parent[*m];
            }
        }
        map
    }

    /// Chain of ancestors of a level-1 cluster: element `l - 1` is its
    /// level-`l` cluster, for l = 1..=P.
    pub fn ancestors(&self, cluster: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.depth());
        let mut a = cluster;
        out.push(a);
        for lv in &self.levels[1..] {
            a = lv.parent[a];
            out.push(a);
        }
        out
    }

    /// Labels of stock `i` from level 1 to level P.
    pub fn stock_labels(&self, i: usize) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.depth());
        let mut a = i;
        for lv in &self.levels {
            a = lv.parent[a];
            out.push(lv.names[a].as_str());
        }
        out
    }
}

/// Checks the tree against a panel. Hard violations are errors; singleton
/// clusters are reported as warnings.
pub fn validate_tree(tree: &ClassificationTree, panel: &ReturnsPanel) -> Result<Vec<TreeWarning>> {
    let n = tree.n_stocks();
    if n < panel.n() {
        return Err(Error::UnmappedStock(panel.tickers()[n].clone()));
    }
    if n > panel.n() {
        return Err(Error::DimensionMismatch {
            what: "classified stocks",
            expected: panel.n(),
            found: n,
        });
    }
    let mut warnings = Vec::new();
    for level in 1..=tree.depth() {
        for (a, m) in tree.members(level).iter().enumerate() {
            if m.len() == 1 {
                warnings.push(TreeWarning::SingletonCluster {
                    level,
                    cluster: tree.level(level).names()[a].clone(),
                });
            }
        }
        if level > 1 && tree.n_clusters(level) > tree.n_clusters(level - 1) {
            return Err(Error::InvalidTree(format!(
                "level {level} has more clusters than level {}",
                level - 1
            )));
        }
    }
    Ok(warnings)
}

/// Reads `ticker,level1,...,levelP` (most granular level first) and aligns
/// it to the panel's tickers. Rows for tickers outside the panel are ignored.
pub fn load_classification_csv(
    path: impl AsRef<Path>,
    panel: &ReturnsPanel,
) -> Result<ClassificationTree> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let (header, rows) = records.split_first().ok_or_else(|| Error::Csv {
        path: path.to_path_buf(),
        message: "file is empty".into(),
    })?;
    let p = header.len().saturating_sub(1);
    if p == 0 {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            message: "no level columns".into(),
        });
    }
    let mut by_ticker: HashMap<&str, Vec<&str>> = HashMap::new();
    for (r, rec) in rows.iter().enumerate() {
        if rec.len() != p + 1 {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                message: format!(
                    "line {} has {} fields, expected {}",
                    r + 2,
                    rec.len(),
                    p + 1
                ),
            });
        }
        let labels: Vec<&str> = rec.iter().skip(1).collect();
        if by_ticker.insert(&rec[0], labels).is_some() {
            return Err(Error::DuplicateTicker(rec[0].to_string()));
        }
    }
    let labels = panel
        .tickers()
        .iter()
        .map(|t| {
            by_ticker
                .get(t.as_str())
                .cloned()
                .ok_or_else(|| Error::MissingTicker(t.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    ClassificationTree::from_labels(&labels, panel.tickers())
}

pub fn write_classification_csv(
    tree: &ClassificationTree,
    tickers: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if tickers.len() != tree.n_stocks() {
        return Err(Error::DimensionMismatch {
            what: "tickers",
            expected: tree.n_stocks(),
            found: tickers.len(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        write!(out, "ticker")?;
        for l in 1..=tree.depth() {
            write!(out, ",level{l}")?;
        }
        writeln!(out)?;
        for (i, t) in tickers.iter().enumerate() {
            write!(out, "{t}")?;
            for lab in tree.stock_labels(i) {
                write!(out, ",{lab}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
