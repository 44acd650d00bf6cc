//! Retrieval metrics, pool evaluation, α ablations, k-means ordering and similarity heatmaps.
//!
//! Ranking breaks ties by ascending candidate index: the true match `i` of query `i` sits at
//! rank `#{j : s_ij > s_ii} + #{j < i : s_ij = s_ii}` (0-based).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::encoder::{forward, EncoderParams, Modality};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::loss::cross_modal_similarity;
use crate::numerics::Matrix;
use crate::objective::LossMode;
use crate::rng::{stream, Domain};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// Volume queries retrieving reports (rows of S).
    #[serde(rename = "v2t")]
    V2T,
    /// Report queries retrieving volumes (columns of S).
    #[serde(rename = "t2v")]
    T2V,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::V2T, Direction::T2V];

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::V2T => "v2t",
            Direction::T2V => "t2v",
        }
    }
}

/// 0-based rank of each query's true match.
pub fn true_match_ranks(s: &Matrix, direction: Direction) -> Result<Vec<usize>> {
    if !s.is_square() {
        return Err(Error::shape("recall_at_k", (s.rows(), s.rows()), s.shape()));
    }
    let n = s.rows();
    let at = |q: usize, c: usize| match direction {
        Direction::V2T => s[(q, c)],
        Direction::T2V => s[(c, q)],
    };
    Ok((0..n)
        .map(|q| {
            let own = at(q, q);
            (0..n)
                .filter(|&c| {
                    let v = at(q, c);
                    v > own || (v == own && c < q)
                })
                .count()
        })
        .collect())
}

fn recall_from_ranks(ranks: &[usize], k: usize) -> f64 {
    100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64
}

pub fn recall_at_k(s: &Matrix, k: usize, direction: Direction) -> Result<f64> {
    let n = s.rows();
    if k > n {
        return Err(Error::KTooLarge { k, pool: n });
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    Ok(recall_from_ranks(&true_match_ranks(s, direction)?, k))
}

pub fn sum_recall(recalls: &[f64]) -> f64 {
    recalls.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub pool: usize,
    /// Percentage hit rate for each K.
    pub recalls: BTreeMap<usize, f64>,
    pub sum_r: f64,
}

impl RetrievalReport {
    pub fn from_similarity(s: &Matrix, ks: &[usize], direction: Direction) -> Result<Self> {
        let n = s.rows();
        if let Some(&k) = ks.iter().find(|&&k| k > n) {
            return Err(Error::KTooLarge { k, pool: n });
        }
        let ranks = true_match_ranks(s, direction)?;
        let recalls: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, recall_from_ranks(&ranks, k))).collect();
        let values: Vec<f64> = recalls.values().copied().collect();
        Ok(Self {
            direction,
            pool: n,
            sum_r: sum_recall(&values),
            recalls,
        })
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recalls.get(&k).copied()
    }
}

/// Every K a pool can report.
pub const REPORT_KS: [usize; 5] = [1, 5, 10, 50, 100];

/// `{1, 5, 10, 50}` plus 100 from pool size 500 upward, keeping only K ≤ pool.
pub fn pool_ks(pool: usize) -> Vec<usize> {
    REPORT_KS
        .into_iter()
        .filter(|&k| (k != 100 || pool >= 500) && k <= pool)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PoolSelection {
    /// The first `N` samples of the split.
    #[default]
    First,
    /// A seeded uniform subset of size `N`, kept in ascending index order.
    Random { seed: u64 },
}

fn pool_indices(available: usize, pool: usize, selection: PoolSelection) -> Vec<usize> {
    match selection {
        PoolSelection::First => (0..pool).collect(),
        PoolSelection::Random { seed } => {
            let mut rng = stream(seed, Domain::PoolSubset, pool as u64);
            let mut ix = sample(&mut rng, available, pool).into_vec();
            ix.sort_unstable();
            ix
        }
    }
}

/// Raw embeddings of every sample in a split.
pub fn embed_split(params: &EncoderParams, split: &Split) -> Result<(Matrix, Matrix)> {
    let v = forward(params, &split.volume_matrix(None), Modality::Volume)?;
    let t = forward(params, &split.text_matrix(None), Modality::Text)?;
    Ok((v, t))
}

/// Both directions for every pool size, in pool order then V→T before T→V.
pub fn evaluate_pools(
    v: &Matrix,
    t: &Matrix,
    log_tau: f64,
    pools: &[usize],
    selection: PoolSelection,
) -> Result<Vec<RetrievalReport>> {
    let available = v.rows();
    if t.rows() != available {
        return Err(Error::shape("evaluate_pools", v.shape(), t.shape()));
    }
    for &pool in pools {
        if pool > available {
            return Err(Error::PoolTooLarge { pool, available });
        }
        if pool == 0 {
            return Err(Error::invalid("pools", "pool sizes must be >= 1"));
        }
    }
    let mut out = Vec::with_capacity(2 * pools.len());
    for &pool in pools {
        let ix = pool_indices(available, pool, selection);
        let sim = cross_modal_similarity(&v.select_rows(&ix), &t.select_rows(&ix), log_tau)?;
        let ks = pool_ks(pool);
        for d in Direction::BOTH {
            out.push(RetrievalReport::from_similarity(&sim.s, &ks, d)?);
        }
    }
    Ok(out)
}

fn push_cells(line: &mut String, r: &RetrievalReport) {
    for k in REPORT_KS {
        line.push(',');
        if let Some(v) = r.recall(k) {
            let _ = write!(line, "{v:.4}");
        }
    }
    let _ = write!(line, ",{:.4}", r.sum_r);
}

fn recall_header(prefix: &str) -> String {
    let mut h = String::new();
    for k in REPORT_KS {
        let _ = write!(h, ",{prefix}R@{k}");
    }
    let _ = write!(h, ",{prefix}SumR");
    h
}

pub const REPORT_CSV_HEADER: &str = "pool,direction,R@1,R@5,R@10,R@50,R@100,SumR";

/// One row per report; recalls that a pool does not report are left empty.
pub fn reports_to_csv(reports: &[RetrievalReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let mut line = format!("{},{}", r.pool, r.direction.as_str());
        push_cells(&mut line, r);
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Results of an α sweep for one pool size.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub pool: usize,
    /// `(α, V→T report, T→V report)` in grid order.
    pub rows: Vec<(f64, RetrievalReport, RetrievalReport)>,
}

impl AblationTable {
    pub fn header() -> String {
        format!("alpha{}{}", recall_header("v2t_"), recall_header("t2v_"))
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header();
        out.push('\n');
        for (alpha, v2t, t2v) in &self.rows {
            let mut line = format!("{alpha}");
            push_cells(&mut line, v2t);
            push_cells(&mut line, t2v);
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Trains one full-mode model per α with the same seed and evaluates each on the test split.
pub fn ablate_alpha(
    dataset: &Dataset,
    base: &TrainConfig,
    alphas: &[f64],
    pools: &[usize],
    selection: PoolSelection,
) -> Result<Vec<AblationTable>> {
    if alphas.is_empty() {
        return Err(Error::invalid("alphas", "grid must not be empty"));
    }
    for &a in alphas {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid("alphas", format!("{a} is outside [0, 1]")));
        }
    }
    for &pool in pools {
        if pool > dataset.test.len() {
            return Err(Error::PoolTooLarge {
                pool,
                available: dataset.test.len(),
            });
        }
    }
    let mut tables: Vec<AblationTable> = pools.iter().map(|&pool| AblationTable { pool, rows: vec![] }).collect();
    for &alpha in alphas {
        let mut cfg = base.clone();
        cfg.objective.loss_mode = LossMode::SwcaFull;
        cfg.objective.mix.alpha = alpha;
        let outcome = train(dataset, &cfg)?;
        let (v, t) = embed_split(&outcome.params, &dataset.test)?;
        let reports = evaluate_pools(&v, &t, outcome.params.log_tau, pools, selection)?;
        for (table, pair) in tables.iter_mut().zip(reports.chunks_exact(2)) {
            table.rows.push((alpha, pair[0].clone(), pair[1].clone()));
        }
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterOrdering {
    /// `permutation[p]` is the sample shown at position `p`.
    pub permutation: Vec<usize>,
    /// Cluster of each sample, in original index order.
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl ClusterOrdering {
    pub fn identity(n: usize) -> Self {
        Self {
            permutation: (0..n).collect(),
            assignments: vec![0; n],
            k: 1,
        }
    }

    /// An explicit ordering with no cluster structure.
    pub fn from_permutation(permutation: Vec<usize>) -> Result<Self> {
        let n = permutation.len();
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("ordering", "not a permutation"));
            }
        }
        Ok(Self {
            permutation,
            assignments: vec![0; n],
            k: 1,
        })
    }

    /// Positions `p` where the cluster changes between `p - 1` and `p`.
    pub fn boundaries(&self) -> Vec<usize> {
        (1..self.permutation.len())
            .filter(|&p| self.assignments[self.permutation[p]] != self.assignments[self.permutation[p - 1]])
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Clusters are relabeled in order of first appearance so the result does not depend on the
/// seeding order; the ordering sorts samples by `(cluster, index)`.
pub fn kmeans_order(e: &Matrix, k: usize, seed: u64) -> Result<ClusterOrdering> {
    let n = e.rows();
    if k > n {
        return Err(Error::KTooLarge { k, pool: n });
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    let mut rng = stream(seed, Domain::KMeans, k as u64);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(e.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(e.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc >= target {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            // all remaining points coincide with a center; take the first unused index
            (0..n)
                .find(|&i| centers.iter().all(|c| c.as_slice() != e.row(i)))
                .unwrap_or(centers.len())
        };
        centers.push(e.row(pick).to_vec());
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(e.row(i), centers.last().expect("just pushed")));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        for (i, a) in assign.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(e.row(i), center);
                if d < best.0 {
                    best = (d, c);
                }
            }
            *a = best.1;
        }
        let mut shift: f64 = 0.0;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; e.cols()];
            for &i in &members {
                mean.iter_mut().zip(e.row(i)).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= members.len() as f64);
            shift = shift.max(sq_dist(&mean, center).sqrt());
            *center = mean;
        }
        if shift < 1e-9 {
            break;
        }
    }
    // final assignment against the converged centers
    for (i, a) in assign.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, center) in centers.iter().enumerate() {
            let d = sq_dist(e.row(i), center);
            if d < best.0 {
                best = (d, c);
            }
        }
        *a = best.1;
    }

    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for a in assign.iter_mut() {
        if relabel[*a] == usize::MAX {
            relabel[*a] = next;
            next += 1;
        }
        *a = relabel[*a];
    }
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.sort_by_key(|&i| (assign[i], i));
    Ok(ClusterOrdering {
        permutation,
        assignments: assign,
        k,
    })
}

/// `S` with rows and columns both permuted by `ordering`.
pub fn permuted(s: &Matrix, ordering: &ClusterOrdering) -> Result<Matrix> {
    let n = s.rows();
    if !s.is_square() || ordering.permutation.len() != n {
        return Err(Error::shape(
            "export_similarity_heatmap",
            (n, n),
            (ordering.permutation.len(), s.cols()),
        ));
    }
    let p = &ordering.permutation;
    Ok(Matrix::from_fn(n, n, |a, b| s[(p[a], p[b])]))
}

/// Plain numeric CSV, one matrix row per line, 9 significant digits.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let cells: Vec<String> = m.row(i).iter().map(|v| format!("{v:.8e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<Matrix> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad cell `{c}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Blue (−1) → white (0) → red (+1); values outside `[−1, 1]` are clamped.
pub fn diverging_color(v: f64) -> (u8, u8, u8) {
    let x = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let (end, t) = if x < 0.0 {
        ((33.0, 102.0, 172.0), -x)
    } else {
        ((178.0, 24.0, 43.0), x)
    };
    let mix = |e: f64| (255.0 + (e - 255.0) * t).round() as u8;
    (mix(end.0), mix(end.1), mix(end.2))
}

const CELL_PX: usize = 4;

/// Self-contained SVG: rows are volume embeddings, columns text embeddings.
pub fn heatmap_svg(m: &Matrix, boundaries: &[usize]) -> String {
    let n = m.rows();
    let size = n * CELL_PX;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">"#,
        w = size + 40,
        h = size + 40
    );
    let _ = writeln!(svg, r#"<g transform="translate(30,10)">"#);
    for i in 0..n {
        for j in 0..m.cols() {
            let (r, g, b) = diverging_color(m[(i, j)]);
            let _ = writeln!(
                svg,
                r##"<rect x="{}" y="{}" width="{CELL_PX}" height="{CELL_PX}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
                j * CELL_PX,
                i * CELL_PX
            );
        }
    }
    for &p in boundaries {
        let at = p * CELL_PX;
        let _ = writeln!(
            svg,
            r#"<line x1="{at}" y1="0" x2="{at}" y2="{size}" stroke="black" stroke-width="1"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<line x1="0" y1="{at}" x2="{size}" y2="{at}" stroke="black" stroke-width="1"/>"#
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif">text embeddings</text>"#,
        size / 2,
        size + 22
    );
    let _ = writeln!(
        svg,
        r#"<text x="-12" y="{}" font-size="10" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 -12 {})">volume embeddings</text>"#,
        size / 2,
        size / 2
    );
    svg.push_str("</g>\n</svg>\n");
    svg
}

/// Writes `<stem>.csv` and `<stem>.svg` for the reordered matrix and returns both paths.
pub fn export_similarity_heatmap(s: &Matrix, ordering: &ClusterOrdering, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let m = permuted(s, ordering)?;
    let csv_path = stem.with_extension("csv");
    let svg_path = stem.with_extension("svg");
    let csv = matrix_to_csv(&m);
    let svg = heatmap_svg(&m, &ordering.boundaries());
    write_atomic(&csv_path, csv.as_bytes())?;
    write_atomic(&svg_path, svg.as_bytes())?;
    Ok((csv_path, svg_path))
}
