//! Human-judgment aggregation. Pairwise comparisons are fitted with a
//! Bradley-Terry model, `P(i beats j) = π_i / (π_i + π_j)`, using
//! minorization-maximization updates; expert ratings are pooled means.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ComparisonRecord, Outcome, RatingRecord};

pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_TOL: f64 = 1e-10;
/// Mean of the display ratings.
pub const DISPLAY_CENTER: f64 = 1000.0;
pub const DISPLAY_SCALE: f64 = 400.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Half a win to each side.
    #[default]
    HalfWin,
    Drop,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeitherPolicy {
    #[default]
    Drop,
    /// Treated like a tie, then subject to the tie policy.
    AsTie,
}

impl FromStr for TiePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half_win" | "half-win" => Ok(Self::HalfWin),
            "drop" => Ok(Self::Drop),
            _ => Err(Error::InvalidArgument(format!("unknown tie policy {s:?}"))),
        }
    }
}

impl FromStr for NeitherPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(Self::Drop),
            "as_tie" | "as-tie" => Ok(Self::AsTie),
            _ => Err(Error::InvalidArgument(format!("unknown neither policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BtOptions {
    pub tie_policy: TiePolicy,
    pub neither_policy: NeitherPolicy,
    pub max_iter: usize,
    pub tol: f64,
    /// Starting strengths by method id; missing methods start at 1.
    pub initial: Option<BTreeMap<String, f64>>,
}

impl Default for BtOptions {
    fn default() -> Self {
        Self {
            tie_policy: TiePolicy::HalfWin,
            neither_policy: NeitherPolicy::Drop,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtResult {
    /// Method ids in ascending order; every other vector is aligned to it.
    pub methods: Vec<String>,
    /// Geometric mean normalized to 1.
    pub strengths: Vec<f64>,
    pub display_ratings: Vec<f64>,
    pub ranks: Vec<usize>,
    pub log_likelihood: f64,
    /// Log-likelihood at the start and after every update.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub records_used: usize,
    pub tie_policy: TiePolicy,
    pub neither_policy: NeitherPolicy,
}

impl BtResult {
    pub fn strength(&self, method: &str) -> Option<f64> {
        self.index(method).map(|i| self.strengths[i])
    }

    pub fn display(&self, method: &str) -> Option<f64> {
        self.index(method).map(|i| self.display_ratings[i])
    }

    pub fn rank(&self, method: &str) -> Option<usize> {
        self.index(method).map(|i| self.ranks[i])
    }

    fn index(&self, method: &str) -> Option<usize> {
        self.methods.binary_search_by(|m| m.as_str().cmp(method)).ok()
    }
}

/// Win totals after the tie and neither policies are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct WinMatrix {
    pub methods: Vec<String>,
    /// `wins[i][j]`: (possibly fractional) wins of `i` over `j`.
    pub wins: Vec<Vec<f64>>,
    pub records_used: usize,
}

impl WinMatrix {
    pub fn from_records(records: &[ComparisonRecord], tie: TiePolicy, neither: NeitherPolicy) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.method_a == r.method_b) {
            return Err(Error::InvalidArgument(format!("{} is compared with itself", r.method_a)));
        }
        let used: Vec<(&ComparisonRecord, Outcome)> = records
            .iter()
            .filter_map(|r| {
                let o = match (r.outcome, neither) {
                    (Outcome::NeitherFits, NeitherPolicy::Drop) => return None,
                    (Outcome::NeitherFits, NeitherPolicy::AsTie) => Outcome::Tie,
                    (o, _) => o,
                };
                (o != Outcome::Tie || tie == TiePolicy::HalfWin).then_some((r, o))
            })
            .collect();
        if used.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut methods: Vec<String> = used
            .iter()
            .flat_map(|(r, _)| [r.method_a.clone(), r.method_b.clone()])
            .collect();
        methods.sort();
        methods.dedup();
        let idx = |m: &str| methods.binary_search_by(|x| x.as_str().cmp(m)).expect("collected above");
        let k = methods.len();
        let mut wins = vec![vec![0.0; k]; k];
        for (r, o) in &used {
            let (a, b) = (idx(&r.method_a), idx(&r.method_b));
            match o {
                Outcome::AWins => wins[a][b] += 1.0,
                Outcome::BWins => wins[b][a] += 1.0,
                _ => {
                    wins[a][b] += 0.5;
                    wins[b][a] += 0.5;
                }
            }
        }
        Ok(Self {
            methods,
            wins,
            records_used: used.len(),
        })
    }

    fn games(&self, i: usize, j: usize) -> f64 {
        self.wins[i][j] + self.wins[j][i]
    }

    /// `Σ w_ij (ln π_i − ln(π_i + π_j))`.
    pub fn log_likelihood(&self, strengths: &[f64]) -> f64 {
        let k = self.methods.len();
        let mut ll = 0.0;
        for i in 0..k {
            for j in 0..k {
                let w = self.wins[i][j];
                if w > 0.0 {
                    ll += w * (strengths[i].ln() - (strengths[i] + strengths[j]).ln());
                }
            }
        }
        ll
    }

    fn reach(&self, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<bool>> {
        let k = self.methods.len();
        let mut r: Vec<Vec<bool>> = (0..k).map(|i| (0..k).map(|j| i == j || edge(i, j)).collect()).collect();
        for m in 0..k {
            let via = r[m].clone();
            for row in r.iter_mut().filter(|row| row[m]) {
                for (cell, &v) in row.iter_mut().zip(&via) {
                    *cell |= v;
                }
            }
        }
        r
    }

    /// Errors unless every method is linked to every other through
    /// comparisons, and unless every proper subset wins at least once
    /// against its complement (otherwise the likelihood has no maximum).
    pub fn check_connected(&self) -> Result<()> {
        let k = self.methods.len();
        let undirected = self.reach(|i, j| self.games(i, j) > 0.0);
        let mut seen = vec![false; k];
        let mut components = Vec::new();
        for i in 0..k {
            if seen[i] {
                continue;
            }
            let comp: Vec<String> = (0..k)
                .filter(|&j| undirected[i][j])
                .inspect(|&j| seen[j] = true)
                .map(|j| self.methods[j].clone())
                .collect();
            components.push(comp);
        }
        if components.len() > 1 {
            return Err(Error::DisconnectedGraph { components });
        }
        let beats = self.reach(|i, j| self.wins[i][j] > 0.0);
        // a class that beats nobody outside itself has no finite strength
        if let Some(i) = (0..k).find(|&i| (0..k).any(|j| !beats[i][j])) {
            // the reachable method with the smallest reach set closes a bottom class
            let j = (0..k)
                .filter(|&j| beats[i][j])
                .min_by_key(|&j| (0..k).filter(|&m| beats[j][m]).count())
                .expect("i reaches itself");
            let dominated = (0..k)
                .filter(|&m| beats[j][m])
                .map(|m| self.methods[m].clone())
                .collect();
            return Err(Error::UnboundedStrengths { dominated });
        }
        Ok(())
    }
}

fn normalize_geometric(p: &mut [f64]) {
    let mean_log = p.iter().map(|x| x.ln()).sum::<f64>() / p.len() as f64;
    let g = mean_log.exp();
    p.iter_mut().for_each(|x| *x /= g);
}

/// Fits strengths from a prepared win matrix.
pub fn fit_win_matrix(m: &WinMatrix, opts: &BtOptions) -> Result<BtResult> {
    m.check_connected()?;
    let k = m.methods.len();
    let mut p: Vec<f64> = m
        .methods
        .iter()
        .map(|id| opts.initial.as_ref().and_then(|init| init.get(id)).copied().unwrap_or(1.0))
        .collect();
    if p.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("initial strengths must be positive and finite".into()));
    }
    normalize_geometric(&mut p);
    let total_wins: Vec<f64> = (0..k).map(|i| m.wins[i].iter().sum()).collect();
    let mut trace = vec![m.log_likelihood(&p)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut next: Vec<f64> = (0..k)
            .map(|i| {
                let denom: f64 = (0..k)
                    .filter(|&j| j != i)
                    .map(|j| m.games(i, j) / (p[i] + p[j]))
                    .sum();
                total_wins[i] / denom
            })
            .collect();
        normalize_geometric(&mut next);
        let change = p
            .iter()
            .zip(&next)
            .map(|(a, b)| ((b - a) / a).abs())
            .fold(0.0, f64::max);
        p = next;
        iterations += 1;
        trace.push(m.log_likelihood(&p));
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let raw: Vec<f64> = p.iter().map(|x| DISPLAY_SCALE * x.log10()).collect();
    let offset = DISPLAY_CENTER - raw.iter().sum::<f64>() / k as f64;
    let display_ratings = raw.iter().map(|r| r + offset).collect();
    let ranks = ranks_by(&m.methods, |a, b| p[b].total_cmp(&p[a]));
    Ok(BtResult {
        methods: m.methods.clone(),
        strengths: p,
        display_ratings,
        ranks,
        log_likelihood: *trace.last().expect("initial value"),
        log_likelihood_trace: trace,
        iterations,
        converged,
        records_used: m.records_used,
        tie_policy: opts.tie_policy,
        neither_policy: opts.neither_policy,
    })
}

pub fn fit_bradley_terry(records: &[ComparisonRecord], opts: &BtOptions) -> Result<BtResult> {
    let m = WinMatrix::from_records(records, opts.tie_policy, opts.neither_policy)?;
    fit_win_matrix(&m, opts)
}

/// 1-based ranks for items whose ids are sorted ascending; `cmp` orders the
/// better item first, and equal items keep id order.
fn ranks_by(ids: &[String], cmp: impl Fn(usize, usize) -> Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| cmp(a, b).then_with(|| ids[a].cmp(&ids[b])));
    let mut ranks = vec![0; ids.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAggregate {
    pub dataset: String,
    pub method: String,
    pub sum: u64,
    pub count: usize,
    pub mean: f64,
}

impl RatingAggregate {
    fn new(dataset: &str, method: &str, scores: impl Iterator<Item = u8>) -> Self {
        let (mut sum, mut count) = (0u64, 0usize);
        for s in scores {
            sum += u64::from(s);
            count += 1;
        }
        Self {
            dataset: dataset.into(),
            method: method.into(),
            sum,
            count,
            mean: sum as f64 / count as f64,
        }
    }

    /// Mean rendered to two decimals.
    pub fn mean_text(&self) -> String {
        format!("{:.2}", self.mean)
    }

    /// Exact comparison of means by cross-multiplication.
    fn cmp_mean(&self, other: &Self) -> Ordering {
        (u128::from(self.sum) * other.count as u128).cmp(&(u128::from(other.sum) * self.count as u128))
    }
}

/// Mean score per (dataset, method), ordered by dataset then method.
pub fn aggregate_ratings(records: &[RatingRecord]) -> Result<Vec<RatingAggregate>> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut groups: BTreeMap<(&str, &str), Vec<u8>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.dataset, &r.method)).or_default().push(r.score);
    }
    Ok(groups
        .into_iter()
        .map(|((d, m), s)| RatingAggregate::new(d, m, s.into_iter()))
        .collect())
}

/// Mean score of one group; errors if it has no records.
pub fn rating_for(records: &[RatingRecord], dataset: &str, method: &str) -> Result<RatingAggregate> {
    let agg = RatingAggregate::new(
        dataset,
        method,
        records
            .iter()
            .filter(|r| r.dataset == dataset && r.method == method)
            .map(|r| r.score),
    );
    if agg.count == 0 {
        return Err(Error::EmptyGroup(format!("{dataset}/{method}")));
    }
    Ok(agg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    PerDataset,
    Global,
}

pub const GLOBAL: &str = "Global";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub method: String,
    pub rank: usize,
    pub score: f64,
    /// Score as printed: integer display rating or two-decimal mean.
    pub score_text: String,
    /// Comparisons or ratings involving the method.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    /// Dataset id, or `Global`.
    pub scope: String,
    pub rows: Vec<RankRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentSummary {
    Comparisons {
        tie_policy: TiePolicy,
        neither_policy: NeitherPolicy,
        fits: Vec<(String, BtResult)>,
    },
    Ratings { groups: Vec<RatingAggregate> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Per-dataset tables in first-appearance order, then the global table.
    pub tables: Vec<RankTable>,
    pub summary: JudgmentSummary,
}

impl RankReport {
    pub fn table(&self, scope: &str) -> Option<&RankTable> {
        self.tables.iter().find(|t| t.scope == scope)
    }

    /// Methods as rows (ordered by global rank), datasets then `Global` as
    /// columns, each cell `rank (score)`.
    pub fn to_markdown(&self) -> String {
        let global = self.tables.last().expect("global table present");
        let mut out = String::new();
        let header: Vec<&str> = self.tables.iter().map(|t| t.scope.as_str()).collect();
        writeln!(out, "| Method | {} |", header.join(" | ")).unwrap();
        writeln!(out, "|---|{}", "---|".repeat(header.len())).unwrap();
        for row in &global.rows {
            let cells: Vec<String> = self
                .tables
                .iter()
                .map(|t| match t.rows.iter().find(|r| r.method == row.method) {
                    Some(r) => format!("{} ({})", r.rank, r.score_text),
                    None => "-".into(),
                })
                .collect();
            writeln!(out, "| {} | {} |", row.method, cells.join(" | ")).unwrap();
        }
        if let JudgmentSummary::Comparisons {
            tie_policy,
            neither_policy,
            ..
        } = &self.summary
        {
            writeln!(out, "\nTies: {tie_policy}. Neither fits: {neither_policy}.").unwrap();
        }
        out
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::HalfWin => "half_win",
            TiePolicy::Drop => "drop",
        })
    }
}

impl fmt::Display for NeitherPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeitherPolicy::Drop => "drop",
            NeitherPolicy::AsTie => "as_tie",
        })
    }
}

fn datasets_in_order<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for d in ids {
        if !out.iter().any(|x| x == d) {
            out.push(d.to_string());
        }
    }
    out
}

fn bt_table(scope: &str, fit: &BtResult, records: &[&ComparisonRecord]) -> RankTable {
    let mut rows: Vec<RankRow> = fit
        .methods
        .iter()
        .enumerate()
        .map(|(i, m)| RankRow {
            method: m.clone(),
            rank: fit.ranks[i],
            score: fit.display_ratings[i],
            score_text: format!("{:.0}", fit.display_ratings[i]),
            count: records.iter().filter(|r| &r.method_a == m || &r.method_b == m).count(),
        })
        .collect();
    rows.sort_by_key(|r| r.rank);
    RankTable {
        scope: scope.into(),
        rows,
    }
}

fn require_two(n: usize, scope: &str) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("{scope}: ranking needs at least two methods, found {n}")));
    }
    Ok(())
}

/// Fits each dataset separately and all records pooled.
pub fn rank_comparisons(records: &[ComparisonRecord], opts: &BtOptions) -> Result<RankReport> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut tables = Vec::new();
    let mut fits = Vec::new();
    let datasets = datasets_in_order(records.iter().map(|r| r.dataset.as_str()));
    let scopes = datasets.iter().map(|d| (d.as_str(), Scope::PerDataset)).chain([(GLOBAL, Scope::Global)]);
    for (name, scope) in scopes {
        let subset: Vec<ComparisonRecord> = records
            .iter()
            .filter(|r| scope == Scope::Global || r.dataset == name)
            .cloned()
            .collect();
        let fit = fit_bradley_terry(&subset, opts)?;
        require_two(fit.methods.len(), name)?;
        tables.push(bt_table(name, &fit, &subset.iter().collect::<Vec<_>>()));
        fits.push((name.to_string(), fit));
    }
    Ok(RankReport {
        tables,
        summary: JudgmentSummary::Comparisons {
            tie_policy: opts.tie_policy,
            neither_policy: opts.neither_policy,
            fits,
        },
    })
}

fn rating_table(scope: &str, groups: Vec<RatingAggregate>) -> Result<RankTable> {
    require_two(groups.len(), scope)?;
    let ids: Vec<String> = groups.iter().map(|g| g.method.clone()).collect();
    let ranks = ranks_by(&ids, |a, b| groups[b].cmp_mean(&groups[a]));
    let mut rows: Vec<RankRow> = groups
        .iter()
        .zip(ranks)
        .map(|(g, rank)| RankRow {
            method: g.method.clone(),
            rank,
            score: g.mean,
            score_text: g.mean_text(),
            count: g.count,
        })
        .collect();
    rows.sort_by_key(|r| r.rank);
    Ok(RankTable {
        scope: scope.into(),
        rows,
    })
}

/// Mean rating per dataset, and pooled over every record for the global
/// table.
pub fn rank_ratings(records: &[RatingRecord]) -> Result<RankReport> {
    let groups = aggregate_ratings(records)?;
    let mut tables = Vec::new();
    for d in datasets_in_order(records.iter().map(|r| r.dataset.as_str())) {
        tables.push(rating_table(&d, groups.iter().filter(|g| g.dataset == d).cloned().collect())?);
    }
    let mut pooled: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for r in records {
        pooled.entry(&r.method).or_default().push(r.score);
    }
    let global = pooled
        .into_iter()
        .map(|(m, s)| RatingAggregate::new(GLOBAL, m, s.into_iter()))
        .collect();
    tables.push(rating_table(GLOBAL, global)?);
    Ok(RankReport {
        tables,
        summary: JudgmentSummary::Ratings { groups },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(d: &str, a: &str, b: &str, o: Outcome) -> ComparisonRecord {
        ComparisonRecord::new("p", d, a, b, o)
    }

    fn rating(d: &str, m: &str, s: u8) -> RatingRecord {
        RatingRecord {
            rater_id: "r".into(),
            dataset: d.into(),
            method: m.into(),
            image_id: "i".into(),
            score: s,
        }
    }

    #[test]
    fn two_players() {
        let recs = [
            rec("d", "A", "B", Outcome::AWins),
            rec("d", "A", "B", Outcome::AWins),
            rec("d", "A", "B", Outcome::BWins),
        ];
        let fit = fit_bradley_terry(&recs, &BtOptions::default()).unwrap();
        assert!((fit.strength("A").unwrap() / fit.strength("B").unwrap() - 2.0).abs() < 1e-6);
        assert!((fit.display("A").unwrap() - 1060.21).abs() < 0.01);
        assert!((fit.display("B").unwrap() - 939.79).abs() < 0.01);
        assert_eq!(fit.rank("A"), Some(1));
    }

    #[test]
    fn one_sided_record_is_unbounded() {
        let recs = [rec("d", "A", "B", Outcome::AWins)];
        assert!(matches!(
            fit_bradley_terry(&recs, &BtOptions::default()),
            Err(Error::UnboundedStrengths { dominated }) if dominated == ["B"]
        ));
    }

    #[test]
    fn disconnected_lists_components() {
        let recs = [
            rec("d", "A", "B", Outcome::Tie),
            rec("d", "C", "D", Outcome::Tie),
        ];
        match fit_bradley_terry(&recs, &BtOptions::default()) {
            Err(Error::DisconnectedGraph { components }) => {
                assert_eq!(components, vec![vec!["A", "B"], vec!["C", "D"]]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn policies_drop_records() {
        let recs = [
            rec("d", "A", "B", Outcome::NeitherFits),
            rec("d", "A", "B", Outcome::Tie),
        ];
        let opts = BtOptions {
            tie_policy: TiePolicy::Drop,
            ..BtOptions::default()
        };
        assert!(matches!(fit_bradley_terry(&recs, &opts), Err(Error::NoRecords)));
        let as_tie = BtOptions {
            neither_policy: NeitherPolicy::AsTie,
            ..BtOptions::default()
        };
        assert_eq!(fit_bradley_terry(&recs, &as_tie).unwrap().records_used, 2);
    }

    #[test]
    fn ratings() {
        let recs = [rating("d", "A", 4), rating("d", "A", 5), rating("d", "B", 3)];
        let agg = aggregate_ratings(&recs).unwrap();
        assert_eq!(agg[0].mean_text(), "4.50");
        assert_eq!(agg[1].mean_text(), "3.00");
        let report = rank_ratings(&recs).unwrap();
        assert_eq!(report.table("d").unwrap().rows[0].method, "A");
        assert!(matches!(rating_for(&recs, "d", "C"), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn markdown_shape() {
        let recs = [
            rec("x", "A", "B", Outcome::AWins),
            rec("x", "A", "B", Outcome::AWins),
            rec("x", "A", "B", Outcome::BWins),
        ];
        let md = rank_comparisons(&recs, &BtOptions::default()).unwrap().to_markdown();
        assert!(md.starts_with("| Method | x | Global |\n|---|---|---|\n| A | 1 (1060) | 1 (1060) |\n"), "{md}");
    }
}
