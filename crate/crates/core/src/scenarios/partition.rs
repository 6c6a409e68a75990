use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::numerics::{Dataset, RngHandle};

/// A fraction of one class's rows assigned to a site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Share {
    pub class: usize,
    pub fraction: f64,
}

impl Share {
    pub fn all(class: usize) -> Self {
        Self { class, fraction: 1.0 }
    }

    pub fn part(class: usize, fraction: f64) -> Self {
        Self { class, fraction }
    }
}

/// How rows are distributed over sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionRule {
    /// Site s holds rows with `cuts[s-1] <= x[feature] < cuts[s]`.
    ByFeatureRange { feature: usize, cuts: Vec<f64> },
    /// `sites[s]` lists the class shares site s holds; each class's
    /// fractions must sum to 1 across sites.
    ByComponents { sites: Vec<Vec<Share>> },
    RandomFractions { fractions: Vec<f64> },
    /// Equal random split, then class `(i mod J) mod C` at site i (1-based)
    /// is subsampled to a fraction `gamma`.
    RoundRobinUnbalance { sites: usize, gamma: f64 },
    EqualRandom { sites: usize },
}

/// The three two-site layouts used for classification experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    D1,
    D2,
    D3,
}

impl std::str::FromStr for Setting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Self::D1),
            "d2" => Ok(Self::D2),
            "d3" => Ok(Self::D3),
            _ => Err(format!("unknown setting `{s}` (expected d1, d2 or d3)")),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::D1 => "D1",
            Self::D2 => "D2",
            Self::D3 => "D3",
        })
    }
}

impl PartitionRule {
    /// Four-component layouts: D1 = {C1+C2 | C3+C4},
    /// D2 = {½C1+C2+½C3 | ½C1+½C3+C4}, D3 = random halves.
    pub fn mixture(setting: Setting) -> Self {
        match setting {
            Setting::D1 => Self::ByComponents {
                sites: vec![vec![Share::all(0), Share::all(1)], vec![Share::all(2), Share::all(3)]],
            },
            Setting::D2 => Self::ByComponents {
                sites: vec![
                    vec![Share::part(0, 0.5), Share::all(1), Share::part(2, 0.5)],
                    vec![Share::part(0, 0.5), Share::part(2, 0.5), Share::all(3)],
                ],
            },
            Setting::D3 => Self::EqualRandom { sites: 2 },
        }
    }

    /// Rows with `x[0] < 2` at site 1, the rest at site 2.
    pub fn linreg_setting_one() -> Self {
        Self::ByFeatureRange {
            feature: 0,
            cuts: vec![2.0],
        }
    }

    /// 40% of rows at site 1 at random, the rest at site 2.
    pub fn linreg_setting_two() -> Self {
        Self::RandomFractions {
            fractions: vec![0.4, 0.6],
        }
    }

    pub fn n_sites(&self) -> usize {
        match self {
            Self::ByFeatureRange { cuts, .. } => cuts.len() + 1,
            Self::ByComponents { sites } => sites.len(),
            Self::RandomFractions { fractions } => fractions.len(),
            Self::RoundRobinUnbalance { sites, .. } | Self::EqualRandom { sites } => *sites,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidParameter(m));
        match self {
            Self::ByFeatureRange { cuts, .. } => {
                if cuts.is_empty() || cuts.iter().any(|c| !c.is_finite()) || cuts.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("cuts must be finite and strictly increasing".into());
                }
            }
            Self::ByComponents { sites } => {
                if sites.len() < 2 && sites.iter().all(Vec::is_empty) {
                    return bad("component map names no sites".into());
                }
                let classes = sites.iter().flatten().map(|s| s.class).max().map_or(0, |c| c + 1);
                for c in 0..classes {
                    let total: f64 = sites.iter().flatten().filter(|s| s.class == c).map(|s| s.fraction).sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return bad(format!("class {c} fractions sum to {total}, not 1"));
                    }
                }
                if sites.iter().flatten().any(|s| !(s.fraction > 0.0 && s.fraction <= 1.0)) {
                    return bad("share fractions must lie in (0, 1]".into());
                }
            }
            Self::RandomFractions { fractions } => {
                let total: f64 = fractions.iter().sum();
                if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return bad(format!("fractions must be positive and sum to 1 (sum {total})"));
                }
            }
            Self::RoundRobinUnbalance { sites, gamma } => {
                if *sites == 0 || !(*gamma > 0.0 && *gamma <= 1.0) {
                    return bad(format!("need sites >= 1 and gamma in (0, 1], got {sites}, {gamma}"));
                }
            }
            Self::EqualRandom { sites } => {
                if *sites == 0 {
                    return bad("need at least one site".into());
                }
            }
        }
        Ok(())
    }
}

/// Splits `0..n` at `round(cum_fraction * n)` boundaries.
fn split_by_fractions(rows: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let n = rows.len() as f64;
    let mut out = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (s, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if s + 1 == fractions.len() {
            rows.len()
        } else {
            ((cum * n).round() as usize).min(rows.len())
        };
        out.push(rows[start..end.max(start)].to_vec());
        start = end.max(start);
    }
    out
}

fn shuffled(mut rows: Vec<usize>, rng: RngHandle) -> Vec<usize> {
    rows.shuffle(&mut rng.rng());
    rows
}

/// Row indices held by each site, each list sorted ascending.
pub fn partition_indices(data: &Dataset, rule: &PartitionRule, rng: RngHandle) -> Result<Vec<Vec<usize>>, ScenarioError> {
    rule.validate()?;
    let n = data.n();
    let mut sites: Vec<Vec<usize>> = match rule {
        PartitionRule::ByFeatureRange { feature, cuts } => {
            if *feature >= data.d() {
                return Err(ScenarioError::RuleMismatch(format!(
                    "feature {feature} out of range for {} columns",
                    data.d()
                )));
            }
            let mut sites = vec![Vec::new(); cuts.len() + 1];
            for (i, x) in data.features().rows().enumerate() {
                sites[cuts.partition_point(|&c| c <= x[*feature])].push(i);
            }
            sites
        }
        PartitionRule::ByComponents { sites: shares } => {
            let classes = data
                .class_indices()
                .ok_or_else(|| ScenarioError::RuleMismatch("component rule needs class labels".into()))?;
            let mut sites = vec![Vec::new(); shares.len()];
            for (c, rows) in classes.into_iter().enumerate() {
                let holders: Vec<(usize, f64)> = shares
                    .iter()
                    .enumerate()
                    .flat_map(|(s, list)| list.iter().filter(|sh| sh.class == c).map(move |sh| (s, sh.fraction)))
                    .collect();
                if holders.is_empty() {
                    if rows.is_empty() {
                        continue;
                    }
                    return Err(ScenarioError::RuleMismatch(format!("class {c} is assigned to no site")));
                }
                let fractions: Vec<f64> = holders.iter().map(|h| h.1).collect();
                let rows = shuffled(rows, rng.fork(c as u64));
                for ((s, _), part) in holders.iter().zip(split_by_fractions(&rows, &fractions)) {
                    sites[*s].extend(part);
                }
            }
            if let Some(c) = shares.iter().flatten().map(|s| s.class).find(|&c| c >= data.n_classes().unwrap_or(0)) {
                return Err(ScenarioError::RuleMismatch(format!(
                    "class {c} does not exist ({} classes)",
                    data.n_classes().unwrap_or(0)
                )));
            }
            sites
        }
        PartitionRule::RandomFractions { fractions } => split_by_fractions(&shuffled((0..n).collect(), rng), fractions),
        PartitionRule::EqualRandom { sites } => {
            split_by_fractions(&shuffled((0..n).collect(), rng), &vec![1.0 / *sites as f64; *sites])
        }
        PartitionRule::RoundRobinUnbalance { sites: j, gamma } => {
            let labels = data
                .labels()
                .ok_or_else(|| ScenarioError::RuleMismatch("unbalance rule needs class labels".into()))?;
            let c = data.n_classes().unwrap();
            let even = split_by_fractions(&shuffled((0..n).collect(), rng), &vec![1.0 / *j as f64; *j]);
            even.into_iter()
                .enumerate()
                .map(|(s, rows)| {
                    let target = ((s + 1) % j) % c;
                    let (hit, mut keep): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| labels[i] == target);
                    let hit = shuffled(hit, rng.fork(1 + s as u64));
                    let kept = (gamma * hit.len() as f64).round() as usize;
                    keep.extend_from_slice(&hit[..kept]);
                    keep
                })
                .collect()
        }
    };
    for (s, rows) in sites.iter_mut().enumerate() {
        if rows.is_empty() {
            return Err(ScenarioError::RuleMismatch(format!("site {} receives no rows", s + 1)));
        }
        rows.sort_unstable();
    }
    Ok(sites)
}

/// Site datasets under `rule`.
pub fn partition(data: &Dataset, rule: &PartitionRule, rng: RngHandle) -> Result<Vec<Dataset>, ScenarioError> {
    partition_indices(data, rule, rng)?
        .iter()
        .map(|rows| Ok(data.subset(rows)?))
        .collect()
}
