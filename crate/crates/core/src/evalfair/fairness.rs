use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub population: f64,
    /// BLEU score of the group's variety, 0–100.
    pub benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitVector {
    groups: Vec<Group>,
}

impl BenefitVector {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Empty("benefit groups"));
        }
        for g in &groups {
            if !(g.population.is_finite() && g.population > 0.0) {
                return Err(Error::invalid(format!("population of {} must be positive", g.name)));
            }
            if !(g.benefit.is_finite() && g.benefit >= 0.0) {
                return Err(Error::invalid(format!("benefit of {} must be non-negative", g.name)));
            }
        }
        Ok(BenefitVector { groups })
    }

    /// Unit populations.
    pub fn from_benefits(benefits: &[f64]) -> Result<Self> {
        BenefitVector::new(
            benefits
                .iter()
                .enumerate()
                .map(|(i, &b)| Group {
                    name: format!("g{i}"),
                    population: 1.0,
                    benefit: b,
                })
                .collect(),
        )
    }

    /// Joins named scores with named populations; every scored group needs a population.
    pub fn from_named(scores: &[(String, f64)], populations: &[(String, f64)]) -> Result<Self> {
        let groups = scores
            .iter()
            .map(|(name, b)| {
                let pop = populations
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, p)| *p)
                    .ok_or_else(|| Error::invalid(format!("no population for group {name}")))?;
                Ok(Group {
                    name: name.clone(),
                    population: pop,
                    benefit: *b,
                })
            })
            .collect::<Result<_>>()?;
        BenefitVector::new(groups)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// The named groups, in their order here.
    pub fn subset(&self, names: &[String]) -> Result<Self> {
        if let Some(n) = names.iter().find(|n| !self.groups.iter().any(|g| &g.name == *n)) {
            return Err(Error::invalid(format!("unknown group {n}")));
        }
        BenefitVector::new(self.groups.iter().filter(|g| names.contains(&g.name)).cloned().collect())
    }

    fn benefits(&self) -> impl Iterator<Item = f64> + '_ {
        self.groups.iter().map(|g| g.benefit)
    }
}

pub fn macro_avg(b: &BenefitVector) -> f64 {
    b.benefits().sum::<f64>() / b.groups.len() as f64
}

pub fn pop_weighted_avg(b: &BenefitVector) -> Result<f64> {
    let total: f64 = b.groups.iter().map(|g| g.population).sum();
    if total <= 0.0 {
        return Err(Error::invalid("total population is zero"));
    }
    Ok(b.groups.iter().map(|g| g.population * g.benefit).sum::<f64>() / total)
}

pub fn max_min(b: &BenefitVector) -> f64 {
    let max = b.benefits().fold(f64::NEG_INFINITY, f64::max);
    let min = b.benefits().fold(f64::INFINITY, f64::min);
    max - min
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha == 0.0 || alpha == 1.0 {
        return Err(Error::invalid("generalized entropy needs a finite alpha outside {0, 1}"));
    }
    Ok(())
}

/// Entropy index of individuals with `values[i]` repeated `weights[i]` times.
fn weighted_entropy(values: &[f64], weights: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::Empty("benefit list"));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("benefits must be finite and non-negative"));
    }
    let n: f64 = weights.iter().sum();
    let mu = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / n;
    if mu <= 0.0 {
        return Err(Error::invalid("mean benefit must be positive"));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok((0.0, values[0]));
    }
    let s: f64 = values.iter().zip(weights).map(|(v, w)| w * ((v / mu).powf(alpha) - 1.0)).sum();
    Ok((s / (n * alpha * (alpha - 1.0)), mu))
}

/// `E^α = 1/(n α (α−1)) Σ [(b_i/μ)^α − 1]`.
pub fn generalized_entropy(benefits: &[f64], alpha: f64) -> Result<f64> {
    weighted_entropy(benefits, &vec![1.0; benefits.len()], alpha).map(|r| r.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyDecomposition {
    pub total: f64,
    pub within: f64,
    pub between: f64,
}

fn decompose(groups: &[(Vec<f64>, Vec<f64>)], alpha: f64) -> Result<EntropyDecomposition> {
    check_alpha(alpha)?;
    if groups.is_empty() || groups.iter().any(|g| g.0.is_empty()) {
        return Err(Error::Empty("benefit group"));
    }
    let all_v: Vec<f64> = groups.iter().flat_map(|g| g.0.iter().copied()).collect();
    let all_w: Vec<f64> = groups.iter().flat_map(|g| g.1.iter().copied()).collect();
    let (total, mu) = weighted_entropy(&all_v, &all_w, alpha)?;
    let n: f64 = all_w.iter().sum();
    let (mut within, mut between) = (0.0, 0.0);
    for (v, w) in groups {
        let ng: f64 = w.iter().sum();
        let mu_g = v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / ng;
        let ratio = (mu_g / mu).powf(alpha);
        if mu_g > 0.0 {
            within += ng / n * ratio * weighted_entropy(v, w, alpha)?.0;
        }
        between += ng / (n * alpha * (alpha - 1.0)) * (ratio - 1.0);
    }
    Ok(EntropyDecomposition { total, within, between })
}

/// Within-group and between-group terms of the entropy index of the concatenated groups.
pub fn entropy_decomposition(groups: &[Vec<f64>], alpha: f64) -> Result<EntropyDecomposition> {
    let g: Vec<(Vec<f64>, Vec<f64>)> = groups.iter().map(|v| (v.clone(), vec![1.0; v.len()])).collect();
    decompose(&g, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub alpha: f64,
    /// Groups entering the averages.
    pub avg_groups: Vec<String>,
    /// Groups entering max−min and unfairness.
    pub spread_groups: Vec<String>,
    pub avg_l: f64,
    pub avg_pop: f64,
    pub max_min: f64,
    pub unfair_total: f64,
    pub unfair_within: f64,
    pub unfair_between: f64,
}

/// Fairness metrics over BLEU benefits. Averages use `avg_groups` when given (all groups
/// otherwise); max−min and the entropy terms always use every group. Each group counts as
/// `population` individuals sharing the benefit BLEU/100.
pub fn unfairness_from_bleu(benefits: &BenefitVector, alpha: f64, avg_groups: Option<&[String]>) -> Result<FairnessReport> {
    let avg_set = match avg_groups {
        Some(names) => benefits.subset(names)?,
        None => benefits.clone(),
    };
    let groups: Vec<(Vec<f64>, Vec<f64>)> = benefits
        .groups
        .iter()
        .map(|g| (vec![g.benefit / 100.0], vec![g.population]))
        .collect();
    let d = decompose(&groups, alpha)?;
    let names = |b: &BenefitVector| b.groups.iter().map(|g| g.name.clone()).collect();
    Ok(FairnessReport {
        alpha,
        avg_groups: names(&avg_set),
        spread_groups: names(benefits),
        avg_l: macro_avg(&avg_set),
        avg_pop: pop_weighted_avg(&avg_set)?,
        max_min: max_min(benefits),
        unfair_total: d.total,
        unfair_within: d.within,
        unfair_between: d.between,
    })
}

impl fmt::Display for FairnessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "alpha\t{}", self.alpha)?;
        writeln!(f, "avg_groups\t{}", self.avg_groups.join(","))?;
        writeln!(f, "spread_groups\t{}", self.spread_groups.join(","))?;
        writeln!(f, "avg_L\t{:.1}", self.avg_l)?;
        writeln!(f, "avg_pop\t{:.1}", self.avg_pop)?;
        writeln!(f, "max_min\t{:.1}", self.max_min)?;
        writeln!(f, "unfair_total\t{:.3}", self.unfair_total)?;
        writeln!(f, "unfair_within\t{:.3}", self.unfair_within)?;
        write!(f, "unfair_between\t{:.3}", self.unfair_between)
    }
}

/// Lines `name<TAB>value`; blank lines and lines starting with `#` are skipped.
pub fn parse_named_values(text: &str, path: &Path) -> Result<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |r: &str| Error::format("name/value file", path, format!("line {}: {r}", i + 1));
        let (name, value) = line.split_once('\t').ok_or_else(|| bad("expected name<TAB>value"))?;
        let value: f64 = value.trim().parse().map_err(|_| bad("value is not a number"))?;
        if out.iter().any(|(n, _)| n == name) {
            return Err(bad("duplicate group"));
        }
        out.push((name.to_string(), value));
    }
    Ok(out)
}

pub fn read_named_values(path: &Path) -> Result<Vec<(String, f64)>> {
    parse_named_values(&std::fs::read_to_string(path)?, path)
}
