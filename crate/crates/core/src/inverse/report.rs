//! Solution reports: structured fields at display precision, a fixed
//! summary sentence and a model-written explanation capped at 200 words.

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Group};
use crate::llm::LanguageModel;
use crate::pso::Solution;
use crate::surrogate::CatalystDesign;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const NARRATIVE_WORD_LIMIT: usize = 200;
/// Limit quoted in the retry prompt.
pub const STRICT_WORD_LIMIT: usize = 150;
pub const REPORT_PROMPT: &str = include_str!("../../../../prompts/inverse_report.txt");
pub const STRICT_REPORT_PROMPT: &str = include_str!("../../../../prompts/inverse_report_strict.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentRole {
    BaseMetal,
    Promoter,
    Support,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionEntry {
    pub species: String,
    pub role: ComponentRole,
    pub wt_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub gas: String,
    pub vol_pct: f64,
}

/// Numbers are rounded to two decimals; `design` keeps the unrounded
/// optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseReport {
    pub schema_version: u32,
    pub composition: Vec<CompositionEntry>,
    pub conversion: f64,
    pub uncertainty: f64,
    pub x_eq: f64,
    pub temperature_c: f64,
    pub prep_method: String,
    pub prep_method_label: String,
    pub feed: Vec<FeedEntry>,
    pub time_on_stream_h: f64,
    pub w_f_ratio: f64,
    pub summary: String,
    pub narrative: String,
    pub narrative_truncated: bool,
    /// The explanation could not be produced; structured fields are intact.
    pub narrative_degraded: bool,
    pub iterations_used: usize,
    pub evaluations: usize,
    pub design: CatalystDesign,
}

fn hundredths(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

fn from_hundredths(h: i64) -> f64 {
    h as f64 / 100.0
}

/// Rounds wt% values to two decimals. If independent rounding drifts more
/// than 0.01 from 100, falls back to largest-remainder rounding, which sums
/// to exactly 100.
pub fn round_composition(values: &[f64]) -> Vec<f64> {
    let independent: Vec<i64> = values.iter().map(|&v| hundredths(v)).collect();
    if (independent.iter().sum::<i64>() - 10_000).abs() <= 1 {
        return independent.into_iter().map(from_hundredths).collect();
    }
    let scaled: Vec<f64> = values.iter().map(|v| v * 100.0).collect();
    let mut floors: Vec<i64> = scaled.iter().map(|s| s.floor() as i64).collect();
    let mut remaining = 10_000 - floors.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(values.len() * 2) {
        if remaining == 0 {
            break;
        }
        if remaining > 0 {
            floors[i] += 1;
            remaining -= 1;
        } else if floors[i] > 0 {
            floors[i] -= 1;
            remaining += 1;
        }
    }
    floors.into_iter().map(from_hundredths).collect()
}

/// Two decimals with trailing zeros dropped: 5.00 -> "5", 0.10 -> "0.1".
pub fn fmt_num(x: f64) -> String {
    let s = format!("{:.2}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn truncate_words(text: &str, limit: usize) -> String {
    text.split_whitespace().take(limit).collect::<Vec<_>>().join(" ")
}

/// The fixed-format answer sentence built from the structured fields.
pub fn summary_sentence(r: &InverseReport) -> String {
    let metals: Vec<String> = r
        .composition
        .iter()
        .filter(|c| c.role != ComponentRole::Support)
        .map(|c| format!("{} ({}%)", c.species, fmt_num(c.wt_pct)))
        .collect();
    let support = r
        .composition
        .iter()
        .find(|c| c.role == ComponentRole::Support)
        .map(|c| format!("{} ({}%)", c.species, fmt_num(c.wt_pct)))
        .unwrap_or_default();
    let feed: Vec<String> = r.feed.iter().map(|f| format!("{} ({}%)", f.gas, fmt_num(f.vol_pct))).collect();
    let feed = match feed.split_last() {
        Some((last, rest)) if !rest.is_empty() => format!("{}, and {last}", rest.join(", ")),
        Some((last, _)) => last.clone(),
        None => String::new(),
    };
    let tos = fmt_num(r.time_on_stream_h);
    let unit = if tos == "1" { "hour" } else { "hours" };
    format!(
        "Found a catalytic solution of {} with the support of {support} that can achieve maximum {}% (error ± {}%) CO conversion at {} °C. \
         The catalyst preparation method is {} ({}). \
         The initial feed gases are {feed}. \
         The time on stream is {tos} {unit}. \
         The ratio of catalyst weight to feed flow rate is {} mg min/ml.",
        metals.join(", "),
        fmt_num(r.conversion),
        fmt_num(r.uncertainty),
        fmt_num(r.temperature_c),
        r.prep_method,
        r.prep_method_label,
        fmt_num(r.w_f_ratio),
    )
}

fn label(catalog: &Catalog, group: Group, id: &str) -> String {
    catalog.find(group, id).map(|e| e.label.clone()).unwrap_or_else(|| id.to_string())
}

/// Structured part of the report with an empty narrative.
pub fn structured_report(solution: &Solution, catalog: &Catalog) -> InverseReport {
    let d = &solution.design;
    let mut parts = vec![(label(catalog, Group::BaseMetal, &d.base_metal), ComponentRole::BaseMetal, d.base_wt)];
    if let Some(p) = &d.promoter {
        parts.push((label(catalog, Group::Promoter, p), ComponentRole::Promoter, d.promoter_wt));
    }
    parts.push((label(catalog, Group::Support, &d.support), ComponentRole::Support, d.support_wt()));
    let rounded = round_composition(&parts.iter().map(|p| p.2).collect::<Vec<_>>());
    let composition = parts
        .into_iter()
        .zip(rounded)
        .map(|((species, role, _), wt_pct)| CompositionEntry { species, role, wt_pct })
        .collect();
    let r2 = |x: f64| from_hundredths(hundredths(x));
    let f = &d.feed;
    let feed = [("CO", f.y_co), ("H2O", f.y_h2o), ("CO2", f.y_co2), ("H2", f.y_h2), ("N2", f.y_n2)]
        .into_iter()
        .map(|(gas, y)| FeedEntry { gas: gas.into(), vol_pct: r2(100.0 * y) })
        .collect();
    let prep = catalog.find(Group::PrepMethod, &d.prep_method);
    let mut report = InverseReport {
        schema_version: REPORT_SCHEMA_VERSION,
        composition,
        conversion: r2(solution.prediction.conversion),
        uncertainty: r2(solution.prediction.uncertainty),
        x_eq: r2(solution.prediction.x_eq),
        temperature_c: r2(d.temperature_c),
        prep_method: prep.map(|e| e.name.clone()).unwrap_or_else(|| d.prep_method.clone()),
        prep_method_label: prep.map(|e| e.label.clone()).unwrap_or_else(|| d.prep_method.clone()),
        feed,
        time_on_stream_h: r2(d.time_on_stream_h),
        w_f_ratio: r2(d.w_f_ratio),
        summary: String::new(),
        narrative: String::new(),
        narrative_truncated: false,
        narrative_degraded: false,
        iterations_used: solution.iterations_used,
        evaluations: solution.evaluations,
        design: d.clone(),
    };
    report.summary = summary_sentence(&report);
    report
}

fn result_block(r: &InverseReport) -> String {
    format!("{}\nThe thermodynamic equilibrium CO conversion at these conditions is {}%.", r.summary, fmt_num(r.x_eq))
}

/// Builds the report and asks the model for the explanation. Model failures
/// leave the narrative empty and set `narrative_degraded`; an over-long
/// narrative gets one stricter retry and is then cut at 200 words.
pub async fn render_report(solution: &Solution, catalog: &Catalog, llm: Option<&dyn LanguageModel>) -> InverseReport {
    let mut report = structured_report(solution, catalog);
    let Some(llm) = llm else {
        report.narrative_degraded = true;
        return report;
    };
    let block = result_block(&report);
    let prompt = REPORT_PROMPT.replace("{limit}", &NARRATIVE_WORD_LIMIT.to_string()).replace("{result}", &block);
    let first = match llm.generate(&prompt).await {
        Ok(out) => out.text.trim().to_string(),
        Err(e) => {
            tracing::warn!("report narrative unavailable: {e}");
            report.narrative_degraded = true;
            return report;
        }
    };
    let mut text = first;
    let words = word_count(&text);
    if words > NARRATIVE_WORD_LIMIT {
        let strict = STRICT_REPORT_PROMPT
            .replace("{words}", &words.to_string())
            .replace("{limit}", &STRICT_WORD_LIMIT.to_string())
            .replace("{result}", &block);
        match llm.generate(&strict).await {
            Ok(out) => text = out.text.trim().to_string(),
            Err(e) => tracing::warn!("narrative retry failed, truncating first draft: {e}"),
        }
        if word_count(&text) > NARRATIVE_WORD_LIMIT {
            text = truncate_words(&text, NARRATIVE_WORD_LIMIT);
            report.narrative_truncated = true;
        }
    }
    report.narrative = text;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_rounding_is_kept_within_tolerance() {
        assert_eq!(round_composition(&[4.2649, 3.0949, 92.6402]), vec![4.26, 3.09, 92.64]);
    }

    #[test]
    fn largest_remainder_takes_over_on_drift() {
        let r = round_composition(&[0.006, 0.006, 0.006, 0.006, 99.976]);
        let sum: i64 = r.iter().map(|&v| hundredths(v)).sum();
        assert_eq!(sum, 10_000);
    }

    #[test]
    fn numbers_drop_trailing_zeros() {
        assert_eq!(fmt_num(5.0), "5");
        assert_eq!(fmt_num(0.1), "0.1");
        assert_eq!(fmt_num(88.57), "88.57");
        assert_eq!(fmt_num(200.0), "200");
    }

    #[test]
    fn words_are_whitespace_tokens() {
        assert_eq!(word_count("  a  b\nc\t d "), 4);
        assert_eq!(truncate_words("a b c d", 2), "a b");
    }
}
