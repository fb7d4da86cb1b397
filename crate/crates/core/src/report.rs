//! Aggregation into the figures-as-data: per-model fallback breakdowns,
//! ordering matrices, and deterministic CSV/JSON/SVG emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};
use crate::label::{FactLabelValue, LabeledGeneration};
use crate::listparse::EndingKind;
use crate::stats::TestReport;

pub const BREAKDOWN_CSV_HEADER: &str =
    "group,correct,hallucination,repetition,miss_eos,miss_topic,miss_badformat,gold_size";

// Label-color convention, matched across every figure.
pub const COLOR_CORRECT: &str = "#2ca02c"; // green
pub const COLOR_HALLUCINATION: &str = "#ff7f0e"; // orange
pub const COLOR_REPETITION: &str = "#1f77b4"; // blue
pub const COLOR_BAD_FORMAT: &str = "#d62728"; // red
pub const COLOR_EOS: &str = "#e377c2"; // pink
pub const COLOR_TOPIC_CHANGE: &str = "#9467bd"; // purple
pub const COLOR_GOLD_LINE: &str = "#006400"; // dark green rule line

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    pub group: String,
    pub correct: f64,
    pub hallucination: f64,
    pub repetition: f64,
    pub miss_eos: f64,
    pub miss_topic: f64,
    pub miss_badformat: f64,
    pub gold_size: f64,
}

impl BreakdownRow {
    /// Everything except gold size; reconstructs requested_count.
    pub fn fact_sum(&self) -> f64 {
        self.correct
            + self.hallucination
            + self.repetition
            + self.miss_eos
            + self.miss_topic
            + self.miss_badformat
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownTable {
    pub rows: Vec<BreakdownRow>,
    pub requested_count: u32,
}

struct Counts {
    correct: f64,
    hallucination: f64,
    repetition: f64,
    miss_eos: f64,
    miss_topic: f64,
    miss_badformat: f64,
}

fn counts_of(gen: &LabeledGeneration) -> Counts {
    let missing = gen.missing_count as f64;
    Counts {
        correct: gen.count(FactLabelValue::Correct) as f64,
        hallucination: gen.count(FactLabelValue::Hallucination) as f64,
        repetition: gen.count(FactLabelValue::Repetition) as f64,
        miss_eos: if gen.ending.kind == EndingKind::Eos { missing } else { 0.0 },
        miss_topic: if gen.ending.kind == EndingKind::TopicChange { missing } else { 0.0 },
        miss_badformat: if gen.ending.kind == EndingKind::BadFormat { missing } else { 0.0 },
    }
}

/// Mean fallback counts per group. Samples of one question are averaged
/// first, then questions, so five-sample runs weigh each question equally.
/// `gold_sizes` maps question_id → number of gold answers (the "green line").
pub fn aggregate_breakdown(
    labeled: &[LabeledGeneration],
    gold_sizes: &BTreeMap<String, usize>,
    group_key: impl Fn(&LabeledGeneration) -> String,
) -> Result<BreakdownTable> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("no labeled generations to aggregate".into()));
    }
    let mut requested: Option<u32> = None;
    // group → question → per-sample counts
    let mut groups: BTreeMap<String, BTreeMap<String, Vec<Counts>>> = BTreeMap::new();
    for gen in labeled {
        match requested {
            None => requested = Some(gen.requested_count()),
            Some(r) if r != gen.requested_count() => {
                return Err(Error::MixedRequestedCount(r, gen.requested_count()))
            }
            _ => {}
        }
        groups
            .entry(group_key(gen))
            .or_default()
            .entry(gen.question_id.clone())
            .or_default()
            .push(counts_of(gen));
    }
    let requested = requested.expect("non-empty input");

    let mut rows = Vec::new();
    for (group, questions) in groups {
        let mut sum = [0.0f64; 6];
        let mut gold_sum = 0.0f64;
        let n_questions = questions.len() as f64;
        for (qid, samples) in &questions {
            let k = samples.len() as f64;
            sum[0] += samples.iter().map(|c| c.correct).sum::<f64>() / k;
            sum[1] += samples.iter().map(|c| c.hallucination).sum::<f64>() / k;
            sum[2] += samples.iter().map(|c| c.repetition).sum::<f64>() / k;
            sum[3] += samples.iter().map(|c| c.miss_eos).sum::<f64>() / k;
            sum[4] += samples.iter().map(|c| c.miss_topic).sum::<f64>() / k;
            sum[5] += samples.iter().map(|c| c.miss_badformat).sum::<f64>() / k;
            gold_sum += *gold_sizes
                .get(qid)
                .ok_or_else(|| Error::record(qid, "no gold size for question"))?
                as f64;
        }
        rows.push(BreakdownRow {
            group,
            correct: sum[0] / n_questions,
            hallucination: sum[1] / n_questions,
            repetition: sum[2] / n_questions,
            miss_eos: sum[3] / n_questions,
            miss_topic: sum[4] / n_questions,
            miss_badformat: sum[5] / n_questions,
            gold_size: gold_sum / n_questions,
        });
    }
    Ok(BreakdownTable { rows, requested_count: requested })
}

// ── Ordering matrix ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixCell {
    Correct,
    Hallucination,
    Repetition,
    MissEos,
    MissTopicChange,
    MissBadFormat,
}

impl MatrixCell {
    pub fn letter(self) -> char {
        match self {
            MatrixCell::Correct => 'C',
            MatrixCell::Hallucination => 'H',
            MatrixCell::Repetition => 'R',
            MatrixCell::MissEos => 'E',
            MatrixCell::MissTopicChange => 'T',
            MatrixCell::MissBadFormat => 'B',
        }
    }

    pub fn color(self) -> &'static str {
        match self {
            MatrixCell::Correct => COLOR_CORRECT,
            MatrixCell::Hallucination => COLOR_HALLUCINATION,
            MatrixCell::Repetition => COLOR_REPETITION,
            MatrixCell::MissEos => COLOR_EOS,
            MatrixCell::MissTopicChange => COLOR_TOPIC_CHANGE,
            MatrixCell::MissBadFormat => COLOR_BAD_FORMAT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub row_id: String,
    pub cells: Vec<MatrixCell>,
}

/// One row per generation, one column per fact position; missing positions
/// carry the ending marker. Rows sort by longest trailing repetition run.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingMatrix {
    pub rows: Vec<MatrixRow>,
    pub requested_count: u32,
}

fn trailing_repetition_run(gen: &LabeledGeneration) -> usize {
    gen.labels.iter().rev().take_while(|l| l.value == FactLabelValue::Repetition).count()
}

pub fn ordering_matrix(labeled: &[LabeledGeneration]) -> Result<OrderingMatrix> {
    let mut requested: Option<u32> = None;
    let mut keyed: Vec<(usize, String, MatrixRow)> = Vec::new();
    for gen in labeled {
        match requested {
            None => requested = Some(gen.requested_count()),
            Some(r) if r != gen.requested_count() => {
                return Err(Error::MixedRequestedCount(r, gen.requested_count()))
            }
            _ => {}
        }
        let mut cells: Vec<MatrixCell> = gen
            .labels
            .iter()
            .map(|l| match l.value {
                FactLabelValue::Correct => MatrixCell::Correct,
                FactLabelValue::Hallucination => MatrixCell::Hallucination,
                FactLabelValue::Repetition => MatrixCell::Repetition,
            })
            .collect();
        let filler = match gen.ending.kind {
            EndingKind::Eos => MatrixCell::MissEos,
            EndingKind::TopicChange => MatrixCell::MissTopicChange,
            EndingKind::BadFormat | EndingKind::Exhausted => MatrixCell::MissBadFormat,
        };
        cells.extend(std::iter::repeat(filler).take(gen.missing_count as usize));
        let row_id = if gen.sample_index == 0 {
            gen.question_id.clone()
        } else {
            format!("{}#s{}", gen.question_id, gen.sample_index)
        };
        keyed.push((trailing_repetition_run(gen), row_id.clone(), MatrixRow { row_id, cells }));
    }
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(OrderingMatrix {
        rows: keyed.into_iter().map(|(_, _, row)| row).collect(),
        requested_count: requested.unwrap_or(0),
    })
}

// ── Emission ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
    Svg,
}

impl EmitFormat {
    pub fn from_cli_name(name: &str) -> Result<Self> {
        match name {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            "svg" => Ok(EmitFormat::Svg),
            other => Err(Error::Config(format!("unknown format `{other}` (csv|json|svg)"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            EmitFormat::Csv => "csv",
            EmitFormat::Json => "json",
            EmitFormat::Svg => "svg",
        }
    }
}

/// Anything the report stage can write out.
pub enum ReportArtifact<'a> {
    Breakdown(&'a BreakdownTable),
    Matrix(&'a OrderingMatrix),
    Test(&'a [TestReport]),
    /// (row id, diversity curve) pairs.
    Curves(&'a [(String, Vec<(usize, f64)>)]),
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

pub fn render_breakdown_csv(table: &BreakdownTable) -> String {
    let mut out = String::from(BREAKDOWN_CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.group,
            fmt4(r.correct),
            fmt4(r.hallucination),
            fmt4(r.repetition),
            fmt4(r.miss_eos),
            fmt4(r.miss_topic),
            fmt4(r.miss_badformat),
            fmt4(r.gold_size)
        );
    }
    out
}

pub fn render_breakdown_json(table: &BreakdownTable) -> String {
    let rows: Vec<serde_json::Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "group": r.group,
                "correct": round4(r.correct),
                "hallucination": round4(r.hallucination),
                "repetition": round4(r.repetition),
                "miss_eos": round4(r.miss_eos),
                "miss_topic": round4(r.miss_topic),
                "miss_badformat": round4(r.miss_badformat),
                "gold_size": round4(r.gold_size),
            })
        })
        .collect();
    let doc = json!({ "requested_count": table.requested_count, "rows": rows });
    let mut s = serde_json::to_string_pretty(&doc).expect("breakdown serializes");
    s.push('\n');
    s
}

/// Stacked bars, one per group, with the gold-size rule line.
pub fn render_breakdown_svg(table: &BreakdownTable) -> String {
    let bar_w = 48.0;
    let gap = 24.0;
    let left = 48.0;
    let bottom = 280.0;
    let plot_h = 240.0;
    let width = left + table.rows.len() as f64 * (bar_w + gap) + gap;
    let y_max = f64::from(table.requested_count).max(1.0);
    let scale = plot_h / y_max;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="320" viewBox="0 0 {width:.0} 320">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r##"<line x1="{left}" y1="{bottom}" x2="{:.2}" y2="{bottom}" stroke="#333333" stroke-width="1"/>"##,
        width - gap
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{left}" y1="{:.2}" x2="{left}" y2="{bottom}" stroke="#333333" stroke-width="1"/>"##,
        bottom - plot_h
    );
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"##,
        left - 4.0,
        bottom - plot_h + 10.0,
        table.requested_count
    );
    for (i, r) in table.rows.iter().enumerate() {
        let x = left + gap + i as f64 * (bar_w + gap);
        let mut y = bottom;
        for (value, color) in [
            (r.correct, COLOR_CORRECT),
            (r.hallucination, COLOR_HALLUCINATION),
            (r.repetition, COLOR_REPETITION),
            (r.miss_eos, COLOR_EOS),
            (r.miss_topic, COLOR_TOPIC_CHANGE),
            (r.miss_badformat, COLOR_BAD_FORMAT),
        ] {
            let h = value * scale;
            y -= h;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{bar_w}" height="{h:.2}" fill="{color}"/>"#
            );
        }
        let gold_y = bottom - r.gold_size * scale;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{gold_y:.2}" x2="{:.2}" y2="{gold_y:.2}" stroke="{COLOR_GOLD_LINE}" stroke-width="2"/>"#,
            x - 4.0,
            x + bar_w + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="300" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            x + bar_w / 2.0,
            xml_escape(&r.group)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_matrix_csv(matrix: &OrderingMatrix) -> String {
    let mut out = String::from("row_id");
    for i in 1..=matrix.requested_count {
        let _ = write!(out, ",p{i}");
    }
    out.push('\n');
    for row in &matrix.rows {
        let _ = write!(out, "{}", row.row_id);
        for c in &row.cells {
            let _ = write!(out, ",{}", c.letter());
        }
        out.push('\n');
    }
    out
}

pub fn render_matrix_json(matrix: &OrderingMatrix) -> String {
    let rows: Vec<serde_json::Value> = matrix
        .rows
        .iter()
        .map(|r| {
            json!({
                "row_id": r.row_id,
                "cells": r.cells.iter().map(|c| c.letter().to_string()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = json!({ "requested_count": matrix.requested_count, "rows": rows });
    let mut s = serde_json::to_string_pretty(&doc).expect("matrix serializes");
    s.push('\n');
    s
}

/// One colored cell per (row, position).
pub fn render_matrix_svg(matrix: &OrderingMatrix) -> String {
    let cell = 12.0;
    let label_w = 140.0;
    let width = label_w + matrix.requested_count as f64 * cell + 8.0;
    let height = matrix.rows.len() as f64 * cell + 8.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for (ri, row) in matrix.rows.iter().enumerate() {
        let y = 4.0 + ri as f64 * cell;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="9" text-anchor="end">{}</text>"#,
            label_w - 6.0,
            y + cell - 3.0,
            xml_escape(&row.row_id)
        );
        for (ci, c) in row.cells.iter().enumerate() {
            let x = label_w + ci as f64 * cell;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                cell - 1.0,
                cell - 1.0,
                c.color()
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render_tests_json(reports: &[TestReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("test reports serialize");
    s.push('\n');
    s
}

pub fn render_tests_csv(reports: &[TestReport]) -> String {
    let mut out =
        String::from("model_id,dataset_id,n_eligible,u_statistic,effect_direction,p_value,method\n");
    for r in reports {
        let direction = match r.effect_direction {
            crate::stats::EffectDirection::ObservedHigher => "observed_higher",
            crate::stats::EffectDirection::BaselineHigher => "baseline_higher",
            crate::stats::EffectDirection::Tied => "tied",
        };
        let method = match r.method {
            crate::stats::TestMethod::ExactSmall => "exact_small",
            crate::stats::TestMethod::NormalApproxTieCorrected => "normal_approx_tie_corrected",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{direction},{:e},{method}",
            r.model_id,
            r.dataset_id,
            r.n_eligible,
            fmt4(r.u_statistic),
            r.p_value,
        );
    }
    out
}

pub fn render_curves_json(curves: &[(String, Vec<(usize, f64)>)]) -> String {
    let rows: Vec<serde_json::Value> = curves
        .iter()
        .map(|(id, c)| {
            json!({
                "id": id,
                "curve": c.iter().map(|(l, s)| json!([l, round4(*s)])).collect::<Vec<_>>(),
            })
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("curves serialize");
    s.push('\n');
    s
}

pub fn render_curves_csv(curves: &[(String, Vec<(usize, f64)>)]) -> String {
    let mut out = String::from("id,prefix_len,score\n");
    for (id, curve) in curves {
        for (len, score) in curve {
            let _ = writeln!(out, "{id},{len},{}", fmt4(*score));
        }
    }
    out
}

/// Polyline per curve over prefix length.
pub fn render_curves_svg(curves: &[(String, Vec<(usize, f64)>)]) -> String {
    let width = 520.0;
    let height = 280.0;
    let left = 40.0;
    let bottom = 250.0;
    let plot_w = width - left - 20.0;
    let plot_h = 220.0;
    let max_len =
        curves.iter().flat_map(|(_, c)| c.iter().map(|(l, _)| *l)).max().unwrap_or(1).max(1) as f64;
    let palette = [COLOR_REPETITION, COLOR_HALLUCINATION, COLOR_CORRECT, COLOR_TOPIC_CHANGE];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r##"<line x1="{left}" y1="{bottom}" x2="{:.2}" y2="{bottom}" stroke="#333333"/>"##,
        left + plot_w
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{left}" y1="{:.2}" x2="{left}" y2="{bottom}" stroke="#333333"/>"##,
        bottom - plot_h
    );
    for (i, (id, curve)) in curves.iter().enumerate() {
        let color = palette[i % palette.len()];
        let points: Vec<String> = curve
            .iter()
            .map(|(l, s)| {
                format!(
                    "{:.2},{:.2}",
                    left + (*l as f64 / max_len) * plot_w,
                    bottom - s * plot_h
                )
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"><title>{}</title></polyline>"#,
            points.join(" "),
            xml_escape(id)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Render an artifact and write it. Byte-stable given identical input.
pub fn emit(artifact: &ReportArtifact<'_>, format: EmitFormat, path: &Path) -> Result<()> {
    let body = match (artifact, format) {
        (ReportArtifact::Breakdown(t), EmitFormat::Csv) => render_breakdown_csv(t),
        (ReportArtifact::Breakdown(t), EmitFormat::Json) => render_breakdown_json(t),
        (ReportArtifact::Breakdown(t), EmitFormat::Svg) => render_breakdown_svg(t),
        (ReportArtifact::Matrix(m), EmitFormat::Csv) => render_matrix_csv(m),
        (ReportArtifact::Matrix(m), EmitFormat::Json) => render_matrix_json(m),
        (ReportArtifact::Matrix(m), EmitFormat::Svg) => render_matrix_svg(m),
        (ReportArtifact::Test(r), EmitFormat::Csv) => render_tests_csv(r),
        (ReportArtifact::Test(r), EmitFormat::Json) => render_tests_json(r),
        (ReportArtifact::Test(_), EmitFormat::Svg) => {
            return Err(Error::UnsupportedFormat { artifact: "test report".into(), format: "svg".into() })
        }
        (ReportArtifact::Curves(c), EmitFormat::Csv) => render_curves_csv(c),
        (ReportArtifact::Curves(c), EmitFormat::Json) => render_curves_json(c),
        (ReportArtifact::Curves(c), EmitFormat::Svg) => render_curves_svg(c),
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::{label_facts, LabeledGeneration};
    use crate::listparse::{parse_list_completion, Ending, EndingKind};
    use crate::matching::MatchConfig;

    fn fixture_generation() -> LabeledGeneration {
        let parsed = parse_list_completion(crate::fixtures::PLANETS_COMPLETION, 25, false);
        let q = crate::fixtures::planets_question();
        label_facts(&parsed, &q.gold_answers, &MatchConfig::default()).with_source(
            "planets",
            "fixture-model",
            0,
        )
    }

    fn gold_sizes() -> BTreeMap<String, usize> {
        [("planets".to_string(), 8usize)].into_iter().collect()
    }

    #[test]
    fn single_generation_breakdown_row() {
        let table = aggregate_breakdown(&[fixture_generation()], &gold_sizes(), |g| {
            g.model_id.clone()
        })
        .unwrap();
        assert_eq!(table.rows.len(), 1);
        let r = &table.rows[0];
        assert_eq!(r.group, "fixture-model");
        assert_eq!(r.correct, 8.0);
        assert_eq!(r.hallucination, 5.0);
        assert_eq!(r.repetition, 12.0);
        assert_eq!(r.miss_topic, 0.0);
        assert_eq!(r.gold_size, 8.0);
        assert!((r.fact_sum() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn two_generations_average_elementwise() {
        let g1 = fixture_generation();
        let mut g2 = fixture_generation();
        g2.question_id = "planets-b".into();
        let mut sizes = gold_sizes();
        sizes.insert("planets-b".into(), 8);
        let table =
            aggregate_breakdown(&[g1, g2], &sizes, |g| g.model_id.clone()).unwrap();
        let r = &table.rows[0];
        assert_eq!(r.correct, 8.0);
        assert!((r.fact_sum() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn samples_average_before_questions() {
        let g1 = fixture_generation();
        let mut g2 = fixture_generation();
        g2.sample_index = 1;
        // tamper: second sample of the same question with different counts
        g2.labels.truncate(20);
        g2.missing_count = 5;
        let table = aggregate_breakdown(&[g1, g2], &gold_sizes(), |g| g.model_id.clone()).unwrap();
        let r = &table.rows[0];
        // one question → mean over its two samples
        assert!((r.fact_sum() - 25.0).abs() < 1e-9);
        assert_eq!(r.correct, 8.0);
    }

    #[test]
    fn empty_group_is_an_error() {
        let err =
            aggregate_breakdown(&[], &gold_sizes(), |g| g.model_id.clone()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn breakdown_csv_shape_and_determinism() {
        let table = aggregate_breakdown(&[fixture_generation()], &gold_sizes(), |g| {
            g.model_id.clone()
        })
        .unwrap();
        let csv = render_breakdown_csv(&table);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), BREAKDOWN_CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "fixture-model,8.0000,5.0000,12.0000,0.0000,0.0000,0.0000,8.0000"
        );
        assert_eq!(lines.next(), None);
        assert_eq!(csv, render_breakdown_csv(&table));
        assert_eq!(render_breakdown_json(&table), render_breakdown_json(&table));
        assert_eq!(render_breakdown_svg(&table), render_breakdown_svg(&table));
    }

    fn tiny_generation(qid: &str, letters: &str, ending: EndingKind, requested: u32) -> LabeledGeneration {
        use crate::label::{FactLabel, FactLabelValue};
        let labels: Vec<FactLabel> = letters
            .chars()
            .map(|c| FactLabel {
                value: FactLabelValue::from_letter(c).unwrap(),
                matched_gold: None,
                repeated_index: None,
            })
            .collect();
        let missing = requested - labels.len() as u32;
        let distinct = labels.iter().filter(|l| l.value != FactLabelValue::Repetition).count();
        LabeledGeneration {
            question_id: qid.into(),
            model_id: "m".into(),
            sample_index: 0,
            labels,
            ending: Ending { kind: ending, evidence: String::new() },
            missing_count: missing,
            gold_covered: 0,
            distinct_answers: distinct,
        }
    }

    #[test]
    fn matrix_sorts_by_trailing_repetition_run() {
        let long_run = tiny_generation("q-long", "CHRRRR", EndingKind::Exhausted, 6);
        let short_run = tiny_generation("q-short", "CCCHRR", EndingKind::Exhausted, 6);
        let all_correct = tiny_generation("q-clean", "CCCCCC", EndingKind::Exhausted, 6);
        let m = ordering_matrix(&[short_run, all_correct, long_run]).unwrap();
        let ids: Vec<&str> = m.rows.iter().map(|r| r.row_id.as_str()).collect();
        assert_eq!(ids, vec!["q-long", "q-short", "q-clean"]);
    }

    #[test]
    fn topic_change_rows_pad_with_topic_marker() {
        let g = tiny_generation("q", "CCH", EndingKind::TopicChange, 6);
        let m = ordering_matrix(std::slice::from_ref(&g)).unwrap();
        let cells = &m.rows[0].cells;
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[3], MatrixCell::MissTopicChange);
        assert_eq!(cells[5], MatrixCell::MissTopicChange);
    }

    #[test]
    fn matrix_cell_count_is_rows_times_requested() {
        let gens = vec![
            tiny_generation("a", "CH", EndingKind::Eos, 5),
            tiny_generation("b", "CCCRR", EndingKind::Exhausted, 5),
        ];
        let m = ordering_matrix(&gens).unwrap();
        let total: usize = m.rows.iter().map(|r| r.cells.len()).sum();
        assert_eq!(total, m.rows.len() * m.requested_count as usize);
    }

    #[test]
    fn matrix_svg_has_one_rect_per_cell() {
        let gens = vec![
            tiny_generation("a", "CH", EndingKind::Eos, 4),
            tiny_generation("b", "CCRR", EndingKind::Exhausted, 4),
        ];
        let m = ordering_matrix(&gens).unwrap();
        let svg = render_matrix_svg(&m);
        // background rect + 8 cells
        assert_eq!(svg.matches("<rect").count(), 1 + 8);
        assert_eq!(svg, render_matrix_svg(&m));
    }

    #[test]
    fn emit_writes_byte_identical_files() {
        let table = aggregate_breakdown(&[fixture_generation()], &gold_sizes(), |g| {
            g.model_id.clone()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        emit(&ReportArtifact::Breakdown(&table), EmitFormat::Csv, &p1).unwrap();
        emit(&ReportArtifact::Breakdown(&table), EmitFormat::Csv, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn mixed_requested_count_is_rejected() {
        let gens = vec![
            tiny_generation("a", "CH", EndingKind::Eos, 5),
            tiny_generation("b", "CH", EndingKind::Eos, 6),
        ];
        assert!(matches!(
            aggregate_breakdown(&gens, &BTreeMap::new(), |_| "g".into()).unwrap_err(),
            Error::MixedRequestedCount(5, 6)
        ));
        assert!(matches!(
            ordering_matrix(&gens).unwrap_err(),
            Error::MixedRequestedCount(5, 6)
        ));
    }
}
