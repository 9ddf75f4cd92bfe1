//! Static report emission: the alignment CSV table and SVG figures
//! (per-pair heatmap, mean-r-by-relation bars). Output bytes are a pure
//! function of the inputs.

use std::collections::BTreeMap;

use crate::analysis::{AlignmentCell, AlignmentMatrix, MissingCell};
use crate::error::{Error, Result};
use crate::registry::{Registry, RelationCategory};
use crate::stats::fmt_float;

pub const ALIGNMENT_HEADER: &str =
    "meta_model,direct_model,dataset,prompt_id,r,relation,empirical_similarity";

/// One alignment.csv row; `prompt_id` is a template id or "mean", and a
/// missing cell has empty `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRow {
    pub meta_model: String,
    pub direct_model: String,
    pub dataset: String,
    pub prompt_id: String,
    pub r: Option<f64>,
    pub relation: String,
    pub empirical_similarity: Option<f64>,
}

fn opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn alignment_rows(matrix: &AlignmentMatrix) -> Vec<AlignmentRow> {
    let mut rows = Vec::new();
    for cell in &matrix.cells {
        for (prompt, r) in &cell.per_prompt_r {
            rows.push(AlignmentRow {
                meta_model: cell.meta_model.clone(),
                direct_model: cell.direct_model.clone(),
                dataset: cell.dataset.clone(),
                prompt_id: prompt.clone(),
                r: Some(*r),
                relation: cell.relation.name().to_string(),
                empirical_similarity: Some(cell.empirical_similarity),
            });
        }
        rows.push(AlignmentRow {
            meta_model: cell.meta_model.clone(),
            direct_model: cell.direct_model.clone(),
            dataset: cell.dataset.clone(),
            prompt_id: "mean".to_string(),
            r: Some(cell.mean_r),
            relation: cell.relation.name().to_string(),
            empirical_similarity: Some(cell.empirical_similarity),
        });
    }
    for missing in &matrix.missing {
        rows.push(AlignmentRow {
            meta_model: missing.meta_model.clone(),
            direct_model: missing.direct_model.clone(),
            dataset: missing.dataset.clone(),
            prompt_id: "mean".to_string(),
            r: None,
            relation: missing.relation.name().to_string(),
            empirical_similarity: None,
        });
    }
    rows
}

pub fn alignment_csv(rows: &[AlignmentRow]) -> String {
    let mut out = String::from(ALIGNMENT_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.meta_model,
            row.direct_model,
            row.dataset,
            row.prompt_id,
            opt_float(row.r),
            row.relation,
            opt_float(row.empirical_similarity),
        ));
    }
    out
}

pub fn parse_alignment_csv(text: &str) -> Result<Vec<AlignmentRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != ALIGNMENT_HEADER {
                return Err(Error::Analysis(format!(
                    "unexpected alignment.csv header: {line}"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Analysis(format!(
                "alignment.csv line {} has {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::Analysis(format!("bad float `{s}`: {e}")))
            }
        };
        rows.push(AlignmentRow {
            meta_model: fields[0].to_string(),
            direct_model: fields[1].to_string(),
            dataset: fields[2].to_string(),
            prompt_id: fields[3].to_string(),
            r: parse_opt(fields[4])?,
            relation: fields[5].to_string(),
            empirical_similarity: parse_opt(fields[6])?,
        });
    }
    Ok(rows)
}

/// Models ordered by size, then family, then id: the heatmap axis order.
pub fn model_display_order(registry: &Registry, models: &[String]) -> Vec<String> {
    let mut ordered: Vec<&str> = models.iter().map(|s| s.as_str()).collect();
    ordered.sort_by(|a, b| {
        let ca = registry.get(a);
        let cb = registry.get(b);
        match (ca, cb) {
            (Some(ca), Some(cb)) => ca
                .size_params
                .partial_cmp(&cb.size_params)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| ca.family.cmp(&cb.family))
                .then_with(|| ca.id.cmp(&cb.id)),
            _ => a.cmp(b),
        }
    });
    ordered.into_iter().map(str::to_string).collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Diverging blue-white-red scale over [-max_abs, max_abs].
fn diverging_color(value: f64, max_abs: f64) -> String {
    let t = (value / max_abs).clamp(-1.0, 1.0);
    let (lo, hi): ((u8, u8, u8), (u8, u8, u8)) = if t >= 0.0 {
        ((247, 247, 247), (178, 24, 43))
    } else {
        ((247, 247, 247), (33, 102, 172))
    };
    let w = t.abs();
    let mix = |a: u8, b: u8| -> u8 { (a as f64 + (b as f64 - a as f64) * w).round() as u8 };
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(lo.0, hi.0),
        mix(lo.1, hi.1),
        mix(lo.2, hi.2)
    )
}

const CELL: f64 = 30.0;
const LEFT: f64 = 150.0;
const TOP: f64 = 60.0;

/// Heatmap of mean r for every (meta model, direct model) pair. Missing
/// cells are hatched and called out in a footnote; the legend states the
/// scale bounds.
pub fn heatmap_svg(
    dataset: &str,
    model_order: &[String],
    mean_r: &BTreeMap<(String, String), Option<f64>>,
) -> Result<String> {
    if model_order.is_empty() {
        return Err(Error::Analysis("no models to plot".into()));
    }
    let n = model_order.len();
    let grid = CELL * n as f64;
    let width = LEFT + grid + 180.0;
    let height = TOP + grid + 110.0;
    let max_abs = mean_r
        .values()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-9);
    let any_missing = mean_r.values().any(|v| v.is_none());

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str(
        "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" \
         patternTransform=\"rotate(45)\"><rect width=\"6\" height=\"6\" fill=\"#ffffff\"/>\
         <line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#999999\" stroke-width=\"2\"/>\
         </pattern></defs>\n",
    );
    svg.push_str(&format!(
        "<text x=\"{LEFT:.1}\" y=\"20\" font-size=\"14\">mean r by model pair: {}</text>\n",
        xml_escape(dataset)
    ));
    svg.push_str(&format!(
        "<text x=\"{LEFT:.1}\" y=\"38\">rows: meta model / columns: direct model</text>\n"
    ));

    for (row, meta_model) in model_order.iter().enumerate() {
        let y = TOP + row as f64 * CELL;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            LEFT - 6.0,
            y + CELL / 2.0 + 4.0,
            xml_escape(meta_model)
        ));
        for (col, direct_model) in model_order.iter().enumerate() {
            let x = LEFT + col as f64 * CELL;
            let key = (meta_model.clone(), direct_model.clone());
            match mean_r.get(&key).copied().flatten() {
                Some(r) => {
                    svg.push_str(&format!(
                        "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" \
                         fill=\"{}\" stroke=\"#cccccc\"><title>{} / {}: {}</title></rect>\n",
                        diverging_color(r, max_abs),
                        xml_escape(meta_model),
                        xml_escape(direct_model),
                        fmt_float(r)
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" \
                         fill=\"url(#hatch)\" stroke=\"#cccccc\"/>\n"
                    ));
                }
            }
        }
    }
    for (col, direct_model) in model_order.iter().enumerate() {
        let x = LEFT + col as f64 * CELL + CELL / 2.0;
        let y = TOP + grid + 10.0;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" transform=\"rotate(45 {x:.1} {y:.1})\">{}</text>\n",
            xml_escape(direct_model)
        ));
    }

    // Legend: discrete gradient with the numeric bounds stated.
    let legend_x = LEFT + grid + 30.0;
    let steps = 20;
    let legend_h = grid.max(120.0);
    for i in 0..steps {
        let frac = i as f64 / (steps - 1) as f64;
        let value = max_abs - 2.0 * max_abs * frac;
        let y = TOP + frac * (legend_h - legend_h / steps as f64);
        svg.push_str(&format!(
            "<rect x=\"{legend_x:.1}\" y=\"{y:.1}\" width=\"18\" height=\"{:.1}\" fill=\"{}\"/>\n",
            legend_h / steps as f64 + 0.5,
            diverging_color(value, max_abs)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\">max {}</text>\n",
        legend_x + 24.0,
        TOP + 10.0,
        fmt_float(max_abs)
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\">0</text>\n",
        legend_x + 24.0,
        TOP + legend_h / 2.0 + 4.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\">min {}</text>\n",
        legend_x + 24.0,
        TOP + legend_h,
        fmt_float(-max_abs)
    ));
    if any_missing {
        svg.push_str(&format!(
            "<text x=\"{LEFT:.1}\" y=\"{:.1}\">hatched cells: no defined correlation \
             (degenerate variance)</text>\n",
            TOP + grid + 92.0
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Grouped bars of mean r by relation category, in decreasing-similarity
/// order.
pub fn relation_bars_svg(dataset: &str, cells: &[AlignmentCell]) -> Result<String> {
    if cells.is_empty() {
        return Err(Error::Analysis("no cells to plot".into()));
    }
    let mut by_relation: BTreeMap<RelationCategory, Vec<f64>> = BTreeMap::new();
    for cell in cells {
        by_relation.entry(cell.relation).or_default().push(cell.mean_r);
    }
    let bars: Vec<(RelationCategory, f64, usize)> = RelationCategory::ALL
        .iter()
        .filter_map(|rel| {
            by_relation
                .get(rel)
                .map(|v| (*rel, v.iter().sum::<f64>() / v.len() as f64, v.len()))
        })
        .collect();

    let bar_w = 80.0;
    let gap = 30.0;
    let left = 70.0;
    let axis_top = 50.0;
    let axis_h = 220.0;
    let zero_y = axis_top + axis_h / 2.0;
    let width = left + bars.len() as f64 * (bar_w + gap) + 40.0;
    let height = axis_top + axis_h + 80.0;
    let scale = axis_h / 2.0; // r = 1 spans half the axis

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{left}\" y=\"20\" font-size=\"14\">mean r by relation: {}</text>\n",
        xml_escape(dataset)
    ));
    for (tick, label) in [(1.0, "1"), (0.5, "0.5"), (0.0, "0"), (-0.5, "-0.5"), (-1.0, "-1")] {
        let y = zero_y - tick * scale;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            left - 5.0,
            width - 30.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>\n",
            left - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{zero_y:.1}\" x2=\"{:.1}\" y2=\"{zero_y:.1}\" \
         stroke=\"#333333\"/>\n",
        left - 5.0,
        width - 30.0
    ));

    for (i, (relation, mean, count)) in bars.iter().enumerate() {
        let x = left + i as f64 * (bar_w + gap);
        let h = mean.abs() * scale;
        let y = if *mean >= 0.0 { zero_y - h } else { zero_y };
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" \
             fill=\"{}\" stroke=\"#555555\"/>\n",
            diverging_color(*mean, 1.0)
        ));
        let label_y = if *mean >= 0.0 { y - 6.0 } else { y + h + 14.0 };
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{label_y:.1}\" text-anchor=\"middle\">{}</text>\n",
            x + bar_w / 2.0,
            fmt_float(*mean)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{} (n={count})</text>\n",
            x + bar_w / 2.0,
            axis_top + axis_h + 24.0,
            relation.name()
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Mean-r lookup for one dataset's heatmap, including missing cells.
pub fn mean_r_lookup(
    rows: &[AlignmentRow],
    dataset: &str,
) -> BTreeMap<(String, String), Option<f64>> {
    rows.iter()
        .filter(|row| row.dataset == dataset && row.prompt_id == "mean")
        .map(|row| ((row.meta_model.clone(), row.direct_model.clone()), row.r))
        .collect()
}

/// Rebuilds plottable cells from parsed mean rows.
pub fn cells_from_rows(rows: &[AlignmentRow], dataset: &str) -> Vec<AlignmentCell> {
    rows.iter()
        .filter(|row| row.dataset == dataset && row.prompt_id == "mean")
        .filter_map(|row| {
            let relation = RelationCategory::ALL
                .iter()
                .find(|r| r.name() == row.relation)?;
            Some(AlignmentCell {
                meta_model: row.meta_model.clone(),
                direct_model: row.direct_model.clone(),
                dataset: row.dataset.clone(),
                per_prompt_r: BTreeMap::new(),
                mean_r: row.r?,
                relation: *relation,
                empirical_similarity: row.empirical_similarity.unwrap_or(f64::NAN),
                degenerate_prompts: Vec::new(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{ModelCard, Variant};

    fn cell(meta: &str, direct: &str, r: f64, sim: f64) -> AlignmentCell {
        AlignmentCell {
            meta_model: meta.into(),
            direct_model: direct.into(),
            dataset: "d".into(),
            per_prompt_r: BTreeMap::from([("p0".to_string(), r)]),
            mean_r: r,
            relation: if meta == direct {
                RelationCategory::SelfPair
            } else {
                RelationCategory::Other
            },
            empirical_similarity: sim,
            degenerate_prompts: Vec::new(),
        }
    }

    fn matrix() -> AlignmentMatrix {
        AlignmentMatrix {
            cells: vec![
                cell("a", "a", 0.9, 1.0),
                cell("a", "b", 0.2, 0.4),
                cell("b", "b", 0.8, 1.0),
            ],
            missing: vec![MissingCell {
                meta_model: "b".into(),
                direct_model: "a".into(),
                dataset: "d".into(),
                relation: RelationCategory::Other,
                reason: "all prompts degenerate".into(),
            }],
        }
    }

    #[test]
    fn csv_roundtrips() {
        let rows = alignment_rows(&matrix());
        let text = alignment_csv(&rows);
        let parsed = parse_alignment_csv(&text).unwrap();
        assert_eq!(parsed.len(), rows.len());
        let missing: Vec<_> = parsed.iter().filter(|r| r.r.is_none()).collect();
        assert_eq!(missing.len(), 1);
        assert_eq!(missing[0].meta_model, "b");
    }

    #[test]
    fn heatmap_is_deterministic_and_marks_missing() {
        let rows = alignment_rows(&matrix());
        let lookup = mean_r_lookup(&rows, "d");
        let order = vec!["a".to_string(), "b".to_string()];
        let svg1 = heatmap_svg("d", &order, &lookup).unwrap();
        let svg2 = heatmap_svg("d", &order, &lookup).unwrap();
        assert_eq!(svg1, svg2);
        assert!(svg1.contains("url(#hatch)"));
        assert!(svg1.contains("hatched cells"));
        // 2x2 grid of cells plus 20 legend steps, one cell hatched.
        assert_eq!(svg1.matches("<rect").count(), 4 + 20 + 1); // +1 pattern fill
    }

    #[test]
    fn bars_cover_present_relations() {
        let rows = alignment_rows(&matrix());
        let cells = cells_from_rows(&rows, "d");
        let svg = relation_bars_svg("d", &cells).unwrap();
        assert!(svg.contains("self (n=2)"));
        assert!(svg.contains("other (n=1)"));
        assert!(relation_bars_svg("d", &[]).is_err());
    }

    #[test]
    fn model_order_is_size_then_family() {
        let card = |id: &str, family: &str, size: f64| ModelCard {
            id: id.into(),
            family: family.into(),
            size_params: size,
            variant: Variant::Base,
            seed_group: None,
            base_id: None,
            data_cutoff: None,
        };
        let registry = Registry::from_cards(vec![
            card("big", "a-fam", 70.0),
            card("small-z", "z-fam", 7.0),
            card("small-a", "a-fam", 7.0),
        ])
        .unwrap();
        let order = model_display_order(
            &registry,
            &["big".to_string(), "small-z".to_string(), "small-a".to_string()],
        );
        assert_eq!(order, vec!["small-a", "small-z", "big"]);
    }
}
