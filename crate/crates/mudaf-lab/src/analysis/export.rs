//! Table and heatmap serialization: CSV, JSON, and data-first SVG (every
//! SVG has a sibling CSV carrying the exact numbers).

use std::fs;
use std::path::Path;

use super::HeadScoreTable;
use crate::error::{LabError, Result};

/// `layer,head,f1,em,rank` rows, one per head, ordered by (layer, head).
pub fn table_to_csv(table: &HeadScoreTable) -> String {
    let mut out = String::from("layer,head,f1,em,rank\n");
    for e in &table.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.head.layer, e.head.head, e.f1, e.em, e.rank
        ));
    }
    out
}

pub fn save_table(table: &HeadScoreTable, csv_path: &Path, json_path: &Path) -> Result<()> {
    fs::write(csv_path, table_to_csv(table)).map_err(|e| LabError::io(csv_path, e))?;
    let json =
        serde_json::to_string_pretty(table).map_err(|e| LabError::Format(e.to_string()))?;
    fs::write(json_path, json).map_err(|e| LabError::io(json_path, e))?;
    Ok(())
}

pub fn load_table(json_path: &Path) -> Result<HeadScoreTable> {
    let text = fs::read_to_string(json_path).map_err(|e| LabError::io(json_path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Format(e.to_string()))
}

/// A labelled numeric grid, the data behind every heatmap artifact.
pub struct Heatmap {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major values, `row_labels.len() x col_labels.len()`.
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn cell_count(&self) -> usize {
        self.row_labels.len() * self.col_labels.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for c in &self.col_labels {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        let ncol = self.col_labels.len();
        for (r, label) in self.row_labels.iter().enumerate() {
            out.push_str(label);
            for c in 0..ncol {
                out.push_str(&format!(",{}", self.values[r * ncol + c]));
            }
            out.push('\n');
        }
        out
    }

    /// Static SVG grid; cell shade is linear in the value over `[0, max]`.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 28;
        const LEFT: usize = 80;
        const TOP: usize = 40;
        let ncol = self.col_labels.len();
        let nrow = self.row_labels.len();
        let width = LEFT + ncol * CELL + 10;
        let height = TOP + nrow * CELL + 10;
        let max = self.values.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"10\">\n"
        );
        for (c, label) in self.col_labels.iter().enumerate() {
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n",
                LEFT + c * CELL + CELL / 2,
                TOP - 8
            ));
        }
        for (r, label) in self.row_labels.iter().enumerate() {
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{label}</text>\n",
                LEFT - 6,
                TOP + r * CELL + CELL / 2 + 4
            ));
            for c in 0..ncol {
                let v = (self.values[r * ncol + c] / max).clamp(0.0, 1.0);
                // White at 0 to a deep blue at max.
                let red = (255.0 - v * (255.0 - 31.0)) as u8;
                let green = (255.0 - v * (255.0 - 90.0)) as u8;
                let blue = (255.0 - v * (255.0 - 160.0)) as u8;
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" \
                     fill=\"rgb({red},{green},{blue})\" stroke=\"#ccc\"/>\n",
                    LEFT + c * CELL,
                    TOP + r * CELL
                ));
            }
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn save(&self, csv_path: &Path, svg_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv()).map_err(|e| LabError::io(csv_path, e))?;
        fs::write(svg_path, self.to_svg()).map_err(|e| LabError::io(svg_path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::HeadScore;
    use crate::model::HeadId;

    fn table() -> HeadScoreTable {
        HeadScoreTable {
            epsilon: 0.1,
            eval_id: "unit".into(),
            entries: vec![
                HeadScore { head: HeadId { layer: 0, head: 0 }, f1: 0.25, em: 0.0, rank: 2 },
                HeadScore { head: HeadId { layer: 0, head: 1 }, f1: 0.75, em: 0.5, rank: 1 },
            ],
        }
    }

    #[test]
    fn csv_and_json_agree_row_for_row() {
        let t = table();
        let csv = table_to_csv(&t);
        let json: HeadScoreTable =
            serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        for (line, e) in csv.lines().skip(1).zip(json.entries.iter()) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0].parse::<usize>().unwrap(), e.head.layer);
            assert_eq!(cols[1].parse::<usize>().unwrap(), e.head.head);
            assert_eq!(cols[2].parse::<f64>().unwrap(), e.f1);
            assert_eq!(cols[3].parse::<f64>().unwrap(), e.em);
            assert_eq!(cols[4].parse::<usize>().unwrap(), e.rank);
        }
    }

    #[test]
    fn table_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("t.csv");
        let json = dir.path().join("t.json");
        let t = table();
        save_table(&t, &csv, &json).unwrap();
        let loaded = load_table(&json).unwrap();
        assert_eq!(loaded.entries.len(), t.entries.len());
        assert_eq!(loaded.entries[1].f1, t.entries[1].f1);
    }

    #[test]
    fn heatmap_svg_has_one_rect_per_cell() {
        let hm = Heatmap {
            row_labels: vec!["a".into(), "b".into(), "c".into()],
            col_labels: (0..5).map(|i| i.to_string()).collect(),
            values: (0..15).map(|i| i as f64 / 15.0).collect(),
        };
        let svg = hm.to_svg();
        let rects = svg.matches("<rect").count();
        assert_eq!(rects, hm.cell_count());
        let csv = hm.to_csv();
        assert_eq!(csv.lines().count(), 4);
    }
}
