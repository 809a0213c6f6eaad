use std::fmt::Write;

use image::{Rgb, RgbImage};

use super::{ConfusionMatrix, MetricReport, SweepRow};
use crate::simulator::{MediaClass, N_CLASSES};

/// Counts with a header row and column of class names.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\pred");
    for c in MediaClass::ALL {
        out.push(',');
        out.push_str(c.name());
    }
    out.push('\n');
    for (i, c) in MediaClass::ALL.iter().enumerate() {
        out.push_str(c.name());
        for v in cm.counts[i] {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Row-normalized heat map, white at 0 and deep blue at 1. Rows without
/// samples are drawn grey.
pub fn confusion_png(cm: &ConfusionMatrix, cell_px: u32) -> RgbImage {
    let cell = cell_px.max(1);
    let side = cell * N_CLASSES as u32;
    let rows = cm.row_normalized();
    RgbImage::from_fn(side, side, |x, y| {
        let (i, j) = ((y / cell) as usize, (x / cell) as usize);
        if x % cell == 0 || y % cell == 0 {
            return Rgb([200, 200, 200]);
        }
        match rows[i] {
            None => Rgb([160, 160, 160]),
            Some(r) => {
                let v = r[j].clamp(0.0, 1.0);
                let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
                Rgb([lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0)])
            }
        }
    })
}

/// Table 2 style: one line per method.
pub fn metrics_table(rows: &[(&str, &MetricReport)]) -> String {
    let mut out = format!(
        "{:<12} {:>9} {:>16} {:>13} {:>9}\n",
        "method", "accuracy", "precision_macro", "recall_macro", "f1_macro"
    );
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>8.2}% {:>15.2}% {:>12.2}% {:>8.2}%",
            name,
            100.0 * m.accuracy,
            100.0 * m.macro_precision,
            100.0 * m.macro_recall,
            100.0 * m.macro_f1
        );
    }
    out
}

/// Table 1 style: accuracy and time per recognition length.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>6} {:>9} {:>9} {:>11} {:>13}\n",
        "length", "accuracy", "dtw", "sampling_s", "inference_ms"
    );
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
    for r in rows {
        let _ = write!(
            out,
            "{:>6} {:>9} {:>9} {:>11.2} {:>13}",
            r.length,
            pct(r.accuracy),
            pct(r.dtw_accuracy),
            r.sampling_s,
            r.inference_ms.map_or("-".to_string(), |v| format!("{v:.3}"))
        );
        if let Some(e) = &r.error {
            let _ = write!(out, "  error: {e}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{confusion, metrics};

    #[test]
    fn csv_layout() {
        let cm = confusion(&[0, 1, 1], &[0, 0, 1]).unwrap();
        let csv = confusion_csv(&cm);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "true\\pred,NuSoil,Millet,Cement,Sand,Mung,SimuSoil");
        assert_eq!(lines[1], "NuSoil,1,1,0,0,0,0");
    }

    #[test]
    fn png_marks_diagonal() {
        let labels: Vec<usize> = (0..12).map(|i| i % 6).collect();
        let img = confusion_png(&confusion(&labels, &labels).unwrap(), 10);
        assert_eq!(img.dimensions(), (60, 60));
        assert_eq!(*img.get_pixel(5, 5), Rgb([8, 48, 107]));
        assert_eq!(*img.get_pixel(15, 5), Rgb([255, 255, 255]));
    }

    #[test]
    fn tables_render() {
        let labels: Vec<usize> = (0..12).map(|i| i % 6).collect();
        let m = metrics(&confusion(&labels, &labels).unwrap()).unwrap();
        assert!(metrics_table(&[("MCE", &m)]).contains("100.00%"));
        let rows = vec![SweepRow {
            length: 128,
            accuracy: Some(0.95),
            dtw_accuracy: None,
            sampling_s: 1.28,
            inference_ms: Some(3.2),
            error: None,
        }];
        let t = sweep_table(&rows);
        assert!(t.contains("1.28") && t.contains("95.00%"));
    }
}
