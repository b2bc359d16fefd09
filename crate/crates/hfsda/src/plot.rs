//! Minimal SVG charts for offline inspection: loss curves from the training
//! log and per-file score scatters from an evaluation report. No external
//! renderer — the output is a self-contained `.svg` file.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::metrics::ScoreReport;
use crate::trainer::EpochLog;

const W: f64 = 720.0;
const H: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

struct Axes {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Axes {
    fn from_points<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let mut a = Axes { x_min: f64::MAX, x_max: f64::MIN, y_min: f64::MAX, y_max: f64::MIN };
        for &(x, y) in points {
            a.x_min = a.x_min.min(x);
            a.x_max = a.x_max.max(x);
            a.y_min = a.y_min.min(y);
            a.y_max = a.y_max.max(y);
        }
        // Degenerate ranges still need nonzero extent to map onto pixels.
        if !(a.x_max > a.x_min) {
            a.x_min -= 0.5;
            a.x_max += 0.5;
        }
        if !(a.y_max > a.y_min) {
            a.y_min -= 0.5;
            a.y_max += 0.5;
        }
        let pad = (a.y_max - a.y_min) * 0.06;
        a.y_min -= pad;
        a.y_max += pad;
        a
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN_B - (y - self.y_min) / (self.y_max - self.y_min) * (H - MARGIN_T - MARGIN_B)
    }
}

fn svg_header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n"
        ),
        w = W,
        h = H,
        tx = W / 2.0,
        title = xml_escape(title),
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round a raw tick step to a 1/2/5 decade multiple.
fn nice_step(range: f64, target_ticks: usize) -> f64 {
    let raw = range / target_ticks.max(1) as f64;
    let mag = 10f64.powf(raw.abs().log10().floor());
    let norm = raw / mag;
    let m = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn draw_axes(out: &mut String, a: &Axes, xlabel: &str, ylabel: &str) {
    let (x0, y0) = (MARGIN_L, H - MARGIN_B);
    let (x1, y1) = (W - MARGIN_R, MARGIN_T);
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    let xstep = nice_step(a.x_max - a.x_min, 8);
    let mut t = (a.x_min / xstep).ceil() * xstep;
    while t <= a.x_max + 1e-12 {
        let px = a.px(t);
        let _ = writeln!(
            out,
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\
             <text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            y0 + 5.0,
            y0 + 20.0,
            format_tick(t)
        );
        t += xstep;
    }
    let ystep = nice_step(a.y_max - a.y_min, 6);
    let mut t = (a.y_min / ystep).ceil() * ystep;
    while t <= a.y_max + 1e-12 {
        let py = a.py(t);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\
             <line x1=\"{x0}\" y1=\"{py}\" x2=\"{x1}\" y2=\"{py}\" stroke=\"#dddddd\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            x0 - 5.0,
            x0 - 9.0,
            py + 4.0,
            format_tick(t)
        );
        t += ystep;
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        H - 12.0,
        xml_escape(xlabel)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(ylabel)
    );
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 0.01 && a < 10000.0 {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

const SERIES_COLORS: [&str; 4] = ["#1f6fb2", "#d1495b", "#3a7d44", "#8661c1"];

/// Multi-series line chart. Each series is `(label, points)`.
pub fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let mut out = svg_header(title);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    if all.is_empty() {
        out.push_str("<text x=\"50%\" y=\"50%\" text-anchor=\"middle\">no data</text></svg>\n");
        return out;
    }
    let axes = Axes::from_points(all.iter());
    draw_axes(&mut out, &axes, xlabel, ylabel);
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let path: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", axes.px(x), axes.py(y))).collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.4\" fill=\"{color}\"/>",
                axes.px(x),
                axes.py(y)
            );
        }
        let ly = MARGIN_T + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"4\" fill=\"{color}\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            W - MARGIN_R - 150.0,
            ly - 2.0,
            W - MARGIN_R - 132.0,
            ly + 3.0,
            xml_escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Labelled scatter chart.
pub fn scatter_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    points: &[(f64, f64, String)],
) -> String {
    let mut out = svg_header(title);
    if points.is_empty() {
        out.push_str("<text x=\"50%\" y=\"50%\" text-anchor=\"middle\">no data</text></svg>\n");
        return out;
    }
    let coords: Vec<(f64, f64)> = points.iter().map(|&(x, y, _)| (x, y)).collect();
    let axes = Axes::from_points(coords.iter());
    draw_axes(&mut out, &axes, xlabel, ylabel);
    for (x, y, label) in points {
        let (px, py) = (axes.px(*x), axes.py(*y));
        let _ = writeln!(
            out,
            "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"3.5\" fill=\"#1f6fb2\" \
             fill-opacity=\"0.75\"><title>{}</title></circle>",
            xml_escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Training/validation loss curves from the per-epoch log.
pub fn write_loss_curve(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut series = vec![(
        "train loss".to_string(),
        log.iter().map(|e| (e.epoch as f64, e.train_loss)).collect::<Vec<_>>(),
    )];
    let val: Vec<(f64, f64)> =
        log.iter().filter_map(|e| e.val_loss.map(|v| (e.epoch as f64, v))).collect();
    if !val.is_empty() {
        series.push(("val loss".to_string(), val));
    }
    let svg = line_chart("Loss per epoch", "epoch", "smooth-L1 loss", &series);
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}

/// Per-file intelligibility-vs-SDR scatter from an evaluation report.
pub fn write_score_scatter(report: &ScoreReport, path: &Path) -> Result<()> {
    let points: Vec<(f64, f64, String)> = report
        .per_file
        .iter()
        .map(|(id, s)| (s.si_sdr, s.stoi, id.clone()))
        .collect();
    let svg = scatter_chart("Per-file scores", "SI-SDR (dB)", "STOI", &points);
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::FileScores;
    use std::collections::BTreeMap;

    fn toy_log() -> Vec<EpochLog> {
        (0..6)
            .map(|e| EpochLog {
                epoch: e,
                lr: 1e-3,
                train_loss: 1.0 / (e + 1) as f64,
                val_loss: if e % 2 == 0 { Some(1.2 / (e + 1) as f64) } else { None },
                wall_time_s: 0.5,
            })
            .collect()
    }

    #[test]
    fn loss_curve_svg_is_well_formed_and_contains_both_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plots/loss.svg");
        write_loss_curve(&toy_log(), &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("train loss"));
        assert!(svg.contains("val loss"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn scatter_svg_carries_one_marker_per_file() {
        let mut per_file = BTreeMap::new();
        for (i, id) in ["p1", "p2", "p3"].iter().enumerate() {
            per_file.insert(
                id.to_string(),
                FileScores {
                    stoi: 0.8 + 0.05 * i as f64,
                    si_sdr: 5.0 + i as f64,
                    seg_snr: 3.0,
                    pesq: None,
                    csig: None,
                    cbak: None,
                    covl: None,
                },
            );
        }
        let report = ScoreReport::new(per_file);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.svg");
        write_score_scatter(&report, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("<title>p2</title>"));
    }

    #[test]
    fn empty_and_degenerate_inputs_do_not_panic() {
        let svg = line_chart("t", "x", "y", &[]);
        assert!(svg.contains("no data"));
        // Single point → degenerate ranges handled.
        let svg = line_chart("t", "x", "y", &[("s".into(), vec![(1.0, 2.0)])]);
        assert!(svg.contains("<circle"));
        let svg = scatter_chart("t", "x", "y", &[]);
        assert!(svg.contains("no data"));
    }

    #[test]
    fn tick_formatting_is_compact() {
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(2.5), "2.5");
        assert_eq!(format_tick(100.0), "100");
        assert!(format_tick(1.0e-6).contains('e'));
        assert!((nice_step(10.0, 5) - 2.0).abs() < 1e-12);
        assert!((nice_step(1.0, 10) - 0.1).abs() < 1e-12);
    }
}
