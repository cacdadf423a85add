//! Minimal SVG charts for sweep reports. Presentation only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::Scheme;
use super::sweep::{Report, ReportRow};
use crate::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 64.0;
const PAD_R: f64 = 160.0;
const PAD_T: f64 = 36.0;
const PAD_B: f64 = 52.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedBar {
    pub label: String,
    pub process_ms: f64,
    pub transmission_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub bars: Vec<StackedBar>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn point_label(r: &ReportRow) -> String {
    if r.scheme == Scheme::BaselineCodec.name() {
        format!("{} q={}", r.scheme, r.cr_or_quality)
    } else {
        format!("{} cr={}", r.scheme, r.cr_or_quality)
    }
}

/// Groups rows by `key` (first-seen order), averaging `(x, y)` over rows
/// sharing the same x.
fn group_series<K: Ord + Clone>(
    rows: &[ReportRow],
    key: impl Fn(&ReportRow) -> (K, String),
    x: impl Fn(&ReportRow) -> f64,
    y: impl Fn(&ReportRow) -> f64,
) -> Vec<Series> {
    let mut groups: BTreeMap<K, (String, Vec<(f64, f64)>)> = BTreeMap::new();
    for r in rows {
        let (k, label) = key(r);
        groups.entry(k).or_insert_with(|| (label, Vec::new())).1.push((x(r), y(r)));
    }
    groups
        .into_values()
        .map(|(label, pts)| {
            let mut by_x: Vec<(f64, Vec<f64>)> = Vec::new();
            for (px, py) in pts {
                match by_x.iter_mut().find(|(x0, _)| *x0 == px) {
                    Some((_, ys)) => ys.push(py),
                    None => by_x.push((px, vec![py])),
                }
            }
            by_x.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label,
                points: by_x.into_iter().map(|(x, ys)| (x, mean(&ys))).collect(),
            }
        })
        .collect()
}

fn scheme_rank(name: &str) -> usize {
    Scheme::ALL.iter().position(|s| s.name() == name).unwrap_or(usize::MAX)
}

/// One polyline per (scheme, point): mean accuracy over seeds vs SNR.
pub fn accuracy_vs_snr(report: &Report) -> LineChart {
    let series = group_series(
        &report.rows,
        |r| ((scheme_rank(&r.scheme), r.cr_or_quality.to_bits()), point_label(r)),
        |r| r.snr_db,
        |r| r.accuracy,
    );
    LineChart {
        title: "Accuracy vs SNR".into(),
        x_label: "SNR (dB)".into(),
        y_label: "accuracy".into(),
        log_x: false,
        series,
    }
}

/// One polyline per (scheme, SNR): mean accuracy vs mean source bpp.
pub fn accuracy_vs_bpp(report: &Report) -> LineChart {
    let key = |r: &ReportRow| {
        (
            (scheme_rank(&r.scheme), r.snr_db.to_bits()),
            format!("{} {} dB", r.scheme, r.snr_db),
        )
    };
    let acc = group_series(&report.rows, key, |r| r.cr_or_quality, |r| r.accuracy);
    let bpp = group_series(&report.rows, key, |r| r.cr_or_quality, |r| r.bpp_source);
    let series = acc
        .into_iter()
        .zip(bpp)
        .map(|(a, b)| {
            let mut points: Vec<(f64, f64)> = b.points.iter().zip(&a.points).map(|(b, a)| (b.1, a.1)).collect();
            points.sort_by(|p, q| p.0.total_cmp(&q.0));
            Series { label: a.label, points }
        })
        .collect();
    LineChart {
        title: "Accuracy vs bits per pixel".into(),
        x_label: "bpp (source)".into(),
        y_label: "accuracy".into(),
        log_x: true,
        series,
    }
}

/// Label plus per-row process and transmission delays.
type DelayGroup = (String, Vec<f64>, Vec<f64>);

/// Mean process and transmission delay per (scheme, point).
pub fn delay_bars(report: &Report) -> BarChart {
    let mut groups: BTreeMap<(usize, u64), DelayGroup> = BTreeMap::new();
    for r in &report.rows {
        let e = groups
            .entry((scheme_rank(&r.scheme), r.cr_or_quality.to_bits()))
            .or_insert_with(|| (point_label(r), Vec::new(), Vec::new()));
        e.1.push(r.process_delay_ms);
        e.2.push(r.transmission_delay_ms);
    }
    BarChart {
        title: "Delay per image".into(),
        bars: groups
            .into_values()
            .map(|(label, p, t)| StackedBar {
                label,
                process_ms: mean(&p),
                transmission_ms: mean(&t),
            })
            .collect(),
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        (PAD_L + W - PAD_R) / 2.0,
        esc(title)
    );
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let tx = |x: f64| if self.log_x { x.max(1e-12).log10() } else { x };
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        let (y0, y1) = (0.0, 1.0);
        let sx = |x: f64| PAD_L + (tx(x) - x0) / (x1 - x0) * (W - PAD_L - PAD_R);
        let sy = |y: f64| H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B);

        let mut svg = String::new();
        header(&mut svg, &self.title);
        let _ = writeln!(
            svg,
            r#"<rect x="{PAD_L}" y="{PAD_T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - PAD_L - PAD_R,
            H - PAD_T - PAD_B
        );
        for i in 0..=5 {
            let y = i as f64 / 5.0;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.1}</text>"#,
                PAD_L - 6.0,
                sy(y) + 4.0
            );
            let xv = x0 + (x1 - x0) * i as f64 / 5.0;
            let shown = if self.log_x { 10f64.powf(xv) } else { xv };
            let px = PAD_L + (W - PAD_L - PAD_R) * i as f64 / 5.0;
            let _ = writeln!(
                svg,
                r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#,
                H - PAD_B + 16.0,
                if shown.abs() >= 100.0 || shown == 0.0 { format!("{shown:.0}") } else { format!("{shown:.3}") }
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (PAD_L + W - PAD_R) / 2.0,
            H - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let coords: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| tx(*x).is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
            let ly = PAD_T + 14.0 * i as f64 + 8.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                W - PAD_R + 8.0,
                W - PAD_R + 24.0,
                W - PAD_R + 28.0,
                ly + 4.0,
                esc(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let max = self
            .bars
            .iter()
            .map(|b| b.process_ms + b.transmission_ms)
            .fold(0.0, f64::max)
            .max(1e-9);
        let plot_h = H - PAD_T - PAD_B;
        let slot = (W - PAD_L - PAD_R) / self.bars.len().max(1) as f64;
        let mut svg = String::new();
        header(&mut svg, &self.title);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{max:.3} ms</text>"#, PAD_L - 6.0, PAD_T + 4.0);
        let base = H - PAD_B;
        for (i, b) in self.bars.iter().enumerate() {
            let x = PAD_L + slot * i as f64 + slot * 0.15;
            let bw = slot * 0.7;
            let hp = b.process_ms / max * plot_h;
            let ht = b.transmission_ms / max * plot_h;
            let _ = writeln!(
                svg,
                r##"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{hp:.1}" fill="#1f77b4"/><rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{ht:.1}" fill="#ff7f0e"/>"##,
                base - hp,
                base - hp - ht
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{}" text-anchor="end" transform="rotate(-35 {:.1} {})">{}</text>"#,
                x + bw / 2.0,
                base + 12.0,
                x + bw / 2.0,
                base + 12.0,
                esc(&b.label)
            );
        }
        let lx = W - PAD_R + 8.0;
        let _ = writeln!(
            svg,
            r##"<rect x="{lx}" y="{PAD_T}" width="12" height="10" fill="#1f77b4"/><text x="{}" y="{}">process</text>"##,
            lx + 16.0,
            PAD_T + 9.0
        );
        let _ = writeln!(
            svg,
            r##"<rect x="{lx}" y="{}" width="12" height="10" fill="#ff7f0e"/><text x="{}" y="{}">transmission</text>"##,
            PAD_T + 16.0,
            lx + 16.0,
            PAD_T + 25.0
        );
        svg.push_str("</svg>\n");
        svg
    }
}

/// Writes `report.csv` and the three SVG charts into `out_dir`.
pub fn emit_plots(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::InvalidArgument("cannot plot an empty report".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("report.csv");
    report.write_csv(&csv)?;
    let files = [
        ("accuracy_vs_snr.svg", accuracy_vs_snr(report).to_svg()),
        ("accuracy_vs_bpp.svg", accuracy_vs_bpp(report).to_svg()),
        ("delay.svg", delay_bars(report).to_svg()),
    ];
    let mut written = vec![csv];
    for (name, svg) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scheme: &str, point: f64, snr: f64, seed: u64, acc: f64, bpp: f64) -> ReportRow {
        ReportRow {
            scheme: scheme.into(),
            cr_or_quality: point,
            snr_db: snr,
            fec: "none".into(),
            seed,
            accuracy: acc,
            bpp_source: bpp,
            bpp_air: bpp,
            process_delay_ms: 0.5,
            transmission_delay_ms: bpp,
            total_delay_ms: 0.5 + bpp,
        }
    }

    #[test]
    fn two_schemes_by_five_snrs() {
        let mut rows = Vec::new();
        for snr in [0.0, 5.0, 10.0, 15.0, 20.0] {
            rows.push(row("sc_ait", 0.5, snr, 1, 0.9, 9.5));
            rows.push(row("baseline_codec", 75.0, snr, 1, 0.6, 3.0));
        }
        let chart = accuracy_vs_snr(&Report { rows });
        assert_eq!(chart.series.len(), 2);
        assert!(chart.series.iter().all(|s| s.points.len() == 5));
        assert_eq!(chart.to_svg().matches("<polyline").count(), 2);
    }

    #[test]
    fn seeds_are_averaged() {
        let rows = vec![row("sc_ait", 0.0, 10.0, 1, 0.8, 18.0), row("sc_ait", 0.0, 10.0, 2, 0.6, 18.0)];
        let chart = accuracy_vs_snr(&Report { rows });
        assert_eq!(chart.series[0].points.len(), 1);
        assert!((chart.series[0].points[0].1 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn missing_scheme_is_omitted() {
        let rows = vec![row("sc_random", 0.5, 10.0, 1, 0.5, 9.5), row("sc_random", 0.0, 10.0, 1, 0.9, 18.6)];
        let report = Report { rows };
        let chart = accuracy_vs_bpp(&report);
        assert_eq!(chart.series.len(), 1);
        assert_eq!(chart.series[0].points, vec![(9.5, 0.5), (18.6, 0.9)]);
        assert_eq!(delay_bars(&report).bars.len(), 2);
        assert!(delay_bars(&report).to_svg().starts_with("<svg"));
    }

    #[test]
    fn emit_writes_csv_and_three_svgs() {
        let dir = tempfile::tempdir().unwrap();
        let report = Report {
            rows: vec![row("sc_ait", 0.0, 10.0, 1, 0.8, 18.0)],
        };
        let files = emit_plots(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        assert!(files.iter().all(|f| f.exists()));
        assert!(emit_plots(&Report::default(), dir.path()).is_err());
    }
}
