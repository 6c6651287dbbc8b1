//! Static SVG line charts of sweep results.

use std::fmt::Write;

use super::sweep::{summarize, SweepRow, OUTPUT_NOTE};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"];

/// A named polyline; points are `(x, mean, standard deviation)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with error bars. The y axis spans [0, 1].
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - y.clamp(0.0, 1.0)) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let note = OUTPUT_NOTE.trim_start_matches("# ");
    let _ = writeln!(
        s,
        r##"<text x="{}" y="34" text-anchor="middle" font-size="9" fill="#555">{}</text>"##,
        W / 2.0,
        escape(note)
    );
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ =
            writeln!(s, r##"<line x1="{LEFT}" x2="{0}" y1="{1:.1}" y2="{1:.1}" stroke="#ddd"/>"##, LEFT + pw, py(y));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.1}</text>"#, LEFT - 6.0, py(y) + 4.0);
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    for x in ticks {
        let _ =
            writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(x), TOP + ph + 18.0, trim(x));
    }
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let mut pts = ser.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
        for p in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, px(p.0), py(p.1));
            if p.2 > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{0:.1}" x2="{0:.1}" y1="{1:.1}" y2="{2:.1}" stroke="{c}"/>"#,
                    px(p.0),
                    py(p.1 - p.2),
                    py(p.1 + p.2)
                );
            }
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ =
            writeln!(s, r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn trim(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// mAP against SNR, one series per mode, channel and rate.
pub fn snr_chart(rows: &[SweepRow]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for ((mode, ch, r, snr), (mean, sd, _)) in summarize(rows) {
        let name = format!("{mode} {ch} R={r}");
        let x: f64 = snr.parse().unwrap_or(0.0);
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((x, mean, sd)),
            None => series.push(Series { name, points: vec![(x, mean, sd)] }),
        }
    }
    line_chart("mAP versus SNR", "SNR (dB)", "mAP", &series)
}

/// mAP against achieved compression ratio, one series per mode and channel.
pub fn rate_chart(rows: &[SweepRow]) -> String {
    let mut series: Vec<Series> = Vec::new();
    let achieved = |req: &str| rows.iter().find(|r| r.requested.to_string() == req).map(|r| r.achieved).unwrap_or(0.0);
    for ((mode, ch, r, snr), (mean, sd, _)) in summarize(rows) {
        let name = format!("{mode} {ch} {snr} dB");
        let x = achieved(&r);
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((x, mean, sd)),
            None => series.push(Series { name, points: vec![(x, mean, sd)] }),
        }
    }
    line_chart("mAP versus compression ratio", "R = k/n", "mAP", &series)
}
