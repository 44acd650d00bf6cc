//! Recall-vs-epoch line chart as a self-contained SVG.

use std::fmt::Write as _;

use swca::train::EpochMetrics;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

type Getter = fn(&EpochMetrics) -> Option<f64>;

const SERIES: [(&str, &str, Getter); 6] = [
    ("R@1 v2t", "#1b9e77", |m| m.r1_v2t),
    ("R@1 t2v", "#d95f02", |m| m.r1_t2v),
    ("R@5 v2t", "#7570b3", |m| m.r5_v2t),
    ("R@5 t2v", "#e7298a", |m| m.r5_t2v),
    ("R@10 v2t", "#66a61e", |m| m.r10_v2t),
    ("R@10 t2v", "#e6ab02", |m| m.r10_t2v),
];

pub fn metrics_chart_svg(rows: &[EpochMetrics]) -> String {
    let max_epoch = rows.iter().map(|r| r.epoch).max().unwrap_or(1).max(1) as f64;
    let x = |e: usize| {
        PAD + (W - 2.0 * PAD)
            * if max_epoch > 1.0 {
                (e as f64 - 1.0) / (max_epoch - 1.0)
            } else {
                0.5
            }
    };
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v / 100.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for pct in [0, 25, 50, 75, 100] {
        let yy = y(pct as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{PAD}" y1="{yy}" x2="{}" y2="{yy}" stroke="#dddddd"/>"##,
            W - PAD
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{pct}</text>"#,
            PAD - 6.0,
            yy + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">epoch (1 to {})</text>"#,
        W / 2.0,
        H - 15.0,
        max_epoch
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 15 {})">validation recall (%)</text>"#,
        H / 2.0,
        H / 2.0
    );

    for (n, (label, color, get)) in SERIES.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .filter_map(|r| get(r).map(|v| format!("{:.2},{:.2}", x(r.epoch), y(v))))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = PAD + 14.0 * n as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            W - PAD - 90.0,
            W - PAD - 75.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif">{label}</text>"#,
            W - PAD - 70.0,
            ly + 3.0
        );
    }
    s.push_str("</svg>\n");
    s
}
