//! Hand-written SVG: a court overlay of trajectories and a log-log line plot.

use std::fmt::Write as _;

use rolfor_core::diffcore::Tensor;
use rolfor_core::gamedata::{AgentRole, TrajectorySequence, BASKET, COURT_LENGTH, COURT_WIDTH, T_OBS};

const PX_PER_METER: f64 = 20.0;
const MARGIN: f64 = 1.0;

fn points(pts: impl IntoIterator<Item = [f64; 2]>) -> String {
    pts.into_iter()
        .map(|[x, y]| format!("{x:.3},{y:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn colour(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Attacker => "#d62728",
        AgentRole::Defender => "#1f77b4",
        AgentRole::Ball => "#ff7f0e",
    }
}

fn role_name(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Attacker => "attacker",
        AgentRole::Defender => "defender",
        AgentRole::Ball => "ball",
    }
}

/// Court in meters with one `<g class="agent">` per agent: observed track
/// solid, true future dashed, and (when `prediction` `[K, P, 2]` is given)
/// predicted future dotted for the first `P` agents.
pub fn court_plot(seq: &TrajectorySequence, prediction: Option<&Tensor>) -> String {
    let w = COURT_LENGTH + 2.0 * MARGIN;
    let h = COURT_WIDTH + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="{} {} {w:.2} {h:.2}">"#,
        w * PX_PER_METER,
        h * PX_PER_METER,
        -MARGIN,
        -MARGIN
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&seq.sequence_id));
    let _ = writeln!(
        s,
        r##"<rect class="court" x="0" y="0" width="{COURT_LENGTH}" height="{COURT_WIDTH}" fill="#f4e9d8" stroke="#333" stroke-width="0.08"/>"##
    );
    let _ = writeln!(
        s,
        r##"<circle class="basket" cx="{}" cy="{}" r="0.23" fill="none" stroke="#333" stroke-width="0.06"/>"##,
        BASKET[0], BASKET[1]
    );
    let n_frames = seq.n_frames();
    for (a, &role) in seq.roles.iter().enumerate() {
        let c = colour(role);
        let _ = writeln!(s, r#"<g class="agent" data-agent="{a}" data-role="{}">"#, role_name(role));
        let observed = points((0..T_OBS).map(|t| seq.position(t, a)));
        let future = points((T_OBS - 1..n_frames).map(|t| seq.position(t, a)));
        let _ = writeln!(
            s,
            r#"  <polyline class="observed" points="{observed}" fill="none" stroke="{c}" stroke-width="0.12"/>"#
        );
        let _ = writeln!(
            s,
            r#"  <polyline class="future" points="{future}" fill="none" stroke="{c}" stroke-width="0.08" stroke-dasharray="0.4 0.25"/>"#
        );
        if let Some(p) = prediction.filter(|p| a < p.shape()[1]) {
            let k = p.shape()[0];
            let start = std::iter::once(seq.position(T_OBS - 1, a));
            let pred = points(start.chain((0..k).map(|t| [p.at(&[t, a, 0]), p.at(&[t, a, 1])])));
            let _ = writeln!(
                s,
                r#"  <polyline class="predicted" points="{pred}" fill="none" stroke="{c}" stroke-width="0.1" stroke-dasharray="0.05 0.2" stroke-linecap="round"/>"#
            );
        }
        let [x, y] = seq.position(T_OBS - 1, a);
        let _ = writeln!(s, r#"  <circle cx="{x:.3}" cy="{y:.3}" r="0.2" fill="{c}"/>"#);
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

pub struct Series<'a> {
    pub name: &'a str,
    pub colour: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Log-log line plot. Non-positive values cannot be placed on a log axis and
/// are left out.
pub fn log_log_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const L: f64 = 70.0;
    const R: f64 = 160.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let visible: Vec<(usize, f64, f64)> = series
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.points.iter().map(move |&(x, y)| (i, x, y)))
        .filter(|&(_, x, y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(i, x, y)| (i, x.log10(), y.log10()))
        .collect();
    let range = |f: fn(&(usize, f64, f64)) -> f64| {
        let lo = visible.iter().map(f).fold(f64::INFINITY, f64::min).floor();
        let hi = visible.iter().map(f).fold(f64::NEG_INFINITY, f64::max).ceil();
        if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) }
    };
    let (x0, x1) = range(|p| p.1);
    let (y0, y1) = range(|p| p.2);
    let px = |lx: f64| L + (lx - x0) / (x1 - x0) * (W - L - R);
    let py = |ly: f64| H - B - (ly - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (L + W - R) / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    for d in x0 as i64..=x1 as i64 {
        let x = px(d as f64);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, H - B, H - B + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{d}</text>"#, H - B + 18.0);
    }
    for d in y0 as i64..=y1 as i64 {
        let y = py(d as f64);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{L}" y2="{y:.2}" stroke="black"/>"#, L - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, L - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (L + W - R) / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{y_label}</text>"#,
        (T + H - B) / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<[f64; 2]> = visible.iter().filter(|p| p.0 == i).map(|p| [px(p.1), py(p.2)]).collect();
        let _ = writeln!(s, r#"<g class="series" data-name="{}">"#, ser.name);
        let _ = writeln!(s, r#"  <polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, points(pts.iter().copied()), ser.colour);
        for [x, y] in &pts {
            let _ = writeln!(s, r#"  <circle cx="{x:.3}" cy="{y:.3}" r="3" fill="{}"/>"#, ser.colour);
        }
        let ly = T + 20.0 + 20.0 * i as f64;
        let _ = writeln!(s, r#"  <line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#, W - R + 10.0, W - R + 30.0, ser.colour);
        let _ = writeln!(s, r#"  <text x="{}" y="{}">{}</text>"#, W - R + 36.0, ly + 4.0, ser.name);
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
