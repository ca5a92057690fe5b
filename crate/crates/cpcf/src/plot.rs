//! Plain-text SVG line charts of run logs.
//!
//! The x axis is curriculum progress: the base row sits at 0 and epoch `e` of
//! `E` in task `j` sits at `j - 1 + e / E`, so integer positions are task ends.

use std::collections::BTreeMap;
use std::fmt::Write;

use cpcf_core::metrics::{RunLog, RunRecord};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y_range: Option<(f64, f64)>,
    pub series: Vec<Series>,
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn bounds(values: impl Iterator<Item = f64>, fallback: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return fallback;
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

impl Chart {
    pub fn render(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = bounds(pts().map(|p| p.0), (0.0, 5.0));
        let (y0, y1) = self.y_range.unwrap_or_else(|| bounds(pts().map(|p| p.1), (0.0, 1.0)));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            num(LEFT + pw / 2.0),
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
            l = num(LEFT),
            r = num(LEFT + pw),
            t = num(TOP),
            b = num(TOP + ph)
        );
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                num(sx(fx)),
                num(TOP + ph + 16.0),
                num(fx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                num(LEFT - 6.0),
                num(sy(fy) + 4.0),
                num(fy)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            num(LEFT + pw / 2.0),
            num(HEIGHT - 12.0),
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
            escape(&self.y_label),
            y = num(TOP + ph / 2.0)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let dash = if series.dashed { r#" stroke-dasharray="6 3""# } else { "" };
            let coords: Vec<String> = series.points.iter().map(|&(x, y)| format!("{},{}", num(sx(x)), num(sy(y)))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
                coords.join(" ")
            );
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
                num(lx),
                num(lx + 22.0),
                num(lx + 28.0),
                num(ly + 4.0),
                escape(&series.label),
                y = num(ly)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Position of a record on the progress axis; `last_epoch` is the highest
/// epoch seen for that task.
fn progress(r: &RunRecord, last_epoch: usize) -> f64 {
    if r.task_index == 0 {
        0.0
    } else {
        (r.task_index - 1) as f64 + r.epoch as f64 / last_epoch.max(1) as f64
    }
}

/// Mean of `value` per progress position over all runs in `logs`.
fn averaged(logs: &[&RunLog], value: impl Fn(&RunRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    let mut last: BTreeMap<usize, usize> = BTreeMap::new();
    for r in logs.iter().flat_map(|l| &l.records) {
        let e = last.entry(r.task_index).or_default();
        *e = (*e).max(r.epoch);
    }
    let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    for r in logs.iter().flat_map(|l| &l.records) {
        if let Some(v) = value(r) {
            let x = progress(r, last[&r.task_index]);
            let e = acc.entry((r.task_index, r.epoch)).or_insert((x, 0.0, 0));
            e.1 += v;
            e.2 += 1;
        }
    }
    acc.into_values().map(|(x, sum, n)| (x, sum / n as f64)).collect()
}

fn group_by<K: Ord>(logs: &[RunLog], key: impl Fn(&RunRecord) -> K) -> BTreeMap<K, Vec<&RunLog>> {
    let mut out: BTreeMap<K, Vec<&RunLog>> = BTreeMap::new();
    for l in logs {
        if let Some(first) = l.records.first() {
            out.entry(key(first)).or_default().push(l);
        }
    }
    out
}

/// `a_prev` (solid) and `a_new` (dashed) per method.
pub fn accuracy_chart(logs: &[RunLog]) -> Chart {
    let mut series = Vec::new();
    for (method, runs) in group_by(logs, |r| r.method) {
        series.push(Series {
            label: format!("{} a_prev", method.label()),
            points: averaged(&runs, |r| r.a_prev),
            dashed: false,
        });
        series.push(Series {
            label: format!("{} a_new", method.label()),
            points: averaged(&runs, |r| Some(r.a_new)),
            dashed: true,
        });
    }
    Chart {
        title: "Accuracy on previous and new tasks".into(),
        x_label: "task".into(),
        y_label: "accuracy".into(),
        y_range: Some((0.0, 1.0)),
        series,
    }
}

/// `a_prev` per learning rate.
pub fn lr_chart(logs: &[RunLog]) -> Chart {
    let series = group_by(logs, |r| r.lr.to_bits())
        .into_iter()
        .map(|(bits, runs)| Series {
            label: format!("lr {}", crate::csv::fmt_g10(f64::from_bits(bits))),
            points: averaged(&runs, |r| r.a_prev),
            dashed: false,
        })
        .collect();
    Chart {
        title: "Previous-task accuracy by learning rate".into(),
        x_label: "task".into(),
        y_label: "a_prev".into(),
        y_range: Some((0.0, 1.0)),
        series,
    }
}

/// CPCF per method.
pub fn cpcf_chart(logs: &[RunLog]) -> Chart {
    let series = group_by(logs, |r| r.method)
        .into_iter()
        .map(|(method, runs)| Series {
            label: format!("{} CPCF", method.label()),
            points: averaged(&runs, |r| r.cpcf),
            dashed: false,
        })
        .collect();
    Chart {
        title: "CPCF on previous tasks".into(),
        x_label: "task".into(),
        y_label: "mean prediction-set size".into(),
        y_range: Some((1.0, 10.0)),
        series,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpcf_core::continual::Method;

    fn log(method: Method, lr: f64, a_prev: f64) -> RunLog {
        let mut records = Vec::new();
        for (task, epoch) in [(0, 8), (1, 1), (1, 2), (2, 1), (2, 2)] {
            records.push(RunRecord {
                run_id: "r".into(),
                seed: 0,
                dataset: "blobs".into(),
                method,
                task_index: task,
                epoch,
                a_prev: (task > 0).then_some(a_prev),
                a_new: 0.9,
                cpcf: (task > 0).then_some(2.0),
                q_alpha: (task > 0).then_some(0.9),
                alpha: 0.1,
                calib_ratio: 0.1,
                lr,
                lambda: 0.0,
                a_base: None,
                a_all: None,
                param_hash: None,
            });
        }
        RunLog::new(records)
    }

    #[test]
    fn progress_positions() {
        let l = log(Method::Plain, 0.1, 0.5);
        let pts = averaged(&[&l], |r| Some(r.a_new));
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn runs_of_a_method_are_averaged() {
        let logs = vec![log(Method::Plain, 0.1, 0.2), log(Method::Plain, 0.1, 0.6), log(Method::EwcSingle, 0.1, 0.5)];
        let c = accuracy_chart(&logs);
        assert_eq!(c.series.len(), 4);
        assert_eq!(c.series[0].label, "MLP a_prev");
        assert!(c.series[0].points.iter().all(|p| (p.1 - 0.4).abs() < 1e-12));
        assert_eq!(c.series[0].points.len(), 4);
        assert_eq!(lr_chart(&logs).series.len(), 1);
        assert_eq!(cpcf_chart(&logs).series.len(), 2);
    }

    #[test]
    fn labels_are_escaped() {
        let chart = Chart {
            title: "a < b & c".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            y_range: None,
            series: vec![Series {
                label: "\"q\"".into(),
                points: vec![(0.0, 1.0)],
                dashed: false,
            }],
        };
        let svg = chart.render();
        assert!(svg.contains("a &lt; b &amp; c"));
        assert!(svg.contains("&quot;q&quot;"));
    }
}
