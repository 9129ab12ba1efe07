//! Static SVG charts for result files.
//!
//! Each series is one `<polyline class="series">` element, so the number of
//! series in a chart can be counted from the markup.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};

use super::output::Table;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const LEGEND_W: f64 = 170.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw point markers as well as lines.
    pub markers: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn render_panel(out: &mut String, p: &Panel, ox: f64) {
    let (x0, x1) = range(p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0)));
    let (y0, y1) = range(p.series.iter().flat_map(|s| s.points.iter().map(|q| q.1)));
    let (left, top) = (ox + MARGIN, MARGIN);
    let (w, h) = (PANEL_W - 1.5 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| top + h - (y - y0) / (y1 - y0) * h;

    let _ = writeln!(
        out,
        r##"<g class="panel"><rect x="{left:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
        left + w / 2.0,
        top - 15.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        left + w / 2.0,
        top + h + 35.0,
        escape(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        left - 38.0,
        top + h / 2.0,
        left - 38.0,
        top + h / 2.0,
        escape(&p.y_label)
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
            sx(xv),
            top + h + 14.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            left - 4.0,
            sy(yv) + 3.0,
            tick(yv)
        );
    }
    for (i, s) in p.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.label),
            pts.join(" ")
        );
        if p.markers {
            for &(x, y) in &s.points {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
            }
        }
        let ly = top + 12.0 + 14.0 * i as f64;
        let lx = ox + PANEL_W;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 14.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            lx + 18.0,
            ly + 3.0,
            escape(&s.label)
        );
    }
    out.push_str("</g>\n");
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Panels side by side, each followed by its legend.
pub fn render(title: &str, panels: &[Panel]) -> String {
    let width = panels.len() as f64 * (PANEL_W + LEGEND_W);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" font-family="sans-serif">"#,
        PANEL_H + 20.0
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, i as f64 * (PANEL_W + LEGEND_W));
    }
    out.push_str("</svg>\n");
    out
}

/// Integer key that sorts like the float.
fn order_key(x: f64) -> u64 {
    if x >= 0.0 {
        x.to_bits() ^ (1 << 63)
    } else {
        !x.to_bits()
    }
}

/// Mean of `y` per (series key, x), in key then x order.
fn mean_by<K: Ord + Clone>(items: impl Iterator<Item = (K, f64, f64)>) -> BTreeMap<K, Vec<(f64, f64)>> {
    let mut acc: BTreeMap<K, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for (k, x, y) in items {
        let e = acc.entry(k).or_default().entry(order_key(x)).or_insert((x, 0.0, 0));
        e.1 += y;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(k, m)| (k, m.into_values().map(|(x, s, n)| (x, s / n as f64)).collect()))
        .collect()
}

fn to_series(m: BTreeMap<String, Vec<(f64, f64)>>) -> Vec<Series> {
    m.into_iter().map(|(label, points)| Series { label, points }).collect()
}

fn nums(t: &Table, cols: &[&str]) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = cols.iter().map(|c| t.column(c)).collect::<Result<_>>()?;
    (0..t.rows.len()).map(|r| idx.iter().map(|&c| t.number(r, c)).collect()).collect()
}

fn dynamics_panels(t: &Table) -> Result<Vec<Panel>> {
    let (m, a, tg) = (t.column("method")?, t.column("alpha")?, t.column("target")?);
    let v = nums(t, &["round", "div_post", "ndcg_test"])?;
    let key = |r: usize| {
        let target = &t.rows[r][tg];
        let mut k = t.rows[r][m].clone();
        if target != "fixed" {
            k.push_str(&format!(" target={target}"));
        }
        format!("{k} alpha={}", t.rows[r][a])
    };
    let panel = |col: usize, title: &str, y: &str| Panel {
        title: title.into(),
        x_label: "round".into(),
        y_label: y.into(),
        series: to_series(mean_by((0..v.len()).map(|r| (key(r), v[r][0], v[r][col])))),
        markers: false,
    };
    Ok(vec![panel(1, "Diversity after response", "div@k"), panel(2, "Test NDCG", "NDCG@k")])
}

fn synth_panels(t: &Table) -> Result<Vec<Panel>> {
    let exp = t.column("experiment")?;
    let v = nums(t, &["setting", "lambda", "alpha", "round", "ndcg_test", "div_post"])?;
    let kind = t.rows[0][exp].clone();
    let panels = if kind == "cost-time" {
        let key = |r: usize| format!("alpha={} lambda={}", v[r][0], v[r][1]);
        vec![("Diversity after response", "div@k", 5), ("Test NDCG", "NDCG@k", 4)]
            .into_iter()
            .map(|(title, y, col)| Panel {
                title: title.into(),
                x_label: "round".into(),
                y_label: y.into(),
                series: to_series(mean_by((0..v.len()).map(|r| (key(r), v[r][3], v[r][col])))),
                markers: true,
            })
            .collect()
    } else {
        let last = v.iter().map(|r| r[3]).fold(0.0, f64::max);
        let rows: Vec<usize> = (0..v.len()).filter(|&r| v[r][3] == last).collect();
        let alphas: std::collections::BTreeSet<u64> = rows.iter().map(|&r| v[r][2].to_bits()).collect();
        let key = |r: usize| {
            if alphas.len() > 1 {
                format!("lambda={} alpha={}", v[r][1], v[r][2])
            } else {
                format!("lambda={}", v[r][1])
            }
        };
        let x_label = if kind == "overlap" {
            "shuffled edges N"
        } else {
            "user dispersion sigma"
        };
        vec![("Diversity after response", "div@k", 5), ("Test NDCG", "NDCG@k", 4)]
            .into_iter()
            .map(|(title, y, col)| Panel {
                title: title.into(),
                x_label: x_label.into(),
                y_label: y.into(),
                series: to_series(mean_by(rows.iter().map(|&r| (key(r), v[r][0], v[r][col])))),
                markers: true,
            })
            .collect()
    };
    Ok(panels)
}

fn pareto_panels(t: &Table) -> Result<Vec<Panel>> {
    let v = nums(t, &["lambda", "round", "ndcg", "div"])?;
    // seed means per (lambda, round); each lambda traces its rounds in order
    let mut acc: BTreeMap<(u64, u64), (f64, f64, usize)> = BTreeMap::new();
    for r in &v {
        let e = acc.entry((order_key(r[0]), r[1] as u64)).or_insert((0.0, 0.0, 0));
        e.0 += r[2];
        e.1 += r[3];
        e.2 += 1;
    }
    let mut paths: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for ((lk, _), (n, d, c)) in acc {
        paths.entry(lk).or_default().push((n / c as f64, d / c as f64));
    }
    let lambdas: BTreeMap<u64, f64> = v.iter().map(|r| (order_key(r[0]), r[0])).collect();
    Ok(vec![Panel {
        title: "NDCG vs diversity over rounds".into(),
        x_label: "NDCG@k".into(),
        y_label: "div@k".into(),
        series: paths
            .into_iter()
            .map(|(lk, points)| Series {
                label: format!("lambda={}", lambdas[&lk]),
                points,
            })
            .collect(),
        markers: true,
    }])
}

/// Chart for a parsed result file.
pub fn plot_table(t: &Table) -> Result<String> {
    if t.rows.is_empty() {
        return Err(Error::invalid("input", "result file has no data rows"));
    }
    let panels = match t.schema.as_str() {
        "dynamics" => dynamics_panels(t)?,
        "synth" => synth_panels(t)?,
        "pareto" => pareto_panels(t)?,
        other => return Err(Error::invalid("input", format!("{other} results have no chart"))),
    };
    Ok(render(&t.schema, &panels))
}

/// Number of series drawn in an SVG produced by [`render`].
pub fn count_series(svg: &str) -> usize {
    svg.matches(r#"class="series""#).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::output::parse_table;

    #[test]
    fn pareto_has_one_path_per_lambda() {
        let text = "#schema=pareto/v1\nlambda,seed,round,ndcg,div\n0,1,1,0.9,0.1\n0,1,2,0.91,0.05\n1,1,1,0.85,0.3\n1,1,2,0.86,0.3\n1,2,1,0.87,0.2\n1,2,2,0.88,0.1\n";
        let svg = plot_table(&parse_table(text).unwrap()).unwrap();
        assert_eq!(count_series(&svg), 2);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn empty_table_is_an_error() {
        let t = parse_table("#schema=pareto/v1\nlambda,seed,round,ndcg,div\n").unwrap();
        assert!(plot_table(&t).is_err());
    }

    #[test]
    fn mean_by_averages_and_orders() {
        let m = mean_by(vec![("a", 2.0, 1.0), ("a", -1.0, 4.0), ("a", 2.0, 3.0)].into_iter());
        assert_eq!(m["a"], vec![(-1.0, 4.0), (2.0, 2.0)]);
    }
}
