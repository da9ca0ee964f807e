//! Static SVG line charts: one mean line plus a +-stderr band per model,
//! x axis in task units. Output bytes are a pure function of the inputs.

use std::collections::BTreeMap;
use std::path::Path;

use super::metrics::AggregateSeries;
use super::RunError;

pub struct ChartSpec<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    /// Records per task: converts bin indices to task units on the x axis.
    pub records_per_task: f64,
    /// Bin width in records.
    pub bin_width: usize,
}

fn model_color(model: &str) -> &'static str {
    match model {
        "mlp" => "#d62728",
        "transformer" => "#1f77b4",
        "rnn" => "#2ca02c",
        "ermlp" => "#9467bd",
        _ => "#7f7f7f",
    }
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let span = hi - lo;
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    } * mag;
    let start = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = start;
    while t <= hi + 1e-12 * span {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Render the chart; series iterate in insertion order of the map.
pub fn render_chart(spec: &ChartSpec, per_model: &[(String, AggregateSeries)]) -> String {
    let (w, h) = (900.0, 540.0);
    let (ml, mr, mt, mb) = (80.0, 30.0, 50.0, 60.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let mut x_max: f64 = 1.0;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, agg) in per_model {
        let bins = agg.mean.len();
        x_max = x_max.max(bins as f64 * spec.bin_width as f64 / spec.records_per_task);
        for (m, s) in agg.mean.iter().zip(&agg.stderr) {
            y_min = y_min.min(m - s);
            y_max = y_max.max(m + s);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_lo, y_hi) = (y_min - pad, y_max + pad);

    let sx = move |task: f64| ml + task / x_max * pw;
    let sy = move |v: f64| mt + (1.0 - (v - y_lo) / (y_hi - y_lo)) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\" text-anchor=\"middle\">{}</text>\n",
        ml + pw / 2.0,
        spec.title
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw,
        mt + ph
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        mt + ph
    ));
    for t in nice_ticks(0.0, x_max, 8) {
        let x = sx(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            mt + ph,
            mt + ph + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            mt + ph + 20.0,
            fmt(t)
        ));
    }
    for t in nice_ticks(y_lo, y_hi, 6) {
        let y = sy(t);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{ml}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            ml - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            ml - 9.0,
            y + 4.0,
            fmt(t)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        ml + pw / 2.0,
        h - 15.0,
        spec.x_label
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.1})\">{}</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0,
        spec.y_label
    ));

    // bands then lines so lines stay visible
    for (model, agg) in per_model {
        let color = model_color(model);
        let bins = agg.mean.len();
        let task_at = |i: usize| (i as f64 + 0.5) * spec.bin_width as f64 / spec.records_per_task;
        if bins > 1 {
            let mut band = String::from("<polygon points=\"");
            for i in 0..bins {
                band.push_str(&format!(
                    "{:.2},{:.2} ",
                    sx(task_at(i)),
                    sy(agg.mean[i] + agg.stderr[i])
                ));
            }
            for i in (0..bins).rev() {
                band.push_str(&format!(
                    "{:.2},{:.2} ",
                    sx(task_at(i)),
                    sy(agg.mean[i] - agg.stderr[i])
                ));
            }
            band.push_str(&format!("\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n"));
            svg.push_str(&band);
        }
    }
    for (model, agg) in per_model {
        let color = model_color(model);
        let bins = agg.mean.len();
        let task_at = |i: usize| (i as f64 + 0.5) * spec.bin_width as f64 / spec.records_per_task;
        if bins == 1 {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(task_at(0)),
                sy(agg.mean[0])
            ));
        } else {
            let mut line = String::from("<polyline fill=\"none\" points=\"");
            for i in 0..bins {
                line.push_str(&format!("{:.2},{:.2} ", sx(task_at(i)), sy(agg.mean[i])));
            }
            line.push_str(&format!("\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"));
            svg.push_str(&line);
        }
    }

    // legend
    for (idx, (model, _)) in per_model.iter().enumerate() {
        let y = mt + 16.0 + idx as f64 * 18.0;
        let x = ml + pw - 130.0;
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            x + 24.0,
            model_color(model)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
            x + 30.0,
            y + 4.0,
            model
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Parsed CSV: metadata comments plus per-model aggregated bins.
pub struct ParsedCsv {
    pub meta: BTreeMap<String, String>,
    pub per_model: Vec<(String, AggregateSeries)>,
}

/// Re-read an emitted CSV (for the `plot` subcommand).
pub fn parse_csv(path: &Path) -> Result<ParsedCsv, RunError> {
    let text = std::fs::read_to_string(path)?;
    let mut meta = BTreeMap::new();
    let mut per_model: Vec<(String, AggregateSeries)> = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !saw_header {
            saw_header = true; // column header
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(RunError::Config(format!(
                "{}: expected 8 columns, got {}",
                path.display(),
                cols.len()
            )));
        }
        let model = cols[1].to_string();
        let seed_count: usize = cols[2]
            .parse()
            .map_err(|_| RunError::Config("bad seed_count".into()))?;
        let mean: f64 = cols[6]
            .parse()
            .map_err(|_| RunError::Config("bad mean".into()))?;
        let stderr: f64 = cols[7]
            .parse()
            .map_err(|_| RunError::Config("bad stderr".into()))?;
        match per_model.iter_mut().find(|(m, _)| *m == model) {
            Some((_, agg)) => {
                agg.mean.push(mean);
                agg.stderr.push(stderr);
            }
            None => per_model.push((
                model,
                AggregateSeries {
                    seed_count,
                    mean: vec![mean],
                    stderr: vec![stderr],
                },
            )),
        }
    }
    Ok(ParsedCsv { meta, per_model })
}
