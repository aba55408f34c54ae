use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{
    summarize, ExperimentRecord, GroupKey, HarnessError, RunOutput, SummaryRow, SweepKind, SweepResult,
    TrialDiagnostics, TrialStatus,
};

pub const RECORDS_HEADER: [&str; 14] = [
    "case", "n", "epsilon", "delta", "trial", "seed", "opt", "opt_dp", "phi", "alpha", "exact_gap", "status_true",
    "status_dp", "wall_ms",
];

const SUMMARY_HEADER: [&str; 13] = [
    "case",
    "n",
    "epsilon",
    "records",
    "trials",
    "mean_phi",
    "std_phi",
    "ci_half_width",
    "mean_opt",
    "mean_opt_dp",
    "mean_alpha",
    "bound_fraction",
    "failures",
];

const TIMINGS_HEADER: [&str; 10] = [
    "case",
    "n",
    "epsilon",
    "trial",
    "capacity_va",
    "wall_true_ms",
    "wall_dp_ms",
    "wall_ms",
    "nodes_true",
    "nodes_dp",
];

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn eps_field(e: Option<f64>) -> String {
    e.map_or_else(|| "V".to_string(), |x| x.to_string())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), HarnessError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes records.csv. `wall_ms` stays empty unless `inline_wall_ms`.
pub fn write_records(records: &[ExperimentRecord], path: &Path, inline_wall_ms: bool) -> Result<(), HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    write_csv(
        path,
        &RECORDS_HEADER,
        records.iter().map(|r| {
            vec![
                r.case.clone(),
                r.n.to_string(),
                eps_field(r.epsilon),
                r.delta.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                num(r.opt),
                num(r.opt_dp),
                num(r.phi),
                r.alpha.to_string(),
                num(r.exact_gap),
                r.status_true.as_str().to_string(),
                r.status_dp.as_str().to_string(),
                if inline_wall_ms {
                    format!("{:.3}", r.wall_ms)
                } else {
                    String::new()
                },
            ]
        }),
    )
}

/// Reads a records.csv written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = reader.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(RECORDS_HEADER.iter().copied()) {
        return Err(HarnessError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {}", RECORDS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let line = i + 2;
        let bad = |field: &str| HarnessError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad {field}"),
        };
        let opt_num = |idx: usize, field: &str| -> Result<Option<f64>, HarnessError> {
            match &row[idx] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(field)),
            }
        };
        let status = |idx: usize, field: &str| TrialStatus::parse(&row[idx]).ok_or_else(|| bad(field));
        out.push(ExperimentRecord {
            case: row[0].to_string(),
            n: row[1].parse().map_err(|_| bad("n"))?,
            epsilon: match &row[2] {
                "V" => None,
                s => Some(s.parse().map_err(|_| bad("epsilon"))?),
            },
            delta: row[3].parse().map_err(|_| bad("delta"))?,
            trial: row[4].parse().map_err(|_| bad("trial"))?,
            seed: row[5].parse().map_err(|_| bad("seed"))?,
            opt: opt_num(6, "opt")?,
            opt_dp: opt_num(7, "opt_dp")?,
            phi: opt_num(8, "phi")?,
            alpha: row[9].parse().map_err(|_| bad("alpha"))?,
            exact_gap: opt_num(10, "exact_gap")?,
            status_true: status(11, "status_true")?,
            status_dp: status(12, "status_dp")?,
            wall_ms: opt_num(13, "wall_ms")?.unwrap_or(0.0),
            diagnostics: TrialDiagnostics::default(),
        });
    }
    Ok(out)
}

fn summary_row(r: &SummaryRow) -> Vec<String> {
    vec![
        r.case.clone().unwrap_or_default(),
        r.n.map_or_else(String::new, |n| n.to_string()),
        r.epsilon.map_or_else(String::new, eps_field),
        r.records.to_string(),
        r.trials.to_string(),
        num(r.mean_phi),
        num(r.std_phi),
        num(r.half_width),
        num(r.mean_opt),
        num(r.mean_opt_dp),
        r.mean_alpha.to_string(),
        num(r.bound_fraction),
        r.failures.to_string(),
    ]
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record(summary_row(r))?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of mean Φ with 95% whiskers, one series per case label (and
/// per epsilon for customer-count sweeps).
pub fn render_chart(sweep: &SweepResult) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 190.0, 40.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let log_x = sweep.config.kind == SweepKind::Epsilon;

    let rows = summarize(&sweep.records, &[GroupKey::Case, GroupKey::N, GroupKey::Epsilon]);
    let mut series: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in &rows {
        let Some(mean) = r.mean_phi else { continue };
        let case = r.case.clone().unwrap_or_default();
        let eps = r.epsilon.flatten();
        let (name, x) = if log_x {
            (case, eps.unwrap_or(f64::NAN).log10())
        } else {
            (format!("{case} eps={}", eps_field(eps)), r.n.unwrap_or(0) as f64)
        };
        series.entry(name).or_default().push((x, mean, r.half_width.unwrap_or(0.0)));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let xs: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let (y0, y1) = series
        .values()
        .flatten()
        .fold((0.0_f64, 1.0_f64), |(a, b), p| (a.min(p.1 - p.2), b.max(p.1 + p.2)));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        esc(&sweep.config.name)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let y = y0 + (y1 - y0) * k as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"##,
            left + pw,
            left - 6.0,
            py + 4.0
        );
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in &ticks {
        let px = sx(*x);
        let label = if log_x {
            format!("{:.0e}", 10f64.powf(*x))
        } else {
            format!("{x}")
        };
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            top + ph + 18.0
        );
    }
    let xlabel = if log_x { "epsilon" } else { "customers" };
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#,
        left + pw / 2.0,
        h - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">mean privacy cost (95% CI)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|(x, y, _)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for (x, y, hw) in pts {
            let (px, lo, hi) = (sx(*x), sy(y - hw), sy(y + hw));
            let _ = writeln!(
                s,
                r#"<line x1="{px:.1}" y1="{lo:.1}" x2="{px:.1}" y2="{hi:.1}" stroke="{color}"/><line x1="{:.1}" y1="{lo:.1}" x2="{:.1}" y2="{lo:.1}" stroke="{color}"/><line x1="{:.1}" y1="{hi:.1}" x2="{:.1}" y2="{hi:.1}" stroke="{color}"/><circle cx="{px:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                px - 4.0,
                px + 4.0,
                px - 4.0,
                px + 4.0,
                sy(*y)
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_timings(records: &[ExperimentRecord], path: &Path) -> Result<(), HarnessError> {
    write_csv(
        path,
        &TIMINGS_HEADER,
        records.iter().map(|r| {
            let d = &r.diagnostics;
            vec![
                r.case.clone(),
                r.n.to_string(),
                eps_field(r.epsilon),
                r.trial.to_string(),
                d.capacity_va.to_string(),
                format!("{:.3}", d.wall_true_ms),
                format!("{:.3}", d.wall_dp_ms),
                format!("{:.3}", r.wall_ms),
                d.nodes_true.to_string(),
                d.nodes_dp.to_string(),
            ]
        }),
    )
}

/// Writes records.csv, summary.csv, timings.csv and one SVG chart per
/// sweep into `out_dir`. Every file except timings.csv is byte-stable for
/// identical records.
pub fn emit_outputs(output: &RunOutput, out_dir: &Path, inline_wall_ms: bool) -> Result<Vec<PathBuf>, HarnessError> {
    let records = output.records();
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut paths = Vec::new();

    let path = out_dir.join("records.csv");
    write_records(&records, &path, inline_wall_ms)?;
    paths.push(path);

    let path = out_dir.join("summary.csv");
    let rows = summarize(&records, &[GroupKey::Case, GroupKey::N, GroupKey::Epsilon]);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_summary(&rows, std::io::BufWriter::new(file)).map_err(csv_err(&path))?;
    paths.push(path);

    let path = out_dir.join("timings.csv");
    write_timings(&records, &path)?;
    paths.push(path);

    for sweep in &output.sweeps {
        let path = out_dir.join(format!("{}.svg", sweep.config.name));
        fs::write(&path, render_chart(sweep)).map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}
