use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};
use sgprs_sim::calibrate::calibrate;
use sgprs_sim::svg::{line_chart, Series};
use sgprs_sim::sweep::{
    group_series, mark_pivots, pivots, read_csv, run_all, series_text, write_csv, write_pivots,
    CsvRow, PivotRow, RunFlags,
};
use sgprs_sim::{parse_config_file, trace};

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(version, about = "Sweep runner for the SGPRS GPU scheduler simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario in a config and write CSV and series files
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Dump a TSV event trace per run
        #[arg(long)]
        trace: bool,
        /// Render FPS and DMR charts as SVG
        #[arg(long)]
        svg: bool,
        /// Concurrent runs (default: available cores)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print pivot points of a sweep CSV and write them next to it
    ReportPivots {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Bisect the frame WCET until the best SGPRS pivot lands in a band
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "scenario2")]
        scenario: String,
        #[arg(long, default_value_t = 1.0)]
        lo: f64,
        #[arg(long, default_value_t = 10.0)]
        hi: f64,
        #[arg(long, default_value_t = 20)]
        band_min: usize,
        #[arg(long, default_value_t = 26)]
        band_max: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            trace,
            svg,
            jobs,
        } => simulate(&config, &out, trace, svg, jobs),
        Command::ReportPivots { csv } => report_pivots(&csv),
        Command::Calibrate {
            config,
            scenario,
            lo,
            hi,
            band_min,
            band_max,
        } => run_calibration(&config, &scenario, lo, hi, band_min..=band_max),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUN_FAILURE)
        }
    }
}

fn file_stem(scenario: &str, scheduler: &str) -> String {
    sanitize(&format!("{scenario}_{scheduler}"))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn simulate(
    config: &Path,
    out: &Path,
    dump_trace: bool,
    svg: bool,
    jobs: Option<usize>,
) -> Result<ExitCode> {
    let scenarios = match parse_config_file(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", config.display());
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let flags = RunFlags {
        keep_trace: dump_trace,
        audit: false,
    };
    eprintln!("running {} scenarios on {jobs} thread(s)", scenarios.len());
    let results = run_all(&scenarios, jobs, flags);

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut rows = Vec::new();
    let mut failures = 0;
    for (s, r) in scenarios.iter().zip(&results) {
        match r {
            Ok(run) => {
                rows.push(CsvRow::new(s, &run.metrics));
                if dump_trace {
                    let dir = out.join("traces");
                    fs::create_dir_all(&dir)?;
                    let path = dir.join(format!(
                        "{}_n{}.tsv",
                        file_stem(&s.scenario_id, &s.variant()),
                        s.n_tasks
                    ));
                    trace::write_tsv(&run.result.trace, BufWriter::new(File::create(&path)?))?;
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!(
                    "run {} {} n={} failed: {e}",
                    s.scenario_id,
                    s.variant(),
                    s.n_tasks
                );
            }
        }
    }
    mark_pivots(&mut rows);
    let csv_path = out.join("results.csv");
    write_csv(&rows, BufWriter::new(File::create(&csv_path)?))?;

    let series_dir = out.join("series");
    fs::create_dir_all(&series_dir)?;
    let groups = group_series(&rows);
    for ((sid, sched), series) in &groups {
        let stem = file_stem(sid, sched);
        fs::write(
            series_dir.join(format!("{stem}_fps.dat")),
            series_text(series, |r| r.total_fps, "total_fps"),
        )?;
        fs::write(
            series_dir.join(format!("{stem}_dmr.dat")),
            series_text(series, |r| r.dmr, "dmr"),
        )?;
    }
    if svg {
        write_svgs(out, &groups)?;
    }
    let pivot_rows = report(&rows);
    write_pivots(
        &pivot_rows,
        BufWriter::new(File::create(out.join("pivots.csv"))?),
    )?;
    eprintln!("wrote {}", csv_path.display());

    Ok(if failures > 0 {
        ExitCode::from(EXIT_RUN_FAILURE)
    } else {
        ExitCode::SUCCESS
    })
}

fn write_svgs(out: &Path, groups: &[((String, String), Vec<&CsvRow>)]) -> Result<()> {
    let dir = out.join("plots");
    fs::create_dir_all(&dir)?;
    let mut scenarios: Vec<&String> = groups.iter().map(|((s, _), _)| s).collect();
    scenarios.dedup();
    for sid in scenarios {
        let mine: Vec<_> = groups.iter().filter(|((s, _), _)| s == sid).collect();
        for (metric, y_label, f) in [
            (
                "fps",
                "total FPS",
                (|r: &CsvRow| r.total_fps) as fn(&CsvRow) -> f64,
            ),
            ("dmr", "deadline miss rate", |r: &CsvRow| r.dmr),
        ] {
            let series: Vec<Series<'_>> = mine
                .iter()
                .map(|((_, sched), rows)| Series {
                    label: sched,
                    points: rows.iter().map(|r| (r.n_tasks as f64, f(r))).collect(),
                })
                .collect();
            let chart = line_chart(&format!("{sid}: {y_label}"), "tasks", y_label, &series);
            fs::write(dir.join(format!("{}_{metric}.svg", sanitize(sid))), chart)?;
        }
    }
    Ok(())
}

fn report(rows: &[CsvRow]) -> Vec<PivotRow> {
    println!(
        "{:<14} {:<12} {:>6} {:>10} {:>12}",
        "scenario", "scheduler", "pivot", "peak_fps", "fps@max_n"
    );
    let mut out = Vec::new();
    for p in pivots(rows) {
        match p {
            Ok(p) => {
                println!(
                    "{:<14} {:<12} {:>6} {:>10.1} {:>12.1}",
                    p.scenario_id, p.scheduler, p.pivot, p.peak_fps, p.fps_at_max_n
                );
                out.push(p);
            }
            Err((sid, sched, e)) => println!("{sid:<14} {sched:<12} {e}"),
        }
    }
    out
}

fn report_pivots(csv: &Path) -> Result<ExitCode> {
    let rows = read_csv(File::open(csv).with_context(|| format!("opening {}", csv.display()))?)?;
    if let Some(Err((sid, sched, e))) = pivots(&rows).into_iter().find(Result::is_err) {
        bail!("{sid}/{sched}: {e}");
    }
    let pivot_rows = report(&rows);
    let path = csv.with_file_name("pivots.csv");
    write_pivots(&pivot_rows, BufWriter::new(File::create(&path)?))?;
    eprintln!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_calibration(
    config: &Path,
    scenario: &str,
    lo: f64,
    hi: f64,
    band: std::ops::RangeInclusive<usize>,
) -> Result<ExitCode> {
    let scenarios = match parse_config_file(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", config.display());
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let cal = calibrate(&scenarios, scenario, (lo, hi), band, 40)?;
    for s in &cal.steps {
        println!(
            "frame_wcet_ms = {:<10} best pivot {} ({})",
            s.frame_wcet_ms, s.best_pivot, s.best_variant
        );
    }
    println!(
        "calibrated frame_wcet_ms = {} (pivot {})",
        cal.frame_wcet_ms, cal.best_pivot
    );
    Ok(ExitCode::SUCCESS)
}
