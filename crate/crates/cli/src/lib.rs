//! Command-line front end: config parsing, subcommand dispatch, and
//! human-readable summaries. All floating-point output is printed with 12
//! significant digits so regressions stay diff-visible.

pub mod config;
pub mod expr;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use thintube_core::cross_section::{solve_modes, CrossSectionDomain};
use thintube_core::effective1d::{
    assemble_t, auto_window, c_constant, scaled_spectrum, weo_spectrum_exact, write_potential_csv,
    WeoSpec,
};
use thintube_core::error::Error as CoreError;
use thintube_core::fmt::sig12;
use thintube_core::geometry::validate_deformation;
use thintube_core::harness::{
    emit_report, essential_spectrum_check, neumann_variant, read_report_json, sweep_theorem11,
    ConvergenceReport, ReportFormat,
};
use thintube_core::tube3d::{
    assemble_ghat, form_comparison_check, reduction_check, write_coordinate_text, Grid3D,
};

use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "thintube",
    version,
    about = "Spectral analysis of Dirichlet Laplacians on thin deformed tubes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Tube3dMode {
    /// curved 3D form vs matched effective 1D operator
    Reduction,
    /// curved 3D form vs its flat companion
    Forms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the cross-section modes and geometric constants
    Section {
        /// study config (section taken from it unless --shape is given)
        #[arg(long)]
        config: Option<PathBuf>,
        /// disk | rectangle (direct specification)
        #[arg(long)]
        shape: Option<String>,
        #[arg(long)]
        radius: Option<f64>,
        /// center as "x,y"
        #[arg(long)]
        center: Option<String>,
        /// rectangle x-range as "lo,hi"
        #[arg(long)]
        x_range: Option<String>,
        /// rectangle y-range as "lo,hi"
        #[arg(long)]
        y_range: Option<String>,
        /// cells per unit length
        #[arg(long, default_value_t = 96)]
        n: usize,
        /// write a JSON summary here
        #[arg(long)]
        out: Option<PathBuf>,
        /// dump u0 on the full grid as little-endian f64
        #[arg(long)]
        dump_grid: Option<PathBuf>,
    },
    /// Validate the deformation profile and report geometric bounds
    Geometry {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Assemble the effective potential and solve the 1D operator at one eps
    Effective {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epsilon: f64,
        /// write the sampled potential as CSV (s, theta, zeta, W)
        #[arg(long)]
        out: Option<PathBuf>,
        /// write the potential and scaled spectrum as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Sweep eps against the oscillator limits (Dirichlet ends)
    Sweep(SweepArgs),
    /// Same sweep with Neumann ends
    Neumann(SweepArgs),
    /// 3D straightened-form convergence checks
    Tube3d {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "reduction")]
        mode: Tube3dMode,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        /// export the curved-form stiffness at the largest eps
        /// (coordinate text: header `n nnz`, lines `row col value`)
        #[arg(long)]
        export_matrix: Option<PathBuf>,
    },
    /// Essential-spectrum threshold check (tubes on the whole line)
    Essential {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Re-emit a stored JSON report (deterministic serialization)
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: OutFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// override the config's eps list, comma-separated
    #[arg(long)]
    pub epsilons: Option<String>,
    #[arg(long)]
    pub j_max: Option<usize>,
    #[arg(long)]
    pub section_n: Option<usize>,
    /// write the report CSV here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// write the full report JSON here
    #[arg(long)]
    pub json: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

fn config_failure(msg: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: format!("config error: {msg}"),
    }
}

fn numerical_failure(err: CoreError) -> Failure {
    let code = match err {
        CoreError::InvalidArgument(_) | CoreError::Domain(_) | CoreError::OutOfHypothesis(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_NUMERICAL,
    };
    Failure {
        code,
        message: format!("error: {err}"),
    }
}

/// Parse and run; returns (exit code, stdout text, stderr text).
pub fn run<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version on stdout with success
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            return if code == EXIT_OK {
                (code, rendered, String::new())
            } else {
                (code, String::new(), rendered)
            };
        }
    };
    match dispatch(cli.command) {
        Ok(out) => (EXIT_OK, out, String::new()),
        Err(f) => (f.code, String::new(), f.message + "\n"),
    }
}

fn threads_from_env() -> usize {
    std::env::var("THINTUBE_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

fn dispatch(cmd: Command) -> Result<String, Failure> {
    match cmd {
        Command::Section {
            config,
            shape,
            radius,
            center,
            x_range,
            y_range,
            n,
            out,
            dump_grid,
        } => section_cmd(config, shape, radius, center, x_range, y_range, n, out, dump_grid),
        Command::Geometry { config, samples } => geometry_cmd(&config, samples),
        Command::Effective {
            config,
            epsilon,
            out,
            json,
        } => effective_cmd(&config, epsilon, out, json),
        Command::Sweep(args) => sweep_cmd(args, false),
        Command::Neumann(args) => sweep_cmd(args, true),
        Command::Tube3d {
            config,
            mode,
            out,
            json,
            export_matrix,
        } => tube3d_cmd(&config, mode, out, json, export_matrix),
        Command::Essential { config, json } => essential_cmd(&config, json),
        Command::Report { input, format, out } => report_cmd(&input, format, &out),
    }
}

fn parse_pair(text: &str, what: &str) -> Result<[f64; 2], Failure> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(config_failure(format!("{what} needs two comma-separated numbers")));
    }
    let a = parts[0].trim().parse().map_err(|_| config_failure(format!("bad {what}")))?;
    let b = parts[1].trim().parse().map_err(|_| config_failure(format!("bad {what}")))?;
    Ok([a, b])
}

#[allow(clippy::too_many_arguments)]
fn section_cmd(
    config: Option<PathBuf>,
    shape: Option<String>,
    radius: Option<f64>,
    center: Option<String>,
    x_range: Option<String>,
    y_range: Option<String>,
    n: usize,
    out: Option<PathBuf>,
    dump_grid: Option<PathBuf>,
) -> Result<String, Failure> {
    let domain = if let Some(shape) = shape {
        match shape.as_str() {
            "disk" => CrossSectionDomain::Disk {
                radius: radius.ok_or_else(|| config_failure("disk needs --radius"))?,
                center: center
                    .map(|c| parse_pair(&c, "--center"))
                    .transpose()?
                    .unwrap_or([0.0, 0.0]),
            },
            "rectangle" => CrossSectionDomain::Rectangle {
                x_range: parse_pair(
                    &x_range.ok_or_else(|| config_failure("rectangle needs --x-range"))?,
                    "--x-range",
                )?,
                y_range: parse_pair(
                    &y_range.ok_or_else(|| config_failure("rectangle needs --y-range"))?,
                    "--y-range",
                )?,
            },
            other => return Err(config_failure(format!("unknown shape `{other}`"))),
        }
    } else if let Some(path) = config {
        RunConfig::load(&path)
            .and_then(|c| c.section())
            .map_err(config_failure)?
    } else {
        return Err(config_failure("section needs --shape or --config"));
    };
    domain.validate().map_err(numerical_failure)?;

    let modes = solve_modes(&domain, n).map_err(numerical_failure)?;
    let consts = modes.constants();

    let mut text = String::new();
    let _ = writeln!(text, "section modes at resolution {n} (cells per unit)");
    let _ = writeln!(text, "  interior nodes  {}", modes.grid.interior_count());
    let _ = writeln!(text, "  lambda0         {}", sig12(modes.lambda0));
    let _ = writeln!(text, "  lambda1         {}", sig12(modes.lambda1));
    let _ = writeln!(text, "  C1              {}", sig12(consts.c1));
    let _ = writeln!(text, "  C2              {}", sig12(consts.c2));
    let _ = writeln!(text, "  C3              {}", sig12(consts.c3));
    let _ = writeln!(
        text,
        "  F               ({}, {})",
        sig12(consts.f[0]),
        sig12(consts.f[1])
    );
    let _ = writeln!(text, "  rho_S           {}", sig12(consts.rho));

    if let Some(json_path) = &out {
        let grid_path = dump_grid
            .clone()
            .unwrap_or_else(|| json_path.with_extension("u0.bin"));
        modes
            .export(json_path, &grid_path)
            .map_err(numerical_failure)?;
        let _ = writeln!(text, "wrote {} and {}", json_path.display(), grid_path.display());
    } else if let Some(grid_path) = &dump_grid {
        let json_path = grid_path.with_extension("json");
        modes
            .export(&json_path, grid_path)
            .map_err(numerical_failure)?;
        let _ = writeln!(text, "wrote {} and {}", json_path.display(), grid_path.display());
    }
    Ok(text)
}

fn geometry_cmd(config: &Path, samples: Option<usize>) -> Result<String, Failure> {
    let cfg = RunConfig::load(config).map_err(config_failure)?;
    let g = cfg.geometry().map_err(config_failure)?;
    let section = cfg.section().map_err(config_failure)?;
    let samples = samples.unwrap_or(cfg.samples);

    let report = validate_deformation(&g.h, g.interval, samples);
    let rho = section.rho();
    let eps_max = g.epsilon_max(0.1, rho).map_err(numerical_failure)?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "deformation profile: {}",
        if report.valid {
            "consistent with the hypotheses on the sampling grid"
        } else {
            "INVALID"
        }
    );
    for clause in &report.clauses {
        let _ = writeln!(
            text,
            "  [{}] {:24} {}",
            if clause.passed { "ok" } else { "FAIL" },
            clause.name,
            clause.detail
        );
    }
    let _ = writeln!(text, "  M                      {}", sig12(report.max_value));
    let _ = writeln!(
        text,
        "  quadratic coefficient  {}",
        sig12(report.quadratic_coefficient)
    );
    if let Some(n_est) = report.limsup_estimate {
        let _ = writeln!(text, "  limsup estimate        {}", sig12(n_est));
    }
    let _ = writeln!(text, "  rho_S                  {}", sig12(rho));
    let _ = writeln!(
        text,
        "  eps_max (beta > 0.1)   {}",
        if eps_max.is_finite() {
            sig12(eps_max)
        } else {
            "unbounded (straight tube)".to_string()
        }
    );
    if !report.valid {
        return Err(Failure {
            code: EXIT_CONFIG,
            message: text,
        });
    }
    Ok(text)
}

fn effective_cmd(
    config: &Path,
    epsilon: f64,
    out: Option<PathBuf>,
    json: Option<PathBuf>,
) -> Result<String, Failure> {
    let cfg = RunConfig::load(config).map_err(config_failure)?;
    let study = cfg.study(threads_from_env()).map_err(config_failure)?;
    let g = &study.geometry;

    let modes = solve_modes(&study.section, study.section_resolution).map_err(numerical_failure)?;
    let consts = modes.constants();
    let c_window = g.interval.window_or(study.window_cap);
    let c = c_constant(g, &consts, c_window, study.samples);
    let window = auto_window(
        g,
        &consts,
        modes.lambda0,
        epsilon,
        study.j_max,
        c,
        study.window_cap,
    )
    .map_err(numerical_failure)?;
    let op = assemble_t(
        g,
        &consts,
        modes.lambda0,
        epsilon,
        window,
        study.bc,
        c,
        study.n_1d,
    )
    .map_err(numerical_failure)?;
    let scaled = scaled_spectrum(&op, study.j_max).map_err(numerical_failure)?;
    let spec = WeoSpec::new(modes.lambda0, g.max_h()).map_err(numerical_failure)?;
    let mu = weo_spectrum_exact(&spec, study.j_max);

    let mut text = String::new();
    let _ = writeln!(text, "effective operator at eps = {}", sig12(epsilon));
    let _ = writeln!(
        text,
        "  window [{}, {}], {} nodes, shift c = {}",
        sig12(window.0),
        sig12(window.1),
        op.matrix.n(),
        sig12(c)
    );
    for w in &op.warnings {
        let _ = writeln!(text, "  warning: {w}");
    }
    let _ = writeln!(text, "  j   eps*(l_j - c)      mu_j               rel.dev");
    for (j, (s, m)) in scaled.iter().zip(&mu).enumerate() {
        let _ = writeln!(
            text,
            "  {j}   {}  {}  {:+.3e}",
            sig12(*s),
            sig12(*m),
            (s - m) / m
        );
    }
    if let Some(path) = out {
        write_potential_csv(&op.potential, &path).map_err(numerical_failure)?;
        let _ = writeln!(text, "wrote {}", path.display());
    }
    if let Some(path) = json {
        let payload = serde_json::json!({
            "potential": &op.potential,
            "scaled_spectrum": &scaled,
            "mu": &mu,
            "window": [window.0, window.1],
            "warnings": &op.warnings,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&payload).unwrap() + "\n")
            .map_err(|e| Failure {
                code: EXIT_NUMERICAL,
                message: format!("cannot write {}: {e}", path.display()),
            })?;
        let _ = writeln!(text, "wrote {}", path.display());
    }
    Ok(text)
}

fn apply_overrides(cfg: &mut RunConfig, args: &SweepArgs) -> Result<(), Failure> {
    if let Some(eps) = &args.epsilons {
        let parsed: Result<Vec<f64>, _> =
            eps.split(',').map(|t| t.trim().parse::<f64>()).collect();
        cfg.epsilons =
            parsed.map_err(|_| config_failure(format!("bad --epsilons list `{eps}`")))?;
    }
    if let Some(j) = args.j_max {
        cfg.j_max = j;
    }
    if let Some(n) = args.section_n {
        cfg.section_n = n;
    }
    Ok(())
}

fn summarize_report(report: &ConvergenceReport) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "study: {}", report.meta.study);
    let _ = writeln!(
        text,
        "  lambda0 = {}, M = {}, c = {}",
        sig12(report.meta.lambda0),
        sig12(report.meta.max_h),
        sig12(report.meta.shift_c)
    );
    let _ = writeln!(
        text,
        "  j   extrapolated        reference mu_j      deviation   fitted order"
    );
    for fit in &report.fits {
        let mu = report
            .rows
            .iter()
            .find(|r| r.j == fit.j)
            .map(|r| r.reference)
            .unwrap_or(f64::NAN);
        let _ = writeln!(
            text,
            "  {}   {}  {}  {}  {}{}",
            fit.j,
            fit.extrapolated.map_or("-".into(), sig12),
            sig12(mu),
            fit.deviation.map_or("-".into(), sig12),
            fit.extrapolation_order
                .map_or("-".into(), |o| format!("{o:.3}")),
            if fit.flags.is_empty() {
                String::new()
            } else {
                format!("  [{}]", fit.flags.join(", "))
            }
        );
    }
    for err in &report.meta.errors {
        let _ = writeln!(text, "  row failed: {err}");
    }
    text
}

fn write_outputs(
    report: &ConvergenceReport,
    out: &Option<PathBuf>,
    json: &Option<PathBuf>,
    cfg_output: Option<&config::OutputSpec>,
    text: &mut String,
) -> Result<(), Failure> {
    let csv_path = out
        .clone()
        .or_else(|| cfg_output.and_then(|o| o.csv.clone().map(PathBuf::from)));
    let json_path = json
        .clone()
        .or_else(|| cfg_output.and_then(|o| o.json.clone().map(PathBuf::from)));
    if let Some(p) = csv_path {
        emit_report(report, ReportFormat::Csv, &p).map_err(numerical_failure)?;
        let _ = writeln!(text, "wrote {}", p.display());
    }
    if let Some(p) = json_path {
        emit_report(report, ReportFormat::Json, &p).map_err(numerical_failure)?;
        let _ = writeln!(text, "wrote {}", p.display());
    }
    Ok(())
}

fn sweep_cmd(args: SweepArgs, neumann: bool) -> Result<String, Failure> {
    let mut cfg = RunConfig::load(&args.config).map_err(config_failure)?;
    apply_overrides(&mut cfg, &args)?;
    let study = cfg.study(threads_from_env()).map_err(config_failure)?;
    let report = if neumann {
        neumann_variant(&study)
    } else {
        sweep_theorem11(&study)
    }
    .map_err(numerical_failure)?;

    let mut text = summarize_report(&report);
    write_outputs(&report, &args.out, &args.json, cfg.output.as_ref(), &mut text)?;
    if !report.meta.errors.is_empty() {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{text}some eps rows failed"),
        });
    }
    Ok(text)
}

fn tube3d_cmd(
    config: &Path,
    mode: Tube3dMode,
    out: Option<PathBuf>,
    json: Option<PathBuf>,
    export_matrix: Option<PathBuf>,
) -> Result<String, Failure> {
    let cfg = RunConfig::load(config).map_err(config_failure)?;
    let t3 = cfg.tube3d().map_err(config_failure)?;
    let report = match mode {
        Tube3dMode::Reduction => reduction_check(&t3),
        Tube3dMode::Forms => form_comparison_check(&t3),
    }
    .map_err(numerical_failure)?;

    let mut text = String::new();
    let _ = writeln!(text, "study: {}", report.meta.study);
    let _ = writeln!(text, "  j   fitted slope   r^2        flags");
    for fit in &report.fits {
        let _ = writeln!(
            text,
            "  {}   {}   {}   {}",
            fit.j,
            fit.rate.map_or("-".into(), |r| format!("{:.4}", r.slope)),
            fit.rate.map_or("-".into(), |r| format!("{:.6}", r.r_squared)),
            if fit.flags.is_empty() {
                "-".to_string()
            } else {
                fit.flags.join(", ")
            }
        );
    }
    for row in &report.rows {
        let _ = writeln!(
            text,
            "  eps {}  j {}  |diff| {}  spread {}",
            sig12(row.epsilon),
            row.j,
            sig12(row.abs_error),
            row.spread.map_or("-".into(), sig12),
        );
    }
    write_outputs(&report, &out, &json, cfg.output.as_ref(), &mut text)?;

    if let Some(path) = export_matrix {
        // assemble the curved form at the largest eps on the default grid
        let modes_grid = thintube_core::cross_section::MaskedGrid2::with_cell_counts(
            &t3.section,
            t3.y_cells,
            t3.y_cells,
        )
        .map_err(numerical_failure)?;
        let modes = thintube_core::cross_section::solve_modes_on_grid(
            t3.section.clone(),
            modes_grid,
            t3.y_cells,
        )
        .map_err(numerical_failure)?;
        let consts = modes.constants();
        let window = t3.geometry.interval.window_or(50.0);
        let c = c_constant(&t3.geometry, &consts, window, 4096);
        let grid3 = Grid3D::from_modes(window, t3.s_cells, &modes, t3.bc)
            .map_err(numerical_failure)?;
        let form = assemble_ghat(&t3.geometry, &modes, &grid3, t3.eps_list[0], c)
            .map_err(numerical_failure)?;
        write_coordinate_text(&form.stiffness, &path).map_err(numerical_failure)?;
        let _ = writeln!(text, "wrote {}", path.display());
    }
    Ok(text)
}

fn essential_cmd(config: &Path, json: Option<PathBuf>) -> Result<String, Failure> {
    let cfg = RunConfig::load(config).map_err(config_failure)?;
    let study = cfg.study(threads_from_env()).map_err(config_failure)?;
    let report = essential_spectrum_check(&study).map_err(numerical_failure)?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "essential-spectrum check: N = {}, M = {}, lambda0 = {}",
        sig12(report.n_estimate),
        sig12(report.max_h),
        sig12(report.lambda0)
    );
    for row in &report.rows {
        let _ = writeln!(
            text,
            "  eps {}  l0 {}  threshold {}  L {}  doubling {:.2e}  below-threshold {}  {}",
            sig12(row.epsilon),
            sig12(row.l0),
            sig12(row.threshold),
            sig12(row.window_l),
            row.doubling_shift_rel,
            row.count_below_threshold,
            if row.certified {
                "certified"
            } else {
                "no discrete eigenvalue certified at this eps"
            }
        );
    }
    for err in &report.errors {
        let _ = writeln!(text, "  row failed: {err}");
    }
    if let Some(p) = json {
        let payload = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&p, payload + "\n").map_err(|e| Failure {
            code: EXIT_NUMERICAL,
            message: format!("cannot write {}: {e}", p.display()),
        })?;
        let _ = writeln!(text, "wrote {}", p.display());
    }
    if !report.errors.is_empty() {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{text}some eps rows failed"),
        });
    }
    Ok(text)
}

fn report_cmd(input: &Path, format: OutFormat, out: &Path) -> Result<String, Failure> {
    let report = read_report_json(input).map_err(numerical_failure)?;
    let fmt = match format {
        OutFormat::Csv => ReportFormat::Csv,
        OutFormat::Json => ReportFormat::Json,
    };
    emit_report(&report, fmt, out).map_err(numerical_failure)?;
    Ok(format!("wrote {}\n", out.display()))
}
