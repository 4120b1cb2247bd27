use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hotspot_core::grid::{BBox, GridSpec};
use hotspot_core::io;
use hotspot_core::localstats::LisaQuadrant;
use hotspot_core::pipeline::{self, files, PipelineConfig};
use hotspot_core::synth::{gen_points, Blob, Scenario};
use hotspot_core::weights::Contiguity;

/// Crash hotspot and near-miss concordance analysis on a regular grid.
#[derive(Parser, Debug)]
#[command(name = "hotspot", version)]
struct Cli {
    /// Worker threads for the permutation loops (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate crash and high-G points onto the grid.
    Grid(ConfigArgs),
    /// Write the binary contiguity weights.
    Weights(ConfigArgs),
    /// Global Moran's I for both variables and the bivariate global Moran.
    Global(ConfigArgs),
    /// Getis-Ord Gi* on crash counts.
    Local(ConfigArgs),
    /// Bivariate local Moran of crash counts against high-G counts.
    Bivariate(ConfigArgs),
    /// Hotspot tiers and LISA quadrants, plus the GeoJSON layers.
    Classify(ConfigArgs),
    /// Mann-Whitney comparison of POI counts between two LISA groups.
    Characterize(ConfigArgs),
    /// Run every stage and write the manifest.
    Pipeline(ConfigArgs),
    /// Generate synthetic point files and a matching config.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    crashes: Option<PathBuf>,
    #[arg(long)]
    highg: Option<PathBuf>,
    #[arg(long)]
    pois: Option<PathBuf>,
    /// min_x,min_y,max_x,max_y
    #[arg(long, value_parser = parse_bbox)]
    bbox: Option<BBox>,
    #[arg(long)]
    cell_size: Option<f64>,
    /// queen or rook
    #[arg(long)]
    weights: Option<Contiguity>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lisa_alpha: Option<f64>,
    #[arg(long)]
    mw_alpha: Option<f64>,
    #[arg(long)]
    group_a: Option<LisaQuadrant>,
    #[arg(long)]
    group_b: Option<LisaQuadrant>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scenario JSON; when absent the grid flags below describe one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    rows: usize,
    #[arg(long, default_value_t = 50)]
    cols: usize,
    #[arg(long, default_value_t = hotspot_core::grid::DEFAULT_CELL_SIZE)]
    cell_size: f64,
    #[arg(long, default_value_t = 2.0)]
    baseline: f64,
    /// row,col,radius,amplitude (repeatable)
    #[arg(long = "blob", value_parser = parse_blob)]
    blobs: Vec<Blob>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    coupling: f64,
    #[arg(long, default_value_t = hotspot_core::globalstats::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    output_dir: PathBuf,
}

fn parse_bbox(s: &str) -> Result<BBox, String> {
    let v = parse_floats(s, 4)?;
    Ok(BBox::new(v[0], v[1], v[2], v[3]))
}

fn parse_blob(s: &str) -> Result<Blob, String> {
    let v = parse_floats(s, 4)?;
    let idx = |x: f64| {
        if x >= 0.0 && x.fract() == 0.0 {
            Ok(x as usize)
        } else {
            Err(format!("expected a non-negative integer, got {x}"))
        }
    };
    Ok(Blob {
        row: idx(v[0])?,
        col: idx(v[1])?,
        radius: idx(v[2])?,
        amplitude: v[3],
    })
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(crashes, highg, cell_size, weights, permutations, seed, lisa_alpha, mw_alpha, group_a, group_b, output_dir);
        if self.pois.is_some() {
            cfg.pois = self.pois.clone();
        }
        if self.bbox.is_some() {
            cfg.bbox = self.bbox;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_globals(results: &[hotspot_core::globalstats::GlobalStatResult]) {
    for r in results {
        println!(
            "{}: I={:.6} E[I]={:.6} p={:.4} (K={}, seed={})",
            r.name, r.statistic, r.expected_under_null, r.pseudo_p, r.n_permutations, r.seed
        );
    }
}

fn print_groups(c: &pipeline::Classification) {
    let parts: Vec<String> = c.lisa_groups.iter().map(|(q, n)| format!("{}={n}", q.code())).collect();
    println!("lisa groups: {}", parts.join(" "));
    let parts: Vec<String> = c
        .hotspot_groups
        .iter()
        .map(|(h, n)| format!("{}={n}", h.code()))
        .collect();
    println!("hotspot classes: {}", parts.join(" "));
}

fn print_grid(g: &pipeline::GridStage) {
    println!(
        "grid: {} x {} cells of {} m ({} cells)",
        g.grid.n_rows,
        g.grid.n_cols,
        g.grid.cell_size,
        g.grid.n_cells()
    );
    println!("{}: {}", pipeline::CRASH, g.crash_summary);
    println!("{}: {}", pipeline::HIGHG, g.highg_summary);
}

fn print_mw(t: &hotspot_core::characterize::MwTable, dropped: usize) {
    let sig = t.results.iter().filter(|r| r.significant).count();
    println!(
        "mann-whitney: {} vs {} (n={} / {}), {} tests, {} significant at alpha={}, {} POIs dropped",
        t.group_a,
        t.group_b,
        t.n_a,
        t.n_b,
        t.n_tests(),
        sig,
        t.alpha,
        dropped
    );
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Grid(a) => {
            let cfg = a.resolve()?;
            print_grid(&pipeline::grid_stage(&cfg)?);
        }
        Command::Weights(a) => {
            let cfg = a.resolve()?;
            let g = pipeline::load_grid_stage(&cfg)?;
            let w = pipeline::weights_stage(&cfg, &g.grid)?;
            println!(
                "weights: {} contiguity, {} cells, {} links, {} isolates",
                cfg.weights,
                w.n(),
                w.nnz(),
                w.isolates().len()
            );
        }
        Command::Global(a) => {
            let cfg = a.resolve()?;
            let g = pipeline::load_grid_stage(&cfg)?;
            let w = pipeline::load_weights(&cfg, &g.grid)?;
            print_globals(&pipeline::global_stage(&cfg, &g, &w)?);
        }
        Command::Local(a) => {
            let cfg = a.resolve()?;
            let g = pipeline::load_grid_stage(&cfg)?;
            let w = pipeline::load_weights(&cfg, &g.grid)?;
            let rows = pipeline::gi_star_stage(&cfg, &g, &w)?;
            let sig = rows.iter().filter(|r| r.pseudo_p.is_some_and(|p| p <= 0.05)).count();
            println!("gi_star: {} cells, {} with pseudo p <= 0.05", rows.len(), sig);
        }
        Command::Bivariate(a) => {
            let cfg = a.resolve()?;
            let g = pipeline::load_grid_stage(&cfg)?;
            let w = pipeline::load_weights(&cfg, &g.grid)?;
            let rows = pipeline::bivariate_stage(&cfg, &g, &w)?;
            let sig = rows
                .iter()
                .filter(|r| r.pseudo_p.is_some_and(|p| p <= cfg.lisa_alpha))
                .count();
            println!(
                "bivariate lisa: {} cells, {} with pseudo p <= {}",
                rows.len(),
                sig,
                cfg.lisa_alpha
            );
        }
        Command::Classify(a) => {
            let cfg = a.resolve()?;
            let g = pipeline::load_grid_stage(&cfg)?;
            let gi = io::read_local(&cfg.output_dir.join(files::GI_STAR))?;
            let bv = io::read_local(&cfg.output_dir.join(files::BIVARIATE))?;
            print_groups(&pipeline::classify_stage(&cfg, &g, &gi, &bv)?);
        }
        Command::Characterize(a) => {
            let cfg = a.resolve()?;
            if cfg.pois.is_none() {
                anyhow::bail!(hotspot_core::Error::Validation(
                    "characterize needs a POI file (--pois)".into()
                ));
            }
            let g = pipeline::load_grid_stage(&cfg)?;
            let quads = pipeline::load_quadrants(&cfg)?;
            if let Some((t, dropped)) = pipeline::characterize_stage(&cfg, &g.grid, &quads)? {
                print_mw(&t, dropped);
            }
        }
        Command::Pipeline(a) => {
            let cfg = a.resolve()?;
            let report = pipeline::run_pipeline(&cfg)?;
            print_grid(&report.grid);
            print_globals(&report.global);
            print_groups(&report.classification);
            if let Some(t) = &report.mann_whitney {
                print_mw(t, report.poi_dropped);
            }
            println!("outputs written to {}", cfg.output_dir.display());
        }
        Command::Synth(a) => synth(&a)?,
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let scenario = match &a.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<Scenario>(&text)
                .map_err(|e| hotspot_core::Error::Parse {
                    path: path.clone(),
                    line: e.line() as u64,
                    message: e.to_string(),
                })?
        }
        None => {
            let grid = GridSpec::from_parts(0.0, 0.0, a.cell_size, a.rows, a.cols)?;
            let mut s = Scenario::new(grid, a.baseline, a.seed);
            s.blobs = a.blobs.clone();
            s.coupling = a.coupling;
            s
        }
    };
    let pts = gen_points(&scenario)?;
    let dir = &a.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, p: &[hotspot_core::grid::EventPoint], kind: bool| -> Result<()> {
        let path = dir.join(name);
        io::write_points(io::create(&path)?, p, kind)?;
        Ok(())
    };
    write("crashes.csv", &pts.crashes, false)?;
    write("highg.csv", &pts.highg, false)?;
    let g = scenario.grid;
    let (max_x, max_y) = g.extent_max();
    let mut cfg = PipelineConfig {
        crashes: PathBuf::from("crashes.csv"),
        highg: PathBuf::from("highg.csv"),
        bbox: Some(BBox::new(g.origin_x, g.origin_y, max_x, max_y)),
        cell_size: g.cell_size,
        seed: scenario.seed,
        output_dir: PathBuf::from("out"),
        ..PipelineConfig::default()
    };
    if !scenario.poi_layers.is_empty() {
        write("pois.csv", &pts.pois, true)?;
        cfg.pois = Some(PathBuf::from("pois.csv"));
    }
    std::fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&scenario)?)?;
    std::fs::write(dir.join("config.json"), cfg.to_json()?)?;
    println!(
        "synth: {} x {} grid, {} crashes, {} high-G events, {} POIs -> {}",
        g.n_rows,
        g.n_cols,
        pts.crashes.len(),
        pts.highg.len(),
        pts.pois.len(),
        Path::new(dir).join("config.json").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<hotspot_core::Error>())
                .map_or(2, |c| c.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
