//! Staged end-to-end run: aggregate, build weights, global statistics, Gi*,
//! bivariate LISA, classification, POI characterization and a run manifest.
//!
//! Every stage writes plain CSV/GeoJSON into the output directory and the
//! next stage can start from those files. [`run_pipeline`] chains the stages
//! in memory and produces the same bytes as running them one by one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::characterize::{compare_groups, count_pois, MwTable};
use crate::error::{Error, Result};
use crate::globalstats::{
    global_bivariate_moran, global_moran, GlobalStatResult, DEFAULT_PERMUTATIONS, DEFAULT_SEED,
};
use crate::grid::{aggregate_points, AggregationSummary, BBox, CellVariable, GridSpec, DEFAULT_CELL_SIZE};
use crate::io::{self, CellRecord};
use crate::localstats::{
    bivariate_local_moran, classify_hotspots, classify_lisa, getis_ord_gstar, group_sizes,
    HotspotClass, LisaQuadrant, LocalStatRow, DEFAULT_LISA_ALPHA, HOTSPOT_TIERS,
};
use crate::weights::{Contiguity, WeightsMatrix};

pub const CRASH: &str = "crash_count";
pub const HIGHG: &str = "highg_count";

pub mod files {
    pub const GRID: &str = "grid.json";
    pub const COUNTS: &str = "counts.csv";
    pub const GRID_GEOJSON: &str = "grid_counts.geojson";
    pub const WEIGHTS: &str = "weights.csv";
    pub const GLOBAL: &str = "global_stats.csv";
    pub const GI_STAR: &str = "gi_star.csv";
    pub const BIVARIATE: &str = "bivariate_lisa.csv";
    pub const CELLS: &str = "cells.csv";
    pub const HOTSPOTS: &str = "hotspots.geojson";
    pub const LISA: &str = "lisa.geojson";
    pub const LISA_GROUPS: &str = "lisa_groups.csv";
    pub const MANN_WHITNEY: &str = "mann_whitney.csv";
    pub const MANIFEST: &str = "manifest.json";
}

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE
}
fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_alpha() -> f64 {
    DEFAULT_LISA_ALPHA
}
fn default_group_a() -> LisaQuadrant {
    LisaQuadrant::HH
}
fn default_group_b() -> LisaQuadrant {
    LisaQuadrant::LH
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub crashes: PathBuf,
    pub highg: PathBuf,
    #[serde(default)]
    pub pois: Option<PathBuf>,
    pub bbox: Option<BBox>,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default)]
    pub weights: Contiguity,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub lisa_alpha: f64,
    #[serde(default = "default_alpha")]
    pub mw_alpha: f64,
    #[serde(default = "default_group_a")]
    pub group_a: LisaQuadrant,
    #[serde(default = "default_group_b")]
    pub group_b: LisaQuadrant,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            crashes: PathBuf::from("crashes.csv"),
            highg: PathBuf::from("highg.csv"),
            pois: None,
            bbox: None,
            cell_size: default_cell_size(),
            weights: Contiguity::Queen,
            permutations: default_permutations(),
            seed: default_seed(),
            lisa_alpha: default_alpha(),
            mw_alpha: default_alpha(),
            group_a: default_group_a(),
            group_b: default_group_b(),
            output_dir: default_output(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                line: j.line() as u64,
                message: j.to_string(),
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.crashes);
        resolve(&mut cfg.highg);
        if let Some(p) = cfg.pois.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bbox.is_none() {
            return Err(Error::validation("a bounding box is required"));
        }
        if self.permutations < 1 {
            return Err(Error::validation("permutations must be >= 1"));
        }
        for (name, a) in [("lisa_alpha", self.lisa_alpha), ("mw_alpha", self.mw_alpha)] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::validation(format!("{name} must lie in (0, 1), got {a}")));
            }
        }
        for g in [self.group_a, self.group_b] {
            if !LisaQuadrant::PARTITION[..4].contains(&g) {
                return Err(Error::validation(format!(
                    "comparison groups must be HH, HL, LH or LL, got {g}"
                )));
            }
        }
        if self.group_a == self.group_b {
            return Err(Error::validation("comparison groups must differ"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let bbox = self
            .bbox
            .ok_or_else(|| Error::validation("a bounding box is required"))?;
        GridSpec::covering(&bbox, self.cell_size)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn write_file<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    let mut w = io::create(path)?;
    write(&mut w)
}

fn ensure_output_dir(cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))
}

/// Grid frame and the two aggregated count variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStage {
    pub grid: GridSpec,
    pub crash_summary: AggregationSummary,
    pub highg_summary: AggregationSummary,
    #[serde(skip)]
    pub crash: Option<CellVariable>,
    #[serde(skip)]
    pub highg: Option<CellVariable>,
}

impl GridStage {
    pub fn crash(&self) -> &CellVariable {
        self.crash.as_ref().expect("crash counts loaded")
    }

    pub fn highg(&self) -> &CellVariable {
        self.highg.as_ref().expect("high-G counts loaded")
    }
}

pub fn grid_stage(cfg: &PipelineConfig) -> Result<GridStage> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let crashes = io::read_points(&cfg.crashes, false)?;
    let highg = io::read_points(&cfg.highg, false)?;
    let c = aggregate_points(&crashes, &grid, CRASH);
    let h = aggregate_points(&highg, &grid, HIGHG);
    let stage = GridStage {
        grid,
        crash_summary: c.summary,
        highg_summary: h.summary,
        crash: Some(c.counts),
        highg: Some(h.counts),
    };
    ensure_output_dir(cfg)?;
    write_file(&cfg.out(files::GRID), |w| {
        serde_json::to_writer_pretty(&mut *w, &stage)?;
        Ok(())
    })?;
    write_file(&cfg.out(files::COUNTS), |w| {
        io::write_counts(w, &grid, &[stage.crash(), stage.highg()])
    })?;
    write_file(&cfg.out(files::GRID_GEOJSON), |w| {
        io::write_grid_geojson(w, "grid_counts", &grid, |id| {
            let (r, c) = grid.row_col(id);
            let mut m = serde_json::Map::new();
            m.insert("cell_id".into(), id.into());
            m.insert("row".into(), r.into());
            m.insert("col".into(), c.into());
            m.insert(CRASH.into(), stage.crash().values()[id].into());
            m.insert(HIGHG.into(), stage.highg().values()[id].into());
            m
        })
    })?;
    Ok(stage)
}

pub fn load_grid_stage(cfg: &PipelineConfig) -> Result<GridStage> {
    let path = cfg.out(files::GRID);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut stage: GridStage = serde_json::from_str(&text)?;
    let mut vars = io::read_counts(&cfg.out(files::COUNTS), &stage.grid, &[CRASH, HIGHG])?;
    stage.highg = vars.pop();
    stage.crash = vars.pop();
    Ok(stage)
}

/// Binary contiguity; Gi* and the Moran statistics derive their variants from it.
pub fn weights_stage(cfg: &PipelineConfig, grid: &GridSpec) -> Result<WeightsMatrix> {
    let w = WeightsMatrix::contiguity(grid, cfg.weights);
    ensure_output_dir(cfg)?;
    write_file(&cfg.out(files::WEIGHTS), |f| w.write_csv(f))?;
    Ok(w)
}

pub fn load_weights(cfg: &PipelineConfig, grid: &GridSpec) -> Result<WeightsMatrix> {
    let path = cfg.out(files::WEIGHTS);
    let w = WeightsMatrix::read_csv(io::open(&path)?, grid.n_cells()).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse { path: path.clone(), line, message },
        other => other,
    })?;
    if w.self_included() || w.standardization() != crate::weights::Standardization::Binary {
        return Err(Error::validation(format!(
            "{} must hold binary weights without self-neighbors",
            path.display()
        )));
    }
    Ok(w)
}

fn named_zero_variance(e: Error, names: &[&str]) -> Error {
    match e {
        Error::ZeroVariance(v) => {
            let name = match v.as_str() {
                "x" | "input" => names[0],
                "y" => names.get(1).copied().unwrap_or(names[0]),
                other => other,
            };
            Error::ZeroVariance(name.to_string())
        }
        other => other,
    }
}

pub fn global_stage(cfg: &PipelineConfig, counts: &GridStage, w: &WeightsMatrix) -> Result<Vec<GlobalStatResult>> {
    let rs = w.row_standardize();
    let (x, y) = (counts.crash().values(), counts.highg().values());
    let results = vec![
        global_moran(x, &rs, cfg.permutations, cfg.seed)
            .map_err(|e| named_zero_variance(e, &[CRASH]))?
            .named("moran_crash_count"),
        global_moran(y, &rs, cfg.permutations, cfg.seed)
            .map_err(|e| named_zero_variance(e, &[HIGHG]))?
            .named("moran_highg_count"),
        global_bivariate_moran(x, y, &rs, cfg.permutations, cfg.seed)
            .map_err(|e| named_zero_variance(e, &[CRASH, HIGHG]))?
            .named("bivariate_moran_crash_highg"),
    ];
    ensure_output_dir(cfg)?;
    write_file(&cfg.out(files::GLOBAL), |f| io::write_global(f, &results))?;
    Ok(results)
}

pub fn gi_star_stage(cfg: &PipelineConfig, counts: &GridStage, w: &WeightsMatrix) -> Result<Vec<LocalStatRow>> {
    let ws = w.include_self()?;
    let rows = getis_ord_gstar(counts.crash().values(), &ws, cfg.permutations, cfg.seed)
        .map_err(|e| named_zero_variance(e, &[CRASH]))?;
    ensure_output_dir(cfg)?;
    write_file(&cfg.out(files::GI_STAR), |f| io::write_local(f, &rows))?;
    Ok(rows)
}

pub fn bivariate_stage(cfg: &PipelineConfig, counts: &GridStage, w: &WeightsMatrix) -> Result<Vec<LocalStatRow>> {
    let rs = w.row_standardize();
    let rows = bivariate_local_moran(
        counts.crash().values(),
        counts.highg().values(),
        &rs,
        cfg.permutations,
        cfg.seed,
    )
    .map_err(|e| named_zero_variance(e, &[CRASH, HIGHG]))?;
    ensure_output_dir(cfg)?;
    write_file(&cfg.out(files::BIVARIATE), |f| io::write_local(f, &rows))?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub cells: Vec<CellRecord>,
    pub lisa_groups: Vec<(LisaQuadrant, usize)>,
    pub hotspot_groups: Vec<(HotspotClass, usize)>,
}

impl Classification {
    pub fn quadrants(&self) -> Vec<LisaQuadrant> {
        self.cells.iter().map(|c| c.lisa_quadrant).collect()
    }
}

pub fn classify_stage(
    cfg: &PipelineConfig,
    counts: &GridStage,
    gi: &[LocalStatRow],
    bv: &[LocalStatRow],
) -> Result<Classification> {
    let grid = &counts.grid;
    let n = grid.n_cells();
    if gi.len() != n || bv.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: gi.len().min(bv.len()),
        });
    }
    let hot = classify_hotspots(gi);
    let quad = classify_lisa(bv, cfg.lisa_alpha)?;
    let cells: Vec<CellRecord> = (0..n)
        .map(|id| {
            let (row, col) = grid.row_col(id);
            CellRecord {
                cell_id: id,
                row,
                col,
                crash_count: counts.crash().values()[id],
                highg_count: counts.highg().values()[id],
                gi_star: gi[id].statistic,
                gi_p: gi[id].pseudo_p,
                hotspot_class: hot[id],
                bv_moran: bv[id].statistic,
                bv_lag: bv[id].lag,
                bv_p: bv[id].pseudo_p,
                lisa_quadrant: quad[id],
            }
        })
        .collect();
    let lisa_groups = group_sizes(&quad, &LisaQuadrant::PARTITION);
    let hotspot_groups = group_sizes(&hot, HotspotClass::ALL);

    ensure_output_dir(cfg)?;
    write_file(&cfg.out(files::CELLS), |f| io::write_cells(f, &cells))?;
    write_file(&cfg.out(files::HOTSPOTS), |f| {
        io::write_grid_geojson(f, "gi_star_hotspots", grid, |id| {
            let mut m = cells[id].properties();
            m.insert("hotspot_label".into(), cells[id].hotspot_class.label().into());
            m
        })
    })?;
    write_file(&cfg.out(files::LISA), |f| {
        io::write_grid_geojson(f, "bivariate_lisa", grid, |id| {
            let mut m = cells[id].properties();
            m.insert("lisa_label".into(), cells[id].lisa_quadrant.label().into());
            m
        })
    })?;
    write_file(&cfg.out(files::LISA_GROUPS), |f| io::write_lisa_groups(f, &lisa_groups))?;
    Ok(Classification {
        cells,
        lisa_groups,
        hotspot_groups,
    })
}

/// Mann-Whitney table; `None` when no POI file is configured.
pub fn characterize_stage(
    cfg: &PipelineConfig,
    grid: &GridSpec,
    quadrants: &[LisaQuadrant],
) -> Result<Option<(MwTable, usize)>> {
    let Some(path) = cfg.pois.as_ref() else {
        return Ok(None);
    };
    let pois = io::read_points(path, true)?;
    let features = count_pois(&pois, grid);
    let table = compare_groups(&features, quadrants, cfg.group_a, cfg.group_b, cfg.mw_alpha)?;
    ensure_output_dir(cfg)?;
    write_file(&cfg.out(files::MANN_WHITNEY), |f| io::write_mann_whitney(f, &table))?;
    Ok(Some((table, features.dropped())))
}

pub fn load_quadrants(cfg: &PipelineConfig) -> Result<Vec<LisaQuadrant>> {
    Ok(io::read_cells(&cfg.out(files::CELLS))?
        .into_iter()
        .map(|c| c.lisa_quadrant)
        .collect())
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub grid: GridStage,
    pub global: Vec<GlobalStatResult>,
    pub classification: Classification,
    pub mann_whitney: Option<MwTable>,
    pub poi_dropped: usize,
}

fn input_entry(role: &str, path: &Path, summary: Option<&AggregationSummary>) -> Result<Value> {
    let mut v = json!({
        "role": role,
        "path": path.to_string_lossy(),
        "sha256": io::sha256_file(path)?,
    });
    if let Some(s) = summary {
        v["in_extent"] = s.in_extent.into();
        v["dropped"] = s.dropped.into();
    }
    Ok(v)
}

fn write_manifest(cfg: &PipelineConfig, report: &RunReport) -> Result<()> {
    let mut inputs = vec![
        input_entry("crashes", &cfg.crashes, Some(&report.grid.crash_summary))?,
        input_entry("highg", &cfg.highg, Some(&report.grid.highg_summary))?,
    ];
    if let Some(p) = &cfg.pois {
        let mut v = input_entry("pois", p, None)?;
        v["dropped"] = report.poi_dropped.into();
        inputs.push(v);
    }
    let mut outputs = Vec::new();
    for name in [
        files::GRID,
        files::COUNTS,
        files::GRID_GEOJSON,
        files::WEIGHTS,
        files::GLOBAL,
        files::GI_STAR,
        files::BIVARIATE,
        files::CELLS,
        files::HOTSPOTS,
        files::LISA,
        files::LISA_GROUPS,
        files::MANN_WHITNEY,
    ] {
        let path = cfg.out(name);
        if path.exists() && (name != files::MANN_WHITNEY || report.mann_whitney.is_some()) {
            outputs.push(json!({ "file": name, "sha256": io::sha256_file(&path)? }));
        }
    }
    let groups = |sizes: &[(LisaQuadrant, usize)]| -> Value {
        sizes.iter().map(|(q, n)| (q.code().to_string(), Value::from(*n))).collect::<serde_json::Map<_, _>>().into()
    };
    let hot: serde_json::Map<String, Value> = report
        .classification
        .hotspot_groups
        .iter()
        .map(|(h, n)| (h.code().to_string(), Value::from(*n)))
        .collect();
    let manifest = json!({
        "tool": "hotspot",
        "version": env!("CARGO_PKG_VERSION"),
        "parameters": {
            "bbox": cfg.bbox,
            "cell_size": cfg.cell_size,
            "contiguity": cfg.weights,
            "permutations": cfg.permutations,
            "seed": cfg.seed,
            "lisa_alpha": cfg.lisa_alpha,
            "mw_alpha": cfg.mw_alpha,
            "group_a": cfg.group_a,
            "group_b": cfg.group_b,
            "hotspot_tiers": HOTSPOT_TIERS,
            "gi_star_weights": "binary contiguity with self-inclusion",
            "moran_weights": "row-standardized contiguity",
            "rng": "ChaCha8, stream = cell id (local) or replicate index (global)",
            "pseudo_p": "(1 + #{|T - E[T]| >= |T_obs - E[T]|}) / (1 + permutations)",
        },
        "grid": report.grid.grid,
        "inputs": inputs,
        "global_statistics": report.global,
        "lisa_groups": groups(&report.classification.lisa_groups),
        "hotspot_groups": hot,
        "mann_whitney": report.mann_whitney.as_ref().map(|t| json!({
            "group_a": t.group_a,
            "group_b": t.group_b,
            "n_a": t.n_a,
            "n_b": t.n_b,
            "tests": t.n_tests(),
            "alpha": t.alpha,
        })),
        "outputs": outputs,
    });
    write_file(&cfg.out(files::MANIFEST), |f| {
        serde_json::to_writer_pretty(&mut *f, &manifest)?;
        Ok(())
    })
}

/// Runs every stage in order and writes the manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    let grid = grid_stage(cfg)?;
    let w = weights_stage(cfg, &grid.grid)?;
    let global = global_stage(cfg, &grid, &w)?;
    let gi = gi_star_stage(cfg, &grid, &w)?;
    let bv = bivariate_stage(cfg, &grid, &w)?;
    let classification = classify_stage(cfg, &grid, &gi, &bv)?;
    let mw = characterize_stage(cfg, &grid.grid, &classification.quadrants())?;
    let (mann_whitney, poi_dropped) = match mw {
        Some((t, d)) => (Some(t), d),
        None => (None, 0),
    };
    let report = RunReport {
        grid,
        global,
        classification,
        mann_whitney,
        poi_dropped,
    };
    write_manifest(cfg, &report)?;
    Ok(report)
}
