//! End-to-end drivers: reconstruction, error-bound verification, the noise
//! benchmark and center selection, each with stage-tagged errors and
//! `key=value` diagnostics.

use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cover::{select_centers, CoverParams, SphericalCover};
use crate::distance::{compare, DistanceReport};
use crate::exact::{assemble, solve, ExactOptions};
use crate::io::{load_points, save_mesh, MeshFormat, PointFormat};
use crate::isosurface::{extract, remove_small_fragments, ExtractOptions, ExtractStats, DEFAULT_MAX_CORNER_SAMPLES};
use crate::mesh::QuadMesh;
use crate::noise::{inject_noise, NoiseSpec};
use crate::normals::{estimate_normals_pca, DEFAULT_NEIGHBORS};
use crate::octree::{build_octree, DEFAULT_LEAF_CAPACITY};
use crate::points::normalize_to_unit_box;
use crate::quasi::{
    build_model, eta_threshold, lemma2_bound, tune_parameters_with, BoundReport, HrbfModel, TuneOptions, TuningParams,
};
use crate::{Error, HermitePointSet, Result, Similarity};

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    /// Amplifier on the base support length.
    pub s: f64,
    /// Voxel width in normalized coordinates.
    pub width: f64,
    pub center_select: bool,
    pub noisy_mode: bool,
    pub eta_override: Option<f64>,
    pub min_fragment_faces: usize,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub seed: u64,
    pub cover: CoverParams,
    pub max_corner_samples: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            s: 1.0,
            width: 0.01,
            center_select: false,
            noisy_mode: false,
            eta_override: None,
            min_fragment_faces: 10,
            threads: None,
            seed: 0,
            cover: CoverParams::default(),
            max_corner_samples: DEFAULT_MAX_CORNER_SAMPLES,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 1.0) || !self.s.is_finite() {
            return Err(Error::InvalidInput(format!(
                "amplifier s must be at least 1, got {}",
                self.s
            )));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::InvalidInput(format!(
                "voxel width must be positive, got {}",
                self.width
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidInput("thread count must be positive".into()));
        }
        Ok(())
    }
}

/// Ordered `key=value` report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub entries: Vec<(String, String)>,
}

impl Diagnostics {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

/// Runs `f` on a dedicated pool of `threads` workers, or inline when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn lap(&mut self, diag: &mut Diagnostics, stage: &str) {
        diag.push(
            &format!("time_{stage}_ms"),
            format!("{:.3}", self.0.elapsed().as_secs_f64() * 1e3),
        );
        self.0 = Instant::now();
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Mesh in the input's coordinates.
    pub mesh: QuadMesh,
    /// Mesh in normalized coordinates.
    pub normalized_mesh: QuadMesh,
    pub transform: Similarity,
    pub tuning: TuningParams,
    pub model: HrbfModel,
    pub cover: Option<SphericalCover>,
    pub stats: ExtractStats,
    pub diagnostics: Diagnostics,
}

/// Normalize, optionally select centers, tune, build the closed-form model,
/// extract and clean the mesh.
pub fn reconstruct(ps: &HermitePointSet, cfg: &ReconConfig) -> Result<Reconstruction> {
    staged("config", cfg.validate())?;
    with_threads(cfg.threads, || reconstruct_inner(ps, cfg))?
}

fn reconstruct_inner(ps: &HermitePointSet, cfg: &ReconConfig) -> Result<Reconstruction> {
    let mut diag = Diagnostics::default();
    let mut timer = Timer::start();
    diag.push("input_points", ps.len());
    diag.push("threads", rayon::current_num_threads());
    let (norm, transform) = staged("normalize", normalize_to_unit_box(ps))?;
    timer.lap(&mut diag, "normalize");

    let (centers, cover) = if cfg.center_select {
        let idx = staged("select", build_octree(&norm, DEFAULT_LEAF_CAPACITY))?;
        let cover = staged("select", select_centers(&norm, &idx, &cfg.cover, cfg.seed))?;
        diag.push("cover_min_doc", cover.min_doc());
        (norm.select(&cover.indices), Some(cover))
    } else {
        (norm.clone(), None)
    };
    diag.push("centers", centers.len());
    timer.lap(&mut diag, "select");

    let idx = staged("tune", build_octree(&centers, DEFAULT_LEAF_CAPACITY))?;
    let opts = TuneOptions {
        s: cfg.s,
        noisy_mode: cfg.noisy_mode,
        eta_override: cfg.eta_override,
    };
    let tuning = staged("tune", tune_parameters_with(&centers, &idx, &opts))?;
    push_tuning(&mut diag, &tuning);
    timer.lap(&mut diag, "tune");

    let model = staged("model", build_model(&centers, &tuning))?;
    timer.lap(&mut diag, "model");

    let extract_opts = ExtractOptions {
        width: cfg.width,
        origin: Some(norm.bbox.min),
        max_corner_samples: cfg.max_corner_samples,
    };
    let (raw, stats) = staged("extract", extract(model.field(), &extract_opts))?;
    diag.push("voxel_width", cfg.width);
    diag.push("blocks", stats.blocks);
    diag.push("corner_samples", stats.corner_samples);
    diag.push("active_voxels", stats.active_voxels);
    diag.push("faces_raw", stats.faces);
    timer.lap(&mut diag, "extract");

    let normalized_mesh = remove_small_fragments(&raw, cfg.min_fragment_faces);
    diag.push("faces", normalized_mesh.faces.len());
    diag.push("vertices", normalized_mesh.vertices.len());
    diag.push("fragment_faces_removed", raw.faces.len() - normalized_mesh.faces.len());
    diag.push("boundary_edges", normalized_mesh.boundary_edge_count());
    diag.push("components", normalized_mesh.face_components().1);
    let mesh = QuadMesh {
        vertices: normalized_mesh
            .vertices
            .iter()
            .map(|v| transform.apply_inverse(v))
            .collect(),
        vertex_normals: normalized_mesh.vertex_normals.clone(),
        faces: normalized_mesh.faces.clone(),
    };
    timer.lap(&mut diag, "postprocess");
    Ok(Reconstruction {
        mesh,
        normalized_mesh,
        transform,
        tuning,
        model,
        cover,
        stats,
        diagnostics: diag,
    })
}

fn push_tuning(diag: &mut Diagnostics, tp: &TuningParams) {
    diag.push("s", tp.s);
    diag.push("d_bar", tp.d_bar);
    diag.push("m", tp.m);
    diag.push("m_covering", tp.m_covering);
    diag.push("rho_min", tp.rho_min);
    diag.push("rho_max", tp.rho_max);
    diag.push("uniform_support", tp.uniform_support);
    diag.push("eta", tp.eta);
    diag.push("eta_threshold", eta_threshold(tp.m_bound(), tp.rho_min));
    diag.push("eta_overridden", tp.eta_overridden);
    diag.push("eta_bound_satisfied", tp.satisfies_eta_bound());
    diag.push("a_bar", tp.a_bar());
    match lemma2_bound(tp.a_bar(), tp.eta, tp.rho_max) {
        Some(b) => diag.push("lambda_error_bound", b),
        None => diag.push("lambda_error_bound", "n/a"),
    }
}

/// Loads `input`, reconstructs and writes the mesh (format from the
/// extension) and, optionally, the diagnostics.
pub fn run_reconstruct(
    input: &Path,
    output: &Path,
    diagnostics: Option<&Path>,
    cfg: &ReconConfig,
) -> Result<Reconstruction> {
    let mut timer = Timer::start();
    let format = staged("load", PointFormat::detect(input))?;
    let loaded = staged("load", load_points(input, format))?;
    let mut rec = reconstruct(&loaded.points, cfg)?;
    rec.diagnostics.push("rejected_normals", loaded.rejected_normals);
    timer.lap(&mut rec.diagnostics, "load_and_reconstruct");
    staged("save", save_mesh(&rec.mesh, output, MeshFormat::from_path(output)))?;
    timer.lap(&mut rec.diagnostics, "save");
    if let Some(path) = diagnostics {
        staged("save", rec.diagnostics.write(path))?;
    }
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub s: f64,
    pub noisy_mode: bool,
    pub eta_override: Option<f64>,
    /// Random subset size taken before normalization.
    pub subset: Option<usize>,
    pub seed: u64,
    pub exact: ExactOptions,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            s: 1.0,
            noisy_mode: false,
            eta_override: None,
            subset: None,
            seed: 0,
            exact: ExactOptions::default(),
        }
    }
}

/// Compares the closed-form coefficients with the exact regularized solution.
pub fn verify_bound(ps: &HermitePointSet, cfg: &VerifyConfig) -> Result<BoundReport> {
    let ps = match cfg.subset {
        Some(k) if k < ps.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut pick = rand::seq::index::sample(&mut rng, ps.len(), k).into_vec();
            pick.sort_unstable();
            ps.select(&pick)
        }
        _ => ps.clone(),
    };
    if ps.len() > cfg.exact.cap {
        return Err(Error::ExactCapExceeded {
            n: ps.len(),
            cap: cfg.exact.cap,
        }
        .in_stage("verify"));
    }
    let (norm, _) = staged("normalize", normalize_to_unit_box(&ps))?;
    let idx = staged("tune", build_octree(&norm, DEFAULT_LEAF_CAPACITY))?;
    let opts = TuneOptions {
        s: cfg.s,
        noisy_mode: cfg.noisy_mode,
        eta_override: cfg.eta_override,
    };
    let tp = staged("tune", tune_parameters_with(&norm, &idx, &opts))?;
    let model = staged("model", build_model(&norm, &tp))?;
    let sys = staged("exact", assemble(&norm, &tp.rho, tp.eta, &cfg.exact))?;
    let sol = staged("exact", solve(&sys))?;
    Ok(crate::quasi::verify_error_bound(&model, &tp, &sol))
}

pub const BOUND_CSV_HEADER: &str = "n,eta,a_bar,bound,measured,holds,exact_contraction";

/// One CSV row; bound and verdict read `n/a` when the bound's premise fails.
pub fn bound_csv_row(r: &BoundReport) -> String {
    let (bound, holds) = match r.bound_value {
        Some(b) => (format!("{b:e}"), r.holds.to_string()),
        None => ("n/a".to_string(), "n/a".to_string()),
    };
    format!(
        "{},{:e},{:e},{},{:e},{},{:e}",
        r.n, r.eta, r.a_bar, bound, r.measured_inf_error, holds, r.exact_contraction
    )
}

/// Loads `input` and writes a one-row bound report to `output` (stdout when `None`).
pub fn run_verify_bound(input: &Path, output: Option<&Path>, cfg: &VerifyConfig) -> Result<BoundReport> {
    let format = staged("load", PointFormat::detect(input))?;
    let loaded = staged("load", load_points(input, format))?;
    let report = verify_bound(&loaded.points, cfg)?;
    let text = format!("{BOUND_CSV_HEADER}\n{}\n", bound_csv_row(&report));
    write_text(output, &text)?;
    Ok(report)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => staged("save", std::fs::write(p, text).map_err(|e| Error::io(p, e))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io("<stdout>", e).in_stage("save"))
        }
    }
}

/// Fragments with less area than this (normalized units) are removed on
/// noise benchmark rows.
pub const NOISE_MIN_FRAGMENT_AREA: f64 = 0.5;

/// Noise levels paired with amplifiers.
pub const NOISE_SCHEDULE: [(f64, f64); 3] = [(10.0, 1.9), (30.0, 2.7), (60.0, 3.5)];

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBenchConfig {
    /// `(δ %, s)` per row; a clean `(0, 1)` baseline row is always run first.
    pub levels: Vec<(f64, f64)>,
    /// Reconstruction settings; `s` and `noisy_mode` are set per row.
    pub recon: ReconConfig,
    /// Uniform minimum support on noisy rows.
    pub noisy_mode: bool,
    /// Fragment area threshold, converted to a face count of `area / w²`
    /// (at least `recon.min_fragment_faces`).
    pub min_fragment_area: f64,
    pub normal_neighbors: usize,
    pub distance_samples: usize,
    pub seed: u64,
}

impl Default for NoiseBenchConfig {
    fn default() -> Self {
        NoiseBenchConfig {
            levels: NOISE_SCHEDULE.to_vec(),
            recon: ReconConfig::default(),
            min_fragment_area: NOISE_MIN_FRAGMENT_AREA,
            noisy_mode: true,
            normal_neighbors: DEFAULT_NEIGHBORS,
            distance_samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRow {
    pub delta_percent: f64,
    pub s: f64,
    pub distances: DistanceReport,
    pub components: usize,
    pub boundary_edges: usize,
    pub low_confidence_normals: usize,
}

pub const NOISE_CSV_HEADER: &str = "delta,forward_max,forward_avg,backward_max,backward_avg,s";

pub fn noise_csv_row(r: &NoiseRow) -> String {
    let d = &r.distances;
    format!(
        "{},{:e},{:e},{:e},{:e},{}",
        r.delta_percent, d.forward.max, d.forward.avg, d.backward.max, d.backward.avg, r.s
    )
}

/// Reconstructs `ps` clean and at each noise level (with PCA normals), and
/// measures both distances against `reference`.
pub fn noise_bench(ps: &HermitePointSet, reference: &QuadMesh, cfg: &NoiseBenchConfig) -> Result<Vec<NoiseRow>> {
    let mut rows = Vec::with_capacity(cfg.levels.len() + 1);
    let levels = std::iter::once((0.0, 1.0)).chain(cfg.levels.iter().copied());
    for (k, (delta, s)) in levels.enumerate() {
        let (noisy, low_confidence) = if delta > 0.0 {
            let spec = NoiseSpec {
                delta_percent: delta,
                seed: cfg.seed.wrapping_add(k as u64),
            };
            let (moved, report) = staged("noise", inject_noise(ps, &spec))?;
            log::info!(
                "noise {delta}%: {} points displaced, sigma {:e}, cap {:e}",
                report.displaced.len(),
                report.sigma,
                report.cap
            );
            let (renormed, nr) = staged(
                "normals",
                estimate_normals_pca(&moved.points, cfg.normal_neighbors, &ps.normals),
            )?;
            (renormed, nr.low_confidence)
        } else {
            (ps.clone(), 0)
        };
        let recon_cfg = ReconConfig {
            s,
            noisy_mode: cfg.noisy_mode && delta > 0.0,
            min_fragment_faces: cfg
                .recon
                .min_fragment_faces
                .max((cfg.min_fragment_area / (cfg.recon.width * cfg.recon.width)).ceil() as usize),
            ..cfg.recon.clone()
        };
        let rec = reconstruct(&noisy, &recon_cfg)?;
        let distances = staged(
            "distance",
            compare(reference, &rec.mesh, cfg.distance_samples, cfg.seed),
        )?;
        rows.push(NoiseRow {
            delta_percent: delta,
            s,
            distances,
            components: rec.normalized_mesh.face_components().1,
            boundary_edges: rec.normalized_mesh.boundary_edge_count(),
            low_confidence_normals: low_confidence,
        });
    }
    Ok(rows)
}

/// Writes the noise benchmark table to `output` (stdout when `None`).
pub fn run_noise_bench(
    ps: &HermitePointSet,
    reference: &QuadMesh,
    output: Option<&Path>,
    cfg: &NoiseBenchConfig,
) -> Result<Vec<NoiseRow>> {
    let rows = noise_bench(ps, reference, cfg)?;
    let mut text = format!("{NOISE_CSV_HEADER}\n");
    for r in &rows {
        text.push_str(&noise_csv_row(r));
        text.push('\n');
    }
    write_text(output, &text)?;
    Ok(rows)
}

/// Selects centers on the normalized input and writes the cover (in input
/// coordinates) as CSV, plus optionally the selected points.
pub fn run_select_centers(
    input: &Path,
    cover_csv: &Path,
    points_out: Option<&Path>,
    params: &CoverParams,
    seed: u64,
) -> Result<SphericalCover> {
    let format = staged("load", PointFormat::detect(input))?;
    let loaded = staged("load", load_points(input, format))?;
    let (norm, transform) = staged("normalize", normalize_to_unit_box(&loaded.points))?;
    let idx = staged("select", build_octree(&norm, DEFAULT_LEAF_CAPACITY))?;
    let cover = staged("select", select_centers(&norm, &idx, params, seed))?;
    let mut original = cover.clone();
    original.centers = cover.centers.iter().map(|c| transform.apply_inverse(c)).collect();
    original.radii = cover.radii.iter().map(|r| r / transform.scale).collect();
    original.l_bar = cover.l_bar / transform.scale;
    staged("save", original.write_csv(cover_csv))?;
    if let Some(path) = points_out {
        let selected = loaded.points.select(&cover.indices);
        staged(
            "save",
            crate::io::save_points(&selected, path, PointFormat::for_output(path)),
        )?;
    }
    Ok(original)
}
