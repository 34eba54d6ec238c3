//! One function per subcommand. Each writes its results through a
//! [`RunDir`] and returns the first error after recording it.

use std::fmt::Write;

use bulkedge::bulk::{
    bands_along_path, chern_fhs, chern_projector_with, compute_bands, find_gap, find_gaps, high_symmetry_path, BandStructure,
    ChernResult, GapInfo,
};
use bulkedge::coeff::CoefficientField;
use bulkedge::edge::{bec_sweep_with, edge_index_from_modes, in_gap_modes_with, mollifier, BecConfig, Mollifier};
use bulkedge::eig::dense_herm_eig;
use bulkedge::grid::{assemble_dirichlet, assemble_supercell, domain_mask};
use bulkedge::hs::{
    almost_analytic, decay_probe, hs_apply_gprime, random_hermitian, scalar_residue_check, verify_representation, DecayFit,
    RepresentationCheck,
};
use bulkedge::C64;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::manifest::RunDir;
use crate::svg::{heatmap, line_chart, node_map, Chart, Series};
use crate::CliError;

/// Samples per segment of the band-diagram path.
const PATH_SAMPLES: usize = 24;

/// Mode heatmaps written by `edge-index`.
const MODE_FIGURES: usize = 4;

/// Window of the random-matrix `g'(M)` check.
const MATRIX_WINDOW: (f64, f64) = (-0.5, 1.0);

struct Bulk {
    field: CoefficientField,
    bands: BandStructure,
}

fn bulk(cfg: &ExperimentConfig) -> Result<Bulk, CliError> {
    let field = cfg.field()?;
    let bands = compute_bands(&field, cfg.n, cfg.n_kappa, cfg.n_bands)?;
    Ok(Bulk { field, bands })
}

/// Requested gap, or the widest one below `n_bands` when none is given.
fn select_gap(cfg: &ExperimentConfig, bands: &BandStructure) -> Result<GapInfo, CliError> {
    match cfg.n_filled {
        Some(nf) => Ok(find_gap(bands, nf)?),
        None => find_gaps(bands, 0.0)
            .into_iter()
            .max_by(|a, b| a.width.total_cmp(&b.width))
            .ok_or_else(|| {
                CliError::from(bulkedge::Error::NoGap {
                    n_filled: 0,
                    overlap: 0.0,
                })
            }),
    }
}

/// Runs `body`, records it as a stage and writes the manifest either way.
pub fn with_run<F>(cfg: &ExperimentConfig, dir: &std::path::Path, command: &str, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut RunDir) -> Result<(), CliError>,
{
    let mut run = RunDir::create(dir, command, cfg)?;
    let result = body(&mut run);
    run.stage(command, result.as_ref().map(|_| ()));
    run.finish()?;
    result
}

#[derive(Serialize)]
struct GapReport {
    n_filled_requested: Option<usize>,
    selected: Option<GapInfo>,
    all_gaps: Vec<GapInfo>,
    max_neighbor_jump: f64,
    diagnostic: Option<String>,
}

pub fn cmd_bands(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    let Bulk { field, bands } = bulk(cfg)?;
    run.write("bands.csv", bands.to_csv().as_bytes())?;

    let corners = high_symmetry_path();
    let points: Vec<[f64; 2]> = corners.iter().map(|c| c.1).collect();
    let path = bands_along_path(&field, cfg.n, &points, PATH_SAMPLES, cfg.n_bands)?;
    let mut csv = String::from("s,kappa1,kappa2");
    for b in 1..=cfg.n_bands {
        let _ = write!(csv, ",lambda_{b}");
    }
    csv.push('\n');
    for p in &path {
        let _ = write!(csv, "{:.12e},{:.12e},{:.12e}", p.s, p.kappa[0], p.kappa[1]);
        for l in &p.eigenvalues {
            let _ = write!(csv, ",{l:.12e}");
        }
        csv.push('\n');
    }
    run.write("bands_path.csv", csv.as_bytes())?;

    let gap = select_gap(cfg, &bands);
    let mut chart = Chart {
        title: format!("{} bands, n = {}", field.family_id(), cfg.n),
        x_label: "path length".into(),
        y_label: "lambda".into(),
        series: (0..cfg.n_bands)
            .map(|b| Series {
                label: String::new(),
                points: path.iter().map(|p| (p.s, p.eigenvalues[b])).collect(),
                markers: false,
            })
            .collect(),
        ..Default::default()
    };
    let mut s = 0.0;
    for (k, (name, kap)) in corners.iter().enumerate() {
        if k > 0 {
            let prev = corners[k - 1].1;
            s += (kap[0] - prev[0]).hypot(kap[1] - prev[1]);
        }
        chart.vticks.push((s, name.to_string()));
    }
    if let Ok(g) = &gap {
        chart.hlines.push((g.lambda_low, format!("gap above band {}", g.n_filled)));
        chart.hlines.push((g.lambda_upp, String::new()));
    }
    run.write("bands.svg", line_chart(&chart).as_bytes())?;

    let report = GapReport {
        n_filled_requested: cfg.n_filled,
        selected: gap.as_ref().ok().copied(),
        all_gaps: find_gaps(&bands, 0.0),
        max_neighbor_jump: bands.max_neighbor_jump(),
        diagnostic: gap.as_ref().err().map(|e| format!("no gap: {e}")),
    };
    run.write_json("gaps.json", &report)?;
    gap.map(|_| ())
}

#[derive(Serialize)]
struct ChernReport {
    gap: GapInfo,
    fhs: ChernResult,
    projector: ChernResult,
    difference: f64,
    curvature: bulkedge::bulk::CurvatureStencil,
}

pub fn cmd_chern(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    let Bulk { bands, .. } = bulk(cfg)?;
    let gap = select_gap(cfg, &bands)?;
    let fhs = chern_fhs(&bands, &gap)?;
    let projector = chern_projector_with(&bands, &gap, cfg.curvature)?;
    let nk = cfg.n_kappa;
    run.write("chern_flux.svg", heatmap(&format!("FHS plaquette flux, C = {:.6}", fhs.value), nk, nk, &fhs.plaquette_fluxes).as_bytes())?;
    run.write(
        "chern_curvature.svg",
        heatmap(&format!("projector curvature, C = {:.6}", projector.value), nk, nk, &projector.plaquette_fluxes).as_bytes(),
    )?;
    let report = ChernReport {
        gap,
        difference: (fhs.value - projector.value).abs(),
        fhs,
        projector,
        curvature: cfg.curvature,
    };
    run.write_json("chern.json", &report)
}

fn gap_mollifier(cfg: &ExperimentConfig, bands: &BandStructure) -> Result<(GapInfo, Mollifier), CliError> {
    let gap = select_gap(cfg, bands)?;
    let moll = mollifier(&gap, cfg.margin)?;
    Ok((gap, moll))
}

pub fn cmd_edge_index(cfg: &ExperimentConfig, l: f64, run: &mut RunDir) -> Result<(), CliError> {
    let Bulk { field, bands } = bulk(cfg)?;
    let (_, moll) = gap_mollifier(cfg, &bands)?;
    let mask = domain_mask(cfg.shape, l, cfg.n)?;
    let op = assemble_dirichlet(&field, &mask)?;
    let modes = in_gap_modes_with(&op, &moll, &cfg.solver)?;
    let report = edge_index_from_modes(&op, &moll, &modes)?;
    run.write_json("edge_index.json", &report)?;
    run.write("edge_modes.csv", report.to_csv().as_bytes())?;

    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| report.modes[b].gprime.abs().total_cmp(&report.modes[a].gprime.abs()).then(a.cmp(&b)));
    for (rank, &k) in order.iter().take(MODE_FIGURES).enumerate() {
        let u = modes.vector(k);
        let density: Vec<f64> = u.iter().map(|v| v.norm_sqr()).collect();
        let m = &report.modes[k];
        let title = format!("|u|^2, lambda = {:.6}, circulation = {:.4}", m.lambda, m.circulation);
        run.write(&format!("mode_{rank}.svg"), node_map(&title, &mask.coords, mask.h, &density).as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BecSummary<'a> {
    chern_line: i64,
    sweep: &'a bulkedge::edge::BecSweep,
}

pub fn cmd_bec_sweep(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    if cfg.l_list.is_empty() {
        return Err(CliError::Config(vec!["l_list: bec-sweep needs at least one L".into()]));
    }
    let Bulk { field, bands } = bulk(cfg)?;
    let (gap, moll) = gap_mollifier(cfg, &bands)?;
    let chern = chern_fhs(&bands, &gap)?;
    let bec = BecConfig {
        shape: cfg.shape,
        l_list: cfg.l_list.clone(),
        n: cfg.n,
        n_kappa: cfg.n_kappa,
        n_filled: gap.n_filled,
        margin: cfg.margin,
        solver: cfg.solver,
    };
    let sweep = bec_sweep_with(&field, &bec, gap, chern, moll)?;
    run.write("bec.csv", sweep.to_csv().as_bytes())?;
    let c = sweep.chern.rounded;
    let chart = Chart {
        title: format!("edge index per area, {} domain", cfg.shape.name()),
        x_label: "L".into(),
        y_label: "EI / |Omega_L|".into(),
        series: vec![Series {
            label: "EI / |Omega_L|".into(),
            points: sweep.rows.iter().map(|r| (r.l, r.normalized)).collect(),
            markers: true,
        }],
        hlines: vec![(c as f64, format!("C = {c}"))],
        ..Default::default()
    };
    run.write("bec.svg", line_chart(&chart).as_bytes())?;
    run.write_json(
        "bec_summary.json",
        &BecSummary {
            chern_line: c,
            sweep: &sweep,
        },
    )
}

#[derive(Serialize)]
struct ScalarCheck {
    placement: &'static str,
    lambda: f64,
    value: f64,
    exact: f64,
    error: f64,
}

#[derive(Serialize)]
struct MatrixCheck {
    dim: usize,
    seed: u64,
    window: (f64, f64),
    frobenius_error: f64,
}

#[derive(Serialize)]
struct RepresentationReport {
    l: f64,
    n: usize,
    check: RepresentationCheck,
    /// hs vs spec, green vs spec, hs vs green: `(relative, absolute)`.
    pairwise: [(f64, f64); 3],
    agree_2_percent: bool,
}

#[derive(Serialize)]
struct HsReport {
    gap: GapInfo,
    mollifier: Mollifier,
    order: usize,
    nx: usize,
    ny: usize,
    scalar: Vec<ScalarCheck>,
    matrix: MatrixCheck,
    representation: RepresentationReport,
}

pub fn cmd_hs_check(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    let Bulk { field, bands } = bulk(cfg)?;
    let (gap, moll) = gap_mollifier(cfg, &bands)?;
    let q = cfg.quadrature;
    // the Dirichlet operator is positive, so 0 bounds its spectrum below
    let aa = almost_analytic(moll, q.order, gap.width, 0.0)?;
    let quad = aa.quadrature(q.nx, q.ny)?;
    let scalar = [
        ("below", moll.a - 0.5 * moll.width()),
        ("inside", 0.5 * (moll.a + moll.b)),
        ("above", moll.b + 0.5 * moll.width()),
    ]
    .into_iter()
    .map(|(placement, lambda)| {
        let value = scalar_residue_check(&aa, &quad, lambda);
        let exact = moll.g(lambda);
        ScalarCheck {
            placement,
            lambda,
            value,
            exact,
            error: (value - exact).abs(),
        }
    })
    .collect();

    let m = random_hermitian(cfg.hs.matrix_dim, cfg.seed);
    let lowest = dense_herm_eig(&m)?.eigenvalues.first().copied().unwrap_or(0.0);
    let wm = Mollifier::new(MATRIX_WINDOW.0, MATRIX_WINDOW.1)?;
    let maa = almost_analytic(wm, q.order, wm.width(), lowest)?;
    let approx = hs_apply_gprime(&m, &maa, &maa.quadrature(q.nx, q.ny)?)?;

    let mask = domain_mask(bulkedge::grid::DomainShape::Disk, cfg.hs.l, cfg.hs.n)?;
    let op = assemble_dirichlet(&field, &mask)?;
    let check = verify_representation(&op, &aa, &quad)?;
    let report = HsReport {
        gap,
        mollifier: moll,
        order: q.order,
        nx: q.nx,
        ny: q.ny,
        scalar,
        matrix: MatrixCheck {
            dim: cfg.hs.matrix_dim,
            seed: cfg.seed,
            window: MATRIX_WINDOW,
            frobenius_error: approx.frobenius_error,
        },
        representation: RepresentationReport {
            l: cfg.hs.l,
            n: cfg.hs.n,
            pairwise: check.pairwise(),
            agree_2_percent: check.agrees(0.02, 1e-2),
            check,
        },
    };
    run.write_json("hs_check.json", &report)
}

pub fn cmd_green_decay(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), CliError> {
    let Bulk { field, bands } = bulk(cfg)?;
    let gap = select_gap(cfg, &bands)?;
    let d = &cfg.decay;
    let energy = d.energy.unwrap_or_else(|| gap.midpoint());
    let op = assemble_supercell(&field, d.cells, cfg.n)?;
    let [si, sj] = d.src.unwrap_or([cfg.n / 2, cfg.n / 2]);
    let src = op.index(si, sj);
    let zs: Vec<C64> = d.eta.iter().map(|&e| C64::new(energy, e * gap.width)).collect();
    let fits = decay_probe(&op, &zs, src)?;

    let mut csv = String::from("z_re,z_im,distance,log_abs_green\n");
    for f in &fits {
        for (r, g) in &f.samples {
            let _ = writeln!(csv, "{:.12e},{:.12e},{r:.6},{g:.12e}", f.z_re, f.z_im);
        }
    }
    run.write("decay.csv", csv.as_bytes())?;
    run.write_json("decay_fits.json", &fits)?;
    let chart = Chart {
        title: format!("resolvent decay, {}-cell supercell", d.cells),
        x_label: "distance".into(),
        y_label: "ln max |G|".into(),
        series: fits.iter().map(decay_series).collect(),
        ..Default::default()
    };
    run.write("decay.svg", line_chart(&chart).as_bytes())
}

fn decay_series(f: &DecayFit) -> Series {
    Series {
        label: format!("Im z = {:.4}: rate {:.4}, R^2 {:.4}", f.z_im, f.rate, f.r_squared),
        points: f.samples.clone(),
        markers: true,
    }
}
