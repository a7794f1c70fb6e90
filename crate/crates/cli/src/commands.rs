use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hgmt::beta::{beta1_with, carleson_sum_with, scale_grid, CarlesonOptions, FitOptions};
use hgmt::cloud::{generate, WeightedCloud};
use hgmt::corona::{
    audit_regions, build_stopping_regions, classify_families, classify_good_cubes, projection_ratio, GoodCubes, Region,
};
use hgmt::cubes::{audit_cube_axioms, build_cube_tree, default_tau_grid, CubeTree};
use hgmt::graphify::{audit_graph, build_graph_model, GraphModel};
use hgmt::param::{audit_bilipschitz_coverage, build_parametrization, check_embedding};
use hgmt::HPoint;
use serde_json::{json, Value};

use crate::config::Config;
use crate::error::CliError;
use crate::io::{parse_point, read_cloud, write_cloud, write_csv, write_json};
use crate::{Cli, Command};

struct Staged {
    cloud: WeightedCloud,
    tree: CubeTree,
}

struct Decomposed {
    staged: Staged,
    good: GoodCubes,
    regions: Vec<Region>,
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("--{flag} is required for this command")))
}

fn load(cli: &Cli, cfg: &Config) -> Result<WeightedCloud, CliError> {
    let cloud = read_cloud(need(&cli.input, "input")?, cfg.k, cfg.cloud.resolution)?;
    if cloud.n() != cfg.n || cloud.k() != cfg.k {
        return Err(CliError::Config(format!(
            "input cloud has n = {}, k = {} but the config says n = {}, k = {}",
            cloud.n(),
            cloud.k(),
            cfg.n,
            cfg.k
        )));
    }
    Ok(cloud)
}

fn stage(cli: &Cli, cfg: &Config) -> Result<Staged, CliError> {
    let cloud = load(cli, cfg)?;
    let tree = build_cube_tree(&cloud, cfg.alpha, cfg.seed)?;
    Ok(Staged { cloud, tree })
}

fn decompose(cli: &Cli, cfg: &Config) -> Result<Decomposed, CliError> {
    let staged = stage(cli, cfg)?;
    let good = classify_good_cubes(&staged.tree, &staged.cloud, cfg.eps, cfg.enlargement)?;
    let mut regions = build_stopping_regions(&staged.tree, &good, cfg.delta)?;
    classify_families(&mut regions, &staged.tree, &staged.cloud)?;
    Ok(Decomposed { staged, good, regions })
}

fn center_radius(cli: &Cli, cloud: &WeightedCloud, default_fraction: f64) -> Result<(HPoint, f64), CliError> {
    let center = match &cli.center {
        Some(s) => parse_point(s, cloud.n())?,
        None => HPoint::origin(cloud.n()),
    };
    let radius = cli.radius.unwrap_or(default_fraction * cloud.diameter());
    Ok((center, radius))
}

/// Region whose top cube carries the most mass; ties go to the smaller id.
fn heaviest(d: &Decomposed) -> Option<usize> {
    let mass = |r: &Region| d.staged.tree.mass(&d.staged.cloud, r.top);
    d.regions
        .iter()
        .fold(None::<&Region>, |best, r| match best {
            Some(b) if mass(b) >= mass(r) => Some(b),
            _ => Some(r),
        })
        .map(|r| r.id)
}

fn family_counts(regions: &[Region]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in regions {
        let key = r.family.map(|f| format!("{f:?}")).unwrap_or_else(|| "none".into());
        *out.entry(key).or_insert(0) += 1;
    }
    out
}

fn carleson_options(cfg: &Config) -> CarlesonOptions {
    CarlesonOptions {
        scales_per_octave: cfg.scales_per_octave,
        max_centers: (cfg.audit.carleson_centers > 0).then_some(cfg.audit.carleson_centers),
        fit: FitOptions::screening(),
    }
}

/// Grid samples `(p, g(p))` over the model window.
fn sample_graph(model: &GraphModel, per_axis: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let k = model.k;
    let r = model.window_radius;
    let step = 2.0 * r / (per_axis - 1) as f64;
    let total = per_axis.pow(k as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let p: Vec<f64> = model
            .window_center
            .iter()
            .map(|x0| {
                let i = c % per_axis;
                c /= per_axis;
                x0 - r + i as f64 * step
            })
            .collect();
        if !model.in_window(&p) {
            continue;
        }
        if let Ok(g) = model.evaluate(&p) {
            out.push((p, g));
        }
    }
    out
}

pub fn dispatch(cli: &Cli, cfg: &Config) -> Result<Value, CliError> {
    match cli.command {
        Command::Gen => gen(cli, cfg),
        Command::Cubes => cubes(cli, cfg),
        Command::Beta => beta(cli, cfg),
        Command::Carleson => carleson(cli, cfg),
        Command::Corona => corona(cli, cfg),
        Command::Graphify { region } => graphify(cli, cfg, region),
        Command::Param => param(cli, cfg),
        Command::Audit => audit(cli, cfg),
    }
}

fn gen(cli: &Cli, cfg: &Config) -> Result<Value, CliError> {
    let out = need(&cli.output, "output")?;
    let cloud = generate(&cfg.gen_params(), cfg.seed)?;
    write_cloud(out, &cloud)?;
    Ok(json!({
        "command": "gen",
        "kind": cfg.cloud.kind,
        "points": cloud.len(),
        "diameter": cloud.diameter(),
        "output": out,
    }))
}

fn cubes(cli: &Cli, cfg: &Config) -> Result<Value, CliError> {
    let out = need(&cli.output, "output")?;
    let s = stage(cli, cfg)?;
    let audit = audit_cube_axioms(&s.tree, &s.cloud, &default_tau_grid());
    write_json(out, &json!({ "tree": s.tree, "audit": audit }))?;
    Ok(json!({
        "command": "cubes",
        "cubes": s.tree.len(),
        "levels": [s.tree.bottom_level, s.tree.top_level],
        "exact_ok": audit.exact_ok(),
        "d_audit": audit.sizes.d_audit,
        "output": out,
    }))
}

fn beta(cli: &Cli, cfg: &Config) -> Result<Value, CliError> {
    let out = need(&cli.output, "output")?;
    let cloud = load(cli, cfg)?;
    let r = cli.radius.unwrap_or(0.5 * cloud.diameter());
    let (scales, _) = scale_grid(r, cloud.resolution(), cfg.scales_per_octave);
    let centers: Vec<(i64, HPoint)> = match &cli.center {
        Some(s) => vec![(-1, parse_point(s, cloud.n())?)],
        None => {
            let m = cloud.len().min(32);
            (0..m)
                .map(|j| {
                    let i = j * cloud.len() / m;
                    (i as i64, cloud.point(i).clone())
                })
                .collect()
        }
    };
    let opts = FitOptions::default();
    let tasks: Vec<(i64, &HPoint, f64)> = centers
        .iter()
        .flat_map(|(i, x)| scales.iter().map(move |&t| (*i, x, t)))
        .collect();
    use rayon::prelude::*;
    let values: Vec<Result<f64, hgmt::Error>> = tasks.par_iter().map(|(_, x, t)| beta1_with(&cloud, x, *t, &opts)).collect();
    let mut rows = Vec::with_capacity(tasks.len());
    let mut worst: f64 = 0.0;
    for ((i, _, t), v) in tasks.iter().zip(values) {
        let b = v?;
        worst = worst.max(b * t / cloud.resolution());
        rows.push(vec![i.to_string(), t.to_string(), b.to_string()]);
    }
    write_csv(out, &["center".into(), "scale".into(), "beta1".into()], &rows)?;
    Ok(json!({
        "command": "beta",
        "centers": centers.len(),
        "scales": scales.len(),
        "max_beta_t_over_resolution": worst,
        "output": out,
    }))
}

fn carleson(cli: &Cli, cfg: &Config) -> Result<Value, CliError> {
    let cloud = load(cli, cfg)?;
    let (x, r) = center_radius(cli, &cloud, 0.5)?;
    let est = carleson_sum_with(&cloud, &x, r, &carleson_options(cfg))?;
    let slack = cfg.tolerance("carleson_slack");
    let below = est.normalized_sum <= est.floor_estimate * (1.0 + slack);
    if let Some(out) = &cli.output {
        write_json(out, &json!({ "estimate": est, "below_floor": below }))?;
    }
    Ok(json!({
        "command": "carleson",
        "normalized_sum": est.normalized_sum,
        "floor": est.floor_estimate,
        "below_floor": below,
        "scales": est.scales,
        "centers": est.centers,
    }))
}

fn corona(cli: &Cli, cfg: &Config) -> Result<Value, CliError> {
    let out = need(&cli.output, "output")?;
    let d = decompose(cli, cfg)?;
    let audit = audit_regions(&d.regions, &d.good, &d.staged.tree, &d.staged.cloud, cfg.delta)?;
    let good = d.good.cubes.iter().filter(|c| c.is_good).count();
    let families = family_counts(&d.regions);
    write_json(out, &json!({ "good": d.good, "regions": d.regions, "audit": audit }))?;
    let max_packing = audit.packing.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(json!({
        "command": "corona",
        "cubes": d.staged.tree.len(),
        "good": good,
        "regions": d.regions.len(),
        "families": families,
        "violations": audit.violations(),
        "max_packing_ratio": max_packing,
        "output": out,
    }))
}

fn graphify(cli: &Cli, cfg: &Config, region: Option<usize>) -> Result<Value, CliError> {
    let out = need(&cli.output, "output")?;
    let d = decompose(cli, cfg)?;
    let id = match region {
        Some(id) if id < d.regions.len() => id,
        Some(id) => {
            return Err(CliError::Core(hgmt::Error::InvalidArgument(format!(
                "region {id} does not exist; there are {}",
                d.regions.len()
            ))))
        }
        None => heaviest(&d).ok_or_else(|| hgmt::Error::Domain("the cloud has no good cubes, hence no regions".into()))?,
    };
    let r = &d.regions[id];
    let (cloud, tree) = (&d.staged.cloud, &d.staged.tree);
    let model = build_graph_model(r, tree, cloud, &d.good, &cfg.graph_options())?;
    let audit = audit_graph(&model, r, tree, cloud, cfg.audit.probes, cfg.seed)?;
    let samples = sample_graph(&model, cfg.audit.samples_per_axis);
    let mut header: Vec<String> = (1..=model.k).map(|i| format!("p{i}")).collect();
    header.extend((1..=2 * model.n - model.k).map(|i| format!("g{i}")));
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|(p, g)| p.iter().chain(g).map(|v| v.to_string()).collect())
        .collect();
    write_csv(out, &header, &rows)?;
    Ok(json!({
        "command": "graphify",
        "region": id,
        "samples": rows.len(),
        "audit": audit,
        "output": out,
    }))
}

fn param(cli: &Cli, cfg: &Config) -> Result<Value, CliError> {
    let out = need(&cli.output, "output")?;
    let d = decompose(cli, cfg)?;
    let (cloud, tree) = (&d.staged.cloud, &d.staged.tree);
    let (z, r) = center_radius(cli, cloud, 0.25)?;
    let mut p = build_parametrization(cloud, tree, &d.good, &d.regions, &z, r, &cfg.param_options())?;
    let a = audit_bilipschitz_coverage(&p, cloud, cfg.audit.pairs, cfg.seed)?;
    let embedding = check_embedding(&p, tree, cloud);
    p.audit = Some(a.clone());
    write_json(out, &p)?;
    Ok(json!({
        "command": "param",
        "domain": p.domain.len(),
        "slots": p.embedding.len(),
        "coverage_ratio": a.coverage_ratio,
        "bilip_lower": a.bilip_lower,
        "bilip_upper": a.bilip_upper,
        "embedding": embedding,
        "c1": p.constants.c1,
        "output": out,
    }))
}

fn audit(cli: &Cli, cfg: &Config) -> Result<Value, CliError> {
    let out = need(&cli.output, "output")?;
    let d = decompose(cli, cfg)?;
    let (cloud, tree) = (&d.staged.cloud, &d.staged.tree);
    let cube_audit = audit_cube_axioms(tree, cloud, &default_tau_grid());
    let region_audit = audit_regions(&d.regions, &d.good, tree, cloud, cfg.delta)?;

    let mut checks: BTreeMap<&str, bool> = BTreeMap::new();
    checks.insert("cube_axioms_exact", cube_audit.exact_ok());
    checks.insert("d_audit_finite", cube_audit.sizes.d_audit.is_finite());
    checks.insert("regions_without_violations", region_audit.violations() == 0);

    let mut projection = Vec::new();
    for r in &d.regions {
        if r.members.len() > 1 {
            projection.push(projection_ratio(r, tree, cloud, tree.d_audit, cfg.window, cfg.audit.pairs / 10, cfg.seed)?);
        }
    }
    let worst_projection = projection.iter().map(|p| p.max_ratio).fold(0.0, f64::max);
    checks.insert("projection_ratio", worst_projection <= cfg.tolerance("projection_ratio"));

    let graph = match heaviest(&d) {
        Some(id) => {
            let r = &d.regions[id];
            let model = build_graph_model(r, tree, cloud, &d.good, &cfg.graph_options())?;
            let g = audit_graph(&model, r, tree, cloud, cfg.audit.probes, cfg.seed)?;
            checks.insert("graph_lipschitz", g.lipschitz <= cfg.tolerance("graph_lipschitz"));
            Some(g)
        }
        None => None,
    };

    let (z, r) = center_radius(cli, cloud, 0.25)?;
    let p = build_parametrization(cloud, tree, &d.good, &d.regions, &z, r, &cfg.param_options())?;
    let big = audit_bilipschitz_coverage(&p, cloud, cfg.audit.pairs, cfg.seed)?;
    let embedding = check_embedding(&p, tree, cloud);
    checks.insert("coverage", big.coverage_ratio <= cfg.tolerance("coverage"));
    checks.insert("bilip_positive", big.bilip_lower > 0.0 && big.bilip_upper.is_finite());

    let passed = checks.values().filter(|v| **v).count();
    let total = checks.len();
    write_json(
        out,
        &json!({
            "config": cfg,
            "cubes": cube_audit,
            "regions": { "count": d.regions.len(), "families": family_counts(&d.regions), "audit": region_audit },
            "projection": projection,
            "graph": graph,
            "big_piece": { "audit": big, "embedding": embedding, "constants": p.constants, "removed": p.removed },
            "checks": checks,
        }),
    )?;
    Ok(json!({
        "command": "audit",
        "passed": passed,
        "checks": total,
        "output": out,
    }))
}
