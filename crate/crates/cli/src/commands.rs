use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use placerec::aggregate::{gem, Aggregator, AggregatorKind, GemParams};
use placerec::config::PipelineConfig;
use placerec::dataset::{balanced_split, build_graph, connected_components, stats_table, SplitStats};
use placerec::fusion::{fuse, l2_normalize, FusionWeights};
use placerec::geometry::{is_consecutive, mine_pairs, PairSet, SampleMeta};
use placerec::io::{self, SplitFile};
use placerec::retrieval::{recall_at_k_with, report_table, DescriptorDb, Query, RecallReport};
use placerec::synth::{self, SynthSpec};
use placerec::tensor::{Descriptor, FeatureMap};
use placerec::train::{toy_gradcheck, toy_train_with, write_trace_csv, ToyDataSpec, TrainOptions};

/// GeM exponent of the structural stream.
const STRUCTURAL_GEM_P: f32 = 3.0;

/// Output dimension of EigenPlaces when no dimension is requested.
const EIGENPLACES_DEFAULT_DIM: usize = 512;

fn read_poses(path: &Path) -> Result<Vec<SampleMeta<f64>>> {
    let file = File::open(path).with_context(|| format!("opening pose log {}", path.display()))?;
    io::read_pose_log(BufReader::new(file)).with_context(|| format!("reading pose log {}", path.display()))
}

fn read_pairs(path: &Path) -> Result<Vec<PairSet>> {
    let file = File::open(path).with_context(|| format!("opening pairsets {}", path.display()))?;
    io::read_pairsets(BufReader::new(file)).with_context(|| format!("reading pairsets {}", path.display()))
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn mine(args: &crate::MineArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let samples = read_poses(&args.poses)?;
    let pairs = mine_pairs(&samples, &cfg.mining.params())?;
    let mut w = BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?);
    io::write_pairsets(&pairs, &mut w)?;
    w.flush()?;

    let scenes: BTreeSet<String> = samples.iter().map(|s| s.scene_id.clone()).collect();
    let stats = SplitStats::compute(&scenes, &samples, &pairs);
    let with_pos = pairs.iter().filter(|p| p.has_positives()).count();
    writeln!(out, "queries {}, with positives {}", pairs.len(), with_pos)?;
    write!(out, "{}", stats_table(&[("all", &stats)]))?;
    Ok(())
}

pub fn split(args: &crate::SplitArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let samples = read_poses(&args.poses)?;
    let pairs = read_pairs(&args.pairs)?;
    let fraction = args.test_fraction.unwrap_or(cfg.split.test_fraction);
    let graph = build_graph(&pairs, &samples)?;
    let comps = connected_components(&graph);
    let stats: Vec<SplitStats> = comps.components.iter().map(|c| SplitStats::compute(c, &samples, &pairs)).collect();
    let outcome = balanced_split(&comps.components, &stats, &comps.isolated, fraction, cfg.seed)?;

    let a = &outcome.assignment;
    let train_all: BTreeSet<String> = a.train_scenes.union(&a.isolated_scenes).cloned().collect();
    let file = SplitFile {
        train_stats: SplitStats::compute(&train_all, &samples, &pairs),
        test_stats: SplitStats::compute(&a.test_scenes, &samples, &pairs),
        assignment: outcome.assignment.clone(),
        warnings: outcome.warnings.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;

    writeln!(
        out,
        "components {}, isolated scenes {} (kept in training)",
        comps.components.len(),
        comps.isolated.len()
    )?;
    write!(out, "{}", stats_table(&[("train", &file.train_stats), ("test", &file.test_stats)]))?;
    for w in &outcome.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

fn sample_id_of(path: &Path) -> Result<String> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .with_context(|| format!("{} has no usable file name", path.display()))?;
    Ok(name.split('.').next().unwrap_or(name).to_string())
}

struct Inputs {
    ids: Vec<String>,
    visual: Vec<PathBuf>,
    structural: Vec<PathBuf>,
}

fn collect_inputs(args: &crate::AggregateArgs) -> Result<Inputs> {
    if let Some(dir) = &args.corpus {
        let ids: Vec<String> = match &args.ids {
            Some(list) => fs::read_to_string(list)
                .with_context(|| format!("reading {}", list.display()))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.trim().to_string())
                .collect(),
            None => read_poses(&dir.join(synth::POSES_FILE))?.into_iter().map(|s| s.sample_id).collect(),
        };
        let fmaps = dir.join(synth::FMAP_DIR);
        let visual = ids.iter().map(|id| fmaps.join(synth::visual_fmap_name(id))).collect();
        let structural = if args.fuse {
            ids.iter().map(|id| fmaps.join(synth::structural_fmap_name(id))).collect()
        } else {
            Vec::new()
        };
        return Ok(Inputs { ids, visual, structural });
    }
    ensure!(!args.visual.is_empty(), "give --visual FMAP files or --corpus DIR");
    ensure!(!args.fuse || !args.structural.is_empty(), "--fuse needs --structural FMAP files");
    ensure!(
        args.structural.is_empty() || args.structural.len() == args.visual.len(),
        "{} visual but {} structural files",
        args.visual.len(),
        args.structural.len()
    );
    let ids = args.visual.iter().map(|p| sample_id_of(p)).collect::<Result<_>>()?;
    Ok(Inputs { ids, visual: args.visual.clone(), structural: args.structural.clone() })
}

fn read_maps(paths: &[PathBuf]) -> Result<Vec<FeatureMap<f32>>> {
    paths
        .iter()
        .map(|p| io::read_fmap(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn uniform_shape(maps: &[FeatureMap<f32>], what: &str) -> Result<(usize, usize, usize)> {
    let first = maps.first().with_context(|| format!("no {what} feature maps"))?;
    let shape = (first.h(), first.w(), first.k());
    if let Some((i, m)) = maps.iter().enumerate().find(|(_, m)| (m.h(), m.w(), m.k()) != shape) {
        bail!(
            "{what} map {i} is {}x{}x{}, expected {}x{}x{}",
            m.h(),
            m.w(),
            m.k(),
            shape.0,
            shape.1,
            shape.2
        );
    }
    Ok(shape)
}

pub fn aggregate(args: &crate::AggregateArgs, cfg: &PipelineConfig, dim_explicit: bool, out: &mut dyn Write) -> Result<()> {
    let inputs = collect_inputs(args)?;
    let fusing = !inputs.structural.is_empty();
    let visual = read_maps(&inputs.visual)?;
    let (h, w, k) = uniform_shape(&visual, "visual")?;
    let structural = read_maps(&inputs.structural)?;
    let k_s = if fusing { uniform_shape(&structural, "structural")?.2 } else { 0 };
    let kind = args.variant.unwrap_or(cfg.descriptor.aggregator);

    let agg: Aggregator<f32> = match &args.params {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let agg: Aggregator<f32> = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            ensure!(
                args.variant.is_none() || agg.kind() == kind,
                "--variant {kind} disagrees with {} parameters in {}",
                agg.kind(),
                p.display()
            );
            agg
        }
        None => {
            let target = if fusing {
                ensure!(
                    cfg.descriptor.dim > k_s,
                    "descriptor dim {} leaves no room for the visual stream beside {k_s} structural values",
                    cfg.descriptor.dim
                );
                cfg.descriptor.dim - k_s
            } else if dim_explicit {
                cfg.descriptor.dim
            } else {
                match kind {
                    AggregatorKind::Spoc | AggregatorKind::Gem => k,
                    AggregatorKind::EigenPlaces => EIGENPLACES_DEFAULT_DIM,
                    _ => cfg.descriptor.dim,
                }
            };
            let range = visual.iter().flat_map(|m| m.data().iter()).fold((f64::MAX, f64::MIN), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            });
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            Aggregator::init(kind, (h, w, k), target, range, &mut rng)?
        }
    };
    agg.validate(h, w, k)?;
    if let Some(p) = &args.save_params {
        fs::write(p, serde_json::to_string(&agg)?).with_context(|| format!("writing {}", p.display()))?;
    }

    let visual_dim = agg.output_dim(h, w, k);
    let total = visual_dim + k_s;
    if fusing || dim_explicit {
        ensure!(
            total == cfg.descriptor.dim,
            "descriptor dim is {total} ({} visual + {k_s} structural) but {} was requested",
            visual_dim,
            cfg.descriptor.dim
        );
    }

    let normalize = cfg.fusion.normalize;
    let weights = FusionWeights { w_v: cfg.fusion.w_v as f32, w_s: cfg.fusion.w_s as f32 };
    let gem_s = GemParams::uniform(k_s, STRUCTURAL_GEM_P);
    let mut rows = Vec::with_capacity(visual.len());
    for (i, (id, v)) in inputs.ids.iter().zip(&visual).enumerate() {
        let mut f_v = agg.apply(v).with_context(|| format!("aggregating {id}"))?;
        if normalize {
            f_v = l2_normalize(&f_v).with_context(|| format!("normalizing {id}"))?;
        }
        let d: Descriptor<f32> = if fusing {
            let mut f_s = gem(&structural[i], &gem_s).with_context(|| format!("pooling structural map of {id}"))?;
            if normalize {
                f_s = l2_normalize(&f_s).with_context(|| format!("normalizing structural {id}"))?;
            }
            fuse(&f_v, &f_s, weights, normalize)?
        } else {
            f_v
        };
        rows.push((id.clone(), d));
    }
    let db = DescriptorDb::from_rows(rows)?;
    io::write_desc_db(&args.out, &db)?;
    writeln!(
        out,
        "{} descriptors of dim {} ({}{}) -> {}",
        db.len(),
        db.dim(),
        kind,
        if fusing { " + structural GeM" } else { "" },
        args.out.display()
    )?;
    Ok(())
}

pub fn evaluate(
    query: &DescriptorDb<f32>,
    db: &DescriptorDb<f32>,
    pairs: &[PairSet],
    poses: Option<&[SampleMeta<f64>]>,
    window_us: i64,
    ks: &[usize],
) -> Result<RecallReport> {
    let by_id: HashMap<&str, &PairSet> = pairs.iter().map(|p| (p.query_id.as_str(), p)).collect();
    // Queries absent from the pairsets have no positives and are counted as excluded.
    let unlabeled: Vec<PairSet> = query
        .ids()
        .iter()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .map(|id| PairSet { query_id: id.clone(), positives: Vec::new(), negatives: Vec::new(), difficulty: None })
        .collect();
    let by_id: HashMap<&str, &PairSet> = by_id.into_iter().chain(unlabeled.iter().map(|p| (p.query_id.as_str(), p))).collect();
    let queries: Vec<Query<'_, f32>> = query
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| Query { descriptor: query.row(i), pairs: by_id[id.as_str()] })
        .collect();
    let meta: HashMap<&str, &SampleMeta<f64>> =
        poses.unwrap_or_default().iter().map(|m| (m.sample_id.as_str(), m)).collect();
    let report = recall_at_k_with(&queries, db, ks, |q, d| match (meta.get(q), meta.get(d)) {
        (Some(a), Some(b)) => is_consecutive(a, b, window_us),
        _ => false,
    })?;
    Ok(report)
}

pub fn eval(args: &crate::EvalArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let pairs = read_pairs(&args.pairs)?;
    let poses = match (&args.poses, args.keep_consecutive || !cfg.eval.exclude_consecutive) {
        (Some(p), false) => Some(read_poses(p)?),
        _ => None,
    };
    let ks = args.ks.clone().unwrap_or_else(|| cfg.eval.ks.clone());
    let window = cfg.mining.consec_window_us;
    let run = |q: &Path, d: &Path| -> Result<RecallReport> {
        let q = io::read_desc_db(q).with_context(|| format!("reading {}", q.display()))?;
        let d = io::read_desc_db(d).with_context(|| format!("reading {}", d.display()))?;
        evaluate(&q, &d, &pairs, poses.as_deref(), window, &ks)
    };
    let first = run(&args.query, &args.db)?;
    let second = match (&args.compare_query, &args.compare_db) {
        (Some(q), Some(d)) => Some(run(q, d)?),
        _ => None,
    };

    let mut rows = vec![(args.name.as_str(), &first)];
    if let Some(s) = &second {
        rows.push((args.compare_name.as_str(), s));
    }
    writeln!(
        out,
        "queries {} (easy {}, semi-hard {}, hard {}), excluded without positives {}",
        first.overall.queries, first.easy.queries, first.semi_hard.queries, first.hard.queries, first.excluded
    )?;
    write!(out, "{}", report_table(&rows, second.is_some())?)?;
    if let Some(p) = &args.json {
        let reports: Vec<_> = rows.iter().map(|(n, r)| serde_json::json!({ "name": n, "report": r })).collect();
        fs::write(p, serde_json::to_string_pretty(&reports)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn gradcheck(args: &crate::GradcheckArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let spec: ToyDataSpec = match &args.spec {
        Some(p) => read_toml(p)?,
        None => ToyDataSpec { night_fraction: 0.5, ..Default::default() },
    };
    let mut worst = 0.0f64;
    for seed in cfg.seed..cfg.seed + args.seeds {
        let g = toy_gradcheck(&spec, &cfg.loss, seed, args.step)?;
        let err = g.report.max_rel_error();
        worst = worst.max(err);
        writeln!(out, "seed {seed}: loss {:.6}, boundary hits {}, max rel err {err:.3e}", g.loss.total, g.boundary_hits)?;
        if seed == cfg.seed {
            write!(out, "{}", g.report.summary())?;
        }
    }
    writeln!(out, "worst relative error {worst:.3e} (tolerance {:.1e})", args.tolerance)?;
    ensure!(worst < args.tolerance, "gradient check failed: {worst:.3e} >= {:.1e}", args.tolerance);
    Ok(())
}

pub fn train(args: &crate::TrainArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let spec: ToyDataSpec = match &args.spec {
        Some(p) => read_toml(p)?,
        None => ToyDataSpec::default(),
    };
    let opts = TrainOptions { loss: cfg.loss, miner: args.mining.then_some(cfg.miner) };
    let outcome = toy_train_with(&spec, args.steps, args.lr, cfg.seed, &opts)?;
    match &args.trace {
        Some(p) => {
            write_trace_csv(&outcome.trace, BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))?;
            writeln!(
                out,
                "initial loss {:.6}, final loss {:.6}, w_v {:.4}, w_s {:.4}",
                outcome.initial_loss(),
                outcome.final_loss.total,
                outcome.model.fusion.w_v,
                outcome.model.fusion.w_s
            )?;
        }
        None => write_trace_csv(&outcome.trace, &mut *out)?,
    }
    Ok(())
}

pub fn synth(args: &crate::SynthArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let mut spec: SynthSpec = match &args.spec {
        Some(p) => read_toml(p)?,
        None => SynthSpec::default(),
    };
    if let Some(c) = args.corruption {
        spec.corruption = c;
    }
    if let Some(r) = args.regions {
        spec.regions = r;
    }
    let corpus = synth::generate_corpus(&spec, cfg.seed)?;
    synth::write_corpus(&corpus, &args.out)?;
    writeln!(
        out,
        "{} samples in {} scenes -> {}",
        corpus.samples.len(),
        spec.regions * spec.scenes_per_region,
        args.out.display()
    )?;
    Ok(())
}

