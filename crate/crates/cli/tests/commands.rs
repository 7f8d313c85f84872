use std::collections::HashSet;
use std::fs;
use std::path::Path;

use clap::Parser;
use placerec::geometry::PairSet;
use placerec::io::{encode_fmap, read_desc_db, read_pairsets, write_desc_db, write_fmap};
use placerec::retrieval::DescriptorDb;
use placerec::tensor::FeatureMap;
use placerec_cli::{run, Cli};

fn cli(args: &[&str]) -> anyhow::Result<String> {
    let parsed = Cli::try_parse_from(std::iter::once("placerec").chain(args.iter().copied()))?;
    let mut out = Vec::new();
    run(&parsed, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const HEADER: &str = "sample_id,scene_id,timestamp_us,cam_x,cam_y,yaw_rad,condition\n";

#[test]
fn mine_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let poses = dir.path().join("poses.csv");
    let out = dir.path().join("pairs.jsonl");
    fs::write(&poses, HEADER).unwrap();
    let text = cli(&["mine", "--poses", p(&poses), "--out", p(&out)]).unwrap();
    assert!(text.starts_with("queries 0, with positives 0\n"), "{text}");
    let row: Vec<&str> = text.lines().nth(2).unwrap().split_whitespace().collect();
    assert_eq!(row, ["all", "0", "0", "0", "0", "|", "0", "0", "0", "|", "0", "0"]);
    assert_eq!(fs::read(&out).unwrap(), b"");
}

#[test]
fn mine_four_sample_fixture_matches_hand_labels() {
    // a, b: two scenes viewing the same spot from the same heading.
    // c: same scene as a, one frame later (consecutive). d: far away.
    let dir = tempfile::tempdir().unwrap();
    let poses = dir.path().join("poses.csv");
    let out = dir.path().join("pairs.jsonl");
    fs::write(
        &poses,
        format!(
            "{HEADER}a,s1,0,0,0,0,day\nb,s2,0,3,0,0,night\nc,s1,500000,1,0,0,day\nd,s3,0,500,500,0,day\n"
        ),
    )
    .unwrap();
    cli(&["mine", "--poses", p(&poses), "--out", p(&out)]).unwrap();
    let got = read_pairsets(fs::read(&out).unwrap().as_slice()).unwrap();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    assert_eq!(got.len(), 4);
    assert_eq!((got[0].positives.clone(), got[0].negatives.clone()), (s(&["b"]), s(&["d"])));
    assert_eq!((got[1].positives.clone(), got[1].negatives.clone()), (s(&["a", "c"]), s(&["d"])));
    assert_eq!((got[2].positives.clone(), got[2].negatives.clone()), (s(&["b"]), s(&["d"])));
    assert_eq!((got[3].positives.clone(), got[3].negatives.clone()), (s(&[]), s(&["a", "b", "c"])));
    use placerec::geometry::Difficulty::*;
    let diffs: Vec<_> = got.iter().map(|p| p.difficulty).collect();
    assert_eq!(diffs, vec![Some(Hard), Some(Hard), Some(Hard), None]);
}

#[test]
fn mine_rejects_nan_yaw_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let poses = dir.path().join("poses.csv");
    fs::write(&poses, format!("{HEADER}a,s1,0,0,0,0,day\nb,s1,1,0,0,NaN,day\n")).unwrap();
    let err = cli(&["mine", "--poses", p(&poses), "--out", p(&dir.path().join("x"))]).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("line 3") && msg.contains("yaw_rad"), "{msg}");
}

/// Writes a pose log where every scene in `groups[i]` sees location `i`.
fn grouped_log(dir: &Path, groups: &[&[&str]]) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut text = HEADER.to_string();
    for (loc, scenes) in groups.iter().enumerate() {
        for s in scenes.iter() {
            text.push_str(&format!("{s}_{loc},{s},{},{},0,0,day\n", loc * 10_000_000, loc * 1000));
        }
    }
    let poses = dir.join("poses.csv");
    let pairs = dir.join("pairs.jsonl");
    fs::write(&poses, text).unwrap();
    cli(&["mine", "--poses", p(&poses), "--out", p(&pairs)]).unwrap();
    (poses, pairs)
}

#[test]
fn split_single_scene_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let (poses, pairs) = grouped_log(dir.path(), &[&["s1"], &["s1"]]);
    let out = dir.path().join("split.json");
    cli(&["split", "--poses", p(&poses), "--pairs", p(&pairs), "--out", p(&out)]).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["isolated_scenes"], serde_json::json!(["s1"]));
    assert_eq!(v["train_scenes"], serde_json::json!([]));
    assert_eq!(v["test_scenes"], serde_json::json!([]));
    assert_eq!(v["train_stats"]["samples"], 2);
}

#[test]
fn split_two_components_half_each() {
    let dir = tempfile::tempdir().unwrap();
    let (poses, pairs) = grouped_log(dir.path(), &[&["a1", "a2"], &["b1", "b2"]]);
    let out = dir.path().join("split.json");
    cli(&["split", "--poses", p(&poses), "--pairs", p(&pairs), "--out", p(&out), "--test-fraction", "0.5"]).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let train = v["train_scenes"].as_array().unwrap();
    let test = v["test_scenes"].as_array().unwrap();
    assert_eq!((train.len(), test.len()), (2, 2));
    let prefix = |a: &Vec<serde_json::Value>| a.iter().map(|s| s.as_str().unwrap()[..1].to_string()).collect::<HashSet<_>>();
    assert_eq!(prefix(train).len(), 1);
    assert_eq!(prefix(test).len(), 1);
    assert_ne!(prefix(train), prefix(test));
}

#[test]
fn split_ten_components_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<[String; 2]> = (0..10).map(|i| [format!("c{i}x"), format!("c{i}y")]).collect();
    let refs: Vec<Vec<&str>> = names.iter().map(|n| vec![n[0].as_str(), n[1].as_str()]).collect();
    let groups: Vec<&[&str]> = refs.iter().map(|v| v.as_slice()).collect();
    let (poses, pairs) = grouped_log(dir.path(), &groups);
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        cli(&["--seed", "5", "split", "--poses", p(&poses), "--pairs", p(&pairs), "--out", p(&out)]).unwrap();
        fs::read(out).unwrap()
    };
    let a = run_once("a.json");
    assert_eq!(a, run_once("b.json"));
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["test_scenes"].as_array().unwrap().len(), 4);
}

fn ramp(h: usize, w: usize, k: usize, offset: f32) -> FeatureMap<f32> {
    FeatureMap::from_fn(h, w, k, |i, j, c| offset + (i * w * k + j * k + c) as f32 * 0.1).unwrap()
}

#[test]
fn aggregate_spoc_single_map() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("s1.visual.fmap");
    write_fmap(&f, &ramp(2, 2, 5, 0.0)).unwrap();
    let out = dir.path().join("d.desc");
    cli(&["aggregate", "--variant", "spoc", "--visual", p(&f), "--out", p(&out)]).unwrap();
    let db = read_desc_db(&out).unwrap();
    assert_eq!((db.len(), db.dim()), (1, 5));
    assert_eq!(db.ids(), ["s1"]);
}

#[test]
fn aggregate_fused_is_640() {
    let dir = tempfile::tempdir().unwrap();
    let mut vis = Vec::new();
    let mut st = Vec::new();
    for i in 0..3 {
        let v = dir.path().join(format!("q{i}.v.fmap"));
        let s = dir.path().join(format!("q{i}.s.fmap"));
        write_fmap(&v, &ramp(4, 4, 8, i as f32)).unwrap();
        write_fmap(&s, &ramp(4, 4, 16, 2.0 * i as f32 + 0.5)).unwrap();
        vis.push(v);
        st.push(s);
    }
    let out = dir.path().join("f.desc");
    for variant in ["netvlad", "conv_ap", "eigenplaces", "mixvpr"] {
        let mut args = vec!["aggregate", "--variant", variant, "--out", p(&out), "--visual"];
        args.extend(vis.iter().map(|x| p(x)));
        args.push("--structural");
        args.extend(st.iter().map(|x| p(x)));
        cli(&args).unwrap_or_else(|e| panic!("{variant}: {e:#}"));
        let db = read_desc_db(&out).unwrap();
        assert_eq!((db.len(), db.dim()), (3, 640), "{variant}");
        for i in 0..3 {
            let n: f32 = db.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn aggregate_rejects_bad_magic_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.fmap");
    let mut bytes = encode_fmap(&ramp(2, 2, 2, 0.0)).unwrap();
    bytes[1] = b'Z';
    fs::write(&f, &bytes).unwrap();
    let out = dir.path().join("d.desc");
    let err = format!("{:#}", cli(&["aggregate", "--variant", "spoc", "--visual", p(&f), "--out", p(&out)]).unwrap_err());
    assert!(err.contains("byte 0") && err.contains("magic"), "{err}");
    bytes[1] = b'M';
    fs::write(&f, &bytes[..bytes.len() - 3]).unwrap();
    let err = format!("{:#}", cli(&["aggregate", "--variant", "spoc", "--visual", p(&f), "--out", p(&out)]).unwrap_err());
    assert!(err.contains(&format!("byte {}", bytes.len() - 3)) && err.contains("truncated"), "{err}");
}

#[test]
fn aggregate_dim_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.fmap");
    write_fmap(&f, &ramp(2, 2, 5, 0.0)).unwrap();
    let err = cli(&["--dim", "640", "aggregate", "--variant", "gem", "--visual", p(&f), "--out", p(&dir.path().join("o"))]);
    assert!(err.is_err());
}

fn write_pairs(path: &Path, pairs: &[PairSet]) {
    let mut buf = Vec::new();
    placerec::io::write_pairsets(pairs, &mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

#[test]
fn eval_identity_with_self_excluded_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    // Pairs (0,1), (2,3), ... sit close together; pairs are far apart.
    let rows: Vec<(String, placerec::tensor::Descriptor<f32>)> = (0..10)
        .map(|i| (format!("s{i}"), placerec::tensor::Descriptor::new(vec![(i / 2) as f32 * 10.0, (i % 2) as f32 * 0.1])))
        .collect();
    let db = DescriptorDb::from_rows(rows).unwrap();
    let desc = dir.path().join("d.desc");
    write_desc_db(&desc, &db).unwrap();
    let pairs: Vec<PairSet> = (0..10)
        .map(|i| PairSet {
            query_id: format!("s{i}"),
            positives: vec![format!("s{}", i ^ 1)],
            negatives: vec![],
            difficulty: Some(placerec::geometry::Difficulty::Easy),
        })
        .collect();
    let pj = dir.path().join("p.jsonl");
    write_pairs(&pj, &pairs);
    let json = dir.path().join("r.json");
    let text = cli(&["eval", "--query", p(&desc), "--db", p(&desc), "--pairs", p(&pj), "--json", p(&json)]).unwrap();
    assert!(text.contains("run                100.00   100.00   100.00 |   100.00   100.00   100.00"), "{text}");
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(v[0]["report"]["overall"]["recall"], serde_json::json!([1.0, 1.0, 1.0]));
}

#[test]
fn eval_comparison_emits_improvements() {
    let dir = tempfile::tempdir().unwrap();
    let good = DescriptorDb::new(vec!["a".into(), "b".into(), "c".into()], 1, vec![0.0f32, 0.1, 5.0]).unwrap();
    let bad = DescriptorDb::new(vec!["a".into(), "b".into(), "c".into()], 1, vec![0.0f32, 5.0, 0.1]).unwrap();
    let (g, b) = (dir.path().join("g.desc"), dir.path().join("b.desc"));
    write_desc_db(&g, &good).unwrap();
    write_desc_db(&b, &bad).unwrap();
    let pj = dir.path().join("p.jsonl");
    write_pairs(
        &pj,
        &[PairSet { query_id: "a".into(), positives: vec!["b".into()], negatives: vec![], difficulty: Some(placerec::geometry::Difficulty::Hard) }],
    );
    let text = cli(&[
        "eval", "--query", p(&b), "--db", p(&b), "--pairs", p(&pj), "--ks", "1", "--name", "base",
        "--compare-query", p(&g), "--compare-db", p(&g), "--compare-name", "ours",
    ])
    .unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("Improvements") && last.contains("100.00"), "{text}");
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cli(&["--seed", "3", "synth", "--out", p(&a), "--regions", "3"]).unwrap();
    cli(&["--seed", "3", "synth", "--out", p(&b), "--regions", "3"]).unwrap();
    for entry in fs::read_dir(a.join("fmaps")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join("fmaps").join(&name)).unwrap(), fs::read(b.join("fmaps").join(&name)).unwrap());
    }
    assert_eq!(fs::read(a.join("poses.csv")).unwrap(), fs::read(b.join("poses.csv")).unwrap());
}

#[test]
fn synth_night_corruption_fused_at_least_visual() {
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("c");
    let s = |x: &Path| x.to_str().unwrap().to_string();
    cli(&["--seed", "11", "synth", "--out", p(&c), "--corruption", "0.1"]).unwrap();
    let pairs = dir.path().join("pairs.jsonl");
    cli(&["mine", "--poses", &s(&c.join("poses.csv")), "--out", p(&pairs)]).unwrap();
    let (v, f) = (dir.path().join("v.desc"), dir.path().join("f.desc"));
    cli(&["aggregate", "--corpus", p(&c), "--variant", "gem", "--out", p(&v)]).unwrap();
    cli(&["--dim", "32", "aggregate", "--corpus", p(&c), "--fuse", "--variant", "gem", "--out", p(&f)]).unwrap();
    let json = dir.path().join("r.json");
    cli(&[
        "eval", "--query", p(&v), "--db", p(&v), "--pairs", p(&pairs), "--poses", &s(&c.join("poses.csv")),
        "--compare-query", p(&f), "--compare-db", p(&f), "--json", p(&json),
    ])
    .unwrap();
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    let r1 = |i: usize| r[i]["report"]["overall"]["recall"][0].as_f64().unwrap();
    assert!(r1(1) >= r1(0), "fused {} < visual {}", r1(1), r1(0));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[loss]\nn_neg = 0\n").unwrap();
    let err = format!("{:#}", cli(&["--config", p(&cfg), "train", "--steps", "1"]).unwrap_err());
    assert!(err.contains("loss.n_neg") && err.contains("[1, inf)"), "{err}");
    let err = format!("{:#}", cli(&["--margin=-2", "train", "--steps", "1"]).unwrap_err());
    assert!(err.contains("loss.margin"), "{err}");
}

#[test]
fn gradcheck_and_train_commands() {
    let text = cli(&["gradcheck", "--seeds", "2"]).unwrap();
    assert!(text.contains("gem_p_visual") && text.contains("worst relative error"), "{text}");
    let csv = cli(&["train", "--steps", "3", "--lr", "0.1"]).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("step,loss_F,loss_R,loss_B,w_v,w_s\n"));
    let mined = cli(&["train", "--steps", "3", "--mining"]).unwrap();
    assert!(mined.starts_with("step,loss_F,loss_R,loss_B,w_v,w_s,hard_ratio\n"));
}
