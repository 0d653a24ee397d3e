//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Criteria 5 to 8 share two full default-config pipeline runs and take
//! roughly ten minutes on one core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::suites::{self, Check};
use common::*;

use weatherclass::data::*;
use weatherclass::pipeline::*;
use weatherclass::{Domain, Error, Tensor};

type Verdict = std::result::Result<String, String>;

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn run_checks(checks: &[Check], budget_secs: f64) -> Verdict {
    let start = Instant::now();
    for (name, check) in checks {
        catch_unwind(check).map_err(|p| format!("{name}: {}", panic_message(p)))?;
    }
    let secs = start.elapsed().as_secs_f64();
    if secs > budget_secs {
        return Err(format!(
            "{} checks took {secs:.1} s (budget {budget_secs} s)",
            checks.len()
        ));
    }
    Ok(format!("{} checks in {secs:.1} s", checks.len()))
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(panic_message(p)))
}

// ── formatting and codec ────────────────────────────────────────────────

fn fixtures() -> Verdict {
    let table = weatherclass::metrics::render_lighting_table(&[("EVA-02", &eva02_baseline())]);
    let row = table.lines().nth(2).unwrap_or_default();
    if row != EVA02_ROW {
        return Err(format!("baseline row {row:?}"));
    }
    for (before, after, expected) in night_diff_fixtures() {
        let (b, a) = night_pair(before, after);
        let got = diff_row_text(&b, &a, "Night");
        if got != expected {
            return Err(format!("diff row {got:?}, expected {expected:?}"));
        }
    }
    Ok(format!(
        "EVA-02 row and {} Night diff rows verbatim",
        night_diff_fixtures().len()
    ))
}

fn codec() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut r = rng(10);
    for i in 0..100 {
        let (h, w) = (1 + i % 17, 1 + (i * 7) % 23);
        let x = Tensor::uniform(&[3, h, w], -1.0, 1.0, &mut r);
        let back =
            decode_ppm(&encode_ppm(&x).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        if back.shape() != x.shape() {
            return Err(format!(
                "shape {:?} came back as {:?}",
                x.shape(),
                back.shape()
            ));
        }
        for (a, b) in x.data().iter().zip(back.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst > 1.0 / 127.5 + 1e-12 {
        return Err(format!("round-trip error {worst}"));
    }
    let corpus = malformed_ppm_corpus();
    for bytes in &corpus {
        match decode_ppm(bytes) {
            Err(Error::Format { .. }) => {}
            other => {
                return Err(format!(
                    "{:?} gave {other:?}",
                    String::from_utf8_lossy(bytes)
                ))
            }
        }
    }
    Ok(format!(
        "max error {worst:.5}, {} malformed files rejected",
        corpus.len()
    ))
}

// ── end-to-end runs ─────────────────────────────────────────────────────

struct E2e {
    first: PipelineOutcome,
    second_dir: std::path::PathBuf,
    secs: f64,
    manifest: Manifest,
}

fn e2e(root: &Path) -> std::result::Result<E2e, String> {
    let config = PipelineConfig::default();
    let data = root.join("data");
    let manifest_path =
        generate_dataset(&config.data, &data, config.seed).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let first =
        run_pipeline(&config, &manifest_path, &root.join("run-a")).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    run_pipeline(&config, &manifest_path, &root.join("run-b")).map_err(|e| e.to_string())?;
    Ok(E2e {
        first,
        second_dir: root.join("run-b"),
        secs,
        manifest: load_manifest(&manifest_path).map_err(|e| e.to_string())?,
    })
}

fn directional(run: &E2e) -> Verdict {
    let acc = |r: &weatherclass::metrics::MetricsReport, d| {
        r.domain(d).map(|m| m.accuracy).ok_or("missing stratum")
    };
    let (b, a) = (&run.first.before, &run.first.after);
    let (bd, bn, ad, an) = (
        acc(b, Domain::Day)?,
        acc(b, Domain::Night)?,
        acc(a, Domain::Day)?,
        acc(a, Domain::Night)?,
    );
    let counts = &run.manifest;
    let sizes = [Split::Train, Split::Val, Split::Test].map(|s| counts.split(s).len());
    let summary = format!(
        "{sizes:?} images, {:.0} s; day/night {bd:.2}/{bn:.2} -> {ad:.2}/{an:.2}; gap {:.2} -> {:.2}",
        run.secs,
        bd - bn,
        ad - an
    );
    let mut failed = Vec::new();
    if sizes != [600, 120, 120] {
        failed.push("dataset size");
    }
    if run.secs > 900.0 {
        failed.push("over 15 min");
    }
    if bd - bn < 10.0 {
        failed.push("(a) base gap < 10");
    }
    if an - bn < 10.0 {
        failed.push("(b) night gain < 10");
    }
    if ad - an >= bd - bn {
        failed.push("(c) gap did not narrow");
    }
    if failed.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}: {summary}", failed.join(", ")))
    }
}

fn preservation(run: &E2e) -> Verdict {
    let size = PipelineConfig::default().model.image_size;
    let test = load_split(&run.manifest, Split::Test, size).map_err(|e| e.to_string())?;
    let nights: Vec<&LabeledImage> = test.iter().filter(|x| x.domain == Domain::Night).collect();
    let mut days = Vec::with_capacity(nights.len());
    let mut enhanced = Vec::with_capacity(nights.len());
    for x in &nights {
        let spec = SceneSpec {
            class: x.class,
            domain: Domain::Day,
            seed: x.seed,
            size,
        };
        days.push(render_scene(&spec).map_err(|e| e.to_string())?);
        enhanced.push(read_ppm(&enhanced_path(&x.path)).map_err(|e| e.to_string())?);
    }
    let bundle = &run.first.bundle;
    let day_preds = bundle
        .zero_shot_classify(&days.iter().collect::<Vec<_>>())
        .map_err(|e| e.to_string())?;
    let enh_preds = bundle
        .zero_shot_classify(&enhanced.iter().collect::<Vec<_>>())
        .map_err(|e| e.to_string())?;
    let (mut eligible, mut kept) = (0, 0);
    for ((x, d), e) in nights.iter().zip(&day_preds).zip(&enh_preds) {
        if *d == x.class {
            eligible += 1;
            kept += usize::from(*e == x.class);
        }
    }
    if eligible == 0 {
        return Err("no paired day scene classified correctly".into());
    }
    let rate = 100.0 * kept as f64 / eligible as f64;
    let summary = format!("{kept}/{eligible} = {rate:.1}% of enhanced nights keep their class");
    if rate >= 80.0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn cyclegan_sanity(run: &E2e) -> Verdict {
    let stage = run
        .first
        .stage("train_cyclegan")
        .ok_or("no train_cyclegan stage")?;
    for (name, curve) in &stage.loss_curves {
        if curve.is_empty() || curve.iter().any(|v| !v.is_finite()) {
            return Err(format!("curve {name} empty or non-finite"));
        }
    }
    let cycle = stage.loss_curves.get("cycle").ok_or("no cycle curve")?;
    let (first, last) = (cycle[0], cycle[cycle.len() - 1]);
    let summary = format!(
        "cycle loss {first:.4} -> {last:.4} over {} epochs",
        cycle.len()
    );
    if last < first {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn determinism(run: &E2e) -> Verdict {
    let files = [
        "initial_classify/metrics.json",
        "finetune/metrics.json",
        "reclassify/metrics.json",
        "pretrain/checkpoint.nsck",
        "train_cyclegan/checkpoint.nsck",
        "finetune/checkpoint.nsck",
    ];
    for f in files {
        let read = |dir: &Path| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"));
        if read(&run.first.run_dir)? != read(&run.second_dir)? {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok(format!("{} files bitwise identical", files.len()))
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let mut results: Vec<(usize, String, Verdict)> = Vec::new();
    let mut emit = |n: usize, name: &str, v: Verdict| {
        let (tag, text) = match &v {
            Ok(s) => ("PASS", s),
            Err(s) => ("FAIL", s),
        };
        println!("{tag} {n:>2} {name}: {text}");
        results.push((n, name.to_string(), v));
    };

    emit(
        1,
        "gradient suite",
        run_checks(suites::GRADIENT_CHECKS, 60.0),
    );
    emit(
        2,
        "loss oracles",
        run_checks(suites::ORACLE_CHECKS, f64::INFINITY),
    );
    emit(
        3,
        "smoothing identity",
        run_checks(
            &[("ln 3", suites::uniform_predictions_give_ln3)],
            f64::INFINITY,
        ),
    );
    emit(
        4,
        "pair-set enumeration",
        run_checks(&[("pairs", suites::pair_set_matches_enumeration)], 10.0),
    );

    let root = tempfile::tempdir().expect("tempdir");
    let run = catch_unwind(AssertUnwindSafe(|| e2e(root.path())))
        .unwrap_or_else(|p| Err(panic_message(p)));
    let e2e_checks: [(usize, &str, fn(&E2e) -> Verdict); 4] = [
        (5, "end-to-end directional run", directional),
        (6, "weather preservation", preservation),
        (7, "cyclegan sanity", cyclegan_sanity),
        (8, "determinism", determinism),
    ];
    for (n, name, check) in e2e_checks {
        let verdict = match &run {
            Ok(r) => guarded(|| check(r)),
            Err(e) => Err(format!("pipeline failed: {e}")),
        };
        emit(n, name, verdict);
    }

    emit(9, "formatting fixtures", guarded(fixtures));
    emit(10, "codec", guarded(codec));

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
