//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{lesionfuse, s, tree};
use lesionfuse::augment::{DatasetEntry, DatasetManifest};
use lesionfuse::ensemble::{
    compose_class, fuse_image, required_keys, FusionRecipe, LesionClass, MaskSource, MemorySource, PredictionKey,
    PredictionManifest, Resolution,
};
use lesionfuse::grade::{read_grades, write_grades, Grade, GradeRecord};
use lesionfuse::metrics::{mean_dsc, quadratic_weighted_kappa, BinaryConfusion, GradeConfusion};
use lesionfuse::postprocess::{distribute_overlap, postprocess, write_overlap_report, OverlapPolicy};
use lesionfuse::raster::Raster;
use lesionfuse::synth::{write_corpus, SynthConfig};
use lesionfuse::tim::{default_thresholds, revise_batch, revise_grade, write_audit, ConditionVector, InspectionMode};
use lesionfuse::{png_io, store, BinaryMask, Dims, Error, FlipAxis, Rotation};
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if let false = $cond {
            return Err(format!($($msg)+));
        }
    };
}

struct Criterion {
    number: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

// ---------------------------------------------------------------- 1

fn flags(bits: u8) -> [bool; 3] {
    [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0]
}

/// Revision table from the adjustment rules, on raw flags.
fn table(prelim: u8, c_min: [bool; 3], c_max: [bool; 3], any_index: bool) -> u8 {
    let s0 = c_min.iter().filter(|&&b| b).count();
    let s1 = c_max.iter().filter(|&&b| b).count();
    let check = || {
        let j = c_min.iter().position(|&b| !b).unwrap();
        if any_index {
            s1 >= 1
        } else {
            c_max[j]
        }
    };
    match (prelim, s0) {
        (0, 3) => 0,
        (0, 2) => u8::from(check()),
        (0, _) => 1,
        (1, 3) => 0,
        (1, _) if s1 == 3 => 2,
        (1, _) => 1,
        (2, 3) => 1,
        (2, 2) if check() => 2,
        (2, 2) => 1,
        (2, _) => 2,
        _ => unreachable!(),
    }
}

fn tim_table() -> Outcome {
    let mut checked = 0;
    for mode in [InspectionMode::SameIndex, InspectionMode::AnyIndex] {
        let mut consistent = 0;
        for prelim in Grade::ALL {
            for lo in 0..8u8 {
                for hi in 0..8u8 {
                    let cv = ConditionVector::from_flags(flags(lo), flags(hi));
                    let got = revise_grade(prelim, &cv, mode);
                    if lo & hi != 0 {
                        ensure!(
                            matches!(got, Err(Error::InconsistentConditionVector(_))),
                            "inconsistent vector {lo:03b}/{hi:03b} accepted"
                        );
                        continue;
                    }
                    consistent += 1;
                    let (revised, _) = got.map_err(|e| e.to_string())?;
                    let want = table(prelim.level(), flags(lo), flags(hi), mode == InspectionMode::AnyIndex);
                    ensure!(
                        revised.level() == want,
                        "{mode} prelim {prelim} c_min {lo:03b} c_max {hi:03b}: got {revised}, want {want}"
                    );
                    ensure!(revised.level().abs_diff(prelim.level()) <= 1, "adjacency broken");
                }
            }
        }
        ensure!(consistent == 81, "{mode}: {consistent} consistent cases");
        checked += consistent;
    }
    Ok(format!("{checked} consistent cases over 2 modes, 222 inconsistent rejected"))
}

// ---------------------------------------------------------------- 2

fn thresholds() -> Outcome {
    let th = default_thresholds();
    ensure!(th.t_min == [676, 16900, 784], "t_min {:?}", th.t_min);
    ensure!(th.t_max == [6084, 562500, 10000], "t_max {:?}", th.t_max);
    ensure!(th.reference_dims == Dims::square(1024), "reference {}", th.reference_dims);
    Ok("t_min (676, 16900, 784), t_max (6084, 562500, 10000)".into())
}

// ---------------------------------------------------------------- 3

const SMALL: usize = 64;

fn side(r: Resolution) -> usize {
    match r {
        Resolution::R1024 => SMALL,
        Resolution::R1536 => SMALL * 3 / 2,
    }
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize) -> BinaryMask {
    // density 1/4, 1/8 or 1/16 by AND-ing random words
    let ands = rng.gen_range(1..4);
    let mut bits = Vec::with_capacity(n * n);
    while bits.len() < n * n {
        let mut w: u64 = rng.gen();
        for _ in 0..ands {
            w &= rng.gen::<u64>();
        }
        bits.extend((0..64).map(|b| w >> b & 1 == 1));
    }
    bits.truncate(n * n);
    BinaryMask::from_bits(Dims::square(n), bits).unwrap()
}

fn turn_point(mut x: usize, mut y: usize, n: usize, quarter_turns: u32) -> (usize, usize) {
    for _ in 0..quarter_turns {
        (x, y) = (y, n - 1 - x);
    }
    (x, y)
}

/// Per-pixel OR over every term's aligned, canonicalized predictions.
fn fusion_oracle(src: &MemorySource, recipe: &FusionRecipe, id: &str, class: LesionClass) -> BinaryMask {
    let mut inputs = Vec::new();
    for t in recipe.terms(class) {
        let degrees: &[u32] = if t.multi_angle { &[0, 90, 180, 270] } else { &[0] };
        for &deg in degrees {
            let key = PredictionKey::new(id, class, t.model, t.resolution, Rotation::from_degrees(deg).unwrap());
            inputs.push((side(t.resolution), deg / 90, &src.masks[&key]));
        }
    }
    BinaryMask::from_fn(Dims::square(SMALL), |x, y| {
        inputs.iter().any(|&(n, turns, m)| {
            let sx = ((x as f64 + 0.5) * n as f64 / SMALL as f64).floor() as usize;
            let sy = ((y as f64 + 0.5) * n as f64 / SMALL as f64).floor() as usize;
            let (px, py) = turn_point(sx, sy, n, turns);
            m.get(px, py)
        })
    })
}

fn ensemble_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let recipes = FusionRecipe::builtins();
    let mut compared = 0;
    for fixture in 0..1000 {
        let id = format!("f{fixture}");
        let mut src = MemorySource::new(Dims::square(SMALL));
        for recipe in &recipes {
            for key in required_keys(recipe, &id) {
                if !src.contains(&key) {
                    let m = random_mask(&mut rng, side(key.resolution));
                    src.insert(key, m);
                }
            }
        }
        for recipe in &recipes {
            for class in LesionClass::ALL {
                let got = compose_class(&src, recipe, &id, class).map_err(|e| e.to_string())?;
                ensure!(
                    got == fusion_oracle(&src, recipe, &id, class),
                    "fixture {fixture} recipe {} class {class} differs",
                    recipe.name
                );
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} class outputs bit-identical over 1000 fixtures"))
}

// ---------------------------------------------------------------- 4

fn rot90_by_map(m: &BinaryMask) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            bits[(w - 1 - x) * h + y] = m.get(x, y);
        }
    }
    BinaryMask::from_bits(Dims::new(h, w).unwrap(), bits).unwrap()
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..10_000 {
        let d = Dims::new(rng.gen_range(1..17), rng.gen_range(1..17)).unwrap();
        let m = BinaryMask::from_bits(d, (0..d.area()).map(|_| rng.gen()).collect()).unwrap();
        let a = Rotation::ALL[rng.gen_range(0..4)];
        let b = Rotation::ALL[rng.gen_range(0..4)];
        let axis = if rng.gen() { FlipAxis::Horizontal } else { FlipAxis::Vertical };
        let r90 = m.rotate_ccw(Rotation::R90);
        let fail = |what: &str| Err(format!("trial {trial} ({d}, {a}, {b}, {axis:?}): {what}"));
        if r90 != rot90_by_map(&m) {
            return fail("90 degree turn disagrees with the coordinate map");
        }
        if r90.rotate_ccw(Rotation::R90).rotate_ccw(Rotation::R90).rotate_ccw(Rotation::R90) != m {
            return fail("four quarter turns");
        }
        if m.rotate_ccw(Rotation::R180).rotate_ccw(Rotation::R180) != m {
            return fail("two half turns");
        }
        let back = Rotation::from_degrees((360 - a.degrees()) % 360).unwrap();
        if m.rotate_ccw(a).rotate_ccw(back) != m {
            return fail("turn then its inverse");
        }
        if m.rotate_ccw(a).rotate_ccw(b) != m.rotate_ccw(a.then(b)) {
            return fail("composition");
        }
        if m.flip(axis).flip(axis) != m {
            return fail("flip involution");
        }
        if m.flip(FlipAxis::Horizontal).flip(FlipAxis::Vertical) != m.rotate_ccw(Rotation::R180) {
            return fail("both flips vs half turn");
        }
        if m.rotate_ccw(a).pixel_count() != m.pixel_count() || m.flip(axis).pixel_count() != m.pixel_count() {
            return fail("pixel count");
        }
    }
    Ok("10000 trials, 0 failures".into())
}

// ---------------------------------------------------------------- 5

fn kappa_exact(counts: [[u64; 3]; 3]) -> BigRational {
    let q = |n: u64| BigRational::from_integer(n.into());
    let n: u64 = counts.iter().flatten().sum();
    let rows: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..3).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    let (mut num, mut den) = (q(0), q(0));
    for i in 0..3usize {
        for j in 0..3usize {
            let d = i.abs_diff(j) as u64;
            let w = q(d * d) / q(4);
            num += w.clone() * q(counts[i][j]);
            den += w * q(rows[i] * cols[j]) / q(n);
        }
    }
    q(1) - num / den
}

fn within(value: f64, exact: &BigRational, tol: f64) -> bool {
    let d = BigRational::from_float(value).unwrap() - exact;
    let t = BigRational::from_float(tol).unwrap();
    d.clone() < t && -d < t
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let c = BinaryConfusion {
            tp: rng.gen_range(0..1_000_000),
            fp: rng.gen_range(0..1_000_000),
            fn_: rng.gen_range(1..1_000_000),
            tn: rng.gen_range(0..1_000_000),
        };
        let iou = c.iou();
        ensure!((c.dice() - 2.0 * iou / (1.0 + iou)).abs() < 1e-12, "dice/iou identity fails for {c:?}");
    }
    for diag in [[3, 0, 5], [1, 1, 1], [0, 4, 9], [7, 2, 0]] {
        let mut m = [[0; 3]; 3];
        for i in 0..3 {
            m[i][i] = diag[i];
        }
        let k = quadratic_weighted_kappa(&GradeConfusion::new(m)).map_err(|e| e.to_string())?;
        ensure!(k == 1.0, "diagonal {m:?} gives {k}");
    }
    for (r, c) in [([1, 2, 3], [3, 2, 1]), ([2, 0, 5], [1, 1, 4]), ([4, 4, 1], [2, 7, 3])] {
        let m = [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[i] * c[j]));
        let k = quadratic_weighted_kappa(&GradeConfusion::new(m)).map_err(|e| e.to_string())?;
        ensure!(k.abs() < 1e-12, "independent {m:?} gives {k}");
    }
    let fixed = [[2, 1, 0], [0, 2, 1], [0, 0, 3]];
    let k = quadratic_weighted_kappa(&GradeConfusion::new(fixed)).map_err(|e| e.to_string())?;
    let exact = kappa_exact(fixed);
    ensure!(within(k, &exact, 1e-12), "fixed matrix: {k} vs exact {exact}");
    Ok(format!("1000 dice/iou pairs; diagonal 1; independence 0; fixed matrix {k:.12} = {exact}"))
}

// ---------------------------------------------------------------- 6

fn reported_arithmetic() -> Outcome {
    let a = mean_dsc(&[0.4402, 0.6426, 0.5803]).map_err(|e| e.to_string())?;
    let b = mean_dsc(&[0.3579, 0.6198, 0.5704]).map_err(|e| e.to_string())?;
    ensure!((a - 0.5544).abs() <= 1e-4, "v2 mean DSC {a}");
    ensure!((b - 0.5161).abs() <= 5e-4, "v1 mean DSC {b}");
    Ok(format!("mean DSC {a:.6} (0.5544), {b:.6} (0.5161)"))
}

// ---------------------------------------------------------------- 7

fn augment_counts() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = Dims::new(2, 2).unwrap();
    let image = dir.path().join("image.png");
    png_io::save_raster(&Raster::filled(d, 1, 50).unwrap(), &image).map_err(|e| e.to_string())?;
    let lesion = dir.path().join("lesion.png");
    png_io::save_mask(&BinaryMask::from_fn(d, |x, y| x == 1 && y == 0), &lesion).map_err(|e| e.to_string())?;
    let clean = dir.path().join("clean.png");
    png_io::save_mask(&BinaryMask::empty(d), &clean).map_err(|e| e.to_string())?;

    let mut graded = DatasetManifest::default();
    for (g, n) in [328, 213, 70].into_iter().enumerate() {
        for i in 0..n {
            graded.entries.push(DatasetEntry {
                image_id: format!("g{g}-{i}"),
                path: image.clone(),
                mask_a: None,
                mask_b: None,
                grade: Some(Grade::from_level(g as u8).unwrap()),
            });
        }
    }
    let mut seg = DatasetManifest::default();
    for i in 0..109 {
        seg.entries.push(DatasetEntry {
            image_id: format!("s{i}"),
            path: image.clone(),
            mask_a: Some(if i < 88 { lesion.clone() } else { clean.clone() }),
            mask_b: Some(if i < 106 { lesion.clone() } else { clean.clone() }),
            grade: None,
        });
    }
    let mut reports = Vec::new();
    for (name, m) in [("graded", &graded), ("seg", &seg)] {
        let csv = dir.path().join(format!("{name}.csv"));
        m.write_csv(&csv, None).map_err(|e| e.to_string())?;
        let out = dir.path().join(format!("{name}-out"));
        let run = lesionfuse(&["augment", "--manifest", s(&csv), "--out", s(&out)]);
        ensure!(run.status.success(), "augment failed: {}", String::from_utf8_lossy(&run.stderr));
        let text = fs::read_to_string(out.join("expansion_report.json")).map_err(|e| e.to_string())?;
        reports.push(serde_json::from_str::<serde_json::Value>(&text).map_err(|e| e.to_string())?);
    }
    let (g, sg) = (&reports[0], &reports[1]);
    ensure!(g["input"]["images"] == 611, "graded input {}", g["input"]["images"]);
    ensure!(g["output"]["images"] == 3666, "graded output {}", g["output"]["images"]);
    ensure!(
        g["output"]["per_grade"] == serde_json::json!([1968, 1278, 420]),
        "per grade {}",
        g["output"]["per_grade"]
    );
    ensure!(sg["input"]["images"] == 109 && sg["output"]["images"] == 654, "seg totals");
    let split = |fam: &str| {
        (
            sg["output"][fam]["with_lesions"].as_u64().unwrap(),
            sg["output"][fam]["without_lesions"].as_u64().unwrap(),
        )
    };
    ensure!(split("mask_a") == (528, 126), "mask A {:?}", split("mask_a"));
    ensure!(split("mask_b") == (636, 18), "mask B {:?}", split("mask_b"));
    Ok("611 -> 3666 (1968/1278/420); 109 -> 654 (A 528/126, B 636/18)".into())
}

// ---------------------------------------------------------------- 8

fn overlap_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for pair in 0..1000 {
        let d = Dims::new(rng.gen_range(1..40), rng.gen_range(1..40)).unwrap();
        let p1 = rng.gen_range(0.0..1.0);
        let p3 = rng.gen_range(0.0..1.0);
        let o1 = BinaryMask::from_bits(d, (0..d.area()).map(|_| rng.gen_bool(p1)).collect()).unwrap();
        let o3 = BinaryMask::from_bits(d, (0..d.area()).map(|_| rng.gen_bool(p3)).collect()).unwrap();
        let first = distribute_overlap("p", &o1, &o3).map_err(|e| e.to_string())?;
        let (a, b) = (&first.0, &first.1);
        ensure!(a.union(b).unwrap() == o1.union(&o3).unwrap(), "pair {pair}: union changed");
        ensure!(a.intersect(b).unwrap() == o1.intersect(&o3).unwrap(), "pair {pair}: intersection changed");
        ensure!(o1.is_subset_of(a) && o3.is_subset_of(b), "pair {pair}: inclusion");
        let second = distribute_overlap("p", a, b).map_err(|e| e.to_string())?;
        ensure!(second == first, "pair {pair}: not idempotent");
    }
    Ok("1000 pairs conserve union and intersection, idempotent".into())
}

// ---------------------------------------------------------------- 9

const E2E_SEED: u64 = 17;
const E2E_IMAGES: usize = 3;

fn run_pipeline(root: &Path) -> Result<(), String> {
    let corpus = root.join("corpus");
    let steps: [Vec<String>; 3] = [
        vec!["synth".into(), "--seed".into(), E2E_SEED.to_string(), "--n-images".into(), E2E_IMAGES.to_string(), "--out".into(), s(&corpus).into()],
        vec!["fuse".into(), "--recipe".into(), "tim".into(), "--manifest".into(), s(&corpus.join("manifest.csv")).into(), "--out".into(), s(&root.join("fused")).into()],
        vec![
            "grade-revise".into(), "--prelim".into(), s(&corpus.join("prelim_grades.csv")).into(), "--fused".into(),
            s(&root.join("fused")).into(), "--out".into(), s(&root.join("revised")).into(),
        ],
    ];
    for args in &steps {
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = lesionfuse(&argv);
        ensure!(out.status.success(), "{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr));
    }
    Ok(())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&a)?;
    run_pipeline(&b)?;
    let (ta, tb) = (tree(&a), tree(&b));
    ensure!(ta.len() == tb.len(), "runs wrote {} vs {} files", ta.len(), tb.len());
    for ((pa, ba), (pb, bb)) in ta.iter().zip(&tb) {
        ensure!(pa == pb && ba == bb, "runs differ at {}", pa.display());
    }

    // same artifacts from direct library calls
    let lib = dir.path().join("lib");
    let cfg = SynthConfig {
        seed: E2E_SEED,
        n_images: E2E_IMAGES,
        ..Default::default()
    };
    write_corpus(&cfg, &lib).map_err(|e| e.to_string())?;
    let corpus_cli = tree(&a.join("corpus"));
    ensure!(corpus_cli == tree(&lib), "synth output differs from write_corpus");

    let manifest = PredictionManifest::read_csv(&lib.join("manifest.csv"), cfg.canonical()).map_err(|e| e.to_string())?;
    let mut fused = Vec::new();
    let mut reports = Vec::new();
    for id in manifest.image_ids() {
        let f = fuse_image(&manifest, &FusionRecipe::tim(), &id).map_err(|e| e.to_string())?;
        let (f, r) = postprocess(f, OverlapPolicy::Both).map_err(|e| e.to_string())?;
        for class in LesionClass::ALL {
            let cli = fs::read(store::class_mask_path(&a.join("fused"), &id, class)).map_err(|e| e.to_string())?;
            ensure!(cli == png_io::encode_mask(f.class_mask(class)).unwrap(), "{id} class {class} differs");
        }
        fused.push(f);
        reports.push(r);
    }
    let check_file = |name: &str, cli: &Path, write: &dyn Fn(&Path) -> lesionfuse::Result<()>| -> Result<(), String> {
        let p = lib.join(name);
        write(&p).map_err(|e| e.to_string())?;
        ensure!(fs::read(&p).unwrap() == fs::read(cli).unwrap(), "{name} differs from library output");
        Ok(())
    };
    check_file("overlap.csv", &a.join("fused/overlap_report.csv"), &|p| write_overlap_report(p, &reports))?;

    let prelim = read_grades(&lib.join("prelim_grades.csv")).map_err(|e| e.to_string())?;
    let records =
        revise_batch(&prelim, &fused, &default_thresholds(), InspectionMode::SameIndex).map_err(|e| e.to_string())?;
    let revised: Vec<_> = records.iter().map(|r| GradeRecord::new(r.image_id.clone(), r.revised)).collect();
    check_file("revised.csv", &a.join("revised/revised_grades.csv"), &|p| write_grades(p, &revised))?;
    check_file("audit.csv", &a.join("revised/audit.csv"), &|p| write_audit(p, &records))?;

    let changed = records.iter().filter(|r| r.revised != r.preliminary).count();
    Ok(format!(
        "{} files byte-identical across runs and equal to library calls; {changed}/{} grades revised",
        ta.len(),
        records.len()
    ))
}

fn main() {
    let criteria = [
        Criterion { number: 1, name: "TIM decision-table exhaustion", limit: Some(Duration::from_secs(1)), run: tim_table },
        Criterion { number: 2, name: "threshold constants", limit: None, run: thresholds },
        Criterion { number: 3, name: "ensemble-oracle equivalence", limit: Some(Duration::from_secs(30)), run: ensemble_oracle },
        Criterion { number: 4, name: "rotation/flip algebra", limit: Some(Duration::from_secs(10)), run: geometry },
        Criterion { number: 5, name: "metric identities", limit: None, run: metric_identities },
        Criterion { number: 6, name: "reported score arithmetic", limit: None, run: reported_arithmetic },
        Criterion { number: 7, name: "augmentation counts", limit: None, run: augment_counts },
        Criterion { number: 8, name: "postprocess conservation", limit: None, run: overlap_conservation },
        Criterion { number: 9, name: "end-to-end determinism", limit: None, run: end_to_end },
    ];
    let suite = Instant::now();
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!("took {elapsed:.2?}, limit {limit:?}"));
            }
        }
        if c.number == 9 && suite.elapsed() > Duration::from_secs(120) {
            outcome = Err(format!("suite took {:.2?}, limit 2 minutes", suite.elapsed()));
        }
        match outcome {
            Ok(detail) => println!("PASS [{}] {} ({elapsed:.2?}): {detail}", c.number, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {} ({elapsed:.2?}): {why}", c.number, c.name);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.2?}",
        criteria.len() - failed,
        suite.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
