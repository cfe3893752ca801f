use std::path::Path;

use actsub_core::detector::{calibrate as calibrate_run, ValidationSplit};
use actsub_core::error::Error;
use actsub_core::eval::{evaluate, histogram, EvalResult};
use actsub_core::scoring::{fuse, DEFAULT_LAMBDA};
use actsub_core::shaping::DEFAULT_PRUNE_FRACTION;
use actsub_core::store::{read_actb, read_wgt, write_actb, write_wgt};
use actsub_core::subspace::{self, alignment_profile, build_basis, factorize, norm_balance_curve};
use actsub_core::synth::{self, gen_world, SynthSpec};
use actsub_core::{ActivationBank, Detector, RunConfig, Setting, WeightHead};
use anyhow::{Context, Result};

use crate::csv::{float, score_table, Table};
use crate::grid;
use crate::{AblateArgs, CalibrateArgs, DiagArgs, EvalArgs, Inputs, ScoreArgs, SynthArgs};

fn load(inputs: &Inputs) -> Result<(WeightHead, ActivationBank)> {
    let head = read_wgt(&inputs.weights)
        .with_context(|| format!("reading {}", inputs.weights.display()))?;
    let train =
        read_actb(&inputs.train).with_context(|| format!("reading {}", inputs.train.display()))?;
    if train.cols() != head.features() {
        return Err(Error::InvalidInput(format!(
            "train bank has {} features, head has {}",
            train.cols(),
            head.features()
        ))
        .into());
    }
    Ok((head, train))
}

fn bank(path: &Path) -> Result<ActivationBank> {
    read_actb(path).with_context(|| format!("reading {}", path.display()))
}

fn config_or_default(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::read(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

struct Grids {
    lambda: Option<Vec<f64>>,
    p: Option<Vec<f64>>,
}

fn grids(args: &[String]) -> Result<Grids> {
    let mut g = Grids {
        lambda: None,
        p: None,
    };
    for a in args {
        let parsed = grid::parse(a)?;
        let slot = if parsed.name == "lambda" {
            &mut g.lambda
        } else {
            &mut g.p
        };
        if slot.replace(parsed.values).is_some() {
            return Err(Error::Config(format!("grid {} given twice", parsed.name)).into());
        }
    }
    Ok(g)
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let (head, train) = load(&a.inputs)?;
    let val_banks = match (&a.val_id, &a.val_ood) {
        (Some(i), Some(o)) => Some((bank(i)?, bank(o)?)),
        (None, None) => None,
        _ => {
            return Err(
                Error::Config("--val-id and --val-ood must be given together".into()).into(),
            )
        }
    };
    let mut cfg = config_or_default(a.config.as_deref())?;
    if a.config.is_none() && val_banks.is_some() {
        cfg.lambda = Setting::Auto;
        cfg.shaping_p = Setting::Auto;
    }
    let g = grids(&a.grids)?;
    let val = val_banks.as_ref().map(|(i, o)| ValidationSplit {
        id: i.features(),
        ood: o.features(),
    });
    let cal = calibrate_run(
        &head,
        &train,
        &cfg,
        val,
        g.lambda.as_deref(),
        g.p.as_deref(),
    )?;
    let det = &cal.detector;
    let resolved = det.config();
    resolved.write(&a.out)?;

    println!("basis={} k={}", resolved.basis, resolved.k);
    if let Some(c) = resolved.clamp_value {
        println!("react clamp={c}");
    }
    if let Some(p) = &cal.prune {
        println!(
            "shaping.p={} (grid {:?})",
            p.best,
            p.grid.iter().map(|g| g.candidate).collect::<Vec<_>>()
        );
    }
    if let Some(l) = &cal.lambda {
        println!(
            "lambda={} (grid {:?})",
            l.best,
            l.grid.iter().map(|g| g.candidate).collect::<Vec<_>>()
        );
    }
    if let Some(fac) = det.parts().factorization {
        let curve = norm_balance_curve(fac, det.parts().train_sample.features())?;
        print_curve(&curve, resolved.k.fixed());
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Summary of the signed norm-balance curve `mean(||a_insig|| - ||a_dec||)`.
fn print_curve(curve: &[f64], k: Option<usize>) {
    let last = curve.len() - 1;
    println!(
        "norm balance: k=0 {:+.6} k=1 {:+.6} k={last} {:+.6}",
        curve[0],
        curve.get(1).copied().unwrap_or(curve[0]),
        curve[last]
    );
    if let Some(k) = k.filter(|&k| k <= last) {
        println!("norm balance at chosen k={k}: {:+.6}", curve[k]);
    }
    if let Some(cross) = curve.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0) {
        println!("sign change between k={cross} and k={}", cross + 1);
    } else {
        println!("no sign change in 0..={last}");
    }
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let (head, train) = load(&a.inputs)?;
    let cfg = config_or_default(a.config.as_deref())?;
    let method = a.method.unwrap_or(cfg.method);
    let cfg = RunConfig { method, ..cfg };
    let input = bank(&a.input)?;
    let det = Detector::fit_with(&head, &train, &cfg, a.s_arrow_component)?;
    let scores = det.score_batch(input.features(), method)?;
    score_table(&scores, method.as_str()).write(&a.out)?;
    Ok(())
}

fn eval_columns(r: &EvalResult) -> [String; 2] {
    [float(r.auroc), float(r.fpr_at_tpr)]
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let id =
        crate::csv::read_scores(&a.id).with_context(|| format!("reading {}", a.id.display()))?;
    let ood =
        crate::csv::read_scores(&a.ood).with_context(|| format!("reading {}", a.ood.display()))?;
    let r = evaluate(&id, &ood, a.tpr)?;
    let mut t = Table::new(&["auroc", "fpr_at_tpr", "tpr_target", "n_id", "n_ood"]);
    let [auc, fpr] = eval_columns(&r);
    t.row(&[
        auc,
        fpr,
        float(r.tpr_target),
        r.n_id.to_string(),
        r.n_ood.to_string(),
    ]);
    t.write(&a.out)?;
    if let Some(path) = &a.hist {
        let mut h = Table::new(&["lo", "hi", "id_count", "ood_count"]);
        for b in histogram(&id, &ood, a.bins)? {
            h.row(&[
                float(b.lo),
                float(b.hi),
                b.id_count.to_string(),
                b.ood_count.to_string(),
            ]);
        }
        h.write(path)?;
    }
    println!(
        "auroc={} fpr@{}={} n_id={} n_ood={}",
        r.auroc, r.tpr_target, r.fpr_at_tpr, r.n_id, r.n_ood
    );
    Ok(())
}

pub fn diag(a: DiagArgs) -> Result<()> {
    let (head, train) = load(&a.inputs)?;
    let cfg = config_or_default(a.config.as_deref())?;
    let fac = factorize(&head)?;
    let sample = train.subsample(cfg.sample_fraction, cfg.seed)?;
    let mut t = Table::new(&["series", "index", "value"]);
    for (i, s) in fac.svd.sigma.iter().enumerate() {
        t.row(&["singular_value".into(), i.to_string(), float(*s)]);
    }
    let curve = norm_balance_curve(&fac, sample.features())?;
    for (k, v) in curve.iter().enumerate() {
        t.row(&["norm_balance".into(), k.to_string(), float(*v)]);
    }
    println!("rank={} nullspace_dim={}", fac.rank, fac.nullspace_dim);
    for kind in &a.basis {
        let strategy = RunConfig {
            basis: *kind,
            ..cfg.clone()
        }
        .basis_strategy();
        let split = build_basis(strategy, &fac, &sample)?;
        let full = split.v_dec.vstack(&split.v_insig)?;
        let profile = alignment_profile(&fac, &full)?;
        let series = format!("alignment_{kind}");
        for (i, v) in profile.iter().enumerate() {
            t.row(&[series.clone(), i.to_string(), float(*v)]);
        }
        let peak = (0..profile.len())
            .max_by(|&x, &y| profile[x].total_cmp(&profile[y]).then(y.cmp(&x)))
            .unwrap_or(0);
        println!(
            "{kind}: split at {} of {}, alignment peak {:.6} at index {peak}",
            split.k,
            full.rows(),
            profile[peak]
        );
    }
    t.write(&a.out)?;
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let (head, train) = load(&a.inputs)?;
    let (vid, vood) = (bank(&a.val_id)?, bank(&a.val_ood)?);
    let cfg = config_or_default(a.config.as_deref())?;
    let g = grids(&a.grids)?;
    let lambdas = g
        .lambda
        .unwrap_or_else(|| vec![cfg.lambda.fixed().unwrap_or(DEFAULT_LAMBDA)]);
    let ps =
        g.p.unwrap_or_else(|| vec![cfg.shaping_p.fixed().unwrap_or(DEFAULT_PRUNE_FRACTION)]);

    let mut t = Table::new(&[
        "basis",
        "component",
        "k",
        "p",
        "lambda",
        "auroc_insig",
        "fpr_insig",
        "auroc_dec",
        "fpr_dec",
        "auroc_fused",
        "fpr_fused",
    ]);
    for basis in &a.bases {
        for component in &a.s_arrow_component {
            let run = RunConfig {
                basis: *basis,
                ..cfg.clone()
            };
            let det = Detector::fit_with(&head, &train, &run, *component)
                .with_context(|| format!("fitting basis {basis}"))?;
            let k = det.parts().split.map(|s| s.k).unwrap_or(0);
            let ins = (
                det.insignificant_batch(vid.features())?,
                det.insignificant_batch(vood.features())?,
            );
            let r_ins = evaluate(&ins.0, &ins.1, a.tpr)?;
            for &p in &ps {
                let shaping = det.score_config().shaping.with_prune_fraction(p);
                shaping.validate()?;
                let dec = (
                    det.decisive_batch(vid.features(), &shaping)?,
                    det.decisive_batch(vood.features(), &shaping)?,
                );
                let r_dec = evaluate(&dec.0, &dec.1, a.tpr)?;
                for &l in &lambdas {
                    let fused = |i: &[f64], d: &[f64]| -> Vec<f64> {
                        i.iter().zip(d).map(|(&x, &y)| fuse(x, y, l)).collect()
                    };
                    let r = evaluate(&fused(&ins.0, &dec.0), &fused(&ins.1, &dec.1), a.tpr)?;
                    let [ai, fi] = eval_columns(&r_ins);
                    let [ad, fd] = eval_columns(&r_dec);
                    let [af, ff] = eval_columns(&r);
                    t.row(&[
                        basis.to_string(),
                        component.to_string(),
                        k.to_string(),
                        p.to_string(),
                        l.to_string(),
                        ai,
                        fi,
                        ad,
                        fd,
                        af,
                        ff,
                    ]);
                }
            }
            println!(
                "{basis}/{component}: k={k} insignificant auroc={:.4} fpr={:.4}",
                r_ins.auroc, r_ins.fpr_at_tpr
            );
        }
    }
    t.write(&a.out)?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec)
        .with_context(|| format!("reading {}", a.spec.display()))?;
    let spec = SynthSpec::parse(&text)?;
    let world = gen_world(&spec)?;
    let head = if spec.epochs > 0 {
        synth::train_head(&world.train, spec.c, &spec.train_spec())?
    } else {
        world.head.clone()
    };
    std::fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    write_wgt(&dir.join("head.wgt"), &head)?;
    write_actb(&dir.join("train.actb"), &world.train)?;
    write_actb(&dir.join("id_test.actb"), &world.id_test)?;
    write_actb(&dir.join("ood_test.actb"), &world.ood_test)?;
    if let (Some(vi), Some(vo)) = (&world.val_id, &world.val_ood) {
        write_actb(&dir.join("val_id.actb"), vi)?;
        write_actb(&dir.join("val_ood.actb"), vo)?;
    }
    actsub_core::store::write_atomic(&dir.join("spec.cfg"), spec.render().as_bytes())?;

    println!(
        "world: n={} c={} nuisance_dim={} shift={} magnitude={} seed={}",
        spec.n, spec.c, spec.nuisance_dim, spec.shift_mode, spec.shift_magnitude, spec.seed
    );
    println!(
        "rows: train={} id_test={} ood_test={} val={}",
        spec.n_train, spec.n_id_test, spec.n_ood_test, spec.n_val
    );
    println!(
        "head: {} (train accuracy {:.4})",
        if spec.epochs > 0 {
            "trained"
        } else {
            "planted"
        },
        synth::accuracy(&head, &world.train)?
    );
    if let Ok(fac) = subspace::factorize(&head) {
        let profile = alignment_profile(&fac, &fac.basis)?;
        let peak = (0..profile.len())
            .max_by(|&x, &y| profile[x].total_cmp(&profile[y]).then(y.cmp(&x)))
            .unwrap_or(0);
        println!(
            "rank={} alignment peak {:.6} at singular index {peak}",
            fac.rank, profile[peak]
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}
