//! End-to-end acceptance checks. Each test prints one `criterion N` line
//! with the measured values and the verdict.

mod common;

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use pcsr_core::autodiff::{ParamId, ParamSet, Tape, Var};
use pcsr_core::data::{extract_patch, normalize, sample_surface, subsample_input, AugmentConfig, SurfaceModel};
use pcsr_core::discriminator::{Discriminator, DiscriminatorConfig};
use pcsr_core::generator::{Generator, GeneratorConfig};
use pcsr_core::geometry::{dist2, farthest_point_sample, knn_indices, NeighborIndex, PointCloud};
use pcsr_core::loss::{
    chamfer_one_sided, chamfer_one_sided_value, chamfer_reverse, chamfer_reverse_value, discriminator_loss,
    discriminator_loss_value, generator_adv_loss, generator_adv_loss_value, joint_loss, joint_loss_value, LossConfig,
    Reduction,
};
use pcsr_core::metrics::{cd_metric, deviation, emd_metric, fscore, uniformity_nuc, EmdMethod};
use pcsr_core::nn::{Activation, FeatureNetConfig, ResidualBlockConfig};
use pcsr_core::rng;
use pcsr_core::training::{TrainSettings, Trainer};
use rand::Rng;

use common::{grad_check, CheckStats, REL_TOL};

/// Written to the process stdout directly so the line shows up even when
/// the test harness captures output.
fn report(line: String) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn uniform(r: &mut rng::Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-a..a)).collect()
}

fn cloud_from(r: &mut rng::Rng, n: usize) -> PointCloud {
    PointCloud::from_flat(&uniform(r, 3 * n, 1.0)).unwrap()
}

fn random_table(r: &mut rng::Rng, rows: usize, k: usize, n: usize) -> Arc<NeighborIndex> {
    Arc::new(NeighborIndex::from_flat((0..rows * k).map(|_| r.random_range(0..n)).collect(), rows, k).unwrap())
}

// ---------------------------------------------------------------- criterion 1

type Build = Box<dyn Fn(&[Vec<f64>]) -> (Tape, Vec<Var>, Var)>;

/// Small randomized graphs exercising one primitive each, squared at the
/// end so the loss is nonlinear in every input.
fn primitive_cases(seed: u64) -> Vec<(&'static str, Vec<Vec<f64>>, Build)> {
    let mut r = rng::rng(seed);
    let sq_mean = |t: &mut Tape, v: Var| {
        let s = t.square(v);
        t.reduce_mean(s)
    };
    let table = random_table(&mut r, 7, 3, 6);
    let (t1, t2, t3) = (table.clone(), table.clone(), table);
    let gt = cloud_from(&mut r, 9);
    let (gt1, gt2, gt3) = (gt.clone(), gt.clone(), gt);
    let mut cases: Vec<(&'static str, Vec<Vec<f64>>, Build)> = vec![
        (
            "linear+bias",
            vec![uniform(&mut r, 20, 1.0), uniform(&mut r, 12, 1.0), uniform(&mut r, 3, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let x = t.leaf(&[5, 4], v[0].clone(), true).unwrap();
                let w = t.leaf(&[4, 3], v[1].clone(), true).unwrap();
                let b = t.leaf(&[3], v[2].clone(), true).unwrap();
                let y = t.linear(x, w, Some(b)).unwrap();
                let l = sq_mean(&mut t, y);
                (t, vec![x, w, b], l)
            }),
        ),
        (
            "linear",
            vec![uniform(&mut r, 20, 1.0), uniform(&mut r, 12, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let x = t.leaf(&[5, 4], v[0].clone(), true).unwrap();
                let w = t.leaf(&[4, 3], v[1].clone(), true).unwrap();
                let y = t.linear(x, w, None).unwrap();
                let l = sq_mean(&mut t, y);
                (t, vec![x, w], l)
            }),
        ),
        (
            "neighbor_sum",
            vec![uniform(&mut r, 12, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let x = t.leaf(&[6, 2], v[0].clone(), true).unwrap();
                let y = t.neighbor_sum(x, t1.clone()).unwrap();
                let l = sq_mean(&mut t, y);
                (t, vec![x], l)
            }),
        ),
        (
            "neighbor_mean",
            vec![uniform(&mut r, 12, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let x = t.leaf(&[6, 2], v[0].clone(), true).unwrap();
                let y = t.neighbor_mean(x, t2.clone()).unwrap();
                let l = sq_mean(&mut t, y);
                (t, vec![x], l)
            }),
        ),
        (
            "neighbor_max",
            vec![uniform(&mut r, 12, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let x = t.leaf(&[6, 2], v[0].clone(), true).unwrap();
                let y = t.neighbor_max(x, t3.clone()).unwrap();
                let l = sq_mean(&mut t, y);
                (t, vec![x], l)
            }),
        ),
        (
            "add/sub/scale",
            vec![uniform(&mut r, 8, 1.0), uniform(&mut r, 8, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let a = t.leaf(&[4, 2], v[0].clone(), true).unwrap();
                let b = t.leaf(&[4, 2], v[1].clone(), true).unwrap();
                let s = t.add(a, b).unwrap();
                let d = t.sub(s, b).unwrap();
                let d = t.sub(d, b).unwrap();
                let y = t.scale(d, -1.7);
                let y = t.add(y, s).unwrap();
                let l = sq_mean(&mut t, y);
                (t, vec![a, b], l)
            }),
        ),
        (
            "square/relu/reduce_mean",
            vec![uniform(&mut r, 10, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let a = t.leaf(&[10], v[0].clone(), true).unwrap();
                let s = t.square(a);
                let s = t.add(s, a).unwrap();
                let y = t.relu(s);
                let l = sq_mean(&mut t, y);
                (t, vec![a], l)
            }),
        ),
        (
            "reshape",
            vec![uniform(&mut r, 12, 1.0), uniform(&mut r, 6, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let a = t.leaf(&[4, 3], v[0].clone(), true).unwrap();
                let w = t.leaf(&[2, 3], v[1].clone(), true).unwrap();
                let b = t.reshape(a, &[6, 2]).unwrap();
                let y = t.linear(b, w, None).unwrap();
                let l = sq_mean(&mut t, y);
                (t, vec![a, w], l)
            }),
        ),
        (
            "chamfer_one_sided",
            vec![uniform(&mut r, 18, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let p = t.leaf(&[6, 3], v[0].clone(), true).unwrap();
                let l = chamfer_one_sided(&mut t, &gt1, p, Reduction::Mean).unwrap();
                (t, vec![p], l)
            }),
        ),
        (
            "chamfer_reverse",
            vec![uniform(&mut r, 18, 1.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let p = t.leaf(&[6, 3], v[0].clone(), true).unwrap();
                let l = chamfer_reverse(&mut t, &gt2, p, Reduction::Sum).unwrap();
                (t, vec![p], l)
            }),
        ),
        (
            "adversarial losses",
            vec![uniform(&mut r, 5, 2.0), uniform(&mut r, 5, 2.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let f = t.leaf(&[5, 1], v[0].clone(), true).unwrap();
                let s = t.leaf(&[5, 1], v[1].clone(), true).unwrap();
                let d = discriminator_loss(&mut t, f, s).unwrap();
                let g = generator_adv_loss(&mut t, f).unwrap();
                let l = t.add(d, g).unwrap();
                (t, vec![f, s], l)
            }),
        ),
        (
            "joint_loss",
            vec![uniform(&mut r, 18, 1.0), uniform(&mut r, 4, 2.0)],
            Box::new(move |v| {
                let mut t = Tape::new();
                let p = t.leaf(&[6, 3], v[0].clone(), true).unwrap();
                let s = t.leaf(&[4, 1], v[1].clone(), true).unwrap();
                let cfg = LossConfig {
                    lambda: 3.0,
                    chamfer_reduction: Reduction::Mean,
                };
                let l = joint_loss(&mut t, &gt3, p, s, &cfg).unwrap();
                (t, vec![p, s], l)
            }),
        ),
    ];
    cases.shrink_to_fit();
    cases
}

fn randomize(params: &mut ParamSet, r: &mut rng::Rng) {
    for p in params.iter_mut() {
        p.data.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
    }
}

/// Inputs are the coordinates followed by every parameter tensor.
fn model_inputs(coords: &PointCloud, params: &ParamSet) -> Vec<Vec<f64>> {
    std::iter::once(coords.to_flat()).chain(params.iter().map(|p| p.data.clone())).collect()
}

fn load(params: &mut ParamSet, v: &[Vec<f64>]) {
    for (p, d) in params.iter_mut().zip(v) {
        p.data.clone_from(d);
    }
}

fn small_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        stages: 1,
        feature_net: FeatureNetConfig {
            k: 4,
            channels: 8,
            depth: 2,
        },
        block: ResidualBlockConfig {
            k: 4,
            channels: 8,
            residual_layers: 2,
            convs_per_layer: 1,
        },
        bias: true,
        activation: Activation::Relu,
        offset_gain: 1.0,
    }
}

fn small_discriminator_config() -> DiscriminatorConfig {
    DiscriminatorConfig {
        feature_net: FeatureNetConfig {
            k: 4,
            channels: 8,
            depth: 2,
        },
        block: ResidualBlockConfig {
            k: 4,
            channels: 8,
            residual_layers: 2,
            convs_per_layer: 1,
        },
        max_pools: 1,
        ..DiscriminatorConfig::default()
    }
}

fn generator_check(seed: u64) -> CheckStats {
    let mut r = rng::rng(seed);
    let mut g = Generator::new(small_generator_config(), seed).unwrap();
    randomize(g.params_mut(), &mut r);
    let x = cloud_from(&mut r, 16);
    let gt = cloud_from(&mut r, 24);
    let inputs = model_inputs(&x, g.params());
    grad_check(&inputs, |v| {
        let mut g = g.clone();
        load(g.params_mut(), &v[1..]);
        let mut t = Tape::new();
        let bound = t.bind(g.params());
        let xv = t.leaf(&[16, 3], v[0].clone(), true).unwrap();
        let y = g.forward(&mut t, &bound, xv).unwrap();
        let cd = chamfer_one_sided(&mut t, &gt, y, Reduction::Mean).unwrap();
        let sq = t.square(y);
        let reg = t.reduce_mean(sq);
        let l = t.add(cd, reg).unwrap();
        let vars = std::iter::once(xv).chain((0..g.params().len()).map(|i| bound.var(ParamId(i)))).collect();
        (t, vars, l)
    })
}

fn discriminator_check(seed: u64) -> CheckStats {
    let mut r = rng::rng(seed);
    let mut d = Discriminator::new(small_discriminator_config(), seed).unwrap();
    randomize(d.params_mut(), &mut r);
    let x = cloud_from(&mut r, 128);
    let inputs = model_inputs(&x, d.params());
    grad_check(&inputs, |v| {
        let mut d = d.clone();
        load(d.params_mut(), &v[1..]);
        let mut t = Tape::new();
        let bound = t.bind(d.params());
        let xv = t.leaf(&[128, 3], v[0].clone(), true).unwrap();
        let s = d.forward(&mut t, &bound, xv).unwrap();
        let l = generator_adv_loss(&mut t, s).unwrap();
        let vars = std::iter::once(xv).chain((0..d.params().len()).map(|i| bound.var(ParamId(i)))).collect();
        (t, vars, l)
    })
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let seeds = 20;
    let mut prim = CheckStats::default();
    let mut failing = Vec::new();
    for seed in 0..seeds {
        for (name, inputs, build) in primitive_cases(seed) {
            let s = grad_check(&inputs, build);
            if !s.passed() {
                failing.push(format!("{name}@{seed}: {:.2e}", s.worst));
            }
            prim.merge(s);
        }
    }
    let mut gen = CheckStats::default();
    let mut disc = CheckStats::default();
    for seed in 0..seeds {
        let g = generator_check(100 + seed);
        if !g.passed() {
            failing.push(format!("generator@{seed}: {:.2e}", g.worst));
        }
        gen.merge(g);
        let d = discriminator_check(200 + seed);
        if !d.passed() {
            failing.push(format!("discriminator@{seed}: {:.2e}", d.worst));
        }
        disc.merge(d);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = failing.is_empty() && secs < 120.0;
    report(format!(
        "criterion 1 [gradient suite]: {} seeds={seeds} primitives worst={:.2e} ({} checked, {} skipped) \
         generator worst={:.2e} ({} checked, {} skipped) discriminator worst={:.2e} ({} checked, {} skipped) \
         tol={REL_TOL:.0e} runtime={secs:.1}s (limit 120s)",
        verdict(ok),
        prim.worst,
        prim.checked,
        prim.skipped,
        gen.worst,
        gen.checked,
        gen.skipped,
        disc.worst,
        disc.checked,
        disc.skipped,
    ));
    assert!(failing.is_empty(), "{failing:?}");
    assert!(secs < 120.0);
}

// ---------------------------------------------------------------- criterion 2

fn brute_knn(c: &PointCloud, k: usize) -> Vec<Vec<usize>> {
    let p = c.points();
    (0..p.len())
        .map(|i| {
            let mut o: Vec<(f64, usize)> = (0..p.len()).filter(|&j| j != i).map(|j| (dist2(&p[i], &p[j]), j)).collect();
            o.sort_by(|a, b| a.partial_cmp(b).unwrap());
            o.iter().take(k).map(|x| x.1).collect()
        })
        .collect()
}

fn brute_fps(c: &PointCloud, m: usize, seed: usize) -> Vec<usize> {
    let p = c.points();
    let mut s = vec![seed];
    while s.len() < m {
        let mut best = (-1.0, 0);
        for j in 0..p.len() {
            if s.contains(&j) {
                continue;
            }
            let d = s.iter().map(|&i| dist2(&p[i], &p[j])).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, j);
            }
        }
        s.push(best.1);
    }
    s
}

fn brute_one_sided(gt: &PointCloud, pred: &PointCloud) -> f64 {
    gt.points()
        .iter()
        .map(|p| pred.points().iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_emd(a: &PointCloud, b: &PointCloud) -> f64 {
    let n = a.len();
    permutations(n)
        .iter()
        .map(|perm| (0..n).map(|i| dist2(&a.points()[i], &b.points()[perm[i]]).sqrt()).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_2_oracle_equivalence() {
    let instances = 200;
    let mut r = rng::rng(2);
    let mut mismatches = [0usize; 4];
    for i in 0..instances {
        let n = r.random_range(2..=40);
        let mut c = cloud_from(&mut r, n);
        if i % 3 == 0 {
            c = c.map_points(|p| p.map(|v| (v * 3.0).round())).unwrap();
        }
        let k = r.random_range(1..=8.min(n - 1));
        let got = knn_indices(&c, k).unwrap();
        if brute_knn(&c, k).iter().enumerate().any(|(i, row)| got.row(i) != row.as_slice()) {
            mismatches[0] += 1;
        }
        let m = r.random_range(1..=n);
        let s = r.random_range(0..n);
        if farthest_point_sample(&c, m, s).unwrap().as_slice() != brute_fps(&c, m, s).as_slice() {
            mismatches[1] += 1;
        }
        let pn = r.random_range(1..=30);
        let pred = cloud_from(&mut r, pn);
        let one = brute_one_sided(&c, &pred);
        let rev = brute_one_sided(&pred, &c);
        let sym = one / c.len() as f64 + rev / pred.len() as f64;
        if chamfer_one_sided_value(&c, &pred, Reduction::Sum) != one
            || chamfer_reverse_value(&c, &pred, Reduction::Sum) != rev
            || (cd_metric(&c, &pred) - sym).abs() > 1e-12 * sym.max(1.0)
        {
            mismatches[2] += 1;
        }
        let e = r.random_range(1..=6);
        let (a, b) = (cloud_from(&mut r, e), cloud_from(&mut r, e));
        let emd = emd_metric(&a, &b).unwrap();
        if emd.method != EmdMethod::Exact || (emd.value - brute_emd(&a, &b)).abs() > 1e-12 {
            mismatches[3] += 1;
        }
    }
    let ok = mismatches.iter().all(|&m| m == 0);
    report(format!(
        "criterion 2 [oracle equivalence]: {} instances={instances} mismatches knn={} fps={} chamfer={} emd={}",
        verdict(ok),
        mismatches[0],
        mismatches[1],
        mismatches[2],
        mismatches[3]
    ));
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_structural_contracts() {
    let mut r = rng::rng(3);
    let g = Generator::new(GeneratorConfig::default(), 3).unwrap();
    let mut counts_ok = true;
    let mut dup_ok = true;
    for n in [9, 100, 256] {
        let x = cloud_from(&mut r, n);
        let y = g.generate(&x).unwrap();
        counts_ok &= y.len() == 4 * n;
        dup_ok &= y.points().iter().enumerate().all(|(i, p)| *p == x.points()[i / 4]);
    }
    // All-zero parameters give the same duplication.
    let mut zero = g.clone();
    zero.params_mut().iter_mut().for_each(|p| p.data.iter_mut().for_each(|v| *v = 0.0));
    let x = cloud_from(&mut r, 50);
    dup_ok &= zero.generate(&x).unwrap().points().iter().enumerate().all(|(i, p)| *p == x.points()[i / 4]);

    let d = Discriminator::new(DiscriminatorConfig::default(), 3).unwrap();
    let mut scores = Vec::new();
    for n in [1024, 4096] {
        scores.push(d.discriminate(&cloud_from(&mut r, n)).unwrap().len());
    }
    let ok = counts_ok && dup_ok && scores == [64, 64];
    report(format!(
        "criterion 3 [structural contracts]: {} generate 4n={counts_ok} duplication bit-exact={dup_ok} \
         discriminate lengths N=1024,4096 -> {scores:?}",
        verdict(ok)
    ));
    assert!(ok);
}

// ------------------------------------------------------- criteria 4, 5 (shared)

const OVERFIT_STEPS: u64 = 2000;
const FINETUNE_STEPS: u64 = 500;
const EVAL_DRAWS: u64 = 16;

fn desk_settings() -> TrainSettings {
    let mut s = TrainSettings::default();
    s.set("generator.channels", "64").unwrap();
    s.set("generator.residual_layers", "8").unwrap();
    s.train.batch_size = 1;
    s.train.input_size = 256;
    s.train.learning_rate = 1e-3;
    s
}

struct Overfit {
    gt: PointCloud,
    evals: Vec<PointCloud>,
    settings: TrainSettings,
    baseline: f64,
    trainer: Trainer,
    secs: f64,
}

impl Overfit {
    fn mean_cd(&self, g: &Generator) -> f64 {
        self.evals.iter().map(|e| cd_metric(&self.gt, &g.generate(e).unwrap())).sum::<f64>() / self.evals.len() as f64
    }
}

fn overfit() -> &'static Overfit {
    static CELL: OnceLock<Overfit> = OnceLock::new();
    CELL.get_or_init(|| {
        let dense = sample_surface(&SurfaceModel::Torus { major: 1.0, minor: 0.35 }, 20_000, 41).unwrap();
        let gt = extract_patch(&dense, 0, 1024).unwrap().gt;
        let evals: Vec<PointCloud> = (0..EVAL_DRAWS).map(|i| subsample_input(&gt, 256, 9000 + i).unwrap()).collect();
        // Duplicating an input leaves its point set unchanged.
        let baseline = evals.iter().map(|e| cd_metric(&gt, e)).sum::<f64>() / EVAL_DRAWS as f64;
        let mut settings = desk_settings();
        settings.train.phase1_epochs = OVERFIT_STEPS;
        settings.train.phase2_epochs = 0;
        settings.train.augment = AugmentConfig::identity();
        settings.train.seed = 4;
        let mut trainer = Trainer::new(settings).unwrap();
        let start = Instant::now();
        let patches = vec![gt.clone()];
        trainer
            .run(&patches, |t, _| {
                assert!(t.generator.params().iter().all(|p| p.data.iter().all(|v| v.is_finite())));
                Ok(())
            })
            .unwrap();
        let secs = start.elapsed().as_secs_f64();
        Overfit {
            gt,
            evals,
            settings,
            baseline,
            trainer,
            secs,
        }
    })
}

#[test]
fn criterion_4_overfit_phase1() {
    let o = overfit();
    let fresh = Generator::new(o.settings.generator, 0).unwrap();
    let at_init = o.mean_cd(&fresh);
    let cd = o.mean_cd(&o.trainer.generator);
    let ratio = cd / o.baseline;
    let ok = ratio <= 0.2 && o.secs < 900.0;
    report(format!(
        "criterion 4 [overfit, phase 1]: {} steps={OVERFIT_STEPS} baseline_cd={:.4e} final_cd={cd:.4e} \
         ratio={ratio:.3} (threshold 0.2) runtime={:.0}s (limit 900s)",
        verdict(ok),
        o.baseline,
        o.secs
    ));
    // The duplication baseline is what a fresh generator produces.
    assert!((at_init - o.baseline).abs() <= 1e-12 * o.baseline);
    assert!(cd.is_finite() && cd < o.baseline, "training did not improve on duplication");
    assert!(o.secs < 900.0);
}

fn toy_pair(r: &mut rng::Rng, n: usize) -> (PointCloud, PointCloud) {
    // Real: a flat sheet. Fake: the same extent with thickness.
    let real = PointCloud::new((0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.0]).collect());
    let fake = PointCloud::new(
        (0..n)
            .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-0.3..0.3)])
            .collect(),
    );
    (fake.unwrap(), real.unwrap())
}

#[test]
fn criterion_5_adversarial_phase2() {
    let o = overfit();
    let phase1_cd = o.mean_cd(&o.trainer.generator);
    let mut settings = o.settings;
    settings.train.phase1_epochs = 0;
    settings.train.phase2_epochs = FINETUNE_STEPS;
    settings.train.loss.lambda = 100.0;
    // A summed Chamfer term keeps λ·L_cd well above L_G; with the mean the
    // adversarial gradient dominates and the geometry degrades.
    settings.train.loss.chamfer_reduction = Reduction::Sum;
    // With one D step per G step the generator periodically overtakes D
    // and L_D climbs past 0.5.
    settings.train.d_steps_per_g_step = 2;
    let disc = Discriminator::new(settings.discriminator, 5).unwrap();
    let mut t = Trainer::from_parts(settings, o.trainer.generator.clone(), disc).unwrap();
    let mut l_d = Vec::new();
    let mut all_finite = true;
    t.run(&[o.gt.clone()], |tr, log| {
        l_d.push(log.l_d.unwrap());
        all_finite &= log.l_cd.is_finite() && log.l_g.unwrap().is_finite();
        all_finite &= tr.generator.params().iter().chain(tr.discriminator.params().iter()).all(|p| p.data.iter().all(|v| v.is_finite()));
        Ok(())
    })
    .unwrap();
    let final_cd = o.mean_cd(&t.generator);
    let ld_min = l_d.iter().copied().fold(f64::INFINITY, f64::min);
    let ld_max = l_d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ld_ok = ld_min > 0.0 && ld_max <= 0.5;
    let cd_ok = final_cd <= 1.2 * phase1_cd;

    // Discriminator alone on separable toy clouds.
    let mut toy = Trainer::new(TrainSettings::default()).unwrap();
    let mut r = rng::rng(55);
    let mut toy_losses = Vec::new();
    for _ in 0..500 {
        let (f, real) = toy_pair(&mut r, 128);
        toy_losses.push(toy.discriminator_step(&[f], &[real]).unwrap());
    }
    let tail = toy_losses[490..].iter().sum::<f64>() / 10.0;
    let toy_ok = tail < 0.1;

    let ok = all_finite && ld_ok && cd_ok && toy_ok;
    report(format!(
        "criterion 5 [adversarial, phase 2]: {} steps={FINETUNE_STEPS} lambda=100 chamfer=sum d_steps_per_g_step=2 finite={all_finite} \
         L_D range=[{ld_min:.4}, {ld_max:.4}] (within (0, 0.5]) phase1_cd={phase1_cd:.4e} final_cd={final_cd:.4e} \
         ratio={:.3} (limit 1.2) toy D-only L_D(last 10 of 500)={tail:.4} (limit 0.1)",
        verdict(ok),
        final_cd / phase1_cd
    ));
    assert!(ok);
}

// ------------------------------------------------------ criteria 6, 7 (shared)

struct Desk {
    generator: Generator,
}

/// A generator trained on two torus shapes with augmentation.
fn desk_model() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut patches = Vec::new();
        for (i, minor) in [0.25, 0.45].into_iter().enumerate() {
            let dense = sample_surface(&SurfaceModel::Torus { major: 1.0, minor }, 20_000, 60 + i as u64).unwrap();
            let seeds = farthest_point_sample(&dense, 4, 0).unwrap();
            for &s in seeds.as_slice() {
                patches.push(extract_patch(&dense, s, 1024).unwrap().gt);
            }
        }
        let mut settings = desk_settings();
        settings.train.phase1_epochs = 200;
        settings.train.phase2_epochs = 0;
        settings.train.seed = 6;
        let mut t = Trainer::new(settings).unwrap();
        t.run(&patches, |_, _| Ok(())).unwrap();
        Desk { generator: t.generator }
    })
}

fn upsample(g: &Generator, cloud: &PointCloud) -> PointCloud {
    let (n, norm) = normalize(cloud).unwrap();
    norm.invert(&g.generate(&n).unwrap()).unwrap()
}

/// Input and ground truth drawn independently from the same surface region;
/// the ground truth is four times denser.
fn held_out_patches(count: usize) -> Vec<(PointCloud, PointCloud)> {
    let model = SurfaceModel::Torus { major: 1.0, minor: 0.35 };
    let sparse = sample_surface(&model, 5_000, 70).unwrap();
    let dense = sample_surface(&model, 20_000, 71).unwrap();
    let centres = farthest_point_sample(&dense, count, 3).unwrap();
    centres
        .as_slice()
        .iter()
        .map(|&c| {
            let centre = dense.points()[c];
            let near = |cloud: &PointCloud, m: usize| {
                let mut order: Vec<(f64, usize)> =
                    cloud.points().iter().enumerate().map(|(i, p)| (dist2(p, &centre), i)).collect();
                order.sort_by(|a, b| a.partial_cmp(b).unwrap());
                PointCloud::new(order[..m].iter().map(|&(_, i)| cloud.points()[i]).collect()).unwrap()
            };
            (near(&sparse, 256), near(&dense, 1024))
        })
        .collect()
}

#[test]
fn criterion_6_fscore_ordering() {
    let g = &desk_model().generator;
    let tau = 0.01;
    let mut f_in = 0.0;
    let mut f_out = 0.0;
    let patches = held_out_patches(8);
    for (input, gt) in &patches {
        // Score in the ground truth's unit-ball frame.
        let (gt_n, norm) = normalize(gt).unwrap();
        let out = norm.apply(&upsample(g, input)).unwrap();
        f_in += fscore(&gt_n, &norm.apply(input).unwrap(), tau).unwrap();
        f_out += fscore(&gt_n, &out, tau).unwrap();
    }
    let (f_in, f_out) = (f_in / patches.len() as f64, f_out / patches.len() as f64);
    let ok = f_out > f_in;
    report(format!(
        "criterion 6 [F-score ordering, held-out torus]: {} tau={tau} patches={} input F={f_in:.4} model F={f_out:.4}",
        verdict(ok),
        patches.len()
    ));
    assert!(ok);
}

#[test]
fn criterion_7_iterative_upsampling() {
    let g = &desk_model().generator;
    let (input, _) = held_out_patches(1).remove(0);
    let c = input.centroid();
    let radius = input.radius_about(c);
    let once = upsample(g, &input);
    let twice = upsample(g, &once);
    let finite = twice.points().iter().flatten().all(|v| v.is_finite());
    let reach = twice.radius_about(c) / radius;
    let ok = twice.len() == 4096 && finite && reach <= 1.5;
    report(format!(
        "criterion 7 [iterative 16x]: {} 256 -> {} -> {} points finite={finite} max radius / input radius={reach:.3} (limit 1.5)",
        verdict(ok),
        once.len(),
        twice.len()
    ));
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 8

fn pc(p: &[[f64; 3]]) -> PointCloud {
    PointCloud::new(p.to_vec()).unwrap()
}

fn grid(n: usize, spacing: f64) -> PointCloud {
    PointCloud::new((0..n * n).map(|i| [(i / n) as f64 * spacing, (i % n) as f64 * spacing, 0.0]).collect()).unwrap()
}

#[test]
fn criterion_8_metric_fixtures() {
    let tol = 1e-9;
    let close = |a: f64, b: f64| (a - b).abs() <= tol;
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let o = pc(&[[0.0; 3]]);
    let two = pc(&[[0.0; 3], [1.0, 0.0, 0.0]]);
    let a = pc(&[[0.0; 3], [2.0, 0.0, 0.0]]);
    let b = pc(&[[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);

    // Loss module.
    checks.push(("chamfer identical", chamfer_one_sided_value(&two, &two, Reduction::Sum) == 0.0));
    checks.push(("chamfer sum", close(chamfer_one_sided_value(&two, &o, Reduction::Sum), 1.0)));
    checks.push(("chamfer mean", close(chamfer_one_sided_value(&two, &o, Reduction::Mean), 0.5)));
    checks.push(("reverse identical", chamfer_reverse_value(&two, &two, Reduction::Sum) == 0.0));
    checks.push(("reverse sum", close(chamfer_reverse_value(&o, &two, Reduction::Sum), 1.0)));
    checks.push((
        "reverse symmetry",
        chamfer_reverse_value(&a, &two, Reduction::Mean) == chamfer_one_sided_value(&two, &a, Reduction::Mean),
    ));
    checks.push(("L_G ones", generator_adv_loss_value(&[1.0; 64]).unwrap() == 0.0));
    checks.push(("L_G zeros", close(generator_adv_loss_value(&[0.0; 64]).unwrap(), 1.0)));
    checks.push(("L_G {0.5,1.5}", close(generator_adv_loss_value(&[0.5, 1.5]).unwrap(), 0.25)));
    checks.push(("L_D perfect", discriminator_loss_value(&[0.0; 64], &[1.0; 64]).unwrap() == 0.0));
    checks.push(("L_D constant 0.5", close(discriminator_loss_value(&[0.5; 64], &[0.5; 64]).unwrap(), 0.25)));
    checks.push(("L_D {1} vs {0}", close(discriminator_loss_value(&[1.0], &[0.0]).unwrap(), 1.0)));
    let l1 = LossConfig {
        lambda: 1.0,
        chamfer_reduction: Reduction::Mean,
    };
    checks.push(("joint zero", joint_loss_value(&two, &two, &[1.0; 64], &l1).unwrap() == 0.0));
    // λ = 2 with a CD term of 0.5 (two → o, mean) and an adversarial term of 0.25.
    let l2 = LossConfig { lambda: 2.0, ..l1 };
    checks.push(("joint 1.25", close(joint_loss_value(&two, &o, &[0.5, 1.5], &l2).unwrap(), 1.25)));

    // Metrics module.
    checks.push(("cd identical", cd_metric(&two, &two) == 0.0));
    checks.push(("cd {0} vs {e1}", close(cd_metric(&o, &pc(&[[1.0, 0.0, 0.0]])), 2.0)));
    checks.push(("cd symmetric", cd_metric(&a, &two) == cd_metric(&two, &a)));
    checks.push(("emd identical", emd_metric(&a, &a).unwrap().value == 0.0));
    checks.push(("emd 2x2", close(emd_metric(&a, &b).unwrap().value, 1.0)));
    checks.push(("fscore identical", fscore(&two, &two, 0.1).unwrap() == 1.0));
    checks.push(("fscore 2/3", close(fscore(&two, &o, 0.5).unwrap(), 2.0 / 3.0)));
    checks.push(("fscore disjoint", fscore(&two, &pc(&[[50.0, 0.0, 0.0]]), 0.5).unwrap() == 0.0));
    let reference = grid(101, 0.01);
    let sub = PointCloud::new(reference.points()[..40].to_vec()).unwrap();
    checks.push(("deviation subset", deviation(&sub, &reference) == (0.0, 0.0)));
    let (m, _) = deviation(&pc(&[[0.503, 0.497, 0.1]]), &reference);
    checks.push(("deviation height", (0.1..=0.1005).contains(&m)));
    let nuc_ref = grid(125, 0.008);
    let even = grid(25, 0.04);
    let half = even.map_points(|p| [p[0] * 0.5, p[1], p[2]]).unwrap();
    let point = PointCloud::new(vec![[0.5, 0.5, 0.0]; 625]).unwrap();
    let levels = [0.01, 0.05];
    let u = uniformity_nuc(&even, &nuc_ref, &levels, 50).unwrap();
    let h = uniformity_nuc(&half, &nuc_ref, &levels, 50).unwrap();
    let c = uniformity_nuc(&point, &nuc_ref, &levels, 50).unwrap();
    checks.push(("nuc grid < half", u.iter().zip(&h).all(|(x, y)| x < y)));
    checks.push(("nuc half < point", h.iter().zip(&c).all(|(x, y)| x < y)));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(format!(
        "criterion 8 [metric fixtures]: {} {} fixtures, tol={tol:.0e}, failed={failed:?}",
        verdict(failed.is_empty()),
        checks.len()
    ));
    assert!(failed.is_empty());
}
