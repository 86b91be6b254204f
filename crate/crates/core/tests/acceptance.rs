//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,4` restricts the run to the listed criteria.
//! Run alone with `cargo test -p sacnet --test acceptance`.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::time::{Duration, Instant};

use common::{
    brute_chamfer, brute_fps, brute_knn, grad_check, instance, project, random_points, random_tensor, FD_STEP,
};
use sacnet::attention::{attend, CrossContext, Grouping, SAConv, SAConvConfig, SAConvT, SAConvTConfig};
use sacnet::geometry::{farthest_point_sampling, group_normalize, knn, PointCloud};
use sacnet::layers::ParamBuilder;
use sacnet::losses::{chamfer, points_tensor, recon_loss, triplet_loss, LevelWeights};
use sacnet::metrics::voting_accuracy;
use sacnet::models::{
    default_expansions, Autoencoder, AutoencoderSpec, Classifier, ClassifierSpec, DecodedPyramid, Segmenter,
    SegmenterSpec,
};
use sacnet::rng::SeededRng;
use sacnet::tensor::{Mode, ParamStore, PoolKind, Session, Tape, Tensor, Var};
use sacnet::train::{evaluate_autoencoder, metrics_csv, Checkpoint, Model, RunConfig, Trainer};

const OP_TOL: f64 = 1e-5;
const COMPOSITE_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-3;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn inputs(shapes: &[&[usize]], seed: u64) -> Vec<Tensor> {
    let mut rng = SeededRng::new(seed);
    shapes.iter().map(|s| random_tensor(s, &mut rng)).collect()
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> sacnet::Result<Var>>;

fn op_cases() -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let mut positive = inputs(&[&[3, 4]], 3);
    for v in positive[0].data_mut() {
        *v = v.abs() + 0.5;
    }
    let gather: Rc<[usize]> = vec![4, 0, 0, 2, 4, 4].into();
    let wg_idx: Rc<[usize]> = vec![0, 1, 3, 2, 2, 0].into();
    let wg_w: Rc<[f64]> = vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3].into();
    let pool_off: Rc<[usize]> = vec![0, 3, 4, 7].into();
    let q_off: Rc<[usize]> = vec![0, 2, 3, 5].into();
    let kv_off: Rc<[usize]> = vec![0, 3, 4, 7].into();
    let a_off: Rc<[usize]> = vec![0, 4, 6].into();
    let b_off: Rc<[usize]> = vec![0, 2, 5].into();
    let (g1, g2, p1, p2) = (gather.clone(), gather, pool_off.clone(), pool_off.clone());
    vec![
        (
            "matmul",
            inputs(&[&[4, 3], &[3, 5]], 1),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, 9)
            }) as Build,
        ),
        (
            "batched matmul",
            inputs(&[&[2, 3, 4], &[4, 2]], 2),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, 9)
            }),
        ),
        (
            "add/sub/mul broadcast",
            inputs(&[&[3, 4], &[3, 4], &[4]], 4),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let a = t.add(v[0], v[1])?;
                let b = t.mul(a, v[2])?;
                let c = t.sub(b, v[0])?;
                let c = t.add(c, v[2])?;
                project(t, c, 9)
            }),
        ),
        (
            "div",
            vec![inputs(&[&[3, 4]], 5).remove(0), positive[0].clone()],
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.div(v[0], v[1])?;
                project(t, y, 9)
            }),
        ),
        (
            "scale/add_scalar/reshape",
            inputs(&[&[2, 6]], 6),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.scale(v[0], -1.7);
                let y = t.add_scalar(y, 0.3);
                let y = t.reshape(y, vec![3, 4])?;
                project(t, y, 9)
            }),
        ),
        (
            "sqrt",
            positive,
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.sqrt(v[0])?;
                project(t, y, 9)
            }),
        ),
        (
            "relu",
            inputs(&[&[10]], 7),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.relu(v[0]);
                project(t, y, 9)
            }),
        ),
        (
            "gelu",
            inputs(&[&[12]], 8),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.gelu(v[0]);
                project(t, y, 9)
            }),
        ),
        (
            "softmax rows",
            inputs(&[&[3, 5]], 9),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.softmax(v[0], 1)?;
                project(t, y, 9)
            }),
        ),
        (
            "softmax columns",
            inputs(&[&[3, 5]], 10),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.softmax(v[0], 0)?;
                project(t, y, 9)
            }),
        ),
        (
            "batch norm train",
            inputs(&[&[6, 3], &[3], &[3]], 11),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], (&[0.0; 3], &[1.0; 3]), Mode::Train, 1e-5)?;
                project(t, y, 9)
            }),
        ),
        (
            "batch norm eval",
            inputs(&[&[4, 2], &[2], &[2]], 12),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], (&[0.3, -0.2], &[0.5, 2.0]), Mode::Eval, 1e-5)?;
                project(t, y, 9)
            }),
        ),
        (
            "dropout",
            inputs(&[&[5, 4]], 13),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let y = t.dropout(v[0], 0.4, Mode::Train, &mut SeededRng::new(2))?;
                project(t, y, 9)
            }),
        ),
        (
            "concat",
            inputs(&[&[3, 2], &[3, 4], &[2, 6]], 14),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let a = t.concat(&[v[0], v[1]], 1)?;
                let b = t.concat(&[a, v[2]], 0)?;
                project(t, b, 9)
            }),
        ),
        (
            "gather rows",
            inputs(&[&[5, 3]], 15),
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.gather_rows(v[0], g1.clone())?;
                project(t, y, 9)
            }),
        ),
        (
            "slice rows",
            inputs(&[&[5, 3]], 16),
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.gather_rows(v[0], g2.clone())?;
                let y = t.slice_rows(y, 1, 5)?;
                project(t, y, 9)
            }),
        ),
        (
            "weighted gather",
            inputs(&[&[4, 3]], 17),
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.weighted_gather(v[0], wg_idx.clone(), wg_w.clone(), 3)?;
                project(t, y, 9)
            }),
        ),
        (
            "max pool groups",
            inputs(&[&[7, 3]], 18),
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.pool_groups(v[0], p1.clone(), PoolKind::Max)?;
                project(t, y, 9)
            }),
        ),
        (
            "avg pool groups",
            inputs(&[&[7, 3]], 19),
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.pool_groups(v[0], p2.clone(), PoolKind::Avg)?;
                project(t, y, 9)
            }),
        ),
        (
            "global pools",
            inputs(&[&[7, 3]], 20),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let a = t.pool(v[0], PoolKind::Max)?;
                let b = t.pool(v[0], PoolKind::Avg)?;
                let y = t.concat(&[a, b], 0)?;
                project(t, y, 9)
            }),
        ),
        (
            "grouped attention",
            inputs(&[&[5, 4], &[7, 4], &[7, 6]], 21),
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.attention(v[0], v[1], v[2], q_off.clone(), kv_off.clone(), 2)?;
                project(t, y, 9)
            }),
        ),
        (
            "sum/mean/row sum",
            inputs(&[&[3, 4]], 22),
            Box::new(|t: &mut Tape, v: &[Var]| {
                let r = t.row_sum(v[0]);
                let r = project(t, r, 9)?;
                let sq = t.mul(v[0], v[0])?;
                let m = t.mean(sq);
                let s = t.sum(sq);
                let s = t.scale(s, 0.1);
                let y = t.add(r, m)?;
                t.add(y, s)
            }),
        ),
        (
            "cross entropy",
            inputs(&[&[4, 5]], 23),
            Box::new(|t: &mut Tape, v: &[Var]| t.cross_entropy(v[0], &[0, 4, 2, 2])),
        ),
        (
            "batched chamfer",
            inputs(&[&[6, 3], &[5, 3]], 24),
            Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.chamfer(v[0], v[1], a_off.clone(), b_off.clone())?;
                project(t, y, 9)
            }),
        ),
    ]
}

/// Central differences over every scalar of every parameter in `store`
/// against reverse-mode gradients; returns the worst relative error.
fn stack_grad_check(store: &ParamStore, forward: impl Fn(&mut Session) -> sacnet::Result<Var>) -> f64 {
    let loss_of = |s: &mut Session| -> Var {
        let out = forward(s).unwrap();
        project(&mut s.tape, out, 31).unwrap()
    };
    let mut s = Session::new(store, Mode::Train, SeededRng::new(0));
    let loss = loss_of(&mut s);
    let grads = s.param_grads(loss).unwrap();
    let eval = |st: &ParamStore| {
        let mut s = Session::new(st, Mode::Train, SeededRng::new(0));
        let l = loss_of(&mut s);
        s.value(l).item()
    };
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for p in 0..store.num_params() {
        for e in 0..store.params()[p].tensor.len() {
            let orig = store.params()[p].tensor.data()[e];
            probe.params_mut().nth(p).unwrap().data_mut()[e] = orig + FD_STEP;
            let plus = eval(&probe);
            probe.params_mut().nth(p).unwrap().data_mut()[e] = orig - FD_STEP;
            let minus = eval(&probe);
            probe.params_mut().nth(p).unwrap().data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(common::rel_err(grads.grads[p].data()[e], numeric, FLOOR));
        }
    }
    worst
}

fn saconv_fixture(pool: PoolKind, seed: u64) -> (ParamStore, SAConv, Grouping) {
    let mut store = ParamStore::new();
    let mut rng = SeededRng::new(seed);
    let mut b = ParamBuilder::new(&mut store, &mut rng);
    let conv = SAConv::new(
        &mut b,
        "conv",
        SAConvConfig {
            features_in: 2,
            heads: 2,
            att_width: 3,
            output: 4,
            mlp_blocks: 2,
            pool,
            dropout: 0.0,
        },
    )
    .unwrap();
    let pts = random_points(12, seed + 1);
    let probes = farthest_point_sampling(&pts, 4).unwrap();
    let g = Grouping::from_neighborhood(&group_normalize(&pts, &probes, 4, 1.5).unwrap());
    let mut r = SeededRng::new(seed + 2);
    store.add_param("input", random_tensor(&[12, 2], &mut r)).unwrap();
    (store, conv, g)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst_op: (f64, &str) = (0.0, "");
    for (name, x, build) in op_cases() {
        let err = grad_check(&x, &build, FLOOR);
        if err > worst_op.0 {
            worst_op = (err, name);
        }
    }

    let mut composites = Vec::new();
    for pool in [PoolKind::Max, PoolKind::Avg] {
        let (store, conv, g) = saconv_fixture(pool, 40);
        let input = store.param_id("input").unwrap();
        let err = stack_grad_check(&store, |s| {
            let f = s.param(input);
            conv.forward(s, &g, Some(f))
        });
        composites.push((format!("SAConv {pool:?}"), err));
    }

    let mut store = ParamStore::new();
    let mut rng = SeededRng::new(50);
    let mut b = ParamBuilder::new(&mut store, &mut rng);
    let up = SAConvT::new(
        &mut b,
        "up",
        SAConvTConfig {
            input: 4,
            noise: 3,
            expand: 5,
            heads: 2,
            att_width: 2,
            output: 3,
            mlp_blocks: 2,
            cross: true,
            dropout: 0.0,
        },
    )
    .unwrap();
    let (n, k, parents) = (4, 2, 3);
    let mut r = SeededRng::new(51);
    let x = store.add_param("x", random_tensor(&[parents, 4], &mut r)).unwrap();
    let parent_feats = store.add_param("parents", random_tensor(&[5, 4], &mut r)).unwrap();
    let noise = Tensor::matrix(parents * n, 3, (0..parents * n * 3).map(|_| r.normal()).collect()).unwrap();
    let index = vec![0, 3, 1, 4, 2, 0];
    let err = stack_grad_check(&store, |s| {
        let xv = s.param(x);
        let tokens = up.expand_tokens(s, xv, n, Some(noise.clone()))?;
        let cross = CrossContext {
            features: s.param(parent_feats),
            index: index.clone(),
            k,
        };
        up.attend_tokens(s, tokens, n, Some(&cross))
    });
    composites.push(("SAConvT expand+attend".into(), err));

    let pts = inputs(&[&[9, 3], &[7, 3]], 60);
    let err = grad_check(&pts, |t, v| chamfer(t, v[0], v[1]), FLOOR);
    composites.push(("chamfer".into(), err));

    let z = inputs(&[&[4, 5], &[4, 5], &[4, 5]], 61);
    let err = grad_check(&z, |t, v| triplet_loss(t, v[0], v[1], v[2], 1.0), FLOOR);
    composites.push(("triplet".into(), err));

    let elapsed = start.elapsed();
    let (worst_c, name_c) =
        composites.iter().fold(
            (0.0f64, String::new()),
            |acc, (n, e)| if *e > acc.0 { (*e, n.clone()) } else { acc },
        );
    check(
        worst_op.0 <= OP_TOL && worst_c <= COMPOSITE_TOL && elapsed < Duration::from_secs(120),
        format!(
            "worst op error {:.2e} ({}), worst composite error {:.2e} ({}), {:.1?}",
            worst_op.0, worst_op.1, worst_c, name_c, elapsed
        ),
    )
}

fn criterion_2() -> Outcome {
    let cls = Classifier::new(ClassifierSpec::standard(40), 0).unwrap();
    let cls_params = cls.param_count();
    let cls_flops = cls.flops(1024).unwrap();
    let seg = Segmenter::new(SegmenterSpec::standard(), 0).unwrap();
    let seg_params = seg.param_count();
    let ratio = seg.flops(2048).unwrap() as f64 / seg.flops(1024).unwrap() as f64;
    let ae = Autoencoder::new(AutoencoderSpec::standard(128, default_expansions(2048).unwrap()), 0).unwrap();
    let (enc, dec) = (ae.encoder_param_count(), ae.decoder_param_count());
    let near = |v: usize, target: f64, tol: f64| (v as f64 - target).abs() <= tol * target;
    check(
        (30_000..=50_000).contains(&cls_params)
            && (4e6..=16e6).contains(&(cls_flops as f64))
            && near(seg_params, 227e3, 0.15)
            && (1.8..=2.2).contains(&ratio)
            && near(enc, 160e3, 0.2)
            && near(dec, 190e3, 0.2),
        format!(
            "classifier {cls_params} params, {cls_flops} FLOPs; segmenter {seg_params} params, 2k/1k FLOP ratio {ratio:.3}; encoder {enc}, decoder {dec}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut fps_fail = 0;
    let mut knn_fail = 0;
    for seed in 0..200 {
        let pts = instance(seed, 256);
        let mut rng = SeededRng::new(seed + 1000);
        let m = 1 + rng.below(pts.len());
        if farthest_point_sampling(&pts, m).unwrap() != brute_fps(&pts, m) {
            fps_fail += 1;
        }
        let k = 1 + rng.below(pts.len().min(16));
        let queries = random_points(5, seed + 2000);
        let (got, _) = knn(&queries, &pts, k).unwrap();
        let want: Vec<usize> = queries.iter().flat_map(|q| brute_knn(*q, &pts, k)).collect();
        if got != want {
            knn_fail += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let a = random_points(1 + (seed as usize * 7) % 200, seed + 3000);
        let b = random_points(1 + (seed as usize * 13) % 150, seed + 4000);
        let got = sacnet::losses::chamfer_points(&a, &b).unwrap();
        worst = worst.max((got - brute_chamfer(&a, &b)).abs());
    }
    check(
        fps_fail == 0 && knn_fail == 0 && worst <= 1e-12,
        format!("fps mismatches {fps_fail}/200, knn mismatches {knn_fail}/200, worst chamfer deviation {worst:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let cloud = PointCloud::new(random_points(512, 70)).unwrap();
    let cls = Classifier::new(ClassifierSpec::standard(3), 71).unwrap();
    let ae = Autoencoder::new(AutoencoderSpec::standard(32, default_expansions(512).unwrap()), 72).unwrap();
    let base_logits = cls.logits(&cloud).unwrap();
    let base_z = ae.latent_code(&cloud).unwrap();
    let (mut dl, mut dz): (f64, f64) = (0.0, 0.0);
    let mut rng = SeededRng::new(73);
    for _ in 0..50 {
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        rng.shuffle(&mut order);
        let p = cloud.permuted(&order);
        let l = cls.logits(&p).unwrap();
        let z = ae.latent_code(&p).unwrap();
        dl = base_logits.iter().zip(&l).fold(dl, |m, (a, b)| m.max((a - b).abs()));
        dz = base_z.iter().zip(&z).fold(dz, |m, (a, b)| m.max((a - b).abs()));
    }
    ok &= dl <= 1e-5 && dz <= 1e-5;
    notes.push(format!("permutation drift logits {dl:.1e}, latents {dz:.1e}"));

    // Dyadic coordinates and shifts keep every subtraction exact.
    let mut exact_offsets = true;
    for seed in 0..20u64 {
        let mut r = SeededRng::new(seed + 80);
        let pts: Vec<[f64; 3]> = (0..64)
            .map(|_| [0, 1, 2].map(|_| (r.below(129) as f64 - 64.0) / 64.0))
            .collect();
        let shift = [0, 1, 2].map(|_| (r.below(65) as f64 - 32.0) / 32.0);
        let moved: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]])
            .collect();
        let probes = [0, 9, 33];
        let a = group_normalize(&pts, &probes, 6, 2.0).unwrap();
        let b = group_normalize(&moved, &probes, 6, 2.0).unwrap();
        exact_offsets &= a.offsets == b.offsets;
    }
    ok &= exact_offsets;
    notes.push(format!("offsets translation-exact {exact_offsets}"));

    let mut exact_attend = true;
    for seed in 0..20u64 {
        let x = inputs(&[&[3, 4], &[9, 4], &[9, 5]], seed + 90);
        let mut order: Vec<usize> = (0..9).collect();
        SeededRng::new(seed).shuffle(&mut order);
        let permute =
            |t: &Tensor| Tensor::from_rows(&order.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let run = |k: Tensor, v: Tensor| {
            let mut t = Tape::new();
            let (q, k, v) = (t.constant(x[0].clone()), t.constant(k), t.constant(v));
            let y = attend(&mut t, q, k, v).unwrap();
            t.value(y).clone()
        };
        exact_attend &= run(x[1].clone(), x[2].clone()) == run(permute(&x[1]), permute(&x[2]));
    }
    ok &= exact_attend;
    notes.push(format!("attend K/V-permutation-exact {exact_attend}"));

    let mut exact_pool = true;
    for pool in [PoolKind::Max, PoolKind::Avg] {
        for seed in 0..10u64 {
            let (store, conv, g) = saconv_fixture(pool, 100 + seed);
            let mut shuffled = g.clone();
            let mut r = SeededRng::new(seed);
            for w in g.bounds.windows(2) {
                let mut order: Vec<usize> = (w[0]..w[1]).collect();
                r.shuffle(&mut order);
                for (dst, &src) in (w[0]..w[1]).zip(&order) {
                    shuffled.members[dst] = g.members[src];
                    shuffled.offsets[3 * dst..3 * dst + 3].copy_from_slice(&g.offsets[3 * src..3 * src + 3]);
                }
            }
            let input = store.param_id("input").unwrap();
            let run = |g: &Grouping| {
                let mut s = Session::new(&store, Mode::Eval, SeededRng::new(0));
                let f = s.param(input);
                let y = conv.forward(&mut s, g, Some(f)).unwrap();
                s.value(y).clone()
            };
            exact_pool &= run(&g) == run(&shuffled);
        }
    }
    ok &= exact_pool;
    notes.push(format!("pooled SAConv reorder-exact {exact_pool}"));
    check(ok, notes.join("; "))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::parse(
        "task = ae\npoints = 256\nlatent = 32\nsynthetic = sphere,box,cylinder,cone,torus,two_segment_arm,sphere,box\n\
         synthetic_train = 1\nsynthetic_test = 0\nbatch_size = 8\nepochs = 1000\nmax_steps = 1000\n",
    )
    .map_err(|e| e.to_string())?;
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    t.train(None).map_err(|e| e.to_string())?;
    let recon: Vec<f64> = t
        .history
        .iter()
        .filter(|r| r.split == "train" && r.metric == "recon")
        .map(|r| r.value)
        .collect();
    let (first, last) = (recon[0], *recon.last().unwrap());
    let Model::Autoencoder(m) = &t.model else {
        unreachable!()
    };
    let ev = evaluate_autoencoder(m, &t.train, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let mut pyramid_ok = true;
    for (i, s) in t.train.iter().enumerate() {
        let z = m.latent_code(&s.cloud).map_err(|e| e.to_string())?;
        let levels = m
            .decode_points(&z, SeededRng::new(i as u64))
            .map_err(|e| e.to_string())?;
        let sizes: Vec<usize> = levels.iter().map(Vec::len).collect();
        pyramid_ok &= sizes.windows(2).all(|w| w[0] < w[1]) && sizes.last() == Some(&256);
    }
    check(
        t.steps <= 1000 && last <= 0.2 * first && ev.chamfer <= 0.05 && elapsed <= Duration::from_secs(900) && pyramid_ok,
        format!(
            "{} steps, loss {last:.4} vs epoch-1 {first:.4} ({:.1}%), chamfer {:.4}, pyramid {:?} ok {pyramid_ok}, {:.1?}",
            t.steps,
            100.0 * last / first,
            ev.chamfer,
            m.spec.pyramid_sizes(),
            elapsed
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = RunConfig::parse(
        "task = cls\npoints = 256\nsynthetic = sphere,box,torus\nsynthetic_train = 100\nsynthetic_test = 30\nepochs = 30\n",
    )
    .map_err(|e| e.to_string())?;
    let vote_cfg = cfg.augmentation.voting();
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    t.train(None).map_err(|e| e.to_string())?;
    let Model::Classifier(m) = &t.model else { unreachable!() };
    let acc = voting_accuracy(m, &t.test, 10, &vote_cfg, 0).map_err(|e| e.to_string())?;
    let (mut voted, mut single) = (0.0, 0.0);
    for seed in 0..20 {
        voted += voting_accuracy(m, &t.test, 10, &vote_cfg, seed).map_err(|e| e.to_string())? / 20.0;
        single += voting_accuracy(m, &t.test, 1, &vote_cfg, seed).map_err(|e| e.to_string())? / 20.0;
    }
    check(
        t.epoch <= 30 && acc >= 0.95 && voted >= single,
        format!(
            "{} epochs, voting accuracy {acc:.4}; 20-seed mean voting {voted:.4} vs single {single:.4}",
            t.epoch
        ),
    )
}

fn final_map(seed: u64, triplet: bool) -> sacnet::Result<f64> {
    let cfg = RunConfig::parse(&format!(
        "task = ae\nseed = {seed}\npoints = 128\nlatent = 32\nsynthetic = sphere,box,torus\nsynthetic_train = 20\n\
         synthetic_test = 10\nbatch_size = 8\nepochs = 20\ntriplet = {triplet}\n"
    ))?;
    let mut t = Trainer::new(cfg)?;
    t.train(None)?;
    Ok(t.history
        .iter()
        .rev()
        .find(|r| r.metric == "map")
        .expect("map logged")
        .value)
}

fn criterion_7() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10 {
        let plain = final_map(seed, false).map_err(|e| e.to_string())?;
        let trip = final_map(seed, true).map_err(|e| e.to_string())?;
        wins += usize::from(trip >= plain);
        pairs.push(format!("{trip:.3}/{plain:.3}"));
    }
    check(
        wins >= 8,
        format!(
            "triplet >= plain in {wins}/10 seeds (triplet/plain: {})",
            pairs.join(" ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let configs = [
        "task = cls\npoints = 128\nsynthetic = sphere,box\nsynthetic_train = 4\nsynthetic_test = 2\nbatch_size = 4\nepochs = 2\n",
        "task = ae\npoints = 64\nlatent = 8\nexpansions = 4,4,4\nsynthetic = sphere,box\nsynthetic_train = 3\nsynthetic_test = 1\nbatch_size = 4\nepochs = 2\ntriplet = true\n",
    ];
    let mut identical = true;
    let mut round_trip = true;
    let mut resumed_ok = true;
    for text in configs {
        let cfg = RunConfig::parse(text).map_err(|e| e.to_string())?;
        let run = || -> sacnet::Result<Trainer> {
            let mut t = Trainer::new(cfg.clone())?;
            t.train(None)?;
            Ok(t)
        };
        let a = run().map_err(|e| e.to_string())?;
        let b = run().map_err(|e| e.to_string())?;
        identical &= metrics_csv(&a.history) == metrics_csv(&b.history);

        let bytes = a.checkpoint().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
        round_trip &= back.to_bytes() == bytes && back == a.checkpoint();

        let mut first = Trainer::new(cfg.clone()).map_err(|e| e.to_string())?;
        first.run_epoch().map_err(|e| e.to_string())?;
        let saved = first.checkpoint().to_bytes();
        drop(first);
        let mut resumed =
            Trainer::resume(&Checkpoint::from_bytes(&saved).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        resumed.run_epoch().map_err(|e| e.to_string())?;
        resumed_ok &= metrics_csv(&resumed.history) == metrics_csv(&a.history)
            && resumed.checkpoint().to_bytes() == a.checkpoint().to_bytes();
    }
    check(
        identical && round_trip && resumed_ok,
        format!("identical CSVs {identical}, checkpoint round trip {round_trip}, resume matches {resumed_ok}"),
    )
}

fn criterion_9() -> Outcome {
    let mut h1_exact = true;
    for seed in 0..20u64 {
        let target = random_points(7 + seed as usize, seed + 500);
        let decoded = random_points(5 + seed as usize, seed + 600);
        let mut tape = Tape::new();
        let input = tape.constant(points_tensor(&target).unwrap());
        let out = tape.constant(points_tensor(&decoded).unwrap());
        let pyramid = DecodedPyramid {
            points: vec![out],
            features: vec![],
            sizes: vec![decoded.len()],
            batch: 1,
        };
        let weights = LevelWeights::from_sizes(&[decoded.len()]).unwrap();
        let r = recon_loss(&mut tape, input, target.len(), &pyramid, &weights).unwrap();
        let c = chamfer(&mut tape, input, out).unwrap();
        h1_exact &= r.total == tape.value(c).item();
    }
    let alphas = LevelWeights::from_sizes(&[32, 256, 2048]).unwrap().0;
    let alpha_ok = alphas == [1.0 / 64.0, 1.0 / 8.0, 1.0];

    let mut triplet_zero = true;
    let mut held = 0;
    let mut r = SeededRng::new(700);
    for _ in 0..100 {
        let z: Vec<f64> = (0..6).map(|_| r.normal()).collect();
        let zp: Vec<f64> = z.iter().map(|v| v * (0.5 + r.uniform()) + 0.01 * r.normal()).collect();
        let zn: Vec<f64> = z.iter().map(|v| -v + 0.01 * r.normal()).collect();
        let margin = r.uniform_range(0.0, 0.5);
        let mut tape = Tape::new();
        let rows = |t: &mut Tape, v: &[f64]| t.constant(Tensor::matrix(1, 6, v.to_vec()).unwrap());
        let (a, p, n) = (rows(&mut tape, &z), rows(&mut tape, &zp), rows(&mut tape, &zn));
        let cos = |x: &[f64], y: &[f64]| {
            let d: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            d / (x.iter().map(|a| a * a).sum::<f64>() * y.iter().map(|a| a * a).sum::<f64>()).sqrt()
        };
        let condition = (1.0 + cos(&z, &zn)) / 2.0 - (1.0 + cos(&z, &zp)) / 2.0 + margin <= 0.0;
        let l = triplet_loss(&mut tape, a, p, n, margin).unwrap();
        if condition {
            held += 1;
            triplet_zero &= tape.value(l).item() == 0.0;
        }
    }
    check(
        h1_exact && alpha_ok && triplet_zero && held > 0,
        format!("H=1 recon equals chamfer {h1_exact}, alphas {alphas:?}, triplet zero under margin {triplet_zero} ({held}/100 cases)"),
    )
}

/// Writes to the process stdout directly so the lines show up even when the
/// harness captures output of passing tests.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("gradient fidelity", criterion_1),
        ("complexity reproduction", criterion_2),
        ("oracle equivalence", criterion_3),
        ("invariance", criterion_4),
        ("desk-scale auto-encoding", criterion_5),
        ("desk-scale classification", criterion_6),
        ("retrieval direction", criterion_7),
        ("determinism and persistence", criterion_8),
        ("loss identities", criterion_9),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    report("");
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => report(&format!("criterion {} ({name}): PASS: {detail}", i + 1)),
            Err(detail) => {
                report(&format!("criterion {} ({name}): FAIL: {detail}", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
