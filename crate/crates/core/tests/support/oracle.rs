//! Brute-force reference for the evaluator on tiny random instances.
//! Shared by the evaluator tests and the acceptance target.

use std::collections::BTreeMap;

use vistk_core::dataset::*;
use vistk_core::eval::*;
use vistk_core::mask::*;
use vistk_core::synth::Rng;

pub const SIDE: u32 = 3;

// Dyadic scores keep track means exact, so ties and monotone rescaling
// behave predictably.
pub fn random_track(rng: &mut Rng, id: u64, video: &VideoInfo, scored: bool) -> InstanceTrack {
    let mut t = InstanceTrack::new(id, video.id, rng.range(1, 2), video.length);
    let score = rng.range(1, 4) as f64 / 4.0;
    for f in 0..video.length {
        if rng.chance(0.75) {
            let x = rng.range(0, SIDE as u64 - 1) as u32;
            let y = rng.range(0, SIDE as u64 - 1) as u32;
            let w = rng.range(1, (SIDE - x) as u64) as u32;
            let h = rng.range(1, (SIDE - y) as u64) as u32;
            t.frame_masks[f] = Some(rle_encode(&BinaryMask::from_box(SIDE, SIDE, &PixelBox::new(x, y, w, h))));
            if scored {
                t.frame_scores[f] = Some(score);
            }
        }
    }
    t
}

pub fn micro_instance(seed: u64) -> (VideoDataset, VideoDataset) {
    let mut rng = Rng::new(seed);
    let videos: Vec<VideoInfo> = (1..=rng.range(1, 3))
        .map(|id| VideoInfo {
            id,
            width: SIDE,
            height: SIDE,
            length: rng.range(1, 3) as usize,
            file_names: vec![],
        })
        .collect();
    let categories = vec![Category::new(1, "a"), Category::new(2, "b")];
    let make = |scored: bool, rng: &mut Rng| {
        let n = rng.range(0, 4);
        let tracks = (1..=n)
            .map(|id| {
                let v = &videos[rng.range(0, videos.len() as u64 - 1) as usize];
                random_track(rng, id, v, scored)
            })
            .collect();
        VideoDataset {
            videos: videos.clone(),
            categories: categories.clone(),
            tracks,
        }
    };
    let gt = make(false, &mut rng);
    let pred = make(true, &mut rng);
    (pred, gt)
}

pub fn oracle_iou(a: &InstanceTrack, b: &InstanceTrack) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for f in 0..a.len() {
        let pa = a.frame_masks[f].as_ref().map(|m| rle_decode(m).unwrap());
        let pb = b.frame_masks[f].as_ref().map(|m| rle_decode(m).unwrap());
        for r in 0..SIDE {
            for c in 0..SIDE {
                let x = pa.as_ref().is_some_and(|m| m.get(r, c));
                let y = pb.as_ref().is_some_and(|m| m.get(r, c));
                inter += (x && y) as u64;
                union += (x || y) as u64;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Matched flag per prediction (in input order) for the lexicographically
/// best assignment: rank by rank, prefer a higher IoU, then a lower gt id.
/// Found by enumerating every partial injection.
pub fn oracle_match(preds: &[&InstanceTrack], gts: &[&InstanceTrack], thr: f64, score: &dyn Fn(&InstanceTrack) -> f64) -> Vec<bool> {
    let mut rank: Vec<usize> = (0..preds.len()).collect();
    rank.sort_by(|&a, &b| {
        score(preds[b]).partial_cmp(&score(preds[a])).unwrap().then(preds[a].track_id.cmp(&preds[b].track_id))
    });
    let ious: Vec<Vec<f64>> = preds.iter().map(|p| gts.iter().map(|g| oracle_iou(p, g)).collect()).collect();

    fn search(
        i: usize,
        rank: &[usize],
        ious: &[Vec<f64>],
        gts: &[&InstanceTrack],
        thr: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        best: &mut Option<Vec<Option<usize>>>,
        key: &dyn Fn(&[Option<usize>]) -> Vec<(f64, i64)>,
    ) {
        if i == rank.len() {
            if best.as_ref().is_none_or(|b| key(current) > key(b)) {
                *best = Some(current.clone());
            }
            return;
        }
        let p = rank[i];
        current[p] = None;
        search(i + 1, rank, ious, gts, thr, used, current, best, key);
        for g in 0..gts.len() {
            if !used[g] && ious[p][g] >= thr {
                used[g] = true;
                current[p] = Some(g);
                search(i + 1, rank, ious, gts, thr, used, current, best, key);
                used[g] = false;
                current[p] = None;
            }
        }
    }

    let key = |a: &[Option<usize>]| -> Vec<(f64, i64)> {
        rank.iter()
            .map(|&p| match a[p] {
                Some(g) => (ious[p][g], -(gts[g].track_id as i64)),
                None => (-1.0, 0),
            })
            .collect()
    };
    let mut best = None;
    search(0, &rank, &ious, gts, thr, &mut vec![false; gts.len()], &mut vec![None; preds.len()], &mut best, &key);
    best.unwrap().iter().map(Option::is_some).collect()
}

/// AP from the definition: at each recall level take the best precision of
/// any score cut-off reaching it.
pub fn oracle_ap(scored: &[(f64, bool)], num_gt: usize) -> f64 {
    let mut cutoffs: Vec<f64> = scored.iter().map(|s| s.0).collect();
    cutoffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cutoffs.dedup();
    let points: Vec<(f64, f64)> = cutoffs
        .iter()
        .map(|&c| {
            let kept: Vec<_> = scored.iter().filter(|s| s.0 >= c).collect();
            let tp = kept.iter().filter(|s| s.1).count() as f64;
            (tp / num_gt as f64, tp / kept.len() as f64)
        })
        .collect();
    let mut total = 0.0;
    for k in 0..101 {
        let r = k as f64 / 100.0;
        total += points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
    }
    total / 101.0
}

pub struct OracleResult {
    pub counts: Vec<(usize, usize, usize)>,
    pub ap: BTreeMap<u64, Vec<f64>>,
    pub ar: BTreeMap<u64, BTreeMap<usize, f64>>,
}

pub fn oracle(pred: &VideoDataset, gt: &VideoDataset, cfg: &EvalConfig) -> OracleResult {
    let score = |t: &InstanceTrack| match cfg.score_mode {
        ScoreMode::Model => t.mean_score(),
        ScoreMode::Uniform => 1.0,
    };
    let mut out = OracleResult {
        counts: vec![(0, 0, 0); cfg.iou_thresholds.len()],
        ap: BTreeMap::new(),
        ar: BTreeMap::new(),
    };
    for cat in &gt.categories {
        let num_gt = gt.tracks.iter().filter(|t| t.category_id == cat.id).count();
        let mut aps = vec![];
        let mut ar_tp: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (ti, &thr) in cfg.iou_thresholds.iter().enumerate() {
            let mut scored = vec![];
            for v in &gt.videos {
                let ps: Vec<&InstanceTrack> =
                    pred.tracks.iter().filter(|t| t.video_id == v.id && t.category_id == cat.id).collect();
                let gs: Vec<&InstanceTrack> =
                    gt.tracks.iter().filter(|t| t.video_id == v.id && t.category_id == cat.id).collect();
                let matched = oracle_match(&ps, &gs, thr, &score);
                let tp = matched.iter().filter(|m| **m).count();
                let c = &mut out.counts[ti];
                c.0 += tp;
                c.1 += ps.len() - tp;
                c.2 += gs.len() - tp;
                for (p, m) in ps.iter().zip(&matched) {
                    scored.push((score(p), *m));
                }
                let mut ranked: Vec<(f64, u64, bool)> =
                    ps.iter().zip(&matched).map(|(p, m)| (score(p), p.track_id, *m)).collect();
                ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                for &k in &cfg.max_dets_for_ar {
                    let v = ar_tp.entry(k).or_insert_with(|| vec![0; cfg.iou_thresholds.len()]);
                    v[ti] += ranked.iter().take(k).filter(|r| r.2).count();
                }
            }
            if num_gt > 0 {
                aps.push(oracle_ap(&scored, num_gt));
            }
        }
        if num_gt > 0 {
            out.ap.insert(cat.id, aps);
            let n = cfg.iou_thresholds.len() as f64;
            out.ar.insert(
                cat.id,
                ar_tp.iter().map(|(&k, tps)| (k, tps.iter().map(|&t| t as f64 / num_gt as f64).sum::<f64>() / n)).collect(),
            );
        }
    }
    out
}

pub fn check_against_oracle(seed: u64, cfg: &EvalConfig) {
    let (pred, gt) = micro_instance(seed);
    let report = evaluate(&pred, &gt, cfg).unwrap();
    let o = oracle(&pred, &gt, cfg);
    for (d, c) in report.diagnostics.iter().zip(&o.counts) {
        assert_eq!((d.tp, d.fp, d.fn_), *c, "seed {seed} threshold {}", d.iou_threshold);
    }
    for c in &report.per_category {
        match o.ap.get(&c.category_id) {
            None => assert!(c.ap.is_none(), "seed {seed}"),
            Some(aps) => {
                assert_eq!(c.ap_per_threshold.len(), aps.len());
                for (a, b) in c.ap_per_threshold.iter().zip(aps) {
                    assert!((a - b).abs() < 1e-12, "seed {seed} category {}: {a} vs {b}", c.category_id);
                }
                for (k, v) in &o.ar[&c.category_id] {
                    assert!((c.ar[k] - v).abs() < 1e-12, "seed {seed} AR{k}");
                }
            }
        }
    }
    let means: Vec<f64> = o.ap.values().map(|a| a.iter().sum::<f64>() / a.len() as f64).collect();
    let expected = if means.is_empty() { 0.0 } else { means.iter().sum::<f64>() / means.len() as f64 };
    assert!((report.ap - expected).abs() < 1e-12, "seed {seed}");
    assert_eq!(report.categories_evaluated, o.ap.len());
}

/// Applies `f` to every frame score.
pub fn rescale(ds: &VideoDataset, f: impl Fn(f64) -> f64) -> VideoDataset {
    let mut out = ds.clone();
    for t in &mut out.tracks {
        for s in t.frame_scores.iter_mut().flatten() {
            *s = f(*s);
        }
    }
    out
}
