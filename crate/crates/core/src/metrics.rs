//! Benchmark-exact lane evaluation: lanes rendered as wide masks and matched
//! one-to-one by IoU for precision/recall/F1, and point-wise accuracy at
//! fixed row samples for the TuSimple protocol.
//!
//! Defaults follow the public benchmarks: IoU threshold 0.5 and a 30 px lane
//! width for full-size frames (configure a smaller width for small synthetic
//! images), 20 px point distance and an 85% lane-acceptance ratio for
//! TuSimple.

use crate::error::{Error, Result};
use crate::lane::Lane;
use serde::Deserialize;

pub const DEFAULT_IOU_THRESH: f64 = 0.5;
pub const DEFAULT_LANE_WIDTH_PX: usize = 30;
pub const DEFAULT_TUSIMPLE_DIST_PX: f64 = 20.0;
pub const DEFAULT_TUSIMPLE_ACCEPT_RATIO: f64 = 0.85;

/// Binary lane mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchStats {
    pub fn merge(&mut self, other: MatchStats) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn point_segment_dist(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Renders a polyline with round joins: a pixel (integer center) is set iff
/// its distance to the polyline is at most width_px/2.
pub fn render_lane_mask(lane: &Lane, width_px: usize, h: usize, w: usize) -> Result<Mask> {
    if lane.points.len() < 2 {
        return Err(Error::Dim("render_lane_mask: lane has fewer than 2 points".into()));
    }
    if width_px < 1 {
        return Err(Error::Config("render_lane_mask: width_px must be >= 1".into()));
    }
    let r = width_px as f64 / 2.0;
    let pad = r.ceil() as isize + 1;
    let mut mask = Mask {
        h,
        w,
        data: vec![false; h * w],
    };
    for seg in lane.points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = ((a.0.min(b.0)).floor() as isize - pad).max(0) as usize;
        let x1 = ((a.0.max(b.0)).ceil() as isize + pad).min(w as isize - 1);
        let y0 = ((a.1.min(b.1)).floor() as isize - pad).max(0) as usize;
        let y1 = ((a.1.max(b.1)).ceil() as isize + pad).min(h as isize - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                if !mask.data[y * w + x]
                    && point_segment_dist(x as f64, y as f64, a, b) <= r
                {
                    mask.data[y * w + x] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// |A ∩ B| / |A ∪ B|, defined as 0 when both masks are empty.
pub fn lane_iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::Dim(format!(
            "lane_iou shape mismatch: {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        Ok(0.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Minimum-cost assignment on a square matrix (O(n^3) Hungarian with
/// potentials). Returns for each row the assigned column.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    const INF: f64 = f64::INFINITY;
    // 1-based potentials over rows (u) and columns (v); way[j] backtracks the
    // augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// One-to-one lane matching maximizing total IoU; pairs at or above
/// `iou_thresh` are true positives. `greedy` switches to best-first matching
/// (faster, not optimal) for comparison runs.
pub fn match_lanes(
    preds: &[Lane],
    gts: &[Lane],
    iou_thresh: f64,
    width_px: usize,
    h: usize,
    w: usize,
    greedy: bool,
) -> Result<MatchStats> {
    assert!(
        iou_thresh > 0.0 && iou_thresh <= 1.0,
        "iou_thresh must be in (0,1]"
    );
    let pred_masks: Vec<Mask> = preds
        .iter()
        .map(|l| render_lane_mask(l, width_px, h, w))
        .collect::<Result<_>>()?;
    let gt_masks: Vec<Mask> = gts
        .iter()
        .map(|l| render_lane_mask(l, width_px, h, w))
        .collect::<Result<_>>()?;
    let mut iou = vec![vec![0.0f64; gts.len()]; preds.len()];
    for (i, pm) in pred_masks.iter().enumerate() {
        for (j, gm) in gt_masks.iter().enumerate() {
            iou[i][j] = lane_iou(pm, gm)?;
        }
    }

    let tp = if greedy {
        let mut used_p = vec![false; preds.len()];
        let mut used_g = vec![false; gts.len()];
        let mut tp = 0usize;
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..preds.len() {
                for j in 0..gts.len() {
                    if used_p[i] || used_g[j] {
                        continue;
                    }
                    if best.map_or(true, |(_, _, b)| iou[i][j] > b) {
                        best = Some((i, j, iou[i][j]));
                    }
                }
            }
            match best {
                Some((i, j, v)) if v >= iou_thresh => {
                    used_p[i] = true;
                    used_g[j] = true;
                    tp += 1;
                }
                _ => break,
            }
        }
        tp
    } else {
        // pad to square; dummy pairs cost 1.0 (zero IoU)
        let n = preds.len().max(gts.len());
        if n == 0 {
            0
        } else {
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i < preds.len() && j < gts.len() {
                                1.0 - iou[i][j]
                            } else {
                                1.0
                            }
                        })
                        .collect()
                })
                .collect();
            let assignment = hungarian(&cost);
            let mut tp = 0usize;
            for (i, &j) in assignment.iter().enumerate().take(preds.len()) {
                if j < gts.len() && iou[i][j] >= iou_thresh {
                    tp += 1;
                }
            }
            tp
        }
    };

    Ok(MatchStats {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
    })
}

/// precision = TP/(TP+FP), recall = TP/(TP+FN), f1 = 2PR/(P+R); all 0 on
/// empty denominators.
pub fn f1_from_stats(s: &MatchStats) -> (f64, f64, f64) {
    let precision = if s.tp + s.fp == 0 {
        0.0
    } else {
        s.tp as f64 / (s.tp + s.fp) as f64
    };
    let recall = if s.tp + s.fn_ == 0 {
        0.0
    } else {
        s.tp as f64 / (s.tp + s.fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// TuSimple-style lane: predicted/annotated x per h_sample row, None where
/// the lane is absent (the -2 sentinel in the JSON format).
pub type SampledLane = Vec<Option<f64>>;

/// Greedy point-accuracy evaluation at fixed row samples. Lanes pair by most
/// correct points; a matched prediction with fewer than 85% correct points
/// still counts as a false positive and leaves its ground truth missed.
pub fn tusimple_accuracy(
    preds: &[SampledLane],
    gts: &[SampledLane],
    h_samples: &[i64],
    dist_thresh_px: f64,
) -> Result<(f64, f64, f64)> {
    if h_samples.is_empty() {
        return Err(Error::Config("tusimple_accuracy: h_samples is empty".into()));
    }
    let correct = |p: &SampledLane, g: &SampledLane| -> usize {
        let mut c = 0;
        for k in 0..h_samples.len() {
            if let (Some(px), Some(gx)) = (p.get(k).copied().flatten(), g.get(k).copied().flatten())
            {
                if (px - gx).abs() < dist_thresh_px {
                    c += 1;
                }
            }
        }
        c
    };
    let gt_points: Vec<usize> = gts
        .iter()
        .map(|g| g.iter().filter(|p| p.is_some()).count())
        .collect();
    let total_points: usize = gt_points.iter().sum();

    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; gts.len()];
    let mut correct_sum = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in 0..preds.len() {
            for j in 0..gts.len() {
                if used_p[i] || used_g[j] {
                    continue;
                }
                let c = correct(&preds[i], &gts[j]);
                if best.map_or(true, |(_, _, b)| c > b) {
                    best = Some((i, j, c));
                }
            }
        }
        match best {
            Some((i, j, c)) => {
                used_p[i] = true;
                used_g[j] = true;
                correct_sum += c;
                if (c as f64) < DEFAULT_TUSIMPLE_ACCEPT_RATIO * gt_points[j] as f64 {
                    fp += 1;
                    fn_ += 1;
                }
            }
            None => break,
        }
    }
    fp += used_p.iter().filter(|&&u| !u).count();
    fn_ += used_g.iter().filter(|&&u| !u).count();

    let accuracy = if total_points == 0 {
        0.0
    } else {
        correct_sum as f64 / total_points as f64
    };
    let fp_rate = if preds.is_empty() {
        0.0
    } else {
        fp as f64 / preds.len() as f64
    };
    let fn_rate = if gts.is_empty() {
        0.0
    } else {
        fn_ as f64 / gts.len() as f64
    };
    Ok((accuracy, fp_rate, fn_rate))
}

/// Parses CULane ".lines.txt" content: each nonempty line alternates x y
/// floats for one lane. Lines listed bottom-to-top are reversed so lane y
/// always increases.
pub fn parse_culane_lines(text: &str) -> Result<Vec<Lane>> {
    let mut lanes = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            file: "<culane lines>".into(),
            line: lineno + 1,
            msg,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() % 2 != 0 {
            return Err(perr(format!("odd token count {}", tokens.len())));
        }
        let mut points = Vec::with_capacity(tokens.len() / 2);
        for pair in tokens.chunks(2) {
            let x: f64 = pair[0]
                .parse()
                .map_err(|_| perr(format!("non-numeric token '{}'", pair[0])))?;
            let y: f64 = pair[1]
                .parse()
                .map_err(|_| perr(format!("non-numeric token '{}'", pair[1])))?;
            points.push((x, y));
        }
        if points.len() >= 2 && points[0].1 > points[points.len() - 1].1 {
            points.reverse();
        }
        lanes.push(Lane::new(points).map_err(|e| perr(format!("{e}")))?);
    }
    Ok(lanes)
}

#[derive(Deserialize)]
struct TuSimpleRecord {
    lanes: Vec<Vec<f64>>,
    h_samples: Vec<i64>,
    raw_file: String,
}

/// Parses one TuSimple JSON line into (lanes aligned to h_samples with -2 as
/// absent, h_samples, raw_file).
pub fn parse_tusimple_record(json_line: &str) -> Result<(Vec<SampledLane>, Vec<i64>, String)> {
    let rec: TuSimpleRecord = serde_json::from_str(json_line).map_err(|e| Error::Parse {
        file: "<tusimple json>".into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let lanes = rec
        .lanes
        .iter()
        .map(|xs| {
            xs.iter()
                .map(|&x| if x < 0.0 { None } else { Some(x) })
                .collect()
        })
        .collect();
    Ok((lanes, rec.h_samples, rec.raw_file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vline(x: f64, y0: f64, y1: f64) -> Lane {
        Lane::new(vec![(x, y0), (x, y1)]).unwrap()
    }

    /// Brute-force oracle: scan every pixel against every segment.
    fn render_oracle(lane: &Lane, width_px: usize, h: usize, w: usize) -> Mask {
        let r = width_px as f64 / 2.0;
        let mut data = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut d = f64::INFINITY;
                for seg in lane.points.windows(2) {
                    d = d.min(point_segment_dist(x as f64, y as f64, seg[0], seg[1]));
                }
                data[y * w + x] = d <= r;
            }
        }
        Mask { h, w, data }
    }

    #[test]
    fn render_width_one_vertical_is_single_column() {
        let mask = render_lane_mask(&vline(5.0, 2.0, 10.0), 1, 16, 16).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(mask.data[y * 16 + x], x == 5 && (2..=10).contains(&y));
            }
        }
    }

    #[test]
    fn render_matches_distance_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let n = rng.gen_range(2..5);
            let mut y = rng.gen_range(-10.0..20.0);
            let mut pts = Vec::new();
            for _ in 0..n {
                pts.push((rng.gen_range(-20.0..84.0), y));
                y += rng.gen_range(5.0..30.0);
            }
            let lane = Lane::new(pts).unwrap();
            let width = rng.gen_range(1..31);
            let got = render_lane_mask(&lane, width, 64, 64).unwrap();
            let want = render_oracle(&lane, width, 64, 64);
            assert_eq!(got, want, "width {width} lane {:?}", lane.points);
        }
    }

    #[test]
    fn render_width_30_count_matches_oracle() {
        let lane = vline(32.0, 10.0, 50.0);
        let got = render_lane_mask(&lane, 30, 64, 64).unwrap();
        let want = render_oracle(&lane, 30, 64, 64);
        assert_eq!(got, want);
        // strip of ~30 px across 41 rows plus round caps
        assert!(got.count() > 30 * 40);
    }

    #[test]
    fn render_out_of_frame_is_empty_not_error() {
        let mask = render_lane_mask(&vline(-50.0, 0.0, 60.0), 5, 64, 64).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn iou_basics() {
        let a = render_lane_mask(&vline(10.0, 5.0, 50.0), 5, 64, 64).unwrap();
        assert_eq!(lane_iou(&a, &a).unwrap(), 1.0);
        let b = render_lane_mask(&vline(40.0, 5.0, 50.0), 5, 64, 64).unwrap();
        assert_eq!(lane_iou(&a, &b).unwrap(), 0.0);
        let empty = Mask { h: 64, w: 64, data: vec![false; 64 * 64] };
        assert_eq!(lane_iou(&empty, &empty).unwrap(), 0.0);
        let off = Mask { h: 32, w: 64, data: vec![false; 32 * 64] };
        assert!(lane_iou(&a, &off).is_err());
    }

    #[test]
    fn iou_parallel_width_30_offset_15() {
        // caps out of frame: the in-frame region is two 31-px strips 15 apart
        let (h, w) = (128, 128);
        let a = render_lane_mask(&vline(50.0, -40.0, 168.0), 30, h, w).unwrap();
        let b = render_lane_mask(&vline(65.0, -40.0, 168.0), 30, h, w).unwrap();
        let got = lane_iou(&a, &b).unwrap();
        let mut inter = 0;
        let mut union = 0;
        for i in 0..h * w {
            if a.data[i] && b.data[i] {
                inter += 1;
            }
            if a.data[i] || b.data[i] {
                union += 1;
            }
        }
        assert_eq!(got, inter as f64 / union as f64);
        assert!((got - 1.0 / 3.0).abs() < 0.05, "iou {got}");
    }

    #[test]
    fn match_identical_sets() {
        let gts = vec![vline(10.0, 0.0, 60.0), vline(40.0, 0.0, 60.0)];
        let s = match_lanes(&gts, &gts, 0.5, 5, 64, 64, false).unwrap();
        assert_eq!(s, MatchStats { tp: 2, fp: 0, fn_: 0 });
    }

    #[test]
    fn match_empty_preds() {
        let gts = vec![vline(10.0, 0.0, 60.0), vline(40.0, 0.0, 60.0)];
        let s = match_lanes(&[], &gts, 0.5, 5, 64, 64, false).unwrap();
        assert_eq!(s, MatchStats { tp: 0, fp: 0, fn_: 2 });
    }

    /// All one-to-one assignments by permutation; returns every TP count
    /// achievable by a total-IoU-optimal assignment.
    fn exhaustive_tp_counts(iou: &[Vec<f64>], thresh: f64) -> Vec<usize> {
        let np = iou.len();
        let ng = if np == 0 { 0 } else { iou[0].len() };
        let n = np.max(ng);
        let mut cols: Vec<usize> = (0..n).collect();
        let mut best_total = f64::NEG_INFINITY;
        let mut counts = Vec::new();
        permute(&mut cols, 0, &mut |perm| {
            let mut total = 0.0;
            let mut tp = 0;
            for (i, &j) in perm.iter().enumerate() {
                if i < np && j < ng {
                    total += iou[i][j];
                    if iou[i][j] >= thresh {
                        tp += 1;
                    }
                }
            }
            if total > best_total + 1e-12 {
                best_total = total;
                counts = vec![tp];
            } else if (total - best_total).abs() <= 1e-12 {
                counts.push(tp);
            }
        });
        counts
    }

    fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            f(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, f);
            items.swap(k, i);
        }
    }

    #[test]
    fn match_lanes_equals_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..250 {
            let (h, w) = (32, 32);
            fn mk(rng: &mut ChaCha8Rng, n: usize) -> Vec<Lane> {
                (0..n)
                    .map(|_| {
                        let x0 = rng.gen_range(0.0..32.0);
                        let x1 = (x0 + rng.gen_range(-8.0f64..8.0)).clamp(0.0, 31.0);
                        Lane::new(vec![(x0, 0.0), (x1, 31.0)]).unwrap()
                    })
                    .collect()
            }
            let np = rng.gen_range(0..5);
            let preds = mk(&mut rng, np);
            let ng = rng.gen_range(0..5);
            let gts = mk(&mut rng, ng);
            let s = match_lanes(&preds, &gts, 0.5, 5, h, w, false).unwrap();
            assert_eq!(s.tp + s.fp, preds.len());
            assert_eq!(s.tp + s.fn_, gts.len());

            let mut iou = vec![vec![0.0; gts.len()]; preds.len()];
            for (i, p) in preds.iter().enumerate() {
                for (j, g) in gts.iter().enumerate() {
                    iou[i][j] = lane_iou(
                        &render_lane_mask(p, 5, h, w).unwrap(),
                        &render_lane_mask(g, 5, h, w).unwrap(),
                    )
                    .unwrap();
                }
            }
            let allowed = exhaustive_tp_counts(&iou, 0.5);
            assert!(
                allowed.contains(&s.tp),
                "case {case}: tp {} not among optimal {:?}",
                s.tp,
                allowed
            );
        }
    }

    #[test]
    fn f1_values() {
        assert_eq!(f1_from_stats(&MatchStats { tp: 10, fp: 0, fn_: 0 }), (1.0, 1.0, 1.0));
        assert_eq!(f1_from_stats(&MatchStats { tp: 1, fp: 1, fn_: 1 }), (0.5, 0.5, 0.5));
        assert_eq!(f1_from_stats(&MatchStats { tp: 0, fp: 3, fn_: 2 }), (0.0, 0.0, 0.0));
    }

    #[test]
    fn tusimple_identical_and_offset() {
        let h_samples: Vec<i64> = (0..10).map(|i| i * 10).collect();
        let lane: SampledLane = (0..10).map(|i| Some(20.0 + i as f64)).collect();
        let gts = vec![lane.clone()];
        let (acc, fp, fn_) = tusimple_accuracy(&gts, &gts, &h_samples, 20.0).unwrap();
        assert_eq!((acc, fp, fn_), (1.0, 0.0, 0.0));

        let off: SampledLane = lane.iter().map(|p| p.map(|x| x + 40.0)).collect();
        let (acc, fp, fn_) = tusimple_accuracy(&[off], &gts, &h_samples, 20.0).unwrap();
        assert_eq!(acc, 0.0);
        assert_eq!((fp, fn_), (1.0, 1.0));
    }

    #[test]
    fn tusimple_half_points_within_threshold() {
        let h_samples: Vec<i64> = (0..8).map(|i| i * 10).collect();
        let gt: SampledLane = (0..8).map(|_| Some(50.0)).collect();
        // first 4 points on target, last 4 pushed out by 2x the threshold
        let pred: SampledLane = (0..8)
            .map(|i| Some(if i < 4 { 50.0 } else { 90.0 }))
            .collect();
        let (acc, fp, fn_) = tusimple_accuracy(&[pred], &[gt], &h_samples, 20.0).unwrap();
        assert_eq!(acc, 0.5);
        // 4/8 correct is below the 85% acceptance ratio
        assert_eq!((fp, fn_), (1.0, 1.0));
    }

    #[test]
    fn tusimple_empty_h_samples_is_error() {
        assert!(tusimple_accuracy(&[], &[], &[], 20.0).is_err());
    }

    #[test]
    fn culane_parser() {
        let lanes = parse_culane_lines("1.0 10.0 2.0 20.0\n").unwrap();
        assert_eq!(lanes.len(), 1);
        assert_eq!(lanes[0].points, vec![(1.0, 10.0), (2.0, 20.0)]);

        // bottom-to-top listing is normalized to increasing y
        let lanes = parse_culane_lines("5.0 30.0 6.0 20.0 7.0 10.0\n").unwrap();
        assert_eq!(lanes[0].points[0].1, 10.0);

        let err = parse_culane_lines("\n1.0 2.0 3.0\n").unwrap_err();
        assert!(format!("{err}").contains(":2:"), "{err}");
        assert!(parse_culane_lines("1.0 x\n").is_err());
    }

    #[test]
    fn tusimple_parser() {
        let rec = r#"{"lanes": [[-2, 10.5, 20], [-2, -2, 30]], "h_samples": [100, 110, 120], "raw_file": "clips/a.jpg"}"#;
        let (lanes, h_samples, raw) = parse_tusimple_record(rec).unwrap();
        assert_eq!(h_samples, vec![100, 110, 120]);
        assert_eq!(raw, "clips/a.jpg");
        assert_eq!(lanes[0], vec![None, Some(10.5), Some(20.0)]);
        assert_eq!(lanes[1], vec![None, None, Some(30.0)]);
        assert!(parse_tusimple_record("{not json").is_err());
    }
}
