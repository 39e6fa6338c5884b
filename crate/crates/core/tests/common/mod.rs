#![allow(dead_code)]

use std::collections::BTreeSet;

/// Reference DBSCAN on integer grid values with integer radius, capped at
/// two groups by merging the closest means. Returns every grouping the
/// tie rules allow, each as (groups in ascending order, noise).
///
/// Points are `(value, id)`; clusters are started in ascending (value, id)
/// order and a border point belongs to the first cluster that reaches it.
pub fn dbscan_oracle(points: &[(i64, u32)], radius: i64, min_pts: usize) -> Vec<(Vec<BTreeSet<u32>>, BTreeSet<u32>)> {
    let mut pts = points.to_vec();
    pts.sort();
    let n = pts.len();
    let near = |i: usize, j: usize| (pts[i].0 - pts[j].0).abs() <= radius;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();

    // core components via union-find
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // components ordered by their smallest core index
    let mut roots: Vec<usize> = (0..n).filter(|&i| core[i]).map(|i| find(&mut parent, i)).collect();
    roots.dedup();
    let mut order: Vec<usize> = Vec::new();
    for r in roots {
        if !order.contains(&r) {
            order.push(r);
        }
    }
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    let mut noise = BTreeSet::new();
    for i in 0..n {
        let owner = if core[i] {
            Some(find(&mut parent, i))
        } else {
            // first started cluster with a core neighbor
            order
                .iter()
                .copied()
                .find(|&r| (0..n).any(|j| core[j] && find(&mut parent, j) == r && near(i, j)))
        };
        match owner {
            Some(r) => clusters[order.iter().position(|&x| x == r).unwrap()].push(i),
            None => {
                noise.insert(pts[i].1);
            }
        }
    }
    let values: Vec<i64> = pts.iter().map(|p| p.0).collect();
    let mut out = Vec::new();
    merge_all(clusters, &values, &mut |cs| {
        let groups: Vec<BTreeSet<u32>> = cs.iter().map(|c| c.iter().map(|&i| pts[i].1).collect()).collect();
        out.push((groups, noise.clone()));
    });
    out
}

/// Explores every closest-mean merge order allowed by exact ties.
fn merge_all(clusters: Vec<Vec<usize>>, values: &[i64], emit: &mut dyn FnMut(&[Vec<usize>])) {
    if clusters.len() <= 2 {
        emit(&clusters);
        return;
    }
    // mean difference |Si/ni - Sj/nj| compared exactly as |Si nj - Sj ni| / (ni nj)
    let stats: Vec<(i64, i64)> = clusters
        .iter()
        .map(|c| (c.iter().map(|&i| values[i]).sum(), c.len() as i64))
        .collect();
    let gap = |i: usize, j: usize| {
        (
            (stats[i].0 * stats[j].1 - stats[j].0 * stats[i].1).abs(),
            stats[i].1 * stats[j].1,
        )
    };
    let less = |a: (i64, i64), b: (i64, i64)| (a.0 as i128) * (b.1 as i128) < (b.0 as i128) * (a.1 as i128);
    let mut best: Option<(i64, i64)> = None;
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            let g = gap(i, j);
            if best.is_none_or(|b| less(g, b)) {
                best = Some(g);
            }
        }
    }
    let best = best.unwrap();
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            if !less(best, gap(i, j)) {
                let mut next = clusters.clone();
                let absorbed = next.remove(j);
                next[i].extend(absorbed);
                merge_all(next, values, emit);
            }
        }
    }
}

/// All multisets of `size` values drawn from `lo..=hi`, as sorted vectors.
pub fn multisets(lo: i64, hi: i64, size: usize, emit: &mut dyn FnMut(&[i64])) {
    fn rec(lo: i64, hi: i64, size: usize, cur: &mut Vec<i64>, emit: &mut dyn FnMut(&[i64])) {
        if cur.len() == size {
            emit(cur);
            return;
        }
        let start = cur.last().copied().unwrap_or(lo);
        for v in start..=hi {
            cur.push(v);
            rec(lo, hi, size, cur, emit);
            cur.pop();
        }
    }
    rec(lo, hi, size, &mut Vec::new(), emit);
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Compares `group_models` with the oracle on grid values `k / 10`.
/// `radius` is the neighbourhood in grid steps that `eps` stands for.
pub fn check_grouping(grid: &[i64], eps: f64, radius: i64, min_pts: usize) -> Result<(), String> {
    use sbfl_leo::defense::{group_models, DbscanParams, SimilarityProfile};
    let values: Vec<f64> = grid.iter().map(|&k| k as f64 / 10.0).collect();
    let profile = SimilarityProfile {
        entries: values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect(),
    };
    let got = group_models(&profile, DbscanParams { eps, min_pts });
    let pts: Vec<(i64, u32)> = grid.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect();
    let allowed = dbscan_oracle(&pts, radius, min_pts);
    if allowed.iter().any(|(g, n)| *g == got.groups && *n == got.noise) {
        Ok(())
    } else {
        Err(format!(
            "values {values:?} eps {eps} min {min_pts}: got {got:?}, allowed {allowed:?}"
        ))
    }
}

/// Largest |finite difference - analytic| over `instances` random models,
/// alternating logistic and MLP.
pub fn worst_gradient_error(instances: u64, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    use sbfl_leo::fl::synthetic::{generate_blobs, BlobSpec};
    use sbfl_leo::fl::{ModelKind, ModelLayout, ParamVector};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for instance in 0..instances {
        let classes = rng.gen_range(2..=5);
        let dim = rng.gen_range(2..=6);
        let data = generate_blobs(&BlobSpec {
            classes,
            dim,
            per_class: 6,
            spread: 0.7,
            center_scale: 1.0,
            seed: instance,
        });
        let kind = if instance % 2 == 0 {
            ModelKind::Logistic
        } else {
            ModelKind::Mlp {
                hidden: rng.gen_range(2..=5),
            }
        };
        let layout = ModelLayout {
            feature_dim: dim,
            class_count: classes,
            kind,
        };
        let params = ParamVector::from_vec((0..layout.param_count()).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let batch: Vec<usize> = (0..data.len()).filter(|_| rng.gen_bool(0.6)).collect();
        let batch = if batch.is_empty() { vec![0] } else { batch };
        let mut grad = vec![0.0; layout.param_count()];
        layout.batch_loss_and_gradient(&params, &data, &batch, &mut grad);
        let h = 1e-5;
        for (i, g) in grad.iter().enumerate() {
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (layout.batch_loss(&plus, &data, &batch) - layout.batch_loss(&minus, &data, &batch)) / (2.0 * h);
            worst = worst.max((fd - g).abs());
        }
    }
    worst
}

/// Every committee of 3..=7 miners with a strict dishonest minority, each
/// dishonest miner voting for one of two wrong models, abstaining or voting
/// honestly. Returns (cases, failures) where a failure is a winner other than
/// the honest model or an honest miner marked as dissenter.
pub fn miner_tally_enumeration() -> (usize, Vec<String>) {
    use sbfl_leo::consensus::{tally_cluster, MinerVote};
    use sbfl_leo::ledger::Digest;

    let honest = Digest::of(b"honest");
    let options = [Some(Digest::of(b"a")), Some(Digest::of(b"b")), None, Some(honest)];
    let (mut cases, mut failures) = (0, Vec::new());
    for m in 3usize..=7 {
        for f in (0..m).filter(|f| 2 * f < m) {
            for code in 0..options.len().pow(f as u32) {
                let mut votes: Vec<MinerVote> = (0..m - f)
                    .map(|i| MinerVote {
                        miner: i as u32,
                        choice: Some(honest),
                        score: 0.5,
                        suspects: BTreeSet::new(),
                    })
                    .collect();
                let mut c = code;
                for j in 0..f {
                    votes.push(MinerVote {
                        miner: (m - f + j) as u32,
                        choice: options[c % options.len()],
                        score: 1.0,
                        suspects: BTreeSet::new(),
                    });
                    c /= options.len();
                }
                let t = tally_cluster(&votes);
                if t.winner != Some(honest) || t.dissenters.iter().any(|&d| (d as usize) < m - f) {
                    failures.push(format!("m={m} f={f} code={code}: {t:?}"));
                }
                cases += 1;
            }
        }
    }
    (cases, failures)
}
