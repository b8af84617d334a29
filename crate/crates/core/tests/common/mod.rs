#![allow(dead_code)]

use flowtrack::model::{ConstraintSet, FrameSequence, Point3, PointId};
use flowtrack::network::{Edge, EdgeKind, FlowNetwork, Sigmas, Tail};
use rand::seq::index::sample;
use rand::Rng;

pub struct NetShape {
    pub frames: (usize, usize),
    pub max_points: usize,
    pub max_nk: usize,
}

/// Random layered network: every node gets up to NK distinct successors with
/// weights uniform in (0, 1], sources into every frame-1 node and loop edges
/// out of the last frame.
pub fn random_network(rng: &mut impl Rng, shape: &NetShape) -> FlowNetwork {
    let t = rng.random_range(shape.frames.0..=shape.frames.1);
    let sizes: Vec<usize> = (0..t).map(|_| rng.random_range(1..=shape.max_points)).collect();
    let frames: Vec<Vec<Point3>> = sizes
        .iter()
        .enumerate()
        .map(|(f, &n)| (0..n).map(|i| Point3::new(i as f64, f as f64, 0.0)).collect())
        .collect();
    let seq = FrameSequence::new(frames, true);
    let nk = rng.random_range(1..=shape.max_nk);
    let mut edges: Vec<Edge> = (0..sizes[0])
        .map(|i| Edge {
            kind: EdgeKind::Source,
            from: Tail::Source,
            to: PointId::new(0, i),
            weight: 1.0,
        })
        .collect();
    for f in 0..t {
        let (next, kind) = if f + 1 < t { (f + 1, EdgeKind::Temporal) } else { (0, EdgeKind::Loop) };
        for i in 0..sizes[f] {
            let k = nk.min(sizes[next]);
            for j in sample(rng, sizes[next], k) {
                edges.push(Edge {
                    kind,
                    from: Tail::Point(PointId::new(f, i)),
                    to: PointId::new(next, j),
                    weight: 1.0 - rng.random::<f64>(),
                });
            }
        }
    }
    let sigmas = vec![Sigmas { sigma_x: 1.0, sigma_f: 1.0 }; t];
    FlowNetwork::from_edges(seq, edges, true, sigmas).unwrap()
}

/// Number of joint out-edge choices (each node picks one or none).
pub fn choice_space(net: &FlowNetwork) -> u64 {
    net.sequence()
        .ids()
        .map(|id| net.out_edges(id).len() as u64 + 1)
        .product()
}

/// Exhaustive optimum of the binary program, written from the constraint
/// semantics rather than from the solver's rows. Loop edges always count in
/// the objective; without loop constraints they are bound only by C_out.
pub fn brute_force_optimum(net: &FlowNetwork, cs: ConstraintSet) -> f64 {
    let seq = net.sequence();
    let ids: Vec<PointId> = seq.ids().collect();
    let last = seq.num_frames() - 1;
    let edges = net.edges();
    let mut choice = vec![usize::MAX; ids.len()];
    let mut best = 0.0f64;

    fn rec(
        pos: usize,
        ids: &[PointId],
        choice: &mut Vec<usize>,
        net: &FlowNetwork,
        eval: &mut dyn FnMut(&[usize]),
    ) {
        if pos == ids.len() {
            eval(choice);
            return;
        }
        choice[pos] = usize::MAX;
        rec(pos + 1, ids, choice, net, eval);
        for &k in net.out_edges(ids[pos]) {
            choice[pos] = k;
            rec(pos + 1, ids, choice, net, eval);
        }
        choice[pos] = usize::MAX;
    }

    let mut eval = |choice: &[usize]| {
        let mut indeg = vec![0usize; ids.len()];
        let mut loop_in = vec![0usize; seq.frame(0).len()];
        let mut obj = 0.0;
        for &k in choice.iter().filter(|&&k| k != usize::MAX) {
            let e = &edges[k];
            obj += e.weight;
            match e.kind {
                EdgeKind::Loop => loop_in[e.to.index] += 1,
                _ => indeg[seq.node_index(e.to)] += 1,
            }
        }
        for (n, id) in ids.iter().enumerate() {
            let out = usize::from(choice[n] != usize::MAX);
            let inn = indeg[n];
            if cs.inc && inn > 1 {
                return;
            }
            if cs.bal {
                let ok = if id.frame == 0 {
                    // source flow is free in {0, 1}; with loops the returning
                    // flow must match what leaves
                    !cs.closed_loop || loop_in[id.index] == out
                } else if id.frame == last && !cs.closed_loop {
                    inn <= 1
                } else {
                    inn == out
                };
                if !ok {
                    return;
                }
            }
        }
        if obj > best {
            best = obj;
        }
    };
    rec(0, &ids, &mut choice, net, &mut eval);
    best
}

/// Maximum-weight perfect assignment of a square matrix (O(n³) potentials).
pub fn hungarian_max(w: &[Vec<f64>]) -> f64 {
    let n = w.len();
    let cost = |i: usize, j: usize| -w[i - 1][j - 1];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    (1..=n).map(|j| w[p[j] - 1][j - 1]).sum()
}

/// One transition with every pair connected.
pub fn complete_bipartite(w: &[Vec<f64>]) -> FlowNetwork {
    let n = w.len();
    let frames = (0..2)
        .map(|f| (0..n).map(|i| Point3::new(i as f64, f as f64, 0.0)).collect())
        .collect();
    let mut edges: Vec<Edge> = (0..n)
        .map(|i| Edge {
            kind: EdgeKind::Source,
            from: Tail::Source,
            to: PointId::new(0, i),
            weight: 1.0,
        })
        .collect();
    for (i, row) in w.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            edges.push(Edge {
                kind: EdgeKind::Temporal,
                from: Tail::Point(PointId::new(0, i)),
                to: PointId::new(1, j),
                weight: x,
            });
        }
    }
    FlowNetwork::from_edges(FrameSequence::new(frames, false), edges, false, vec![Sigmas { sigma_x: 1.0, sigma_f: 1.0 }])
        .unwrap()
}
