//! Primal network simplex for min-cost circulations with integer capacities
//! and integer costs.
//!
//! The spanning tree hangs off an artificial root joined to every node by a
//! zero-cost arc `u -> root`; with all supplies zero those arcs never carry
//! flow. The leaving-arc rule keeps the tree strongly feasible, which rules
//! out cycling on degenerate pivots.

const NONE: usize = usize::MAX;
const INF: i64 = i64::MAX / 4;

const STATE_UPPER: i8 = -1;
const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;

/// Tree arc points from the node to its parent.
const UP: i8 = 1;
const DOWN: i8 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub cap: i64,
    pub cost: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Circulation {
    pub flow: Vec<i64>,
    pub cost: i64,
    pub pivots: usize,
}

/// Min-cost circulation over `arcs` on `num_nodes` nodes (lower bounds 0).
pub fn min_cost_circulation(num_nodes: usize, arcs: &[Arc]) -> Circulation {
    let mut ns = NetworkSimplex::new(num_nodes, arcs);
    ns.run();
    let flow = ns.flow[..arcs.len()].to_vec();
    let cost = flow.iter().zip(arcs).map(|(f, a)| f * a.cost).sum();
    Circulation {
        flow,
        cost,
        pivots: ns.pivots,
    }
}

struct NetworkSimplex {
    arc_num: usize,
    source: Vec<usize>,
    target: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<i64>,
    flow: Vec<i64>,
    state: Vec<i8>,

    pi: Vec<i64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    dir: Vec<i8>,
    depth: Vec<usize>,
    first_child: Vec<usize>,
    next_sibling: Vec<usize>,
    prev_sibling: Vec<usize>,

    next_arc: usize,
    block_size: usize,
    pivots: usize,

    // current pivot
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: i64,
}

impl NetworkSimplex {
    fn new(n: usize, arcs: &[Arc]) -> Self {
        let m = arcs.len();
        let all = m + n;
        let root = n;
        let mut ns = Self {
            arc_num: m,
            source: Vec::with_capacity(all),
            target: Vec::with_capacity(all),
            cap: Vec::with_capacity(all),
            cost: Vec::with_capacity(all),
            flow: vec![0; all],
            state: vec![STATE_LOWER; all],
            pi: vec![0; n + 1],
            parent: vec![NONE; n + 1],
            pred: vec![NONE; n + 1],
            dir: vec![UP; n + 1],
            depth: vec![0; n + 1],
            first_child: vec![NONE; n + 1],
            next_sibling: vec![NONE; n + 1],
            prev_sibling: vec![NONE; n + 1],
            next_arc: 0,
            block_size: ((m as f64).sqrt().ceil() as usize).max(10),
            pivots: 0,
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0,
        };
        for a in arcs {
            debug_assert!(a.from < n && a.to < n && a.cap >= 0);
            ns.source.push(a.from);
            ns.target.push(a.to);
            ns.cap.push(a.cap);
            ns.cost.push(a.cost);
        }
        for u in 0..n {
            let e = m + u;
            ns.source.push(u);
            ns.target.push(root);
            ns.cap.push(INF);
            ns.cost.push(0);
            ns.state[e] = STATE_TREE;
            ns.parent[u] = root;
            ns.pred[u] = e;
            ns.dir[u] = UP;
            ns.depth[u] = 1;
            ns.attach(u, root);
        }
        ns
    }

    fn attach(&mut self, child: usize, parent: usize) {
        let head = self.first_child[parent];
        self.next_sibling[child] = head;
        self.prev_sibling[child] = NONE;
        if head != NONE {
            self.prev_sibling[head] = child;
        }
        self.first_child[parent] = child;
    }

    fn detach(&mut self, child: usize, parent: usize) {
        let (p, n) = (self.prev_sibling[child], self.next_sibling[child]);
        if p == NONE {
            self.first_child[parent] = n;
        } else {
            self.next_sibling[p] = n;
        }
        if n != NONE {
            self.prev_sibling[n] = p;
        }
        self.prev_sibling[child] = NONE;
        self.next_sibling[child] = NONE;
    }

    fn reduced_cost(&self, e: usize) -> i64 {
        self.state[e] as i64 * (self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]])
    }

    /// Block search: best violating arc of the first block that has one.
    fn find_entering_arc(&mut self) -> bool {
        let m = self.arc_num;
        if m == 0 {
            return false;
        }
        let mut min = 0i64;
        let mut cnt = self.block_size;
        let mut e = self.next_arc;
        for _ in 0..m {
            let c = self.reduced_cost(e);
            if c < min {
                min = c;
                self.in_arc = e;
            }
            cnt -= 1;
            e += 1;
            if e == m {
                e = 0;
            }
            if cnt == 0 {
                if min < 0 {
                    self.next_arc = e;
                    return true;
                }
                cnt = self.block_size;
            }
        }
        if min < 0 {
            self.next_arc = e;
            return true;
        }
        false
    }

    fn find_join_node(&mut self) {
        let mut u = self.source[self.in_arc];
        let mut v = self.target[self.in_arc];
        while u != v {
            if self.depth[u] > self.depth[v] {
                u = self.parent[u];
            } else if self.depth[v] > self.depth[u] {
                v = self.parent[v];
            } else {
                u = self.parent[u];
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Returns false when the entering arc itself limits the cycle.
    fn find_leaving_arc(&mut self) -> bool {
        let e_in = self.in_arc;
        let (first, second) = if self.state[e_in] == STATE_LOWER {
            (self.source[e_in], self.target[e_in])
        } else {
            (self.target[e_in], self.source[e_in])
        };
        self.delta = self.cap[e_in];
        let mut result = 0;

        let mut u = first;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.dir[u] == UP { self.flow[e] } else { residual(self.cap[e], self.flow[e]) };
            if d < self.delta {
                self.delta = d;
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            let e = self.pred[u];
            let d = if self.dir[u] == DOWN { self.flow[e] } else { residual(self.cap[e], self.flow[e]) };
            if d <= self.delta {
                self.delta = d;
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self, change: bool) {
        let e_in = self.in_arc;
        if self.delta > 0 {
            let val = self.state[e_in] as i64 * self.delta;
            self.flow[e_in] += val;
            let mut u = self.source[e_in];
            while u != self.join {
                self.flow[self.pred[u]] -= self.dir[u] as i64 * val;
                u = self.parent[u];
            }
            let mut u = self.target[e_in];
            while u != self.join {
                self.flow[self.pred[u]] += self.dir[u] as i64 * val;
                u = self.parent[u];
            }
        }
        if change {
            self.state[e_in] = STATE_TREE;
            let out = self.pred[self.u_out];
            self.state[out] = if self.flow[out] == 0 { STATE_LOWER } else { STATE_UPPER };
        } else {
            self.state[e_in] = -self.state[e_in];
        }
    }

    /// Re-roots the subtree below the leaving arc at `u_in` and hangs it
    /// from `v_in` through the entering arc.
    fn update_tree(&mut self) {
        let mut path = Vec::new();
        let mut u = self.u_in;
        loop {
            path.push(u);
            if u == self.u_out {
                break;
            }
            u = self.parent[u];
        }
        let old: Vec<(usize, usize, i8)> = path.iter().map(|&p| (self.parent[p], self.pred[p], self.dir[p])).collect();
        for (&p, &(par, _, _)) in path.iter().zip(&old) {
            self.detach(p, par);
        }

        let e_in = self.in_arc;
        let head = path[0];
        self.parent[head] = self.v_in;
        self.pred[head] = e_in;
        self.dir[head] = if self.source[e_in] == head { UP } else { DOWN };
        self.attach(head, self.v_in);
        for k in 1..path.len() {
            let (p, below) = (path[k], path[k - 1]);
            self.parent[p] = below;
            self.pred[p] = old[k - 1].1;
            self.dir[p] = -old[k - 1].2;
            self.attach(p, below);
        }

        let sigma = self.pi[self.v_in] - self.pi[head] - self.dir[head] as i64 * self.cost[e_in];
        let mut stack = vec![head];
        while let Some(u) = stack.pop() {
            self.pi[u] += sigma;
            self.depth[u] = self.depth[self.parent[u]] + 1;
            let mut c = self.first_child[u];
            while c != NONE {
                stack.push(c);
                c = self.next_sibling[c];
            }
        }
    }

    fn run(&mut self) {
        while self.find_entering_arc() {
            self.find_join_node();
            let change = self.find_leaving_arc();
            assert!(self.delta < INF, "unbounded circulation: a negative cycle has infinite capacity");
            self.change_flow(change);
            if change {
                self.update_tree();
            }
            self.pivots += 1;
        }
    }
}

fn residual(cap: i64, flow: i64) -> i64 {
    if cap >= INF {
        INF
    } else {
        cap - flow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc(from: usize, to: usize, cap: i64, cost: i64) -> Arc {
        Arc { from, to, cap, cost }
    }

    #[test]
    fn negative_cycle_is_saturated_to_its_bottleneck() {
        let arcs = [arc(0, 1, 3, -2), arc(1, 2, 2, -1), arc(2, 0, 5, 0)];
        let c = min_cost_circulation(3, &arcs);
        assert_eq!(c.flow, vec![2, 2, 2]);
        assert_eq!(c.cost, -6);
    }

    #[test]
    fn positive_cycle_stays_empty() {
        let arcs = [arc(0, 1, 3, 2), arc(1, 0, 3, -1)];
        let c = min_cost_circulation(2, &arcs);
        assert_eq!(c.flow, vec![0, 0]);
    }

    #[test]
    fn assignment_through_a_hub() {
        // hub 0 -> workers 1,2 -> jobs 3,4 -> hub
        let profit = [[5, 9], [7, 10]];
        let mut arcs = vec![arc(0, 1, 1, 0), arc(0, 2, 1, 0), arc(3, 0, 1, 0), arc(4, 0, 1, 0)];
        for w in 0..2 {
            for j in 0..2 {
                arcs.push(arc(1 + w, 3 + j, 1, -profit[w][j]));
            }
        }
        let c = min_cost_circulation(5, &arcs);
        assert_eq!(c.cost, -16);
    }

    #[test]
    fn brute_force_agreement_on_small_random_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.random_range(2..5);
            let m = rng.random_range(1..7);
            let arcs: Vec<Arc> = (0..m)
                .map(|_| {
                    let a = rng.random_range(0..n);
                    let mut b = rng.random_range(0..n);
                    if a == b {
                        b = (b + 1) % n;
                    }
                    arc(a, b, rng.random_range(0..3), rng.random_range(-5..5))
                })
                .collect();
            let got = min_cost_circulation(n, &arcs);
            // conservation
            let mut bal = vec![0i64; n];
            for (f, a) in got.flow.iter().zip(&arcs) {
                assert!(*f >= 0 && *f <= a.cap);
                bal[a.from] -= f;
                bal[a.to] += f;
            }
            assert!(bal.iter().all(|&b| b == 0));
            // enumerate all flows
            let mut best = 0i64;
            let mut flow = vec![0i64; m];
            loop {
                let mut bal = vec![0i64; n];
                for (f, a) in flow.iter().zip(&arcs) {
                    bal[a.from] -= f;
                    bal[a.to] += f;
                }
                if bal.iter().all(|&b| b == 0) {
                    best = best.min(flow.iter().zip(&arcs).map(|(f, a)| f * a.cost).sum());
                }
                let mut k = 0;
                while k < m {
                    flow[k] += 1;
                    if flow[k] <= arcs[k].cap {
                        break;
                    }
                    flow[k] = 0;
                    k += 1;
                }
                if k == m {
                    break;
                }
            }
            assert_eq!(got.cost, best);
        }
    }
}
