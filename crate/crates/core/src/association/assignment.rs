use super::ScoreMatrix;

// Below this, a path's reduced cost is treated as non-improving.
const COST_EPS: f64 = 1e-12;

struct Edge {
    to: usize,
    cap: i32,
    cost: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap: 1, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
    }
}

/// Maximum-total-score one-to-one pairing of rows (tracks) and columns
/// (detections). Only pairs with positive score are eligible.
///
/// Solved as min-cost flow with edge costs `1 - score`: each augmenting path
/// adds one pair, and augmentation stops once the cheapest path costs at least
/// one unit (adds no score). Returns `(row, col)` pairs sorted by row. Ties are
/// resolved deterministically toward lower indices.
pub fn solve_assignment(scores: &ScoreMatrix) -> Vec<(usize, usize)> {
    let (m, n) = (scores.rows(), scores.cols());
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let source = 0;
    let sink = m + n + 1;
    let nodes = m + n + 2;
    let mut g = FlowGraph::new(nodes);
    for r in 0..m {
        g.add(source, 1 + r, 0.0);
    }
    for r in 0..m {
        for c in 0..n {
            let s = scores.get(r, c);
            if s > 0.0 {
                g.add(1 + r, 1 + m + c, 1.0 - s);
            }
        }
    }
    for c in 0..n {
        g.add(1 + m + c, sink, 0.0);
    }

    // All initial costs are non-negative, so zero potentials are feasible.
    let mut potential = vec![0.0; nodes];
    let mut accumulated = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev_edge = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut u = usize::MAX;
            for v in 0..nodes {
                if !done[v] && dist[v].is_finite() && (u == usize::MAX || dist[v] < dist[u]) {
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            for &e in &g.adj[u] {
                let edge = &g.edges[e];
                if edge.cap <= 0 || done[edge.to] {
                    continue;
                }
                let reduced = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                let nd = dist[u] + reduced;
                if nd < dist[edge.to] {
                    dist[edge.to] = nd;
                    prev_edge[edge.to] = e;
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        // True path cost = reduced distance corrected by the potentials.
        let path_cost = dist[sink] + potential[sink] - potential[source];
        if path_cost >= 1.0 - COST_EPS {
            break;
        }
        for v in 0..nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            g.edges[e].cap -= 1;
            g.edges[e ^ 1].cap += 1;
            v = g.edges[e ^ 1].to;
        }
        accumulated += path_cost;
    }
    debug_assert!(accumulated.is_finite());

    let mut pairs = Vec::new();
    for r in 0..m {
        for &e in &g.adj[1 + r] {
            let edge = &g.edges[e];
            if edge.to > m && edge.to <= m + n && edge.cap == 0 && e % 2 == 0 {
                pairs.push((r, edge.to - 1 - m));
            }
        }
    }
    pairs
}
