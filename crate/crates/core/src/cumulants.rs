//! Set partitions, labelled simple graphs, moment/cumulant conversion, Wick
//! pairing counts and connected correlations of quasi-free lattice states.

use crate::error::{KmsError, Result};
use crate::propagator::PropagatorKernel;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::VecDeque;

/// Partition of {0..n-1}; blocks ascending, ordered by least element.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Partition {
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    fn from_rgs(rgs: &[usize]) -> Self {
        let k = rgs.iter().copied().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); k];
        for (i, &b) in rgs.iter().enumerate() {
            blocks[b].push(i);
        }
        Partition { blocks }
    }
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }
}

/// All partitions of {0..n-1} from restricted-growth strings.
pub fn enumerate_partitions(n: usize) -> Result<Vec<Partition>> {
    if n == 0 || n > 12 {
        return Err(KmsError::Limit(format!("partitions need 1 ≤ n ≤ 12, got {n}")));
    }
    Ok(partitions_unchecked(n))
}

fn partitions_unchecked(n: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    let mut rgs = vec![0usize; n];
    let mut maxes = vec![0usize; n];
    loop {
        out.push(Partition::from_rgs(&rgs));
        // next restricted-growth string
        let mut i = n;
        loop {
            if i <= 1 {
                return out;
            }
            i -= 1;
            if rgs[i] <= maxes[i - 1] {
                break;
            }
        }
        rgs[i] += 1;
        let cur = maxes[i - 1].max(rgs[i]);
        maxes[i] = cur;
        for j in i + 1..n {
            rgs[j] = 0;
            maxes[j] = cur;
        }
    }
}

/// Bell numbers from the Bell triangle.
pub fn bell_number(n: usize) -> u128 {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![*row.last().unwrap()];
        for &r in &row {
            let last = *next.last().unwrap();
            next.push(last + r);
        }
        row = next;
    }
    row[0]
}

/// Simple labelled graph; edges stored as (i, j) with i < j.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Graph {
    pub n_vertices: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n_vertices: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(KmsError::Input(format!("loop at vertex {}", e.0)));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 >= n_vertices {
                return Err(KmsError::Input(format!("edge {:?} out of range", e)));
            }
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        if edges.len() != before {
            return Err(KmsError::Input("multi-edge".into()));
        }
        Ok(Graph { n_vertices, edges })
    }

    pub fn is_connected(&self) -> bool {
        connected_by_bfs(self.n_vertices, &self.edges)
    }
}

fn connected_by_bfs(n: usize, edges: &[(usize, usize)]) -> bool {
    if n <= 1 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == n
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Every simple labelled graph on n vertices.
pub fn enumerate_graphs(n: usize) -> Result<Vec<Graph>> {
    if n == 0 || n > 7 {
        return Err(KmsError::Limit(format!("graphs need 1 ≤ n ≤ 7, got {n}")));
    }
    let pairs = all_pairs(n);
    Ok((0u64..1 << pairs.len())
        .map(|mask| Graph {
            n_vertices: n,
            edges: pairs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e).collect(),
        })
        .collect())
}

/// Connected simple labelled graphs; the single vertex counts as connected.
pub fn enumerate_connected_graphs(n: usize) -> Result<Vec<Graph>> {
    Ok(enumerate_graphs(n)?.into_iter().filter(Graph::is_connected).collect())
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Connected labelled graph counts from the exponential-formula recurrence.
pub fn connected_graph_count(n: usize) -> u128 {
    let total = |m: usize| 1u128 << (m * m.saturating_sub(1) / 2);
    let mut c = vec![0u128; n + 1];
    for m in 1..=n {
        let mut sub = 0u128;
        for k in 1..m {
            sub += k as u128 * binomial(m, k) * c[k] * total(m - k);
        }
        c[m] = total(m) - sub / m as u128;
    }
    c[n]
}

/// Moments m_1..m_n of a scalar observable; m_0 = 1 implicitly.
#[derive(Clone, Debug)]
pub struct MomentTable {
    pub moments: Vec<f64>,
}

impl MomentTable {
    pub fn new(moments: Vec<f64>) -> Self {
        MomentTable { moments }
    }
    fn get(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Ok(1.0);
        }
        self.moments
            .get(k - 1)
            .copied()
            .ok_or_else(|| KmsError::Input(format!("moment of order {k} missing")))
    }
}

/// κ_1..κ_n from m_n = Σ_k C(n-1,k-1) κ_k m_{n-k}.
pub fn cumulants_from_moments(table: &MomentTable, n: usize) -> Result<Vec<f64>> {
    let mut kappa = Vec::with_capacity(n);
    for order in 1..=n {
        let mut k = table.get(order)?;
        for j in 1..order {
            k -= binomial(order - 1, j - 1) as f64 * kappa[j - 1] * table.get(order - j)?;
        }
        kappa.push(k);
    }
    Ok(kappa)
}

pub fn moments_from_cumulants(kappa: &[f64]) -> MomentTable {
    let mut m: Vec<f64> = Vec::with_capacity(kappa.len());
    for order in 1..=kappa.len() {
        let mut s = 0.0;
        for j in 1..=order {
            let lower = if order == j { 1.0 } else { m[order - j - 1] };
            s += binomial(order - 1, j - 1) as f64 * kappa[j - 1] * lower;
        }
        m.push(s);
    }
    MomentTable::new(m)
}

/// Connected correlation of n observables from a mixed-moment callback
/// (argument: ascending subset of indices), by the partition recursion.
pub fn connected_from_mixed<F>(n: usize, moment: F) -> Result<f64>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if n == 0 || n > 12 {
        return Err(KmsError::Limit(format!("mixed cumulant order {n}")));
    }
    let full: usize = (1 << n) - 1;
    let mut memo: Vec<Option<f64>> = vec![None; full + 1];
    connected_subset(full, &moment, &mut memo)
}

fn subset_indices(mask: usize) -> Vec<usize> {
    (0..usize::BITS as usize).filter(|b| mask >> b & 1 == 1).collect()
}

fn connected_subset<F>(mask: usize, moment: &F, memo: &mut Vec<Option<f64>>) -> Result<f64>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if let Some(v) = memo[mask] {
        return Ok(v);
    }
    let idx = subset_indices(mask);
    let mut val = moment(&idx)?;
    if idx.len() > 1 {
        for p in partitions_unchecked(idx.len()) {
            if p.n_blocks() == 1 {
                continue;
            }
            let mut prod = 1.0;
            for b in &p.blocks {
                let sub = b.iter().fold(0usize, |m, &i| m | 1 << idx[i]);
                prod *= connected_subset(sub, moment, memo)?;
            }
            val -= prod;
        }
    }
    memo[mask] = Some(val);
    Ok(val)
}

/// Which field the Wick count refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// n factors of a real field.
    Real,
    /// n factors Φ and n factors Φ*.
    Charged,
}

/// Number of complete Wick pairings: (n-1)!! for a real field (0 for odd n),
/// n! for a charged field.
pub fn count_wick_pairings(kind: FieldKind, n: usize) -> u128 {
    match kind {
        FieldKind::Real if n % 2 == 1 => 0,
        FieldKind::Real => (1..n).step_by(2).fold(1u128, |acc, k| acc * k as u128),
        FieldKind::Charged => (1..=n).fold(1u128, |acc, k| acc * k as u128),
    }
}

/// All perfect matchings of {0..n-1}, each as a list of pairs.
pub fn perfect_matchings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &mut Vec<usize>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        let first = rest.remove(0);
        for k in 0..rest.len() {
            let partner = rest.remove(k);
            cur.push((first, partner));
            rec(rest, cur, out);
            cur.pop();
            rest.insert(k, partner);
        }
        rest.insert(0, first);
    }
    let mut out = Vec::new();
    if n % 2 == 0 {
        rec(&mut (0..n).collect(), &mut Vec::new(), &mut out);
    }
    out
}

/// All permutations of {0..n-1} (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Equal-time two-point kernels of a gauge-invariant quasi-free state:
/// ω(Ψ(x)Ψ*(y)) = b_minus[x,y], ω(Ψ*(x)Ψ(y)) = b_plus[y,x].
#[derive(Clone, Debug)]
pub struct EdgeKernels {
    pub b_plus: DMatrix<f64>,
    pub b_minus: DMatrix<f64>,
}

impl EdgeKernels {
    /// Site kernels (1/V) Σ_p e^{ip(x-y)} B±(p) of a free propagator.
    pub fn from_propagator(kernel: &PropagatorKernel) -> Self {
        let grid = &kernel.grid;
        let n = grid.total_sites();
        let bm: Vec<f64> = (0..n).map(|p| kernel.bose(p).0).collect();
        let bp: Vec<f64> = (0..n).map(|p| kernel.bose(p).1).collect();
        let fft = crate::fft::SiteFft::new(grid);
        let km = fft.kernel_from_multiplier(&bm, grid.volume());
        let kp = fft.kernel_from_multiplier(&bp, grid.volume());
        let b_minus = DMatrix::from_fn(n, n, |x, y| km[grid.diff_site(x, y)]);
        let b_plus = DMatrix::from_fn(n, n, |x, y| kp[grid.diff_site(x, y)]);
        EdgeKernels { b_plus, b_minus }
    }
}

/// At-most-quadratic observables, expressed with plain index sums.
#[derive(Clone, Debug)]
pub enum Vertex {
    /// Σ_x c(x) Ψ(x), or Σ_x c(x) Ψ*(x) when `star`.
    Linear { star: bool, coeff: DVector<f64> },
    /// Σ_{x,y} q(x,y) Ψ*(x) Ψ(y).
    Quadratic { q: DMatrix<f64> },
    /// Σ_x c(x) Ψ*(x)^n_star Ψ(x)^n_plain.
    Local { coeff: DVector<f64>, n_star: usize, n_plain: usize },
}

impl Vertex {
    pub fn density(coeff: DVector<f64>) -> Self {
        Vertex::Quadratic { q: DMatrix::from_diagonal(&coeff) }
    }

    fn normalize(&self) -> Result<Vertex> {
        match self {
            Vertex::Local { coeff, n_star, n_plain } => match (n_star, n_plain) {
                (0, 1) => Ok(Vertex::Linear { star: false, coeff: coeff.clone() }),
                (1, 0) => Ok(Vertex::Linear { star: true, coeff: coeff.clone() }),
                (1, 1) => Ok(Vertex::density(coeff.clone())),
                _ => Err(KmsError::UnsupportedVertex(format!(
                    "degree {} (only linear and Ψ*Ψ vertices are supported)",
                    n_star + n_plain
                ))),
            },
            v => Ok(v.clone()),
        }
    }
}

#[derive(Clone, Copy)]
struct Slots {
    star: Option<usize>,
    plain: Option<usize>,
}

/// Σ over Wick pairings of the ordered product V_1…V_n, optionally keeping
/// only pairings whose vertex graph is connected.
fn wick_sum(vertices: &[Vertex], kernels: &EdgeKernels, connected_only: bool) -> Result<f64> {
    let verts: Vec<Vertex> = vertices.iter().map(Vertex::normalize).collect::<Result<_>>()?;
    if connected_only && verts.len() > 6 {
        return Err(KmsError::Limit(format!("graph sum needs ≤ 6 vertices, got {}", verts.len())));
    }
    let mut stars = Vec::new();
    let mut plains = Vec::new();
    let mut slots = Vec::new();
    for (i, v) in verts.iter().enumerate() {
        let s = match v {
            Vertex::Linear { star: true, .. } => Slots { star: Some(i), plain: None },
            Vertex::Linear { star: false, .. } => Slots { star: None, plain: Some(i) },
            _ => Slots { star: Some(i), plain: Some(i) },
        };
        if s.star.is_some() {
            stars.push(i);
        }
        if s.plain.is_some() {
            plains.push(i);
        }
        slots.push(s);
    }
    if stars.len() != plains.len() {
        return Ok(0.0);
    }
    let n = verts.len();
    let mut total = 0.0;
    for perm in permutations(plains.len()) {
        // star slot of vertex stars[k] contracts with plain slot of vertex plains[perm[k]]
        let mut partner_of_plain = vec![usize::MAX; n];
        let mut edges = Vec::new();
        for (k, &pk) in perm.iter().enumerate() {
            let (sv, pv) = (stars[k], plains[pk]);
            partner_of_plain[pv] = sv;
            if sv != pv {
                edges.push((sv.min(pv), sv.max(pv)));
            }
        }
        if connected_only && !connected_by_bfs(n, &edges) {
            continue;
        }
        total += pairing_value(&verts, &slots, &partner_of_plain, kernels);
    }
    Ok(total)
}

fn contraction(star_vertex: usize, plain_vertex: usize, k: &EdgeKernels) -> &DMatrix<f64> {
    // rows: plain-slot site, columns: star-slot site
    if plain_vertex < star_vertex {
        &k.b_minus
    } else {
        &k.b_plus
    }
}

fn pairing_value(verts: &[Vertex], slots: &[Slots], partner_of_plain: &[usize], k: &EdgeKernels) -> f64 {
    let n = verts.len();
    let mut done = vec![false; n];
    let mut value = 1.0;
    // open chains start at plain linear vertices
    for start in 0..n {
        if let Vertex::Linear { star: false, coeff } = &verts[start] {
            let mut v = coeff.transpose();
            let mut cur = start;
            done[start] = true;
            loop {
                let next = partner_of_plain[cur];
                v = &v * contraction(next, cur, k);
                done[next] = true;
                match &verts[next] {
                    Vertex::Linear { coeff, .. } => {
                        value *= (&v * coeff)[(0, 0)];
                        break;
                    }
                    Vertex::Quadratic { q } => {
                        v = &v * q;
                        cur = next;
                    }
                    Vertex::Local { .. } => unreachable!(),
                }
            }
        }
    }
    // remaining vertices lie on closed loops of quadratic vertices
    for start in 0..n {
        if done[start] || slots[start].plain.is_none() {
            continue;
        }
        let Vertex::Quadratic { q } = &verts[start] else { unreachable!() };
        let mut m = q.clone();
        let mut cur = start;
        done[start] = true;
        loop {
            let next = partner_of_plain[cur];
            m = &m * contraction(next, cur, k);
            if next == start {
                value *= m.trace();
                break;
            }
            done[next] = true;
            let Vertex::Quadratic { q } = &verts[next] else { unreachable!() };
            m = &m * q;
            cur = next;
        }
    }
    value
}

/// ω(V_1 … V_n) of the quasi-free state, all Wick pairings.
pub fn wick_moment(vertices: &[Vertex], kernels: &EdgeKernels) -> Result<f64> {
    wick_sum(vertices, kernels, false)
}

/// ω_C(V_1, …, V_n) as the sum over connected pairing graphs.
pub fn connected_correlation_graph_sum(vertices: &[Vertex], kernels: &EdgeKernels) -> Result<f64> {
    if vertices.is_empty() {
        return Err(KmsError::Input("no vertices".into()));
    }
    wick_sum(vertices, kernels, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GridSpec, ModelParams};
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn partition_counts() {
        assert_eq!(enumerate_partitions(1).unwrap(), vec![Partition { blocks: vec![vec![0]] }]);
        for n in 1..=9 {
            let ps = enumerate_partitions(n).unwrap();
            assert_eq!(ps.len() as u128, bell_number(n));
            let set: HashSet<_> = ps.iter().cloned().collect();
            assert_eq!(set.len(), ps.len());
        }
        assert_eq!(enumerate_partitions(3).unwrap().len(), 5);
        assert_eq!(enumerate_partitions(4).unwrap().len(), 15);
        assert!(enumerate_partitions(13).is_err());
        assert!(enumerate_partitions(0).is_err());
    }

    #[test]
    fn partitions_are_canonical() {
        for p in enumerate_partitions(6).unwrap() {
            let mut all: Vec<usize> = p.blocks.iter().flatten().copied().collect();
            all.sort();
            assert_eq!(all, (0..6).collect::<Vec<_>>());
            for w in p.blocks.windows(2) {
                assert!(w[0][0] < w[1][0]);
            }
            for b in &p.blocks {
                assert!(b.windows(2).all(|x| x[0] < x[1]));
            }
        }
    }

    #[test]
    fn graph_counts() {
        let want = [1usize, 1, 4, 38, 728];
        for (n, &w) in (1..=5).zip(&want) {
            assert_eq!(enumerate_connected_graphs(n).unwrap().len(), w);
            assert_eq!(connected_graph_count(n), w as u128);
        }
        assert_eq!(connected_graph_count(7), 1_866_256);
        assert!(enumerate_graphs(8).is_err());
        assert!(enumerate_connected_graphs(1).unwrap()[0].edges.is_empty());
    }

    #[test]
    fn graph_validation() {
        assert!(Graph::new(3, vec![(1, 1)]).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)]).is_err());
        let g = Graph::new(4, vec![(2, 0), (1, 3)]).unwrap();
        assert!(!g.is_connected());
    }

    #[test]
    fn gaussian_toy_cumulants() {
        let s2: f64 = 1.7;
        let t = MomentTable::new(vec![0.0, s2, 0.0, 3.0 * s2 * s2]);
        let k = cumulants_from_moments(&t, 4).unwrap();
        assert!((k[1] - s2).abs() < 1e-15);
        assert!(k[2].abs() < 1e-15 && k[3].abs() < 1e-12);
        let t = MomentTable::new(vec![0.4, 2.0]);
        let k = cumulants_from_moments(&t, 2).unwrap();
        assert!((k[1] - (2.0 - 0.16)).abs() < 1e-15);
        assert!(cumulants_from_moments(&t, 3).is_err());
    }

    /// Möbius inversion over the partition lattice: κ_n = Σ_π (-1)^{|π|-1}(|π|-1)! Π m_|B|.
    fn mobius_cumulant(m: &[f64], n: usize) -> f64 {
        enumerate_partitions(n)
            .unwrap()
            .iter()
            .map(|p| {
                let k = p.n_blocks();
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                let fact: f64 = (1..k).map(|i| i as f64).product();
                sign * fact * p.blocks.iter().map(|b| m[b.len() - 1]).product::<f64>()
            })
            .sum()
    }

    proptest! {
        #[test]
        fn round_trip_and_mobius(m in prop::collection::vec(-2.0f64..2.0, 6)) {
            let t = MomentTable::new(m.clone());
            let k = cumulants_from_moments(&t, 6).unwrap();
            let back = moments_from_cumulants(&k);
            for (a, b) in back.moments.iter().zip(&m) {
                prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()) * 100.0);
            }
            for n in 1..=5 {
                let mob = mobius_cumulant(&m, n);
                prop_assert!((mob - k[n - 1]).abs() < 1e-10 * (1.0 + mob.abs()));
            }
        }

        #[test]
        fn mixed_recursion_matches_scalar(m in prop::collection::vec(-1.0f64..1.0, 5)) {
            let t = MomentTable::new(m.clone());
            let k = cumulants_from_moments(&t, 5).unwrap();
            let c = connected_from_mixed(5, |s| Ok(m[s.len() - 1])).unwrap();
            prop_assert!((c - k[4]).abs() < 1e-10);
        }
    }

    fn brute_matchings(n: usize) -> usize {
        // count involutions without fixed points by direct recursion on bitmasks
        fn go(mask: u32, n: usize) -> usize {
            if mask == (1 << n) - 1 {
                return 1;
            }
            let i = (0..n).find(|&i| mask >> i & 1 == 0).unwrap();
            (i + 1..n).filter(|&j| mask >> j & 1 == 0).map(|j| go(mask | 1 << i | 1 << j, n)).sum()
        }
        go(0, n)
    }

    #[test]
    fn pairing_counts() {
        assert_eq!(count_wick_pairings(FieldKind::Real, 4), 3);
        assert_eq!(count_wick_pairings(FieldKind::Real, 5), 0);
        assert_eq!(count_wick_pairings(FieldKind::Charged, 3), 6);
        for n in 0..=6 {
            assert_eq!(count_wick_pairings(FieldKind::Real, 2 * n) as usize, brute_matchings(2 * n));
            assert_eq!(perfect_matchings(2 * n).len(), brute_matchings(2 * n));
            assert_eq!(count_wick_pairings(FieldKind::Charged, n) as usize, permutations(n).len());
            let set: HashSet<_> = permutations(n).into_iter().collect();
            assert_eq!(set.len() as u128, count_wick_pairings(FieldKind::Charged, n));
            // (2N-1)!! / N! grows without bound
            let r = count_wick_pairings(FieldKind::Real, 2 * n) as f64 / count_wick_pairings(FieldKind::Charged, n) as f64;
            assert!(r >= 1.0);
        }
    }

    fn small_kernels() -> (EdgeKernels, usize) {
        let grid = GridSpec::cube(1, 4.0, 4, 4, 1.0).unwrap();
        let p = ModelParams::simple(1.0, 0.7);
        let k = PropagatorKernel::build(&p, &grid).unwrap();
        (EdgeKernels::from_propagator(&k), 4)
    }

    #[test]
    fn bose_kernels_differ_by_identity() {
        let (k, n) = small_kernels();
        let d = &k.b_minus - &k.b_plus;
        // lattice commutator δ_xy / a^d with a = 1
        assert!((d - DMatrix::<f64>::identity(n, n)).abs().max() < 1e-12);
    }

    #[test]
    fn simple_graph_sums() {
        let (k, _) = small_kernels();
        let f = DVector::from_vec(vec![0.3, -1.0, 0.5, 2.0]);
        let h = DVector::from_vec(vec![1.0, 0.2, -0.4, 0.1]);
        let one = connected_correlation_graph_sum(&[Vertex::density(f.clone())], &k).unwrap();
        let want: f64 = (0..4).map(|x| f[x] * k.b_plus[(x, x)]).sum();
        assert!((one - want).abs() < 1e-14);
        let two = connected_correlation_graph_sum(
            &[Vertex::Linear { star: false, coeff: f.clone() }, Vertex::Linear { star: true, coeff: h.clone() }],
            &k,
        )
        .unwrap();
        assert!((two - f.dot(&(&k.b_minus * &h))).abs() < 1e-14);
        let quartic = Vertex::Local { coeff: f, n_star: 2, n_plain: 2 };
        assert!(matches!(connected_correlation_graph_sum(&[quartic], &k), Err(KmsError::UnsupportedVertex(_))));
    }

    /// Brute force: expand every vertex into elementary fields at explicit
    /// sites and sum Wick pairings of the ordered word.
    fn brute_moment(vs: &[DMatrix<f64>], k: &EdgeKernels) -> f64 {
        let n = vs[0].nrows();
        let nv = vs.len();
        let matchings = perfect_matchings(2 * nv);
        let mut total = 0.0;
        let combos = n.pow(2 * nv as u32);
        for c in 0..combos {
            let mut sites = Vec::with_capacity(2 * nv);
            let mut r = c;
            for _ in 0..2 * nv {
                sites.push(r % n);
                r /= n;
            }
            let coeff: f64 = (0..nv).map(|i| vs[i][(sites[2 * i], sites[2 * i + 1])]).product();
            if coeff == 0.0 {
                continue;
            }
            // word position 2i is Ψ*, 2i+1 is Ψ
            let mut wick = 0.0;
            for m in &matchings {
                let mut prod = 1.0;
                for &(a, b) in m {
                    let (sa, sb) = (a % 2 == 0, b % 2 == 0);
                    prod *= match (sa, sb) {
                        (true, false) => k.b_plus[(sites[b], sites[a])],
                        (false, true) => k.b_minus[(sites[a], sites[b])],
                        _ => 0.0,
                    };
                    if prod == 0.0 {
                        break;
                    }
                }
                wick += prod;
            }
            total += coeff * wick;
        }
        total
    }

    #[test]
    fn three_quadratic_vertices_match_brute_force_cumulant() {
        let (k, n) = small_kernels();
        let qs: Vec<DMatrix<f64>> = (0..3)
            .map(|i| DMatrix::from_fn(n, n, |x, y| ((x * 3 + y * 5 + i * 7) % 11) as f64 / 11.0 - 0.3))
            .collect();
        let verts: Vec<Vertex> = qs.iter().map(|q| Vertex::Quadratic { q: q.clone() }).collect();
        let graph = connected_correlation_graph_sum(&verts, &k).unwrap();
        let oracle = connected_from_mixed(3, |s| {
            let sub: Vec<DMatrix<f64>> = s.iter().map(|&i| qs[i].clone()).collect();
            Ok(brute_moment(&sub, &k))
        })
        .unwrap();
        assert!((graph - oracle).abs() < 1e-10 * oracle.abs().max(1.0), "{graph} vs {oracle}");
        let full = wick_moment(&verts, &k).unwrap();
        assert!((full - brute_moment(&qs, &k)).abs() < 1e-10 * full.abs().max(1.0));
    }

    #[test]
    fn mixed_linear_and_quadratic_chain() {
        let (k, n) = small_kernels();
        let f = DVector::from_fn(n, |x, _| 0.2 + x as f64);
        let h = DVector::from_fn(n, |x, _| 1.0 - 0.3 * x as f64);
        let q = DMatrix::from_fn(n, n, |x, y| if x == y { 0.5 } else { 0.1 * (x + y) as f64 });
        let verts = vec![
            Vertex::Linear { star: false, coeff: f.clone() },
            Vertex::Quadratic { q: q.clone() },
            Vertex::Linear { star: true, coeff: h.clone() },
        ];
        let graph = connected_correlation_graph_sum(&verts, &k).unwrap();
        let oracle = connected_from_mixed(3, |s| wick_moment(&s.iter().map(|&i| verts[i].clone()).collect::<Vec<_>>(), &k)).unwrap();
        assert!((graph - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
        // the single big line: Ψ(f) before Ψ*Q Ψ before Ψ*(h)
        let line = (f.transpose() * &k.b_minus * &q * &k.b_minus * &h)[(0, 0)];
        assert!((graph - line).abs() < 1e-12 * line.abs().max(1.0));
    }

    #[test]
    fn identity_vertex_drops_out() {
        // the identity observable has vanishing connected correlations with anything
        let (k, n) = small_kernels();
        let q = DMatrix::from_fn(n, n, |x, y| (x as f64 - y as f64).cos());
        let verts = [Vertex::Quadratic { q: q.clone() }, Vertex::Quadratic { q }];
        let with_id = connected_from_mixed(3, |s| {
            let sub: Vec<Vertex> = s.iter().filter(|&&i| i < 2).map(|&i| verts[i].clone()).collect();
            if sub.is_empty() { Ok(1.0) } else { wick_moment(&sub, &k) }
        })
        .unwrap();
        assert!(with_id.abs() < 1e-10);
    }
}
