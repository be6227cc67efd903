//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relmod::relnet::{RelNetDims, RelNetParams, RelationOutput};
use relmod::substrate::{Graph, ParamId, ParamStore, Tensor, Var};
use relmod::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Gradients of `f(inputs)` with respect to every input, by the tape and by
/// central differences. `f` must return a scalar node.
pub fn check_op<F>(inputs: &[Tensor], step: f64, f: F) -> Vec<(Tensor, Tensor)>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::detached();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item()
    };
    let mut g = Graph::detached();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let bp = g.backward(out).unwrap();

    inputs
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let analytic = bp.wrt(&g, vars[k]);
            let mut numeric = Tensor::zeros(t.shape());
            for idx in 0..t.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[idx] += step;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[idx] -= step;
                numeric.data_mut()[idx] = (eval(&plus) - eval(&minus)) / (2.0 * step);
            }
            (analytic, numeric)
        })
        .collect()
}

pub fn max_rel_error(a: &Tensor, n: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(n.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Reduces any node to a scalar with fixed pseudo-random weights so every
/// output entry contributes a distinct amount.
pub fn weighted_sum(g: &mut Graph<'_>, v: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let mut r = rng(seed);
    let w = g.input(random_tensor(&mut r, &shape, 1.0));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn matvec(x: &[f64], w: &Tensor) -> Vec<f64> {
    let cols = w.cols();
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        for (o, wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
    debug_assert_eq!(cols, out.len());
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn tanh(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(f64::tanh).collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn mlp(store: &ParamStore, ids: [ParamId; 4], x: &[f64]) -> Vec<f64> {
    let [w1, b1, w2, b2] = ids.map(|id| store.value(id));
    let h = tanh(add(&matvec(x, w1), b1.data()));
    tanh(add(&matvec(&h, w2), b2.data()))
}

/// Random relation network with every parameter redrawn, plus random
/// objects, question objects and optional pooled summary.
pub struct RelnetInstance {
    pub store: ParamStore,
    pub params: RelNetParams,
    pub o: Tensor,
    pub q: Tensor,
    pub pooled: Option<Tensor>,
}

pub fn relnet_instance(seed: u64) -> RelnetInstance {
    let mut r = rng(seed);
    let h = r.gen_range(1..=8);
    let dims = RelNetDims {
        hidden: h,
        g_hidden: r.gen_range(1..=8),
        relation: r.gen_range(1..=8),
        f_hidden: r.gen_range(1..=8),
        summary: r.gen_range(1..=8),
    };
    let pooled_on = r.gen_bool(0.5);
    let mut store = ParamStore::new();
    let params = RelNetParams::new(&mut store, dims, pooled_on, &mut r).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.value(id).shape().to_vec();
        *store.value_mut(id) = random_tensor(&mut r, &shape, 1.0);
    }
    let n = r.gen_range(1..=6);
    RelnetInstance {
        o: random_tensor(&mut r, &[n, h], 1.5),
        q: random_tensor(&mut r, &[2, h], 1.5),
        pooled: pooled_on.then(|| random_tensor(&mut r, &[1, h], 1.0)),
        store,
        params,
    }
}

pub fn relnet_outputs(inst: &RelnetInstance, o: &Tensor) -> RelationOutput {
    let mut g = Graph::new(&inst.store);
    let ov = g.input(o.clone());
    let qv = g.input(inst.q.clone());
    let pv = inst.pooled.clone().map(|p| g.input(p));
    inst.params.run(&mut g, ov, qv, pv).unwrap().values(&g)
}

pub fn all_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Relation network written with explicit loops over every ordered pair,
/// feeding the full concatenation `[o_i; o_j; q0; q1]` to `g_θ`.
#[derive(Clone, Debug)]
pub struct RelnetReference {
    pub pairs: Vec<Vec<Vec<f64>>>,
    pub omega: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
    pub summaries: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub z: Vec<f64>,
    pub na: f64,
}

pub fn relnet_reference(
    store: &ParamStore,
    p: &RelNetParams,
    o: &[Vec<f64>],
    q: &[Vec<f64>],
    pooled: Option<&[f64]>,
) -> RelnetReference {
    let n = o.len();
    let g_ids = [p.g_theta.w1, p.g_theta.b1, p.g_theta.w2, p.g_theta.b2];
    let f_ids = [p.f_phi.w1, p.f_phi.b1, p.f_phi.w2, p.f_phi.b2];
    let w_g = store.value(p.w_g);
    let w_f = store.value(p.w_f);

    let mut pairs = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let input: Vec<f64> = o[i].iter().chain(&o[j]).chain(&q[0]).chain(&q[1]).copied().collect();
            pairs[i][j] = mlp(store, g_ids, &input);
        }
    }
    let mut omega = Vec::with_capacity(n);
    let mut relations = Vec::with_capacity(n);
    for row in &pairs {
        let scores: Vec<f64> = row.iter().map(|gij| matvec(gij, w_g)[0]).collect();
        let w = softmax(&scores);
        let mut r = vec![0.0; row[0].len()];
        for (wij, gij) in w.iter().zip(row) {
            for (rk, gk) in r.iter_mut().zip(gij) {
                *rk += wij * gk;
            }
        }
        omega.push(w);
        relations.push(r);
    }
    let summaries: Vec<Vec<f64>> = relations.iter().map(|r| mlp(store, f_ids, r)).collect();
    let gamma = softmax(&summaries.iter().map(|f| matvec(f, w_f)[0]).collect::<Vec<_>>());
    let mut z = vec![0.0; summaries[0].len()];
    for (gi, f) in gamma.iter().zip(&summaries) {
        for (zk, fk) in z.iter_mut().zip(f) {
            *zk += gi * fk;
        }
    }
    let mut na_in = z.clone();
    if let Some(pooled) = pooled {
        na_in.extend_from_slice(pooled);
    }
    let na = matvec(&na_in, store.value(p.na_w))[0] + store.value(p.na_b).item();
    RelnetReference {
        pairs,
        omega,
        relations,
        summaries,
        gamma,
        z,
        na,
    }
}

/// Exhaustive span search: every admissible `(i, j)` with
/// `i ≤ j ≤ i + max_len`, both unmasked; strict `>` keeps the first best.
pub fn brute_force_span(
    start: &[f64],
    end: &[f64],
    mask: &[bool],
    max_len: usize,
) -> (Option<((usize, usize), f64)>, f64) {
    let lc = start.len() - 1;
    let na = start[lc] + end[lc];
    let mut best: Option<((usize, usize), f64)> = None;
    for i in 0..lc {
        for j in 0..lc {
            if j < i || j > i + max_len || !mask[i] || !mask[j] {
                continue;
            }
            let s = start[i] + end[j];
            match best {
                Some((_, b)) if s <= b => {}
                _ => best = Some(((i, j), s)),
            }
        }
    }
    (best, na)
}

fn reference_tokens(s: &str) -> Vec<String> {
    let cleaned: String = s.to_lowercase().chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let mut tokens: Vec<String> = cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect();
    tokens.sort();
    tokens
}

/// `(EM, F1)` for one prediction, with overlap counted by merging the two
/// sorted token lists. `None` is the no-answer prediction.
pub fn reference_score(prediction: Option<&str>, gold: Option<&str>) -> (f64, f64) {
    let (p, g) = match (prediction, gold) {
        (None, None) => return (1.0, 1.0),
        (None, _) | (_, None) => return (0.0, 0.0),
        (Some(p), Some(g)) => (reference_tokens(p), reference_tokens(g)),
    };
    let em = if p == g { 1.0 } else { 0.0 };
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < p.len() && j < g.len() {
        match p[i].cmp(&g[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if common == 0 {
        return (em, 0.0);
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    (em, 2.0 * precision * recall / (precision + recall))
}
