//! The weak learner: stacked equivariant graph attention blocks predicting per-atom displacements.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{ConditioningKind, LearnerConfig, LearnerParams, BOND_CLASSES, SIGMA_FEATURES};
use super::tape::{Gradients, RbfSpec, Tape, Tensor, Var};
use crate::geometry::Point;
use crate::molgraph::{build_higher_order, MolGraph};
use crate::real::Real;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

const LEAKY_SLOPE: f64 = 0.2;
const LN_EPS: f64 = 1e-5;
const VEC_NORM_EPS: f64 = 1e-6;
const SQRT3: f64 = 1.732_050_807_568_877_2;

/// What the learner is told besides the geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Conditioning {
    /// Boosting step index `m`.
    Step(usize),
    /// Diffusion noise level in Å.
    Sigma(f64),
}

/// Fixed frequency features of `ln(σ) / 4`.
pub fn sigma_features(sigma: f64) -> [f64; SIGMA_FEATURES] {
    let x = sigma.ln() / 4.0;
    let mut f = [0.0; SIGMA_FEATURES];
    for k in 0..SIGMA_FEATURES / 2 {
        let w = (k + 1) as f64 * core::f64::consts::FRAC_PI_2;
        f[2 * k] = (w * x).cos();
        f[2 * k + 1] = (w * x).sin();
    }
    f
}

/// Attention edges of one molecule: every ordered pair within the hop order.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerGraph {
    pub n_atoms: usize,
    pub elements: Arc<[usize]>,
    /// Receiving atom `i` of each edge.
    pub dst: Arc<[usize]>,
    /// Sending atom `j` of each edge; the edge vector is `c_i − c_j`.
    pub src: Arc<[usize]>,
    pub edge_type: Arc<[usize]>,
    pub adjacency_order: u8,
}

impl LearnerGraph {
    pub fn new(g: &MolGraph, adjacency_order: u8) -> Result<Self> {
        let hoa = build_higher_order(g, adjacency_order)?;
        let n = g.n_atoms();
        let h = adjacency_order as usize;
        let (mut dst, mut src, mut ty) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if let Some(hop) = hoa.label(i, j) {
                    let class = match g.bond_between(i, j) {
                        Some(b) => b.order.code() as usize,
                        None => 0,
                    };
                    dst.push(i);
                    src.push(j);
                    ty.push(class * h + (hop as usize - 1));
                }
            }
        }
        for i in 0..n {
            if !dst.contains(&i) {
                return Err(Error::Structure(format!("atom {i} has no attention neighbours")));
            }
        }
        let elements: Vec<usize> = g.atoms().iter().map(|a| a.element as usize).collect();
        Ok(LearnerGraph {
            n_atoms: n,
            elements: elements.into(),
            dst: dst.into(),
            src: src.into(),
            edge_type: ty.into(),
            adjacency_order,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.dst.len()
    }
}

/// Parameter leaves placed on a tape, in layout order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

pub fn load_params<F: Real>(tape: &mut Tape<F>, params: &LearnerParams) -> ParamVars {
    let vars = params
        .tensors
        .iter()
        .map(|t| tape.leaf(Tensor::from_f64(t.rows, t.cols, &t.data)))
        .collect();
    ParamVars { vars }
}

/// Parameter gradients in layout order, as `f64`; untouched tensors are zero.
pub fn param_gradients<F: Real>(grads: &Gradients<F>, pv: &ParamVars, params: &LearnerParams) -> Vec<Vec<f64>> {
    pv.vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| match grads.of(v) {
            Some(g) => g.to_f64(),
            None => vec![0.0; t.data.len()],
        })
        .collect()
}

/// Handles produced by one learner application.
pub struct LearnerTrace {
    /// Displacement `[n, 3]`.
    pub delta: Var,
    /// Attention weights `[E, 1]` of each block.
    pub attention: Vec<Var>,
}

struct Lookup<'a> {
    params: &'a LearnerParams,
    pv: &'a ParamVars,
}

impl Lookup<'_> {
    fn get(&self, name: &str) -> Var {
        let i = self.params.index(name).unwrap_or_else(|| panic!("parameter {name} missing from layout"));
        self.pv.vars[i]
    }
}

/// Depth-wise tensor product of scalar `xs [E, p]` and vector `xv [E, q·3]`
/// features with the edge harmonics, weighted per edge by `w [E, p + 4q]`.
/// Paths: 0⊗0→0, 1⊗1→0, 0⊗1→1, 1⊗0→1 and 1⊗2→1.
fn dtp<F: Real>(tape: &mut Tape<F>, xs: Var, xv: Var, w: Var, y1: Var, y2: Var, p: usize, q: usize) -> (Var, Var) {
    let w_s = tape.slice(w, 0, p);
    let w_vs = tape.slice(w, p, q);
    let w_sv = tape.slice(w, p + q, q);
    let w_vv = tape.slice(w, p + 2 * q, q);
    let w_v2 = tape.slice(w, p + 3 * q, q);

    let s0 = tape.mul(w_s, xs);
    let dot = tape.vec_dot(xv, y1);
    let s1 = tape.mul(w_vs, dot);
    let scal = tape.concat(&[s0, s1]);

    let head = tape.slice(xs, 0, q);
    let sv = tape.mul(w_sv, head);
    let v0 = tape.outer(sv, y1);
    let v1 = tape.vec_scale(xv, w_vv);
    let l2 = tape.l2_apply(y2, xv);
    let v2 = tape.vec_scale(l2, w_v2);
    let v01 = tape.add(v0, v1);
    let vec = tape.add(v01, v2);
    (scal, vec)
}

fn norm_scalars<F: Real>(tape: &mut Tape<F>, s: Var, gain: Var, bias: Var) -> Var {
    let x = tape.layer_norm(s, LN_EPS);
    let x = tape.mul_row(x, gain);
    tape.add_row(x, bias)
}

fn norm_vectors<F: Real>(tape: &mut Tape<F>, v: Var, gain: Var) -> Var {
    let x = tape.vec_rms_norm(v, VEC_NORM_EPS);
    tape.vec_scale(x, gain)
}

fn linear<F: Real>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

/// Records one learner application on `tape`. `coords` is an `[n, 3]` node.
pub fn learner_on_tape<F: Real>(
    tape: &mut Tape<F>,
    params: &LearnerParams,
    pv: &ParamVars,
    graph: &LearnerGraph,
    coords: Var,
    cond: Conditioning,
) -> Result<LearnerTrace> {
    let cfg: &LearnerConfig = &params.config;
    let (d0, d1) = (cfg.scalar_channels, cfg.vector_channels);
    let n = graph.n_atoms;
    if graph.adjacency_order != cfg.adjacency_order {
        return Err(Error::Invalid("graph built for a different adjacency order".into()));
    }
    if graph.edge_type.iter().any(|&t| t >= BOND_CLASSES * cfg.adjacency_order as usize) {
        return Err(Error::Invalid("edge type outside the embedding table".into()));
    }
    let p = Lookup { params, pv };

    let atoms = tape.gather(p.get("atom_embed"), graph.elements.clone());
    let cond_row = match (cond, cfg.conditioning) {
        (Conditioning::Step(m), ConditioningKind::Step) => {
            if m >= cfg.steps {
                return Err(Error::StepOutOfRange { step: m, steps: cfg.steps });
            }
            tape.gather(p.get("step_embed"), Arc::from([m]))
        }
        (Conditioning::Sigma(sigma), ConditioningKind::Sigma) => {
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::Invalid(format!("noise level {sigma} must be positive")));
            }
            let feats = tape.leaf(Tensor::from_f64(1, SIGMA_FEATURES, &sigma_features(sigma)));
            linear(tape, feats, p.get("sigma_w"), p.get("sigma_b"))
        }
        _ => return Err(Error::Invalid("conditioning does not match the learner configuration".into())),
    };
    let mut s = tape.add_row(atoms, cond_row);
    let mut v = tape.leaf(Tensor::zeros(n, 3 * d1));

    let ci = tape.gather(coords, graph.dst.clone());
    let cj = tape.gather(coords, graph.src.clone());
    let r = tape.sub(ci, cj);
    let dist = tape.row_norm(r);
    let inv = tape.recip(dist);
    let unit = tape.scale_rows(r, inv);
    let y1 = tape.scale(unit, SQRT3);
    let y2 = tape.sh2(unit);
    let rbf = tape.rbf(dist, RbfSpec { count: cfg.rbf_count, cutoff: cfg.cutoff });
    let edge_emb = tape.gather(p.get("edge_embed"), graph.edge_type.clone());

    let n_w1 = LearnerConfig::dtp_weights(d0, d1);
    let n_w2 = LearnerConfig::dtp_weights(d0 + d1, d1);
    let mut attention = Vec::with_capacity(cfg.blocks);
    for b in 0..cfg.blocks {
        let name = |s: &str| format!("b{b}.{s}");

        let sn = norm_scalars(tape, s, p.get(&name("ln1_g")), p.get(&name("ln1_b")));
        let vn = norm_vectors(tape, v, p.get(&name("ln1_v")));

        let s_i = tape.gather(sn, graph.dst.clone());
        let s_j = tape.gather(sn, graph.src.clone());
        let cat = tape.concat(&[s_i, s_j, edge_emb]);
        let m_s = linear(tape, cat, p.get(&name("msg_w")), p.get(&name("msg_b")));
        let v_i = tape.gather(vn, graph.dst.clone());
        let v_j = tape.gather(vn, graph.src.clone());
        let mv_i = tape.vec_linear(v_i, p.get(&name("vmsg_dst")));
        let mv_j = tape.vec_linear(v_j, p.get(&name("vmsg_src")));
        let m_v = tape.add(mv_i, mv_j);

        let hid = linear(tape, rbf, p.get(&name("rad_w1")), p.get(&name("rad_b1")));
        let hid = tape.silu(hid);
        let w = linear(tape, hid, p.get(&name("rad_w2")), p.get(&name("rad_b2")));
        let w1 = tape.slice(w, 0, n_w1);
        let w2 = tape.slice(w, n_w1, n_w2);

        let (f_s, f_v) = dtp(tape, m_s, m_v, w1, y1, y2, d0, d1);

        let act = tape.leaky_relu(f_s, LEAKY_SLOPE);
        let z = tape.matmul(act, p.get(&name("att")));
        let alpha = tape.seg_softmax(z, graph.dst.clone(), n);
        attention.push(alpha);

        let g_s = tape.silu(f_s);
        let gates = linear(tape, f_s, p.get(&name("gate_w")), p.get(&name("gate_b")));
        let gates = tape.sigmoid(gates);
        let g_v = tape.vec_scale(f_v, gates);
        let (h_s, h_v) = dtp(tape, g_s, g_v, w2, y1, y2, d0 + d1, d1);
        let o_s = linear(tape, h_s, p.get(&name("out_w")), p.get(&name("out_b")));
        let o_v = tape.vec_linear(h_v, p.get(&name("out_v")));

        let o_s = tape.scale_rows(o_s, alpha);
        let o_v = tape.scale_rows(o_v, alpha);
        let agg_s = tape.scatter_add(o_s, graph.dst.clone(), n);
        let agg_v = tape.scatter_add(o_v, graph.dst.clone(), n);
        s = tape.add(s, agg_s);
        v = tape.add(v, agg_v);

        let sn = norm_scalars(tape, s, p.get(&name("ln2_g")), p.get(&name("ln2_b")));
        let vn = norm_vectors(tape, v, p.get(&name("ln2_v")));
        let hs = linear(tape, sn, p.get(&name("ffn_w1")), p.get(&name("ffn_b1")));
        let hs = tape.silu(hs);
        let ds = linear(tape, hs, p.get(&name("ffn_w2")), p.get(&name("ffn_b2")));
        s = tape.add(s, ds);
        let gt = linear(tape, sn, p.get(&name("ffn_gw")), p.get(&name("ffn_gb")));
        let gt = tape.sigmoid(gt);
        let hv = tape.vec_linear(vn, p.get(&name("ffn_v1")));
        let hv = tape.vec_scale(hv, gt);
        let dv = tape.vec_linear(hv, p.get(&name("ffn_v2")));
        v = tape.add(v, dv);
    }
    let delta = tape.vec_linear(v, p.get("head"));
    Ok(LearnerTrace { delta, attention })
}

pub fn coords_tensor<F: Real>(coords: &[Point]) -> Tensor<F> {
    let flat: Vec<f64> = coords.iter().flatten().copied().collect();
    Tensor::from_f64(coords.len(), 3, &flat)
}

pub fn tensor_points<F: Real>(t: &Tensor<F>) -> Vec<Point> {
    (0..t.rows).map(|r| [t.at(r, 0).to_f64_lossy(), t.at(r, 1).to_f64_lossy(), t.at(r, 2).to_f64_lossy()]).collect()
}

/// Displacement `ΔC` predicted for `coords`, evaluated in precision `F`.
pub fn forward<F: Real>(
    graph: &LearnerGraph,
    coords: &[Point],
    cond: Conditioning,
    params: &LearnerParams,
) -> Result<Vec<Point>> {
    if coords.len() != graph.n_atoms {
        return Err(Error::SizeMismatch { expected: graph.n_atoms, found: coords.len() });
    }
    let mut tape = Tape::<F>::new();
    let pv = load_params(&mut tape, params);
    let c = tape.leaf(coords_tensor(coords));
    let trace = learner_on_tape(&mut tape, params, &pv, graph, c, cond)?;
    Ok(tensor_points(tape.value(trace.delta)))
}

/// Gradients of `Σ upstream · ΔC` with respect to every parameter and the input coordinates.
pub fn backward(
    graph: &LearnerGraph,
    coords: &[Point],
    cond: Conditioning,
    params: &LearnerParams,
    upstream: &[Point],
) -> Result<(Vec<Vec<f64>>, Vec<Point>)> {
    let mut tape = Tape::<f64>::new();
    let pv = load_params(&mut tape, params);
    let c = tape.leaf(coords_tensor(coords));
    let trace = learner_on_tape(&mut tape, params, &pv, graph, c, cond)?;
    if upstream.len() != graph.n_atoms {
        return Err(Error::SizeMismatch { expected: graph.n_atoms, found: upstream.len() });
    }
    let grads = tape.backward(trace.delta, coords_tensor(upstream));
    let gc = grads.of(c).map(tensor_points).unwrap_or_else(|| vec![[0.0; 3]; coords.len()]);
    Ok((param_gradients(&grads, &pv, params), gc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{add, mat_vec, random_rotation};
    use crate::molgraph::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> LearnerConfig {
        LearnerConfig { scalar_channels: 8, vector_channels: 4, blocks: 2, ..Default::default() }
    }

    fn setup(seed: u64) -> (MolGraph, LearnerGraph, Vec<Point>, LearnerParams) {
        let g = fixtures::graph(&[6, 7, 8, 6, 6], &[(0, 1, 1), (1, 2, 2), (1, 3, 1), (3, 4, 1)]);
        let lg = LearnerGraph::new(&g, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = (0..5).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let mut cfg = small_config();
        cfg.head_init_scale = 1.0;
        let p = LearnerParams::init(&cfg, &mut rng).unwrap();
        (g, lg, c, p)
    }

    fn max_abs_diff(a: &[Point], b: &[Point]) -> f64 {
        a.iter().zip(b).flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs())).fold(0.0, f64::max)
    }

    #[test]
    fn rotation_equivariance_double_and_single() {
        let (_, lg, c, p) = setup(50);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..10 {
            let r = random_rotation(&mut rng);
            let t = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let moved: Vec<Point> = c.iter().map(|&x| add(mat_vec(&r, x), t)).collect();
            let base = forward::<f64>(&lg, &c, Conditioning::Step(1), &p).unwrap();
            let out = forward::<f64>(&lg, &moved, Conditioning::Step(1), &p).unwrap();
            let rotated: Vec<Point> = base.iter().map(|&x| mat_vec(&r, x)).collect();
            assert!(max_abs_diff(&out, &rotated) <= 1e-10);
            assert!(base.iter().flatten().any(|x| x.abs() > 1e-6));

            let base32 = forward::<f32>(&lg, &c, Conditioning::Step(1), &p).unwrap();
            let out32 = forward::<f32>(&lg, &moved, Conditioning::Step(1), &p).unwrap();
            let rotated32: Vec<Point> = base32.iter().map(|&x| mat_vec(&r, x)).collect();
            assert!(max_abs_diff(&out32, &rotated32) <= 1e-5);
        }
    }

    #[test]
    fn zero_head_predicts_nothing() {
        let (_, lg, c, mut p) = setup(52);
        p.zero_head();
        let out = forward::<f64>(&lg, &c, Conditioning::Step(0), &p).unwrap();
        assert!(out.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn step_out_of_range() {
        let (_, lg, c, p) = setup(53);
        let steps = p.config.steps;
        assert!(matches!(
            forward::<f64>(&lg, &c, Conditioning::Step(steps), &p),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(forward::<f64>(&lg, &c, Conditioning::Sigma(1.0), &p).is_err());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (_, lg, c, p) = setup(54);
        let mut tape = Tape::<f64>::new();
        let pv = load_params(&mut tape, &p);
        let cv = tape.leaf(coords_tensor(&c));
        let trace = learner_on_tape(&mut tape, &p, &pv, &lg, cv, Conditioning::Step(0)).unwrap();
        for &a in &trace.attention {
            let mut sums = vec![0.0; lg.n_atoms];
            for (e, &i) in lg.dst.iter().enumerate() {
                sums[i] += tape.value(a).data[e];
            }
            assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn permuting_atoms_permutes_output() {
        let (g, lg, c, p) = setup(55);
        let perm = [3usize, 0, 4, 1, 2];
        let gp = g.permuted(&perm).unwrap();
        let lgp = LearnerGraph::new(&gp, 3).unwrap();
        let cp: Vec<Point> = perm.iter().map(|&k| c[k]).collect();
        let out = forward::<f64>(&lg, &c, Conditioning::Step(2), &p).unwrap();
        let outp = forward::<f64>(&lgp, &cp, Conditioning::Step(2), &p).unwrap();
        for (k, &old) in perm.iter().enumerate() {
            for x in 0..3 {
                assert!((outp[k][x] - out[old][x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mirror_symmetric_atoms_move_mirror_symmetrically() {
        // Atoms 1 and 2 are exchanged by the graph automorphism and by the
        // reflection y -> -y of this planar-symmetric placement.
        let g = fixtures::graph(&[6, 8, 8, 7], &[(0, 1, 1), (0, 2, 1), (0, 3, 1)]);
        let lg = LearnerGraph::new(&g, 3).unwrap();
        let c = vec![[0.0, 0.0, 0.1], [0.7, 1.1, 0.3], [0.7, -1.1, 0.3], [-1.3, 0.0, -0.2]];
        let mut cfg = small_config();
        cfg.head_init_scale = 1.0;
        let p = LearnerParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(56)).unwrap();
        let out = forward::<f64>(&lg, &c, Conditioning::Step(0), &p).unwrap();
        assert!((out[1][0] - out[2][0]).abs() < 1e-12);
        assert!((out[1][1] + out[2][1]).abs() < 1e-12);
        assert!((out[1][2] - out[2][2]).abs() < 1e-12);
        assert!(out[0][1].abs() < 1e-12 && out[3][1].abs() < 1e-12);
    }

    /// Loss `Σ w · ΔC` for fixed weights `w`.
    fn probe(lg: &LearnerGraph, c: &[Point], p: &LearnerParams, w: &[Point]) -> f64 {
        let out = forward::<f64>(lg, c, Conditioning::Step(1), p).unwrap();
        out.iter().zip(w).map(|(a, b)| a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (_, lg, c, p) = setup(57);
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let w: Vec<Point> = (0..5).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let (pg, cg) = backward(&lg, &c, Conditioning::Step(1), &p, &w).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (ti, t) in p.tensors.iter().enumerate() {
            for e in (0..t.data.len()).step_by(7) {
                let mut plus = p.clone();
                let mut minus = p.clone();
                plus.tensors[ti].data[e] += h;
                minus.tensors[ti].data[e] -= h;
                let fd = (probe(&lg, &c, &plus, &w) - probe(&lg, &c, &minus, &w)) / (2.0 * h);
                let an = pg[ti][e];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(if (fd - an).abs() < 1e-8 { 0.0 } else { rel });
            }
        }
        for i in 0..5 {
            for x in 0..3 {
                let mut plus = c.clone();
                let mut minus = c.clone();
                plus[i][x] += h;
                minus[i][x] -= h;
                let fd = (probe(&lg, &plus, &p, &w) - probe(&lg, &minus, &p, &w)) / (2.0 * h);
                let rel = (fd - cg[i][x]).abs() / fd.abs().max(cg[i][x].abs()).max(1e-6);
                worst = worst.max(if (fd - cg[i][x]).abs() < 1e-8 { 0.0 } else { rel });
            }
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (_, lg, c, p) = setup(59);
        let (pg, cg) = backward(&lg, &c, Conditioning::Step(0), &p, &[[0.0; 3]; 5]).unwrap();
        assert!(pg.iter().flatten().all(|&x| x == 0.0));
        assert!(cg.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn invariant_loss_gradient_is_rotation_invariant() {
        // Loss = Σ ΔC_i · c_i is rotation invariant (both rotate); translation is avoided.
        let (_, lg, c, p) = setup(60);
        let r = random_rotation(&mut ChaCha8Rng::seed_from_u64(61));
        let rc: Vec<Point> = c.iter().map(|&x| mat_vec(&r, x)).collect();
        let (g1, _) = backward(&lg, &c, Conditioning::Step(0), &p, &c).unwrap();
        let (g2, _) = backward(&lg, &rc, Conditioning::Step(0), &p, &rc).unwrap();
        for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
            assert!((a - b).abs() < 1e-5 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn sigma_conditioning_runs() {
        let g = fixtures::chain(3);
        let lg = LearnerGraph::new(&g, 2).unwrap();
        let cfg = LearnerConfig {
            conditioning: ConditioningKind::Sigma,
            adjacency_order: 2,
            ..small_config()
        };
        let p = LearnerParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(62)).unwrap();
        let c = vec![[0.0; 3], [1.5, 0.0, 0.0], [2.0, 1.4, 0.0]];
        assert!(forward::<f64>(&lg, &c, Conditioning::Sigma(0.5), &p).is_ok());
        assert!(forward::<f64>(&lg, &c, Conditioning::Step(0), &p).is_err());
        assert!(forward::<f64>(&lg, &c, Conditioning::Sigma(0.0), &p).is_err());
    }
}
