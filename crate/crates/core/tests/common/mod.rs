//! Independent oracles and random-instance generators shared by the
//! integration tests and the acceptance harness.

#![allow(dead_code)]

use nalgebra::DMatrix;
use phylomoments::ctmc::{build_reversible, RateModel, SummaryLabel};
use phylomoments::moments::TipData;
use phylomoments::newick::{random_tree, BranchSet, Phylogeny};
use rand::Rng;

/// Per-branch `P`, first restricted moment, and raw second restricted moment.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub p: DMatrix<f64>,
    pub e1: DMatrix<f64>,
    pub e2_raw: DMatrix<f64>,
}

/// Upper bound on the neglected Poisson tail in [`uniformization_kernel`].
pub const SERIES_TAIL: f64 = 1e-12;

/// Restricted moments by the uniformization series.
///
/// With `μ` the largest exit rate and `R = I + Q/μ`, a path of length `t`
/// is a Poisson(`μt`) number of steps of the chain `R`. Counts mark the
/// steps taken through labeled pairs; dwelling times weight the uniform
/// spacings between step times. Returns `e2` in the crate's convention
/// (factorial for counts, raw for dwelling) and the raw version.
pub fn uniformization_kernel(q: &DMatrix<f64>, label: &SummaryLabel, t: f64) -> (Kernel, DMatrix<f64>) {
    let m = q.nrows();
    let id = DMatrix::<f64>::identity(m, m);
    let mu = (0..m).map(|i| -q[(i, i)]).fold(0.0, f64::max);
    if t == 0.0 || mu == 0.0 {
        let z = DMatrix::zeros(m, m);
        return (Kernel { p: id, e1: z.clone(), e2_raw: z.clone() }, z);
    }
    let r = &id + q / mu;
    let x = mu * t;
    let mut pois = (-x).exp();
    let mut power = id.clone();
    let mut p = DMatrix::zeros(m, m);
    let mut e1 = DMatrix::zeros(m, m);
    let mut e2 = DMatrix::zeros(m, m);
    let mut n = 0usize;

    match label {
        SummaryLabel::SubstitutionCount { pairs } => {
            let mut rl = DMatrix::zeros(m, m);
            for &(i, j) in pairs {
                rl[(i, j)] = q[(i, j)] / mu;
            }
            // a: Σ_k R^k R_L R^(n-1-k); c: ordered pairs of distinct labeled steps.
            let mut a = DMatrix::zeros(m, m);
            let mut c = DMatrix::zeros(m, m);
            loop {
                p += &power * pois;
                e1 += &a * pois;
                e2 += &c * pois;
                let nf = n as f64;
                if nf > 2.0 * x + 10.0 && 2.0 * pois * (nf + 1.0).powi(2) < SERIES_TAIL * 1e-3 {
                    break;
                }
                c = &c * &r + &a * &rl * 2.0;
                a = &a * &r + &power * &rl;
                power = &power * &r;
                n += 1;
                pois *= x / n as f64;
            }
            let raw = &e2 + &e1;
            (Kernel { p, e1, e2_raw: raw }, e2)
        }
        SummaryLabel::DwellingTime { mask } => {
            let w = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                m,
                mask.iter().map(|&b| if b { 1.0 } else { 0.0 }),
            ));
            // g1: Σ_k R^k W R^(n-k); g2: Σ_{k<=l} R^k W R^(l-k) W R^(n-l).
            let mut g1 = w.clone();
            let mut g2 = &w * &w;
            loop {
                let nf = n as f64;
                p += &power * pois;
                e1 += &g1 * (pois * t / (nf + 1.0));
                e2 += &g2 * (pois * 2.0 * t * t / ((nf + 1.0) * (nf + 2.0)));
                if nf > 2.0 * x + 10.0 && 2.0 * pois * (1.0 + t * t) < SERIES_TAIL * 1e-3 {
                    break;
                }
                power = &power * &r;
                g1 = &g1 * &r + &power * &w;
                g2 = &g2 * &r + &g1 * &w;
                n += 1;
                pois *= x / n as f64;
            }
            (Kernel { p, e1, e2_raw: e2.clone() }, e2)
        }
    }
}

pub fn kernels(model: &RateModel, label: &SummaryLabel, phylo: &Phylogeny) -> Vec<Kernel> {
    (0..phylo.n_branches()).map(|b| uniformization_kernel(model.q(), label, phylo.length(b)).0).collect()
}

/// Restricted moments summed over every internal-state assignment.
#[derive(Debug, Clone, Copy, Default)]
pub struct Enumerated {
    /// `P(D)`.
    pub pd: f64,
    /// `E(H_k 1_D)`.
    pub first: [f64; 2],
    /// `E(H_k^2 1_D)`.
    pub second: [f64; 2],
    /// `E(H_1 H_2 1_D)`.
    pub product: f64,
}

impl Enumerated {
    pub fn mean(&self, k: usize) -> f64 {
        self.first[k] / self.pd
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.second[k] / self.pd - self.mean(k).powi(2)
    }

    pub fn covariance(&self) -> f64 {
        self.product / self.pd - self.mean(0) * self.mean(1)
    }
}

/// Brute force over all `m^(n-1)` internal-node states. Tip states are
/// summed over each tip's allowed set.
pub fn enumerate(
    phylo: &Phylogeny,
    kernels: &[Kernel],
    pi: &[f64],
    tips: &TipData,
    omega1: &BranchSet,
    omega2: &BranchSet,
) -> Enumerated {
    let m = pi.len();
    let nb = phylo.n_branches();
    let internal: Vec<usize> = (0..phylo.n_nodes()).filter(|&v| !phylo.is_tip(v)).collect();
    let mut state = vec![0usize; phylo.n_nodes()];
    let total = m.pow(internal.len() as u32);
    let mut out = Enumerated::default();
    let (mut p, mut e1, mut e2) = (vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]);
    let in1: Vec<bool> = (0..nb).map(|b| omega1.contains(b)).collect();
    let in2: Vec<bool> = (0..nb).map(|b| omega2.contains(b)).collect();

    for code in 0..total {
        let mut c = code;
        for &v in &internal {
            state[v] = c % m;
            c /= m;
        }
        for b in 0..nb {
            let i = state[phylo.parent_node(b)];
            let child = phylo.child_node(b);
            let (mut sp, mut s1, mut s2) = (0.0, 0.0, 0.0);
            let allowed: Vec<usize> = match phylo.tip_index(child) {
                Some(tip) => (0..m).filter(|&j| tips.allows(tip, j)).collect(),
                None => vec![state[child]],
            };
            for j in allowed {
                let k = &kernels[b];
                sp += k.p[(i, j)];
                s1 += k.e1[(i, j)];
                s2 += k.e2_raw[(i, j)];
            }
            p[b] = sp;
            e1[b] = s1;
            e2[b] = s2;
        }
        let root = pi[state[phylo.root()]];
        let without = |skip: &[usize]| -> f64 {
            (0..nb).filter(|b| !skip.contains(b)).map(|b| p[b]).product::<f64>()
        };
        out.pd += root * without(&[]);
        for b in 0..nb {
            let rest = root * without(&[b]);
            if in1[b] {
                out.first[0] += e1[b] * rest;
                out.second[0] += e2[b] * rest;
            }
            if in2[b] {
                out.first[1] += e1[b] * rest;
                out.second[1] += e2[b] * rest;
            }
            if in1[b] && in2[b] {
                out.product += e2[b] * rest;
            }
            for b2 in 0..nb {
                if b2 == b {
                    continue;
                }
                let pair = root * without(&[b, b2]) * e1[b] * e1[b2];
                if in1[b] && in1[b2] {
                    out.second[0] += pair;
                }
                if in2[b] && in2[b2] {
                    out.second[1] += pair;
                }
                if in1[b] && in2[b2] {
                    out.product += pair;
                }
            }
        }
    }
    out
}

/// Every fully observed tip data set on `n` tips.
pub fn all_datasets(n: usize, m: usize) -> Vec<TipData> {
    (0..m.pow(n as u32))
        .map(|code| {
            let states: Vec<usize> = (0..n).map(|k| code / m.pow(k as u32) % m).collect();
            TipData::from_states(&states, m).unwrap()
        })
        .collect()
}

pub fn random_reversible<R: Rng + ?Sized>(m: usize, rng: &mut R) -> RateModel {
    let exch: Vec<f64> = (0..m * (m - 1) / 2).map(|_| rng.random_range(0.2..3.0)).collect();
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.15..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let freqs: Vec<f64> = raw.iter().map(|x| x / s).collect();
    build_reversible(m, &exch, &freqs, true).unwrap()
}

pub fn random_gtr<R: Rng + ?Sized>(rng: &mut R) -> RateModel {
    random_reversible(4, rng)
}

/// A random labeled-count or labeled-dwelling summary with a nonempty label.
/// Dwelling masks never cover every state, since that summary is the
/// constant branch length.
pub fn random_label<R: Rng + ?Sized>(m: usize, rng: &mut R) -> SummaryLabel {
    if rng.random_bool(0.5) {
        loop {
            let pairs: Vec<(usize, usize)> = (0..m)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j)
                .filter(|_| rng.random_bool(0.4))
                .collect();
            if !pairs.is_empty() {
                return SummaryLabel::substitutions(pairs);
            }
        }
    } else {
        loop {
            let mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
            if mask.iter().any(|&b| b) && !mask.iter().all(|&b| b) {
                return SummaryLabel::dwelling(mask);
            }
        }
    }
}

/// Tip data with mostly resolved states and occasional ambiguity or gaps.
pub fn random_tips<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> TipData {
    let full = (1u64 << m) - 1;
    let masks = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.1 {
                full
            } else if u < 0.2 {
                loop {
                    let mask = rng.random_range(1..=full);
                    if mask.count_ones() >= 2 {
                        break mask;
                    }
                }
            } else {
                1u64 << rng.random_range(0..m)
            }
        })
        .collect();
    TipData::from_masks(masks, m).unwrap()
}

pub fn random_omega<R: Rng + ?Sized>(n_branches: usize, rng: &mut R) -> BranchSet {
    loop {
        let mask: Vec<bool> = (0..n_branches).map(|_| rng.random_bool(0.5)).collect();
        if mask.iter().any(|&b| b) {
            return BranchSet::from_mask(mask);
        }
    }
}

pub fn random_instance_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Phylogeny {
    random_tree(n, 0.3, rng).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Reroots `phylo` on branch `b` and carries a branch set and tip data
/// across. `omega` must contain both root branches or neither.
pub fn reroot_with(
    phylo: &Phylogeny,
    b: usize,
    fraction: f64,
    omegas: &[&BranchSet],
    tips: &TipData,
) -> (Phylogeny, Vec<BranchSet>, TipData) {
    let (tree, origins) = phylo.reroot(b, fraction).unwrap();
    let mapped = omegas
        .iter()
        .map(|o| BranchSet::from_mask(origins.iter().map(|src| src.iter().all(|&x| o.contains(x))).collect()))
        .collect();
    let order: Vec<usize> = tree.tip_names().iter().map(|name| phylo.find_tip(name).unwrap()).collect();
    (tree, mapped, tips.permuted(&order))
}

/// A random branch set that contains both root branches or neither.
pub fn random_rootsafe_omega<R: Rng + ?Sized>(phylo: &Phylogeny, rng: &mut R) -> BranchSet {
    let [r1, r2] = phylo.root_branches();
    let mut mask = random_omega(phylo.n_branches(), rng).mask().to_vec();
    mask[r2] = mask[r1];
    if !mask.iter().any(|&x| x) {
        mask[r1] = true;
        mask[r2] = true;
    }
    BranchSet::from_mask(mask)
}

/// Toy vertebrate phylogeny with a short-branched seven-taxon primate clade.
pub const VERTEBRATES: &str = "(((((((hs:0.01,pt:0.01):0.01,gg:0.02):0.01,(po:0.03,nl:0.04):0.01):0.03,\
    ((mm:0.04,pa:0.04):0.03,cj:0.08):0.02):0.06,((mu:0.3,rn:0.3):0.2,(oc:0.35,cp:0.4):0.05):0.1):0.05,\
    (((bt:0.25,ss:0.2):0.1,(cf:0.2,fc:0.2):0.1):0.08,((ea:0.3,et:0.4):0.05,(la:0.3,sa:0.35):0.1):0.05):0.05):0.1,\
    (((md:0.5,me:0.45):0.2,(oa:0.6,(gx:0.4,tg:0.38):0.3):0.1):0.15,((xt:0.6,ac:0.7):0.2,\
    ((dr:0.8,ga:0.7):0.1,(ol:0.7,tr:0.65):0.2):0.1):0.2):0.1);";

pub fn primate_branch(tree: &Phylogeny) -> usize {
    (0..tree.n_branches())
        .find(|&b| {
            let mut tips = tree.tips_below(b).unwrap();
            tips.sort();
            tips == ["cj", "gg", "hs", "mm", "nl", "pa", "po", "pt"]
        })
        .unwrap()
}
