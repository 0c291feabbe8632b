//! Seeded instance generators `(T, X, P)` with known answers, and instances
//! that break exactly one hypothesis of the extension construction.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::expectation::{TroMap, CONTRACTIVE};
use crate::mats::{orthonormal_basis, ComplexMatrix, SubspaceBasis, ToleranceProfile, C64};
use crate::sample::{haar_unitary, rng_from_seed};
use crate::tro::{essential_compression, subtro_nondegeneracy, ternary_closure, Tro, NONDEG_1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Corner,
    GroupAverage,
    Random,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateKind {
    MissingNondegeneracy,
    NoncontractiveP,
    NonTroX,
}

impl DegenerateKind {
    pub const ALL: [DegenerateKind; 3] = [Self::MissingNondegeneracy, Self::NoncontractiveP, Self::NonTroX];

    /// Name of the first check that must fail in the `extend` pipeline.
    pub fn gate(self) -> &'static str {
        match self {
            Self::MissingNondegeneracy => NONDEG_1,
            Self::NoncontractiveP => CONTRACTIVE,
            Self::NonTroX => "x-is-tro",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MissingNondegeneracy => "missing_nondegeneracy",
            Self::NoncontractiveP => "noncontractive_P",
            Self::NonTroX => "non_tro_X",
        }
    }
}

impl fmt::Display for DegenerateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DegenerateKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown degenerate kind {s:?}")))
    }
}

/// A TRO, a subspace X and a map `P: T → X`.
///
/// X is kept as a plain subspace so that instances with a non-TRO X can be
/// represented; [`Instance::x_tro`] validates it.
#[derive(Debug, Clone)]
pub struct Instance {
    pub t: Tro,
    pub x: SubspaceBasis,
    pub p: TroMap,
    pub provenance: Provenance,
    pub seed: u64,
    /// X is a nondegenerate sub-TRO of T.
    pub nondegenerate: bool,
    pub kind: Option<DegenerateKind>,
    /// Human-readable evidence for the violated hypothesis.
    pub witness: Option<String>,
}

impl Instance {
    pub fn x_tro(&self) -> Result<Tro> {
        Tro::new(self.x.clone())
    }

    fn finish(t: Tro, x: Tro, p: TroMap, provenance: Provenance, seed: u64) -> Result<Self> {
        let nondegenerate = subtro_nondegeneracy(&x, &t)?.nondegenerate;
        Ok(Self {
            t,
            x: x.space().clone(),
            p,
            provenance,
            seed,
            nondegenerate,
            kind: None,
            witness: None,
        })
    }
}

fn tol() -> ToleranceProfile {
    ToleranceProfile::default()
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `w diag(flags) w*` for a unitary `w`.
fn rotated_projection(w: &ComplexMatrix, rank: usize) -> ComplexMatrix {
    let n = w.rows();
    let d = DMatrix::from_fn(n, n, |i, j| if i == j && i < rank { c(1.0) } else { c(0.0) });
    let d = ComplexMatrix::from_raw(d);
    &(w * &d) * &w.adjoint()
}

fn check_projection(e: &ComplexMatrix, name: &str) -> Result<()> {
    let (r, cols) = e.shape();
    if r != cols {
        return Err(invalid(format!("{name} must be square")));
    }
    let herm = (e - &e.adjoint()).hs_norm();
    let idem = (&(e * e) - e).hs_norm();
    if herm.max(idem) > 1e-10 {
        return Err(invalid(format!("{name} is not an orthogonal projection")));
    }
    Ok(())
}

/// `T = M_{m,n}`, `X = eTf`, `P(t) = etf` for given orthogonal projections.
pub fn corner_instance_from_projections(e: &ComplexMatrix, f: &ComplexMatrix, seed: u64) -> Result<Instance> {
    check_projection(e, "e")?;
    check_projection(f, "f")?;
    let (m, n) = (e.rows(), f.rows());
    let t = Tro::new(SubspaceBasis::full(m, n, tol()))?;
    let images: Vec<ComplexMatrix> = t.basis().iter().map(|b| &(e * b) * f).collect();
    let x = Tro::new(SubspaceBasis::span(m, n, &images, tol())?)?;
    let p = TroMap::from_fn(t.space().clone(), x.space().clone(), |a| &(e * a) * f)?;
    Instance::finish(t, x, p, Provenance::Corner, seed)
}

/// Corner instance with Haar-random projections of ranks `rank_e` and `rank_f`.
pub fn corner_instance(m: usize, n: usize, rank_e: usize, rank_f: usize, seed: u64) -> Result<Instance> {
    if !(1..=m).contains(&rank_e) || !(1..=n).contains(&rank_f) {
        return Err(invalid(format!(
            "ranks ({rank_e}, {rank_f}) out of range for {m}x{n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let e = rotated_projection(&haar_unitary(m, &mut rng), rank_e);
    let f = rotated_projection(&haar_unitary(n, &mut rng), rank_f);
    corner_instance_from_projections(&e, &f, seed)
}

fn power(u: &ComplexMatrix, j: usize) -> ComplexMatrix {
    (0..j).fold(ComplexMatrix::identity(u.rows()), |acc, _| &acc * u)
}

/// `P(t) = (1/k) Σ_{j<k} uʲ t v*ʲ` on `M_{m,n}`, for unitaries with `uᵏ = vᵏ = 1`.
pub fn group_average_from_unitaries(u: &ComplexMatrix, v: &ComplexMatrix, order: usize, seed: u64) -> Result<Instance> {
    if order == 0 {
        return Err(invalid("group order must be positive"));
    }
    for (name, w) in [("u", u), ("v", v)] {
        let n = w.rows();
        if w.cols() != n {
            return Err(invalid(format!("{name} must be square")));
        }
        if (&(&w.adjoint() * w) - &ComplexMatrix::identity(n)).hs_norm() > 1e-10 {
            return Err(invalid(format!("{name} is not unitary")));
        }
        if (&power(w, order) - &ComplexMatrix::identity(n)).hs_norm() > 1e-10 {
            return Err(invalid(format!("{name}^{order} is not the identity")));
        }
    }
    let (m, n) = (u.rows(), v.rows());
    let us: Vec<ComplexMatrix> = (0..order).map(|j| power(u, j)).collect();
    let vs: Vec<ComplexMatrix> = (0..order).map(|j| power(v, j).adjoint()).collect();
    let scale = c(1.0 / order as f64);
    let avg = |a: &ComplexMatrix| {
        us.iter()
            .zip(&vs)
            .fold(ComplexMatrix::zeros(m, n), |acc, (uj, vj)| &acc + &(&(uj * a) * vj))
            .scale(scale)
    };
    let t = Tro::new(SubspaceBasis::full(m, n, tol()))?;
    let images: Vec<ComplexMatrix> = t.basis().iter().map(&avg).collect();
    let x = Tro::new(SubspaceBasis::span(m, n, &images, tol())?)?;
    let p = TroMap::from_fn(t.space().clone(), x.space().clone(), avg)?;
    Instance::finish(t, x, p, Provenance::GroupAverage, seed)
}

/// Residues for the eigenvalues of `u` (length m) and `v` (length n) with equal
/// residue sets, so that the fixed-point sub-TRO is nondegenerate.
fn matched_residues<R: Rng + ?Sized>(m: usize, n: usize, order: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut pool: Vec<usize> = (0..order).collect();
    pool.shuffle(rng);
    let s = rng.random_range(1..=order.min(m).min(n));
    let used = &pool[..s];
    let mut fill = |len: usize| {
        let mut r: Vec<usize> = used.to_vec();
        while r.len() < len {
            r.push(used[rng.random_range(0..s)]);
        }
        r.shuffle(rng);
        r
    };
    let a = fill(m);
    let b = fill(n);
    (a, b)
}

fn cyclic_unitary<R: Rng + ?Sized>(residues: &[usize], order: usize, rng: &mut R) -> ComplexMatrix {
    let n = residues.len();
    let w = haar_unitary(n, rng);
    let d = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            C64::from_polar(1.0, std::f64::consts::TAU * residues[i] as f64 / order as f64)
        } else {
            c(0.0)
        }
    });
    &(&w * &ComplexMatrix::from_raw(d)) * &w.adjoint()
}

/// Group-average instance on `M_{m,n}` for the cyclic group of order
/// `order ∈ {1, 2, 3, 4}`, with eigenvalue residues chosen so that X is nondegenerate.
pub fn group_average_instance(m: usize, n: usize, order: usize, seed: u64) -> Result<Instance> {
    if !(1..=4).contains(&order) {
        return Err(invalid(format!("group order {order} not in 1..=4")));
    }
    if m == 0 || n == 0 {
        return Err(invalid("dimensions must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let (a, b) = matched_residues(m, n, order, &mut rng);
    let u = cyclic_unitary(&a, order, &mut rng);
    let v = cyclic_unitary(&b, order, &mut rng);
    group_average_from_unitaries(&u, &v, order, seed)
}

/// Ternary closure of `generator_count` Gaussian `m × n` matrices, compressed
/// to its essential subspaces.
pub fn random_tro(m: usize, n: usize, generator_count: usize, seed: u64) -> Result<Tro> {
    if generator_count == 0 {
        return Err(invalid("generator_count must be at least 1"));
    }
    if m == 0 || n == 0 {
        return Err(invalid("dimensions must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let gens: Vec<ComplexMatrix> = (0..generator_count)
        .map(|_| crate::sample::gaussian_matrix(m, n, &mut rng))
        .collect();
    let closure = ternary_closure(&SubspaceBasis::span(m, n, &gens, tol())?)?;
    Ok(essential_compression(&closure)?.compressed)
}

/// One summand `M_{k,l} ⊗ 1_r` of a structured TRO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Summand {
    k: usize,
    l: usize,
    r: usize,
}

/// Structured TRO `W (⊕ M_{kᵢ,lᵢ} ⊗ 1_{rᵢ}) V*` with a cyclic group average
/// acting on each summand, `P(t) = (1/k) Σ uʲ t v*ʲ` where
/// `u = W(⊕ uᵢ ⊗ 1)W*` and `v = V(⊕ vᵢ ⊗ 1)V*`. Both dimensions stay ≤ 6.
pub fn random_instance(seed: u64) -> Result<Instance> {
    let mut rng = rng_from_seed(seed);
    let order = rng.random_range(1..=3usize);
    let count = rng.random_range(1..=2usize);
    let mut summands = Vec::new();
    let (mut m, mut n) = (0, 0);
    for _ in 0..count {
        let s = Summand {
            k: rng.random_range(1..=3),
            l: rng.random_range(1..=3),
            r: rng.random_range(1..=2),
        };
        if m + s.k * s.r > 6 || n + s.l * s.r > 6 {
            continue;
        }
        m += s.k * s.r;
        n += s.l * s.r;
        summands.push(s);
    }
    if summands.is_empty() {
        summands.push(Summand { k: 2, l: 2, r: 1 });
        (m, n) = (2, 2);
    }
    let w = haar_unitary(m, &mut rng);
    let v = haar_unitary(n, &mut rng);

    let mut gens = Vec::new();
    let mut ublk = DMatrix::zeros(m, m);
    let mut vblk = DMatrix::zeros(n, n);
    let (mut ro, mut co) = (0, 0);
    for s in &summands {
        let (a, b) = matched_residues(s.k, s.l, order, &mut rng);
        let ui = cyclic_unitary(&a, order, &mut rng);
        let vi = cyclic_unitary(&b, order, &mut rng);
        for copy in 0..s.r {
            let (r0, c0) = (ro + copy * s.k, co + copy * s.l);
            ublk.view_mut((r0, r0), (s.k, s.k)).copy_from(ui.as_matrix());
            vblk.view_mut((c0, c0), (s.l, s.l)).copy_from(vi.as_matrix());
        }
        for i in 0..s.k {
            for j in 0..s.l {
                let mut g = DMatrix::zeros(m, n);
                for copy in 0..s.r {
                    g[(ro + copy * s.k + i, co + copy * s.l + j)] = c(1.0);
                }
                gens.push(&(&w * &ComplexMatrix::from_raw(g)) * &v.adjoint());
            }
        }
        ro += s.k * s.r;
        co += s.l * s.r;
    }
    let u_total = &(&w * &ComplexMatrix::from_raw(ublk)) * &w.adjoint();
    let v_total = &(&v * &ComplexMatrix::from_raw(vblk)) * &v.adjoint();
    let t = Tro::new(orthonormal_basis(&gens, tol())?)?;

    let us: Vec<ComplexMatrix> = (0..order).map(|j| power(&u_total, j)).collect();
    let vs: Vec<ComplexMatrix> = (0..order).map(|j| power(&v_total, j).adjoint()).collect();
    let scale = c(1.0 / order as f64);
    let avg = |a: &ComplexMatrix| {
        us.iter()
            .zip(&vs)
            .fold(ComplexMatrix::zeros(m, n), |acc, (uj, vj)| &acc + &(&(uj * a) * vj))
            .scale(scale)
    };
    let images: Vec<ComplexMatrix> = t.basis().iter().map(&avg).collect();
    let x = Tro::new(SubspaceBasis::span(m, n, &images, tol())?)?;
    let p = TroMap::from_fn(t.space().clone(), x.space().clone(), avg)?;
    Instance::finish(t, x, p, Provenance::Random, seed)
}

/// An instance violating exactly the hypothesis named by `kind`. The 2×2
/// models are rotated by seed-derived Haar unitaries (seed 0 keeps them as is).
pub fn degenerate_instance(kind: DegenerateKind, seed: u64) -> Result<Instance> {
    let mut rng = rng_from_seed(seed);
    let (ul, ur) = if seed == 0 {
        (ComplexMatrix::identity(2), ComplexMatrix::identity(2))
    } else {
        (haar_unitary(2, &mut rng), haar_unitary(2, &mut rng))
    };
    let rot = |a: &ComplexMatrix| &(&ul * a) * &ur.adjoint();
    let unrot = |a: &ComplexMatrix| &(&ul.adjoint() * a) * &ur;
    let e = |i, j| ComplexMatrix::unit(2, 2, i, j);
    let t = Tro::new(SubspaceBasis::full(2, 2, tol()))?;

    let (x, p, witness) = match kind {
        DegenerateKind::MissingNondegeneracy => {
            let x = orthonormal_basis(&[rot(&e(0, 0))], tol())?;
            let pl = &(&ul * &e(0, 0)) * &ul.adjoint();
            let pr = &(&ur * &e(0, 0)) * &ur.adjoint();
            let p = TroMap::from_fn(t.space().clone(), x.clone(), |a| &(&pl * a) * &pr)?;
            let rep = subtro_nondegeneracy(&Tro::new(x.clone())?, &t)?;
            let r = crate::report::find(&rep.checks, NONDEG_1).map_or(0.0, |c| c.residual);
            (x, p, format!("<XT*T> misses part of T (residual {r:.3e})"))
        }
        DegenerateKind::NoncontractiveP => {
            let x = orthonormal_basis(&[rot(&e(0, 0)), rot(&e(1, 1))], tol())?;
            let p = TroMap::from_fn(t.space().clone(), x.clone(), |a| {
                let b = unrot(a);
                let d = &e(0, 0).scale(b.get(0, 0) + b.get(0, 1) * 1.5) + &e(1, 1).scale(b.get(1, 1));
                rot(&d)
            })?;
            let norm = p.apply(&rot(&e(0, 1))).operator_norm();
            (x, p, format!("norm of the image of a unit-norm element is {norm:.6}"))
        }
        DegenerateKind::NonTroX => {
            let y = rot(&(&e(0, 0) + &e(1, 1).scale(c(2.0))));
            let x = orthonormal_basis(std::slice::from_ref(&y), tol())?;
            let p = TroMap::from_fn(t.space().clone(), x.clone(), |a| y.scale(unrot(a).get(1, 1) * 0.5))?;
            let yyy = &(&y * &y.adjoint()) * &y;
            let r = x.relative_residual(&yyy);
            (x, p, format!("yy*y leaves X (residual {r:.3e})"))
        }
    };
    let nondegenerate = match Tro::new(x.clone()) {
        Ok(xt) => subtro_nondegeneracy(&xt, &t)?.nondegenerate,
        Err(_) => false,
    };
    Ok(Instance {
        t,
        x,
        p,
        provenance: Provenance::Degenerate,
        seed,
        nondegenerate,
        kind: Some(kind),
        witness: Some(witness),
    })
}
