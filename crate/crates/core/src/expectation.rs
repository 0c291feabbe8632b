//! Contractive idempotents `P: T → X` and their extension to a conditional
//! expectation between linking algebras,
//!
//! ```text
//!     E = [ PP†  P   ]  : A_T → A_X,
//!         [ P†   P†P ]
//! ```
//!
//! where `PP†(Σ aᵢxᵢ*) = Σ P(aᵢ)xᵢ*` and `P†P(Σ xᵢ*aᵢ) = Σ xᵢ*P(aᵢ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::mats::{
    min_hermitian_eigenvalue, polar_part, span_equal, top_singular, ComplexMatrix, Decomposer, SubspaceBasis, C64,
};
use crate::report::{self, CheckRecord};
use crate::sample;
use crate::tro::{linking_algebra, subtro_nondegeneracy, Block, BlockLayout, LinkingAlgebra, Tro};

/// Linear map between matrix subspaces, stored as a coefficient matrix
/// (`dim target × dim source`) in the two orthonormal bases.
#[derive(Debug, Clone)]
pub struct TroMap {
    source: SubspaceBasis,
    target: SubspaceBasis,
    coeffs: DMatrix<C64>,
}

impl TroMap {
    pub fn new(source: SubspaceBasis, target: SubspaceBasis, coeffs: DMatrix<C64>) -> Result<Self> {
        if coeffs.shape() != (target.dim(), source.dim()) {
            return Err(invalid(format!(
                "coefficient matrix is {}x{}, expected {}x{}",
                coeffs.nrows(),
                coeffs.ncols(),
                target.dim(),
                source.dim()
            )));
        }
        if coeffs.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid("non-finite map coefficient"));
        }
        Ok(Self { source, target, coeffs })
    }

    /// Map defined by its values on the source basis; every value must lie in the target.
    pub fn from_fn<F>(source: SubspaceBasis, target: SubspaceBasis, f: F) -> Result<Self>
    where
        F: Fn(&ComplexMatrix) -> ComplexMatrix,
    {
        Self::try_from_fn(source, target, |b| Ok(f(b)))
    }

    pub fn try_from_fn<F>(source: SubspaceBasis, target: SubspaceBasis, f: F) -> Result<Self>
    where
        F: Fn(&ComplexMatrix) -> Result<ComplexMatrix>,
    {
        let mut coeffs = DMatrix::zeros(target.dim(), source.dim());
        for (k, b) in source.basis().iter().enumerate() {
            let img = f(b)?;
            let mem = target.membership(&img)?;
            if !mem.is_member {
                return Err(invalid(format!(
                    "image of source basis element {k} leaves the target (residual {:.3e})",
                    mem.residual
                )));
            }
            coeffs.set_column(k, &target.coordinates(&img));
        }
        Ok(Self { source, target, coeffs })
    }

    pub fn identity(space: &SubspaceBasis) -> Self {
        let d = space.dim();
        Self {
            source: space.clone(),
            target: space.clone(),
            coeffs: DMatrix::identity(d, d),
        }
    }

    pub fn source(&self) -> &SubspaceBasis {
        &self.source
    }

    pub fn target(&self) -> &SubspaceBasis {
        &self.target
    }

    pub fn coeffs(&self) -> &DMatrix<C64> {
        &self.coeffs
    }

    /// Applies the map to the orthogonal projection of `m` onto the source.
    pub fn apply(&self, m: &ComplexMatrix) -> ComplexMatrix {
        if self.target.dim() == 0 {
            let (r, c) = self.target.ambient_shape();
            return ComplexMatrix::zeros(r, c);
        }
        self.target.combine(&(&self.coeffs * self.source.coordinates(m)))
    }

    /// Like [`TroMap::apply`] but rejects arguments outside the source.
    pub fn apply_checked(&self, m: &ComplexMatrix) -> Result<ComplexMatrix> {
        let mem = self.source.membership(m)?;
        if !mem.is_member {
            return Err(Error::NotInSpan { residual: mem.residual });
        }
        Ok(self.apply(m))
    }

    /// Hilbert–Schmidt adjoint, from the target ambient back into the source.
    pub fn adjoint_apply(&self, w: &ComplexMatrix) -> ComplexMatrix {
        if self.source.dim() == 0 {
            let (r, c) = self.source.ambient_shape();
            return ComplexMatrix::zeros(r, c);
        }
        self.source
            .combine(&(self.coeffs.adjoint() * self.target.coordinates(w)))
    }

    /// Same map with values re-expressed in another basis of (a superspace of) the target.
    pub fn retarget(&self, target: &SubspaceBasis) -> Result<Self> {
        Self::from_fn(self.source.clone(), target.clone(), |b| self.apply(b))
    }

    /// Adds `delta` to the coefficient matrix.
    pub fn perturbed(&self, delta: &DMatrix<C64>) -> Result<Self> {
        Self::new(self.source.clone(), self.target.clone(), &self.coeffs + delta)
    }

    /// Worst Hilbert–Schmidt difference of the two maps on the source basis.
    pub fn distance(&self, other: &TroMap) -> Result<f64> {
        if self.target.ambient_shape() != other.target.ambient_shape() || !span_equal(&self.source, &other.source)? {
            return Err(invalid("maps have different domains or codomains"));
        }
        Ok(self
            .source
            .basis()
            .iter()
            .map(|b| (&self.apply(b) - &other.apply(b)).hs_norm())
            .fold(0.0, f64::max))
    }

    /// Numerical rank of the coefficient matrix.
    pub fn rank(&self) -> usize {
        if self.coeffs.is_empty() {
            return 0;
        }
        let sv = crate::linalg::singular_values(&self.coeffs);
        let smax = sv.first().copied().unwrap_or(0.0);
        sv.iter().filter(|&&s| s > self.source.tol().rank_cut * smax && smax > 0.0).count()
    }
}

/// `P†(s) = P(s*)*` on `T*`.
pub fn dagger(p: &TroMap) -> Result<TroMap> {
    TroMap::from_fn(p.source.adjoint_space(), p.target.adjoint_space(), |s| {
        p.apply(&s.adjoint()).adjoint()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `PP†` on `<TT*>`.
    Left,
    /// `P†P` on `<T*T>`.
    Right,
}

/// Evaluates `Σ P(aᵢ)xᵢ*` (left) or `Σ xᵢ*P(aᵢ)` (right) for explicit terms `(aᵢ, xᵢ)`.
pub fn apply_corner_formula(p: &TroMap, side: Side, terms: &[(ComplexMatrix, ComplexMatrix)]) -> ComplexMatrix {
    let (m, n) = p.source.ambient_shape();
    let d = match side {
        Side::Left => m,
        Side::Right => n,
    };
    terms.iter().fold(ComplexMatrix::zeros(d, d), |acc, (a, x)| {
        let term = match side {
            Side::Left => &p.apply(a) * &x.adjoint(),
            Side::Right => &x.adjoint() * &p.apply(a),
        };
        &acc + &term
    })
}

/// The corner formula over the generator set `{tᵢxⱼ*}` or `{xⱼ*tᵢ}`.
pub(crate) struct CornerFormula {
    decomposer: Decomposer,
    images: DMatrix<C64>,
    dim: usize,
}

impl CornerFormula {
    pub(crate) fn new(p: &TroMap, side: Side, x: &Tro, t: &Tro) -> Self {
        let d = match side {
            Side::Left => t.dim_k(),
            Side::Right => t.dim_h(),
        };
        let mut gens = Vec::with_capacity(t.dim() * x.dim());
        let mut images = Vec::with_capacity(t.dim() * x.dim());
        for a in t.basis() {
            let pa = p.apply(a);
            for xb in x.basis() {
                let xs = xb.adjoint();
                match side {
                    Side::Left => {
                        gens.push(a * &xs);
                        images.push(&pa * &xs);
                    }
                    Side::Right => {
                        gens.push(&xs * a);
                        images.push(&xs * &pa);
                    }
                }
            }
        }
        Self {
            decomposer: Decomposer::with_shape(d, d, &gens, t.tol()),
            images: crate::mats::stack(d * d, &images),
            dim: d,
        }
    }

    fn evaluate(&self, coeffs: &DVector<C64>) -> ComplexMatrix {
        let v = &self.images * coeffs;
        ComplexMatrix::from_vector(self.dim, self.dim, v.as_slice())
    }

    /// Formula applied to the minimum-norm decomposition of `m`.
    pub(crate) fn apply(&self, m: &ComplexMatrix) -> Result<ComplexMatrix> {
        Ok(self.evaluate(&self.decomposer.coefficients(m)?))
    }
}

fn require_nondegenerate(x: &Tro, t: &Tro) -> Result<()> {
    let rep = subtro_nondegeneracy(x, t)?;
    if !rep.nondegenerate {
        let failing: Vec<&str> = rep
            .checks
            .iter()
            .filter(|c| c.mandatory && !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(Error::Degenerate(format!(
            "X is not a nondegenerate sub-TRO of T (failing: {})",
            failing.join(", ")
        )));
    }
    Ok(())
}

fn corner_spaces(side: Side, x: &Tro, t: &Tro) -> Result<(SubspaceBasis, SubspaceBasis)> {
    let (tb, xb) = (t.linking_blocks()?, x.linking_blocks()?);
    Ok(match side {
        Side::Left => (tb.left.clone(), xb.left.clone()),
        Side::Right => (tb.right.clone(), xb.right.clone()),
    })
}

fn build_corner(p: &TroMap, side: Side, x: &Tro, t: &Tro) -> Result<TroMap> {
    let formula = CornerFormula::new(p, side, x, t);
    let (source, target) = corner_spaces(side, x, t)?;
    TroMap::try_from_fn(source, target, |s| formula.apply(s)).map_err(|e| match e {
        Error::NotInSpan { residual } => Error::Degenerate(format!(
            "corner element has no decomposition over the product generators (residual {residual:.3e})"
        )),
        Error::InvalidInput(msg) => Error::Precondition(format!(
            "corner formula leaves the target algebra; P is not a TRO conditional expectation ({msg})"
        )),
        other => other,
    })
}

/// `PP†: <TT*> → <XX*>` (left) or `P†P: <T*T> → <X*X>` (right).
///
/// Post-checked to be a projection onto the target with norm probe `≤ 1 + tol`.
pub fn corner_map(p: &TroMap, side: Side, x: &Tro, t: &Tro) -> Result<TroMap> {
    require_nondegenerate(x, t)?;
    let map = build_corner(p, side, x, t)?;
    let tol = t.tol();
    let identity_residual = map
        .target
        .basis()
        .iter()
        .map(|y| (&map.apply(y) - y).hs_norm())
        .fold(0.0, f64::max);
    if identity_residual > tol.residual {
        return Err(Error::Precondition(format!(
            "corner map is not the identity on its range (residual {identity_residual:.3e})"
        )));
    }
    let norm = cb_probe(&map, 1, 4, 0)[0];
    if norm > 1.0 + tol.residual {
        return Err(Error::Precondition(format!(
            "corner map is not contractive (norm probe {norm:.6})"
        )));
    }
    Ok(map)
}

/// Evaluates the left and right corner formulas on two different
/// decompositions of random elements and returns the worst discrepancy.
pub fn welldefined_check(p: &TroMap, x: &Tro, t: &Tro, trials: usize, seed: u64) -> Result<f64> {
    require_nondegenerate(x, t)?;
    let mut rng = sample::rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for side in [Side::Left, Side::Right] {
        let formula = CornerFormula::new(p, side, x, t);
        let (domain, _) = corner_spaces(side, x, t)?;
        let null = formula.decomposer.null_space();
        for _ in 0..trials {
            let c = domain.random_element(&mut rng);
            let first = formula.decomposer.coefficients(&c)?;
            let z = DVector::from_fn(null.ncols(), |_, _| sample::complex_normal(&mut rng));
            let mut second = &first + &null * z;
            let scale = first.norm().max(1.0) / second.norm().max(1.0);
            // keep the perturbation comparable in size to the min-norm solution
            second = &first + (&second - &first) * C64::new(scale, 0.0);
            let recombined = formula.decomposer.recombine(&second);
            let feasibility = (&recombined - &c).hs_norm();
            if feasibility > t.tol().bound(c.hs_norm()) {
                return Err(Error::Internal(format!(
                    "perturbed decomposition is infeasible (residual {feasibility:.3e})"
                )));
            }
            let diff = (&formula.evaluate(&first) - &formula.evaluate(&second)).hs_norm();
            worst = worst.max(diff);
        }
    }
    Ok(worst)
}

pub const IDEMPOTENT: &str = "idempotent";
pub const SURJECTIVE: &str = "surjective";
pub const CONTRACTIVE: &str = "contractive";
pub const YOUNGSON_1: &str = "youngson.1 P(ax*y)=P(a)x*y";
pub const YOUNGSON_2: &str = "youngson.2 P(xa*y)=xP(a)*y";
pub const YOUNGSON_3: &str = "youngson.3 P(xy*a)=xy*P(a)";
pub const PDAGP: &str = "pdagp P(t)*P(u)=P'P(P(t)*u)=P'P(t*P(u))";

#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub checks: Vec<CheckRecord>,
    /// Sampled lower bounds of `‖id_L ⊗ P‖`, `L = 1..=level`.
    pub amplified_norms: Vec<f64>,
    pub pass: bool,
}

fn relative(diff: &ComplexMatrix, reference: &ComplexMatrix) -> f64 {
    diff.hs_norm() / reference.hs_norm().max(1.0)
}

/// Checks that `P` is an idempotent, surjective, (completely) contractive TRO
/// conditional expectation onto `X`.
pub fn check_tro_expectation(p: &TroMap, x: &Tro, t: &Tro, amplification_level: usize) -> Result<ProjectionReport> {
    if p.source.ambient_shape() != t.space().ambient_shape() || !span_equal(&p.source, t.space())? {
        return Err(invalid("P is not defined on T"));
    }
    if !x.space().contains_space(&p.target)? {
        return Err(invalid(format!(
            "P does not map into X (residual {:.3e})",
            x.space().containment_residual(&p.target)?
        )));
    }
    if !t.space().contains_space(x.space())? {
        return Err(invalid("X is not a subspace of T"));
    }
    let tol = t.tol();
    let bound = tol.residual;
    let mut checks = Vec::new();

    let idem = t
        .basis()
        .iter()
        .map(|b| {
            let pb = p.apply(b);
            relative(&(&p.apply(&pb) - &pb), &pb)
        })
        .fold(0.0, f64::max);
    checks.push(CheckRecord::bounded(IDEMPOTENT, idem, bound));

    let rank = p.rank();
    checks.push(CheckRecord::new(
        SURJECTIVE,
        rank == x.dim(),
        x.dim().abs_diff(rank) as f64,
        format!("rank {rank}, dim X {}", x.dim()),
    ));

    let norms = cb_probe(p, amplification_level.max(1), 6, 0x5eed);
    let worst = norms.iter().copied().fold(0.0, f64::max);
    checks.push(CheckRecord::new(
        CONTRACTIVE,
        worst <= 1.0 + bound,
        (worst - 1.0).max(0.0),
        format!(
            "amplified norm bounds {}",
            norms.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
        ),
    ));

    let (mut y1, mut y2, mut y3): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for a in t.basis() {
        let pa = p.apply(a);
        for xb in x.basis() {
            let xs = xb.adjoint();
            for y in x.basis() {
                let axy = &(a * &xs) * y;
                y1 = y1.max(relative(&(&p.apply(&axy) - &(&(&pa * &xs) * y)), &axy));
                let xay = &(xb * &a.adjoint()) * y;
                y2 = y2.max(relative(&(&p.apply(&xay) - &(&(xb * &pa.adjoint()) * y)), &xay));
                let yx = y.adjoint();
                let xya = &(xb * &yx) * a;
                y3 = y3.max(relative(&(&p.apply(&xya) - &(&(xb * &yx) * &pa)), &xya));
            }
        }
    }
    checks.push(CheckRecord::bounded(YOUNGSON_1, y1, bound));
    checks.push(CheckRecord::bounded(YOUNGSON_2, y2, bound));
    checks.push(CheckRecord::bounded(YOUNGSON_3, y3, bound));

    checks.push(pdagp_check(p, x, t)?);

    Ok(ProjectionReport {
        pass: report::all_pass(&checks),
        checks,
        amplified_norms: norms,
    })
}

fn pdagp_check(p: &TroMap, x: &Tro, t: &Tro) -> Result<CheckRecord> {
    let (_, right) = crate::tro::mixed_spans(x, t);
    if !span_equal(&right, &t.linking_blocks()?.right)? {
        return Ok(CheckRecord::new(PDAGP, true, 0.0, "skipped: <X*T> != <T*T>").informational());
    }
    let pdp = match build_corner(p, Side::Right, x, t) {
        Ok(m) => m,
        Err(e) => return Ok(CheckRecord::new(PDAGP, false, f64::INFINITY, format!("P'P undefined: {e}"))),
    };
    let mut worst: f64 = 0.0;
    for a in t.basis() {
        let pa = p.apply(a);
        for u in t.basis() {
            let pu = p.apply(u);
            let lhs = &pa.adjoint() * &pu;
            let mid = pdp.apply(&(&pa.adjoint() * u));
            let rhs = pdp.apply(&(&a.adjoint() * &pu));
            worst = worst.max(relative(&(&lhs - &mid), &lhs).max(relative(&(&lhs - &rhs), &lhs)));
        }
    }
    Ok(CheckRecord::bounded(PDAGP, worst, t.tol().residual))
}

/// The four block maps of an expectation on `B(K ⊕ H)`.
#[derive(Debug, Clone)]
pub struct BlockExpectation {
    pub layout: BlockLayout,
    pub e11: TroMap,
    pub e12: TroMap,
    pub e21: TroMap,
    pub e22: TroMap,
}

impl BlockExpectation {
    pub fn new(layout: BlockLayout, e11: TroMap, e12: TroMap, e21: TroMap, e22: TroMap) -> Result<Self> {
        let e = Self {
            layout,
            e11,
            e12,
            e21,
            e22,
        };
        for pos in [Block::B11, Block::B12, Block::B21, Block::B22] {
            let shape = layout.block_shape(pos);
            let m = e.block(pos);
            if m.source.ambient_shape() != shape || m.target.ambient_shape() != shape {
                return Err(invalid(format!("block map {pos:?} does not act on {shape:?} matrices")));
            }
        }
        Ok(e)
    }

    pub fn block(&self, pos: Block) -> &TroMap {
        match pos {
            Block::B11 => &self.e11,
            Block::B12 => &self.e12,
            Block::B21 => &self.e21,
            Block::B22 => &self.e22,
        }
    }

    pub fn with_block(&self, pos: Block, map: TroMap) -> Result<Self> {
        let mut maps = [self.e11.clone(), self.e12.clone(), self.e21.clone(), self.e22.clone()];
        let idx = match pos {
            Block::B11 => 0,
            Block::B12 => 1,
            Block::B21 => 2,
            Block::B22 => 3,
        };
        maps[idx] = map;
        let [a, b, c, d] = maps;
        Self::new(self.layout, a, b, c, d)
    }

    pub fn apply(&self, a: &ComplexMatrix) -> ComplexMatrix {
        let l = &self.layout;
        l.assemble(
            &self.e11.apply(&l.block(a, Block::B11)),
            &self.e12.apply(&l.block(a, Block::B12)),
            &self.e21.apply(&l.block(a, Block::B21)),
            &self.e22.apply(&l.block(a, Block::B22)),
        )
    }

    /// Whole map `A_T → M_{k+h}` in the matrix-unit basis of the codomain.
    pub fn as_map_on(&self, at: &LinkingAlgebra) -> Result<TroMap> {
        let n = self.layout.size();
        TroMap::from_fn(at.space.clone(), SubspaceBasis::full(n, n, at.space.tol()), |a| self.apply(a))
    }

    /// Worst block-map distance.
    pub fn distance(&self, other: &BlockExpectation) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for pos in [Block::B11, Block::B12, Block::B21, Block::B22] {
            worst = worst.max(self.block(pos).distance(other.block(pos))?);
        }
        Ok(worst)
    }

    /// Each block map as a matrix acting on row-major vectorizations of the ambient block.
    pub fn ambient_blocks(&self) -> [DMatrix<C64>; 4] {
        [Block::B11, Block::B12, Block::B21, Block::B22].map(|pos| ambient_matrix(self.block(pos)))
    }

    /// Inverse of [`BlockExpectation::ambient_blocks`] for a given pair `X ⊆ T`.
    pub fn from_ambient_blocks(blocks: &[DMatrix<C64>; 4], x: &Tro, t: &Tro) -> Result<Self> {
        let layout = BlockLayout {
            k: t.dim_k(),
            h: t.dim_h(),
        };
        let (tb, xb) = (t.linking_blocks()?, x.linking_blocks()?);
        let spaces = [
            (tb.left.clone(), xb.left.clone()),
            (t.space().clone(), x.space().clone()),
            (t.space().adjoint_space(), x.space().adjoint_space()),
            (tb.right.clone(), xb.right.clone()),
        ];
        let names = ["e11", "e12", "e21", "e22"];
        let mut maps = Vec::with_capacity(4);
        for (((source, target), m), name) in spaces.into_iter().zip(blocks).zip(names) {
            let (r, c) = source.ambient_shape();
            if m.shape() != (r * c, r * c) {
                return Err(invalid(format!(
                    "{name} must be {}x{} (acting on row-major {r}x{c} blocks), got {}x{}",
                    r * c,
                    r * c,
                    m.nrows(),
                    m.ncols()
                )));
            }
            let map = TroMap::from_fn(source, target, |b| {
                let v = DVector::from_vec(b.row_major());
                let out = m * v;
                ComplexMatrix::from_raw(DMatrix::from_row_slice(r, c, out.as_slice()))
            })
            .map_err(|e| invalid(format!("{name}: {e}")))?;
            maps.push(map);
        }
        let [a, b, c, d]: [TroMap; 4] = maps.try_into().expect("four blocks");
        Self::new(layout, a, b, c, d)
    }

    /// When E multiplies every matrix unit of `A_T` by 0 or 1, returns that
    /// entrywise mask (`None` entries are positions outside `A_T`).
    pub fn entry_mask(&self, at: &LinkingAlgebra) -> Option<Vec<Vec<Option<u8>>>> {
        let n = self.layout.size();
        let tol = at.space.tol();
        let mut mask = vec![vec![None; n]; n];
        for (i, row) in mask.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let u = ComplexMatrix::unit(n, n, i, j);
                if !at.space.membership(&u).ok()?.is_member {
                    continue;
                }
                let img = self.apply(&u);
                let lambda = img.get(i, j);
                let rest = (&img - &u.scale(lambda)).hs_norm();
                if rest > tol.residual || lambda.im.abs() > tol.residual {
                    return None;
                }
                *cell = if (lambda.re - 1.0).abs() <= tol.residual {
                    Some(1)
                } else if lambda.re.abs() <= tol.residual {
                    Some(0)
                } else {
                    return None;
                };
            }
        }
        Some(mask)
    }
}

fn ambient_matrix(map: &TroMap) -> DMatrix<C64> {
    let (r, c) = map.source.ambient_shape();
    let n = r * c;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..r {
        for j in 0..c {
            let img = map.apply(&ComplexMatrix::unit(r, c, i, j));
            out.set_column(i * c + j, &DVector::from_vec(img.row_major()));
        }
    }
    out
}

/// Builds `E = [[PP†, P], [P†, P†P]]` after checking the hypotheses on `P` and `X`.
pub fn assemble_expectation(p: &TroMap, x: &Tro, t: &Tro) -> Result<BlockExpectation> {
    let rep = check_tro_expectation(p, x, t, 1)?;
    if !rep.pass {
        let failing: Vec<&str> = rep
            .checks
            .iter()
            .filter(|c| c.mandatory && !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(Error::Precondition(format!(
            "P is not a contractive TRO conditional expectation onto X (failing: {})",
            failing.join(", ")
        )));
    }
    require_nondegenerate(x, t)?;
    let e12 = p.retarget(x.space())?;
    let e21 = dagger(&e12)?;
    let e11 = corner_map(&e12, Side::Left, x, t)?;
    let e22 = corner_map(&e12, Side::Right, x, t)?;
    let layout = BlockLayout {
        k: t.dim_k(),
        h: t.dim_h(),
    };
    let e = BlockExpectation::new(layout, e11, e12, e21, e22)?;
    let (at, ax) = (linking_algebra(t)?, linking_algebra(x)?);
    let leak = range_residual(&e, &at, &ax);
    if leak > t.tol().residual {
        return Err(Error::Internal(format!(
            "assembled expectation leaves A_X (residual {leak:.3e})"
        )));
    }
    Ok(e)
}

fn range_residual(e: &BlockExpectation, at: &LinkingAlgebra, ax: &LinkingAlgebra) -> f64 {
    at.space
        .basis()
        .iter()
        .map(|a| ax.space.relative_residual(&e.apply(a)))
        .fold(0.0, f64::max)
}

pub const CE_RANGE: &str = "ce.range-in-A_X";
pub const CE_IDEMPOTENT: &str = "ce.idempotent";
pub const CE_IDENTITY: &str = "ce.identity-on-A_X";
pub const CE_BIMODULE: &str = "ce.bimodule";
pub const CE_ADJOINT: &str = "ce.adjoint-preserving";
pub const CE_POSITIVE: &str = "ce.positive";
pub const CE_CONTRACTIVE: &str = "ce.contractive";

#[derive(Debug, Clone)]
pub struct ExpectationReport {
    pub checks: Vec<CheckRecord>,
    pub amplified_norms: Vec<f64>,
    pub pass: bool,
}

impl ExpectationReport {
    pub fn worst_residual(&self) -> f64 {
        self.checks.iter().map(|c| c.residual).fold(0.0, f64::max)
    }
}

/// Probe settings for [`verify_expectation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub samples: usize,
    pub amplification_level: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 16,
            amplification_level: 4,
            seed: 0,
        }
    }
}

/// Checks the conditional-expectation axioms of `e: A_T → A_X`.
///
/// The bimodule property is checked as the two one-sided identities
/// `E(ba) = bE(a)` and `E(ab) = E(a)b` for `b` in an `A_X` basis and `a` in an
/// `A_T` basis; together they give `E(bab') = bE(a)b'`.
pub fn verify_expectation(e: &BlockExpectation, x: &Tro, t: &Tro, opts: VerifyOptions) -> Result<ExpectationReport> {
    let at = linking_algebra(t)?;
    let ax = linking_algebra(x)?;
    if e.layout.size() != at.layout.size() {
        return Err(invalid("expectation and TRO have different block layouts"));
    }
    let tol = t.tol();
    let bound = tol.residual;
    let mut checks = Vec::new();

    let images: Vec<ComplexMatrix> = at.space.basis().iter().map(|a| e.apply(a)).collect();

    checks.push(CheckRecord::bounded(CE_RANGE, range_residual(e, &at, &ax), bound));

    let idem = images
        .iter()
        .map(|ea| relative(&(&e.apply(ea) - ea), ea))
        .fold(0.0, f64::max);
    checks.push(CheckRecord::bounded(CE_IDEMPOTENT, idem, bound));

    let ident = ax
        .space
        .basis()
        .iter()
        .map(|b| relative(&(&e.apply(b) - b), b))
        .fold(0.0, f64::max);
    checks.push(CheckRecord::bounded(CE_IDENTITY, ident, bound));

    let mut bimod: f64 = 0.0;
    for b in ax.space.basis() {
        for (a, ea) in at.space.basis().iter().zip(&images) {
            let ba = b * a;
            bimod = bimod.max(relative(&(&e.apply(&ba) - &(b * ea)), &ba));
            let ab = a * b;
            bimod = bimod.max(relative(&(&e.apply(&ab) - &(ea * b)), &ab));
        }
    }
    checks.push(CheckRecord::bounded(CE_BIMODULE, bimod, bound));

    let adj = at
        .space
        .basis()
        .iter()
        .zip(&images)
        .map(|(a, ea)| relative(&(&e.apply(&a.adjoint()) - &ea.adjoint()), ea))
        .fold(0.0, f64::max);
    checks.push(CheckRecord::bounded(CE_ADJOINT, adj, bound));

    let mut rng = sample::rng_from_seed(opts.seed);
    let mut positivity: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for _ in 0..opts.samples {
        let g = at.space.random_element(&mut rng);
        let gg = &g.adjoint() * &g;
        let s = gg.operator_norm();
        if s == 0.0 {
            continue;
        }
        let a = gg.scale(C64::new(1.0 / s, 0.0));
        let ea = e.apply(&a);
        let herm = (&ea - &ea.adjoint()).hs_norm();
        let lam = min_hermitian_eigenvalue(ea.as_matrix());
        min_eig = min_eig.min(lam);
        positivity = positivity.max(herm).max(-lam);
    }
    checks.push(
        CheckRecord::bounded(CE_POSITIVE, positivity, bound)
            .with_details(format!("{} samples, min eigenvalue {min_eig:.3e}", opts.samples)),
    );

    let whole = e.as_map_on(&at)?;
    let norms = cb_probe(&whole, opts.amplification_level.max(1), (opts.samples / 4).max(3), opts.seed ^ 0xcb);
    let worst = norms.iter().copied().fold(0.0, f64::max);
    checks.push(CheckRecord::new(
        CE_CONTRACTIVE,
        worst <= 1.0 + bound,
        (worst - 1.0).max(0.0),
        format!(
            "amplified norm bounds {}",
            norms.iter().map(|v| format!("{v:.9}")).collect::<Vec<_>>().join(", ")
        ),
    ));

    Ok(ExpectationReport {
        pass: report::all_pass(&checks),
        checks,
        amplified_norms: norms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uniqueness {
    pub equal: bool,
    /// Worst deviation of `E′₁₁(t x*)` from `P(t) x*` over basis pairs.
    pub forcing_residual: f64,
    /// Worst block-map distance between `E′` and the assembled `E`.
    pub deviation: f64,
}

/// Compares a conditional expectation `e_prime` with `e_prime.e12 = P`
/// against the expectation assembled from `P`.
pub fn uniqueness_check(e_prime: &BlockExpectation, p: &TroMap, x: &Tro, t: &Tro, opts: VerifyOptions) -> Result<Uniqueness> {
    let tol = t.tol();
    let rep = verify_expectation(e_prime, x, t, opts)?;
    if !rep.pass {
        let failing: Vec<&str> = rep
            .checks
            .iter()
            .filter(|c| c.mandatory && !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(Error::Precondition(format!(
            "E' is not a conditional expectation onto A_X (failing: {})",
            failing.join(", ")
        )));
    }
    let d12 = e_prime.e12.distance(p)?;
    if d12 > tol.residual {
        return Err(Error::Precondition(format!(
            "E'12 differs from P (deviation {d12:.3e})"
        )));
    }
    let mut forcing: f64 = 0.0;
    for a in t.basis() {
        let pa = p.apply(a);
        for xb in x.basis() {
            let xs = xb.adjoint();
            let lhs = e_prime.e11.apply(&(a * &xs));
            forcing = forcing.max((&lhs - &(&pa * &xs)).hs_norm());
        }
    }
    let e = assemble_expectation(p, x, t)?;
    let deviation = e_prime.distance(&e)?;
    Ok(Uniqueness {
        equal: deviation <= tol.residual && forcing <= tol.residual,
        forcing_residual: forcing,
        deviation,
    })
}

/// Recovers `P = E|_T` from a conditional expectation that maps T into T.
pub fn extract_from_expectation(e: &BlockExpectation, x: &Tro, t: &Tro, opts: VerifyOptions) -> Result<TroMap> {
    let tol = t.tol();
    let escape = e
        .e12
        .source
        .basis()
        .iter()
        .map(|b| t.space().relative_residual(&e.e12.apply(b)))
        .fold(0.0, f64::max);
    if escape > tol.residual {
        return Err(invalid(format!("E maps T outside T (residual {escape:.3e})")));
    }
    let rep = verify_expectation(e, x, t, opts)?;
    if !rep.pass {
        return Err(Error::Precondition("E is not a conditional expectation onto A_X".into()));
    }
    let p = e.e12.clone();
    let rebuilt = assemble_expectation(&p, x, t)?;
    let dev = rebuilt.distance(e)?;
    if dev > tol.residual {
        return Err(Error::Internal(format!(
            "E is not of the block form determined by E|_T (deviation {dev:.3e})"
        )));
    }
    Ok(p)
}

fn amplify(m: &TroMap, level: usize, a: &DMatrix<C64>) -> DMatrix<C64> {
    let (sr, sc) = m.source.ambient_shape();
    let (tr, tc) = m.target.ambient_shape();
    let mut out = DMatrix::zeros(level * tr, level * tc);
    for i in 0..level {
        for j in 0..level {
            let blk = ComplexMatrix::from_raw(a.view((i * sr, j * sc), (sr, sc)).into_owned());
            out.view_mut((i * tr, j * tc), (tr, tc))
                .copy_from(m.apply(&blk).as_matrix());
        }
    }
    out
}

fn blockwise(level: usize, a: &DMatrix<C64>, shape: (usize, usize), f: impl Fn(&ComplexMatrix) -> ComplexMatrix, out_shape: (usize, usize)) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(level * out_shape.0, level * out_shape.1);
    for i in 0..level {
        for j in 0..level {
            let blk = ComplexMatrix::from_raw(a.view((i * shape.0, j * shape.1), shape).into_owned());
            out.view_mut((i * out_shape.0, j * out_shape.1), out_shape)
                .copy_from(f(&blk).as_matrix());
        }
    }
    out
}

fn random_block_input<R: Rng + ?Sized>(m: &TroMap, level: usize, rng: &mut R) -> DMatrix<C64> {
    let (sr, sc) = m.source.ambient_shape();
    let mut a = DMatrix::zeros(level * sr, level * sc);
    for i in 0..level {
        for j in 0..level {
            a.view_mut((i * sr, j * sc), (sr, sc))
                .copy_from(m.source.random_element(rng).as_matrix());
        }
    }
    a
}

const CB_ASCENT_STEPS: usize = 60;

/// Sampled lower bounds of `‖id_L ⊗ m‖` for `L = 1..=level`.
///
/// Each sample starts from a random block input with entries in the source
/// and ascends by replacing the input with the polar part of `(id_L ⊗ m)*(u v*)`,
/// where `(u, v)` is the top singular pair of the current output. A level-L
/// witness padded with zeros is a level-(L+1) witness, so the returned bounds
/// are nondecreasing.
pub fn cb_probe(m: &TroMap, level: usize, samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = sample::rng_from_seed(seed);
    let (sr, sc) = m.source.ambient_shape();
    let (tr, tc) = m.target.ambient_shape();
    let rank_cut = m.source.tol().rank_cut;
    let mut bounds = Vec::with_capacity(level);
    let mut running: f64 = 0.0;
    for l in 1..=level {
        let mut best = running;
        if m.source.dim() > 0 {
            for _ in 0..samples.max(1) {
                let mut a = random_block_input(m, l, &mut rng);
                let s = crate::mats::spectral_norm(&a);
                if s == 0.0 {
                    continue;
                }
                a /= C64::new(s, 0.0);
                let mut val = crate::mats::spectral_norm(&amplify(m, l, &a));
                for _ in 0..CB_ASCENT_STEPS {
                    let (_, u, v) = top_singular(&amplify(m, l, &a));
                    let w = u * v.adjoint();
                    let grad = blockwise(l, &w, (tr, tc), |blk| m.adjoint_apply(blk), (sr, sc));
                    let polar = polar_part(&grad, rank_cut);
                    let cand = blockwise(l, &polar, (sr, sc), |blk| m.source.project(blk), (sr, sc));
                    let s = crate::mats::spectral_norm(&cand);
                    if s == 0.0 {
                        break;
                    }
                    let cand = cand / C64::new(s, 0.0);
                    let cval = crate::mats::spectral_norm(&amplify(m, l, &cand));
                    if cval <= val + 1e-15 * val.max(1.0) {
                        break;
                    }
                    a = cand;
                    val = cval;
                }
                best = best.max(val);
            }
        }
        running = best;
        bounds.push(best);
    }
    bounds
}
