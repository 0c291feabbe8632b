//! Ternary rings of operators: ternary products, closures, linking algebras,
//! essential compression and sub-TRO nondegeneracy.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::mats::{polar_part, span_distance, top_singular, ComplexMatrix, SpanAccumulator, SubspaceBasis, ToleranceProfile, C64};
use crate::report::CheckRecord;
use crate::sample;

/// Subspace of `dim_k × dim_h` matrices closed under `(a, b, c) ↦ a b* c`.
#[derive(Debug, Clone)]
pub struct Tro {
    space: SubspaceBasis,
    blocks: OnceLock<LinkingBlocks>,
}

impl Tro {
    /// Validates closure under the ternary product.
    pub fn new(space: SubspaceBasis) -> Result<Self> {
        let check = is_tro(&space);
        if !check.ok {
            return Err(invalid(format!(
                "subspace is not closed under the ternary product (worst residual {:.3e})",
                check.worst_residual
            )));
        }
        Ok(Self::new_unchecked(space))
    }

    pub(crate) fn new_unchecked(space: SubspaceBasis) -> Self {
        Self {
            space,
            blocks: OnceLock::new(),
        }
    }

    pub fn from_spanning(spanning: &[ComplexMatrix], tol: ToleranceProfile) -> Result<Self> {
        Self::new(crate::mats::orthonormal_basis(spanning, tol)?)
    }

    /// Codomain dimension (rows).
    pub fn dim_k(&self) -> usize {
        self.space.ambient_rows()
    }

    /// Domain dimension (columns).
    pub fn dim_h(&self) -> usize {
        self.space.ambient_cols()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn space(&self) -> &SubspaceBasis {
        &self.space
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        self.space.basis()
    }

    pub fn tol(&self) -> ToleranceProfile {
        self.space.tol()
    }

    /// `T*`, a TRO in the transposed ambient.
    pub fn adjoint(&self) -> Tro {
        Tro::new_unchecked(self.space.adjoint_space())
    }

    /// Cached left and right linking algebras.
    pub fn linking_blocks(&self) -> Result<&LinkingBlocks> {
        if let Some(b) = self.blocks.get() {
            return Ok(b);
        }
        let computed = compute_linking_blocks(self)?;
        let _ = self.blocks.set(computed);
        Ok(self.blocks.get().expect("just set"))
    }
}

/// Returns `a b* c`.
pub fn ternary_product(a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.shape() != b.shape() || b.shape() != c.shape() {
        return Err(invalid(format!(
            "ternary product needs equal shapes, got {:?}, {:?}, {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    Ok(&(a * &b.adjoint()) * c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TroCheck {
    pub ok: bool,
    pub worst_residual: f64,
}

/// Checks `a b* c ∈ s` for all basis triples.
pub fn is_tro(s: &SubspaceBasis) -> TroCheck {
    let basis = s.basis();
    let mut worst: f64 = 0.0;
    for b in basis {
        let bt = b.adjoint();
        for c in basis {
            let btc = &bt * c;
            for a in basis {
                worst = worst.max(s.relative_residual(&(a * &btc)));
            }
        }
    }
    TroCheck {
        ok: worst <= s.tol().residual,
        worst_residual: worst,
    }
}

const CLOSURE_CAP: usize = 64;

/// Smallest TRO containing `s`.
pub fn ternary_closure(s: &SubspaceBasis) -> Result<Tro> {
    let (rows, cols) = s.ambient_shape();
    let mut space = s.clone();
    for _ in 0..CLOSURE_CAP {
        let basis = space.basis();
        let triples = basis.iter().flat_map(|a| {
            basis.iter().flat_map(move |b| {
                let ab = a * &b.adjoint();
                basis.iter().map(move |c| &ab * c)
            })
        });
        let next = SubspaceBasis::span_owned(rows, cols, basis.iter().cloned().chain(triples), s.tol());
        if next.dim() == space.dim() {
            return Tro::new(next).map_err(|e| Error::Internal(format!("closure did not stabilise to a TRO: {e}")));
        }
        space = next;
    }
    Err(Error::Internal(format!(
        "ternary closure exceeded {CLOSURE_CAP} rounds"
    )))
}

/// `C = <T T*>` (left) and `D = <T* T>` (right).
#[derive(Debug, Clone)]
pub struct LinkingBlocks {
    pub left: SubspaceBasis,
    pub right: SubspaceBasis,
}

fn compute_linking_blocks(t: &Tro) -> Result<LinkingBlocks> {
    let (m, n) = (t.dim_k(), t.dim_h());
    let tol = t.tol();
    let basis = t.basis();
    let left = SubspaceBasis::span_owned(
        m,
        m,
        basis.iter().flat_map(|a| basis.iter().map(move |b| a * &b.adjoint())),
        tol,
    );
    let right = SubspaceBasis::span_owned(
        n,
        n,
        basis.iter().flat_map(|a| {
            let at = a.adjoint();
            basis.iter().map(move |b| &at * b)
        }),
        tol,
    );
    for (name, s) in [("<TT*>", &left), ("<T*T>", &right)] {
        let r = s.star_algebra_residual();
        if r > tol.residual {
            return Err(Error::Internal(format!(
                "{name} is not closed under product and adjoint (residual {r:.3e})"
            )));
        }
    }
    Ok(LinkingBlocks { left, right })
}

pub fn linking_blocks(t: &Tro) -> Result<LinkingBlocks> {
    t.linking_blocks().cloned()
}

/// Position of a block in `B(K ⊕ H)`; K indices come first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    B11,
    B12,
    B21,
    B22,
}

/// Index ranges of the four blocks: rows/cols `0..k` then `k..k+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub k: usize,
    pub h: usize,
}

impl BlockLayout {
    pub fn size(&self) -> usize {
        self.k + self.h
    }

    fn offsets(&self, pos: Block) -> (usize, usize, usize, usize) {
        let (k, h) = (self.k, self.h);
        match pos {
            Block::B11 => (0, 0, k, k),
            Block::B12 => (0, k, k, h),
            Block::B21 => (k, 0, h, k),
            Block::B22 => (k, k, h, h),
        }
    }

    pub fn block_shape(&self, pos: Block) -> (usize, usize) {
        let (_, _, r, c) = self.offsets(pos);
        (r, c)
    }

    pub fn embed(&self, pos: Block, m: &ComplexMatrix) -> ComplexMatrix {
        let (r0, c0, r, c) = self.offsets(pos);
        assert_eq!(m.shape(), (r, c), "block shape mismatch");
        let n = self.size();
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((r0, c0), (r, c)).copy_from(m.as_matrix());
        ComplexMatrix::from_raw(out)
    }

    pub fn block(&self, a: &ComplexMatrix, pos: Block) -> ComplexMatrix {
        let (r0, c0, r, c) = self.offsets(pos);
        ComplexMatrix::from_raw(a.as_matrix().view((r0, c0), (r, c)).into_owned())
    }

    pub fn assemble(&self, b11: &ComplexMatrix, b12: &ComplexMatrix, b21: &ComplexMatrix, b22: &ComplexMatrix) -> ComplexMatrix {
        let n = self.size();
        let mut out = DMatrix::zeros(n, n);
        for (pos, m) in [(Block::B11, b11), (Block::B12, b12), (Block::B21, b21), (Block::B22, b22)] {
            let (r0, c0, r, c) = self.offsets(pos);
            out.view_mut((r0, c0), (r, c)).copy_from(m.as_matrix());
        }
        ComplexMatrix::from_raw(out)
    }
}

/// `A_T = [[<TT*>, T], [T*, <T*T>]] ⊆ B(K ⊕ H)`.
#[derive(Debug, Clone)]
pub struct LinkingAlgebra {
    pub layout: BlockLayout,
    pub space: SubspaceBasis,
}

pub fn linking_algebra(t: &Tro) -> Result<LinkingAlgebra> {
    let blocks = t.linking_blocks()?;
    let layout = BlockLayout {
        k: t.dim_k(),
        h: t.dim_h(),
    };
    let mut basis = Vec::with_capacity(blocks.left.dim() + 2 * t.dim() + blocks.right.dim());
    basis.extend(blocks.left.basis().iter().map(|c| layout.embed(Block::B11, c)));
    basis.extend(t.basis().iter().map(|x| layout.embed(Block::B12, x)));
    basis.extend(t.basis().iter().map(|x| layout.embed(Block::B21, &x.adjoint())));
    basis.extend(blocks.right.basis().iter().map(|d| layout.embed(Block::B22, d)));
    let n = layout.size();
    let space = SubspaceBasis::from_orthonormal(n, n, basis, t.tol())
        .map_err(|e| Error::Internal(format!("linking algebra basis: {e}")))?;
    let r = space.star_algebra_residual();
    if r > t.tol().residual {
        return Err(Error::Internal(format!(
            "linking algebra is not closed under product and adjoint (residual {r:.3e})"
        )));
    }
    Ok(LinkingAlgebra { layout, space })
}

/// `T` restricted to its essential subspaces `H₀ = <T* K>` and `K₀ = <T H>`.
#[derive(Debug, Clone)]
pub struct Compression {
    pub compressed: Tro,
    /// Isometry `K₀ → K`, shape `dim_k × dim K₀`.
    pub left_isometry: ComplexMatrix,
    /// Isometry `H₀ → H`, shape `dim_h × dim H₀`.
    pub right_isometry: ComplexMatrix,
    pub was_nondegenerate: bool,
}

impl Compression {
    /// `V_K* a V_H`.
    pub fn compress(&self, a: &ComplexMatrix) -> ComplexMatrix {
        &(&self.left_isometry.adjoint() * a) * &self.right_isometry
    }

    /// `V_K* c V_K` for `c` acting on K.
    pub fn compress_left(&self, c: &ComplexMatrix) -> ComplexMatrix {
        &(&self.left_isometry.adjoint() * c) * &self.left_isometry
    }

    /// `V_H* d V_H` for `d` acting on H.
    pub fn compress_right(&self, d: &ComplexMatrix) -> ComplexMatrix {
        &(&self.right_isometry.adjoint() * d) * &self.right_isometry
    }

    /// `V_K a V_H*`, the inverse of [`Compression::compress`] on T.
    pub fn expand(&self, a: &ComplexMatrix) -> ComplexMatrix {
        &(&self.left_isometry * a) * &self.right_isometry.adjoint()
    }

    /// `V_K c V_K*`, the inverse of [`Compression::compress_left`] on `<TT*>`.
    pub fn expand_left(&self, c: &ComplexMatrix) -> ComplexMatrix {
        &(&self.left_isometry * c) * &self.left_isometry.adjoint()
    }

    /// `V_H d V_H*`, the inverse of [`Compression::compress_right`] on `<T*T>`.
    pub fn expand_right(&self, d: &ComplexMatrix) -> ComplexMatrix {
        &(&self.right_isometry * d) * &self.right_isometry.adjoint()
    }

    pub fn compress_space(&self, s: &SubspaceBasis) -> SubspaceBasis {
        let (k0, h0) = (self.left_isometry.cols(), self.right_isometry.cols());
        SubspaceBasis::span_owned(k0, h0, s.basis().iter().map(|b| self.compress(b)), s.tol())
    }
}

/// Orthonormal basis (as a `dim × r` isometry) of the span of all columns.
pub(crate) fn column_space<'a>(dim: usize, mats: impl Iterator<Item = &'a DMatrix<C64>>, rank_cut: f64) -> DMatrix<C64> {
    let mut acc = SpanAccumulator::new(dim);
    for m in mats {
        for col in m.column_iter() {
            acc.push(col.into_owned());
        }
    }
    acc.finish(rank_cut)
}

pub fn essential_compression(t: &Tro) -> Result<Compression> {
    if t.dim() == 0 {
        return Err(Error::Degenerate("the zero TRO has no essential subspace".into()));
    }
    let tol = t.tol();
    let vk = column_space(t.dim_k(), t.basis().iter().map(|b| b.as_matrix()), tol.rank_cut);
    let adjoints: Vec<DMatrix<C64>> = t.basis().iter().map(|b| b.as_matrix().adjoint()).collect();
    let vh = column_space(t.dim_h(), adjoints.iter(), tol.rank_cut);
    let was_nondegenerate = vk.ncols() == t.dim_k() && vh.ncols() == t.dim_h();
    let left_isometry = ComplexMatrix::from_raw(vk);
    let right_isometry = ComplexMatrix::from_raw(vh);
    let partial = Compression {
        compressed: Tro::new_unchecked(SubspaceBasis::zero(1, 1, tol)),
        left_isometry,
        right_isometry,
        was_nondegenerate,
    };
    let basis: Vec<ComplexMatrix> = t.basis().iter().map(|b| partial.compress(b)).collect();
    let (k0, h0) = (partial.left_isometry.cols(), partial.right_isometry.cols());
    let space = SubspaceBasis::from_orthonormal(k0, h0, basis, tol)
        .map_err(|e| Error::Internal(format!("compressed basis: {e}")))?;
    let compressed = Tro::new(space).map_err(|e| Error::Internal(format!("compressed TRO: {e}")))?;
    Ok(Compression {
        compressed,
        ..partial
    })
}

fn span_products<'a>(
    rows: usize,
    cols: usize,
    left: &'a [ComplexMatrix],
    right: &'a [ComplexMatrix],
    tol: ToleranceProfile,
) -> SubspaceBasis {
    SubspaceBasis::span_owned(
        rows,
        cols,
        left.iter().flat_map(|a| right.iter().map(move |b| a * b)),
        tol,
    )
}

fn adjoints(list: &[ComplexMatrix]) -> Vec<ComplexMatrix> {
    list.iter().map(ComplexMatrix::adjoint).collect()
}

pub const NONDEG_1: &str = "nondeg.1 <XT*T>=T";
pub const NONDEG_2: &str = "nondeg.2 <TT*X>=T";
pub const NONDEG_3: &str = "nondeg.3 <XX*T>=T";
pub const NONDEG_4: &str = "nondeg.4 <TX*X>=T";
pub const NONDEG_5: &str = "nondeg.5 <XT*>=<TT*>,<T*X>=<T*T>";

#[derive(Debug, Clone)]
pub struct SubTroReport {
    pub checks: Vec<CheckRecord>,
    /// Checks (1) and (2) both pass.
    pub nondegenerate: bool,
}

fn check_pair(x: &Tro, t: &Tro) -> Result<()> {
    if x.space().ambient_shape() != t.space().ambient_shape() {
        return Err(invalid(format!(
            "X lives in {:?} matrices, T in {:?}",
            x.space().ambient_shape(),
            t.space().ambient_shape()
        )));
    }
    let r = t.space().containment_residual(x.space())?;
    if r > t.tol().residual {
        return Err(invalid(format!(
            "X is not a subspace of T (residual {r:.3e})"
        )));
    }
    Ok(())
}

/// `<T X*>` and `<X* T>`, the spans on which the corner formulas are defined.
pub(crate) fn mixed_spans(x: &Tro, t: &Tro) -> (SubspaceBasis, SubspaceBasis) {
    let (m, n) = (t.dim_k(), t.dim_h());
    let tol = t.tol();
    let xs = adjoints(x.basis());
    (
        span_products(m, m, t.basis(), &xs, tol),
        span_products(n, n, &xs, t.basis(), tol),
    )
}

/// The two defining identities of a nondegenerate sub-TRO and the derived ones.
pub fn subtro_nondegeneracy(x: &Tro, t: &Tro) -> Result<SubTroReport> {
    check_pair(x, t)?;
    let (m, n) = (t.dim_k(), t.dim_h());
    let tol = t.tol();
    let tb = t.linking_blocks()?;
    let xb = x.linking_blocks()?;
    let bound = tol.residual;

    let s1 = span_products(m, n, x.basis(), tb.right.basis(), tol);
    let s2 = span_products(m, n, tb.left.basis(), x.basis(), tol);
    let s3 = span_products(m, n, xb.left.basis(), t.basis(), tol);
    let s4 = span_products(m, n, t.basis(), xb.right.basis(), tol);
    let xt = span_products(m, m, x.basis(), &adjoints(t.basis()), tol);
    let tx = span_products(n, n, &adjoints(t.basis()), x.basis(), tol);

    let r1 = span_distance(&s1, t.space())?;
    let r2 = span_distance(&s2, t.space())?;
    let r3 = span_distance(&s3, t.space())?;
    let r4 = span_distance(&s4, t.space())?;
    let r5 = span_distance(&xt, &tb.left)?.max(span_distance(&tx, &tb.right)?);

    let dims = |s: &SubspaceBasis| format!("dim {} vs dim T {}", s.dim(), t.dim());
    let checks = vec![
        CheckRecord::new(NONDEG_1, r1 <= bound, r1, dims(&s1)),
        CheckRecord::new(NONDEG_2, r2 <= bound, r2, dims(&s2)),
        CheckRecord::new(NONDEG_3, r3 <= bound, r3, dims(&s3)).informational(),
        CheckRecord::new(NONDEG_4, r4 <= bound, r4, dims(&s4)).informational(),
        CheckRecord::new(
            NONDEG_5,
            r5 <= bound,
            r5,
            format!(
                "dim <XT*> {} vs <TT*> {}; dim <T*X> {} vs <T*T> {}",
                xt.dim(),
                tb.left.dim(),
                tx.dim(),
                tb.right.dim()
            ),
        )
        .informational(),
    ];
    Ok(SubTroReport {
        nondegenerate: r1 <= bound && r2 <= bound,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkingNondegeneracy {
    /// Distance between `span(A_X · A_T)` and `A_T`.
    pub left_residual: f64,
    /// Distance between `span(A_T · A_X)` and `A_T`.
    pub right_residual: f64,
    pub nondegenerate: bool,
}

/// Two-sided density of `A_X` in `A_T`, computed from basis products in `B(K ⊕ H)`.
pub fn linking_subalgebra_nondegenerate(x: &Tro, t: &Tro) -> Result<LinkingNondegeneracy> {
    check_pair(x, t)?;
    let at = linking_algebra(t)?;
    let ax = linking_algebra(x)?;
    let n = at.layout.size();
    let tol = t.tol();
    let left = span_products(n, n, ax.space.basis(), at.space.basis(), tol);
    let right = span_products(n, n, at.space.basis(), ax.space.basis(), tol);
    let left_residual = span_distance(&left, &at.space)?;
    let right_residual = span_distance(&right, &at.space)?;
    Ok(LinkingNondegeneracy {
        left_residual,
        right_residual,
        nondegenerate: left_residual <= tol.residual && right_residual <= tol.residual,
    })
}

#[derive(Debug, Clone)]
pub struct ModuleNormCheck {
    pub operator_norm: f64,
    /// Best `‖c t‖` found over `t ∈ T` with `‖t‖ = 1`.
    pub module_sup_lower_bound: f64,
    pub gap: f64,
    /// The maximizing element of T (operator norm one, or zero).
    pub witness: ComplexMatrix,
}

const ASCENT_STEPS: usize = 200;

/// Compares `‖c‖` with `sup {‖c t‖ : t ∈ T, ‖t‖ ≤ 1}` for `c ∈ <TT*>`.
///
/// The supremum is searched on the essential compression of T by random
/// restarts followed by an alternating ascent: given the top singular pair
/// `(u, v)` of `c t`, the next iterate is the polar part of the projection of
/// `c* u v*` onto T, which stays in T because T is a TRO.
pub fn module_norm_check(c: &ComplexMatrix, t: &Tro, restarts: usize, seed: u64) -> Result<ModuleNormCheck> {
    let blocks = t.linking_blocks()?;
    let mem = blocks.left.membership(c)?;
    if !mem.is_member {
        return Err(Error::NotInSpan {
            residual: mem.residual,
        });
    }
    let norm = c.operator_norm();
    let zero = ComplexMatrix::zeros(t.dim_k(), t.dim_h());
    if t.dim() == 0 || norm == 0.0 {
        return Ok(ModuleNormCheck {
            operator_norm: norm,
            module_sup_lower_bound: 0.0,
            gap: norm,
            witness: zero,
        });
    }
    let comp = essential_compression(t)?;
    let cc = comp.compress_left(c).into_matrix();
    let cc_adj = cc.adjoint();
    let space = comp.compressed.space();
    let rank_cut = t.tol().rank_cut;
    let mut rng = sample::rng_from_seed(seed);

    let normalize = |m: ComplexMatrix| -> Option<ComplexMatrix> {
        let s = m.operator_norm();
        (s > 0.0).then(|| m.scale(C64::new(1.0 / s, 0.0)))
    };
    let value = |m: &ComplexMatrix| crate::mats::spectral_norm(&(&cc * m.as_matrix()));

    let mut best = 0.0;
    let mut best_t: Option<ComplexMatrix> = None;
    let target = norm * (1.0 - 1e-14);
    for _ in 0..restarts.max(1) {
        let Some(mut cur) = normalize(space.random_element(&mut rng)) else {
            continue;
        };
        let mut val = value(&cur);
        for _ in 0..ASCENT_STEPS {
            let (_, u, v) = top_singular(&(&cc * cur.as_matrix()));
            let w = ComplexMatrix::from_raw(&cc_adj * u * v.adjoint());
            let proj = space.project(&w);
            let polar = ComplexMatrix::from_raw(polar_part(proj.as_matrix(), rank_cut));
            let Some(cand) = normalize(space.project(&polar)) else {
                break;
            };
            let cval = value(&cand);
            if cval <= val + 1e-15 * val.max(1.0) {
                break;
            }
            cur = cand;
            val = cval;
        }
        if val > best {
            best = val;
            best_t = Some(cur);
        }
        if best >= target {
            break;
        }
    }
    Ok(ModuleNormCheck {
        operator_norm: norm,
        module_sup_lower_bound: best,
        gap: norm - best,
        witness: best_t.map_or(zero, |w| comp.expand(&w)),
    })
}
