//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the summary is always printed.

use std::path::Path;
use std::process::Command as Proc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use tro_core::expectation::{
    apply_corner_formula, assemble_expectation, check_tro_expectation, extract_from_expectation, verify_expectation,
    welldefined_check, BlockExpectation, Side, TroMap, VerifyOptions, CONTRACTIVE, IDEMPOTENT, PDAGP, YOUNGSON_1,
    YOUNGSON_2, YOUNGSON_3,
};
use tro_core::gen::{self, DegenerateKind, Instance};
use tro_core::mats::{ComplexMatrix, SubspaceBasis, ToleranceProfile, C64};
use tro_core::report::{self, CheckRecord};
use tro_core::sample::{gaussian_matrix, haar_unitary, rng_from_seed};
use tro_core::tro::{
    linking_algebra, linking_subalgebra_nondegenerate, module_norm_check, subtro_nondegeneracy, Block, Tro,
};
use tro_core::wstar::{finite_dim_wstar_check, WSTAR_II_LEFT, WSTAR_II_RIGHT, WSTAR_III};

const C1_MIN_INSTANCES: usize = 200;
const C1_RESIDUAL: f64 = 1e-8;
const C1_CB_SLACK: f64 = 1e-7;
const C1_AMP_LEVEL: usize = 4;
const C2_MASK_DEV: f64 = 1e-12;
const C2_CORNER_DEV: f64 = 1e-10;
const C3_MIN_INSTANCES: usize = 100;
const C3_DISCREPANCY: f64 = 1e-9;
const C4_EXTRACT: f64 = 1e-10;
const C4_EPS: f64 = 1e-3;
const C4_MIN_VIOLATION: f64 = 1e-4;
const C5_MIN_PAIRS: usize = 100;
const C5_GAP: f64 = 1e-6;
const C5_RESTARTS: usize = 200;
const C5_MAX_DIM: usize = 5;
const C6_MIN_INSTANCES: usize = 200;
const C6_MIN_DEGENERATE: usize = 20;
const C7_MIN_INSTANCES: usize = 100;
const C7_RESIDUAL: f64 = 1e-9;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Generated nondegenerate instances: full corners, group averages, random.
fn nondegenerate_pool() -> Vec<Instance> {
    let mut pool = Vec::new();
    for s in 0..40u64 {
        let (m, n) = (1 + (s % 3) as usize, 1 + (s / 3 % 3) as usize);
        pool.push(gen::corner_instance(m, n, m, n, s).expect("corner instance"));
    }
    for s in 0..90u64 {
        let (m, n) = (1 + (s % 4) as usize, 1 + (s / 4 % 4) as usize);
        let order = 1 + (s / 16 % 4) as usize;
        pool.push(gen::group_average_instance(m, n, order, 1000 + s).expect("group instance"));
    }
    for s in 0..90u64 {
        pool.push(gen::random_instance(2000 + s).expect("random instance"));
    }
    assert!(pool.iter().all(|i| i.nondegenerate), "generated pool contains a degenerate instance");
    pool
}

fn dims_ok(i: &Instance) -> bool {
    i.t.dim_k() <= 6 && i.t.dim_h() <= 6
}

fn opts(seed: u64) -> VerifyOptions {
    VerifyOptions {
        samples: 16,
        amplification_level: C1_AMP_LEVEL,
        seed,
    }
}

fn criterion_1(pool: &[Instance]) -> Outcome {
    let mut worst_res: f64 = 0.0;
    let mut worst_cb: f64 = 0.0;
    let mut failures = Vec::new();
    for (k, inst) in pool.iter().enumerate() {
        let x = inst.x_tro().expect("x is a TRO");
        let res = assemble_expectation(&inst.p, &x, &inst.t)
            .and_then(|e| verify_expectation(&e, &x, &inst.t, opts(k as u64)));
        match res {
            Ok(rep) => {
                let cb = rep.amplified_norms.iter().copied().fold(0.0, f64::max);
                let r = rep.worst_residual();
                worst_res = worst_res.max(r);
                worst_cb = worst_cb.max(cb);
                if r > C1_RESIDUAL || cb > 1.0 + C1_CB_SLACK || rep.amplified_norms.len() < C1_AMP_LEVEL {
                    failures.push(format!("seed {} ({:?})", inst.seed, inst.provenance));
                }
            }
            Err(e) => failures.push(format!("seed {}: {e}", inst.seed)),
        }
    }
    let all_small = pool.iter().all(dims_ok);
    outcome(
        pool.len() >= C1_MIN_INSTANCES && failures.is_empty() && all_small,
        format!(
            "{} instances, worst residual {worst_res:.2e}, worst cb norm {worst_cb:.12} at level {C1_AMP_LEVEL}, {} failures {:?}",
            pool.len(),
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn unit(k: usize, h: usize, i: usize, j: usize) -> ComplexMatrix {
    ComplexMatrix::unit(k, h, i, j)
}

fn diag_part_instance() -> (Tro, Tro, TroMap) {
    let tol = ToleranceProfile::default();
    let t = Tro::new(SubspaceBasis::full(2, 2, tol)).unwrap();
    let x = Tro::from_spanning(&[unit(2, 2, 0, 0), unit(2, 2, 1, 1)], tol).unwrap();
    let p = TroMap::from_fn(t.space().clone(), x.space().clone(), |a| {
        let mut d = ComplexMatrix::zeros(2, 2);
        d = &d + &unit(2, 2, 0, 0).scale(a.get(0, 0));
        &d + &unit(2, 2, 1, 1).scale(a.get(1, 1))
    })
    .unwrap();
    (t, x, p)
}

/// Compression by `diag(e, f)` as a block map `A_T → A_X`.
fn compression_expectation(e: &ComplexMatrix, f: &ComplexMatrix, x: &Tro, t: &Tro) -> BlockExpectation {
    let at = linking_algebra(t).unwrap();
    let (tl, xl) = (t.linking_blocks().unwrap(), x.linking_blocks().unwrap());
    let (ta, xa) = (t.adjoint(), x.adjoint());
    let e11 = TroMap::from_fn(tl.left.clone(), xl.left.clone(), |c| &(e * c) * e).unwrap();
    let e12 = TroMap::from_fn(t.space().clone(), x.space().clone(), |a| &(e * a) * f).unwrap();
    let e21 = TroMap::from_fn(ta.space().clone(), xa.space().clone(), |s| &(f * s) * e).unwrap();
    let e22 = TroMap::from_fn(tl.right.clone(), xl.right.clone(), |d| &(f * d) * f).unwrap();
    BlockExpectation::new(at.layout, e11, e12, e21, e22).unwrap()
}

fn projection(n: usize, rank: usize, seed: u64) -> ComplexMatrix {
    let w = haar_unitary(n, &mut rng_from_seed(seed));
    let d = ComplexMatrix::new(DMatrix::from_fn(n, n, |i, j| {
        C64::new(if i == j && i < rank { 1.0 } else { 0.0 }, 0.0)
    }))
    .unwrap();
    &(&w * &d) * &w.adjoint()
}

fn criterion_2() -> Outcome {
    // oracle: on M_4 = A_{M_2}, E keeps E_ij iff i = j mod 2
    let (t, x, p) = diag_part_instance();
    let e = assemble_expectation(&p, &x, &t).unwrap();
    let at = linking_algebra(&t).unwrap();
    let whole = e.as_map_on(&at).unwrap();
    let mut mask_dev: f64 = 0.0;
    let mut kept = 0;
    for i in 0..4 {
        for j in 0..4 {
            let eij = unit(4, 4, i, j);
            let keep = (i + j) % 2 == 0;
            kept += usize::from(keep);
            let want = if keep { eij.clone() } else { ComplexMatrix::zeros(4, 4) };
            mask_dev = mask_dev.max(whole.apply(&eij).max_abs_diff(&want));
        }
    }

    // corners: full projections go through assembly; proper ones compare the
    // corner formulas on their natural domains and verify the compression
    let mut corner_dev: f64 = 0.0;
    let mut corner_count = 0;
    let mut axiom_fail = 0;
    for s in 0..24u64 {
        let (m, n) = (2 + (s % 3) as usize, 2 + (s / 3 % 3) as usize);
        let (re, rf) = if s % 4 == 0 { (m, n) } else { (1 + (s as usize % m), 1 + (s as usize / 2 % n)) };
        let e = projection(m, re, 3 * s);
        let f = projection(n, rf, 3 * s + 1);
        let inst = gen::corner_instance_from_projections(&e, &f, s).unwrap();
        let x = inst.x_tro().unwrap();
        let comp = compression_expectation(&e, &f, &x, &inst.t);
        if inst.nondegenerate {
            let assembled = assemble_expectation(&inst.p, &x, &inst.t).unwrap();
            corner_dev = corner_dev.max(assembled.distance(&comp).unwrap());
        } else {
            for a in inst.t.basis() {
                for xb in x.basis() {
                    let left = apply_corner_formula(&inst.p, Side::Left, &[(a.clone(), xb.clone())]);
                    let want = &(&e * &(a * &xb.adjoint())) * &e;
                    corner_dev = corner_dev.max(left.max_abs_diff(&want));
                    let right = apply_corner_formula(&inst.p, Side::Right, &[(a.clone(), xb.clone())]);
                    let want = &(&f * &(&xb.adjoint() * a)) * &f;
                    corner_dev = corner_dev.max(right.max_abs_diff(&want));
                }
            }
        }
        let rep = verify_expectation(&comp, &x, &inst.t, opts(s)).unwrap();
        if !rep.pass {
            axiom_fail += 1;
        }
        corner_count += 1;
    }
    outcome(
        mask_dev <= C2_MASK_DEV && kept == 8 && corner_dev <= C2_CORNER_DEV && axiom_fail == 0,
        format!(
            "mask deviation {mask_dev:.2e} ({kept} positions), {corner_count} corner instances deviation {corner_dev:.2e}, compression axiom failures {axiom_fail}"
        ),
    )
}

fn criterion_3(pool: &[Instance]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for inst in pool.iter().take(C3_MIN_INSTANCES + 20) {
        let x = inst.x_tro().unwrap();
        match welldefined_check(&inst.p, &x, &inst.t, 2, inst.seed ^ 0x3) {
            Ok(d) => {
                worst = worst.max(d);
                n += 1;
            }
            Err(_) => worst = f64::INFINITY,
        }
    }
    outcome(
        n >= C3_MIN_INSTANCES && worst <= C3_DISCREPANCY,
        format!("{n} instances, 2 decompositions each, worst discrepancy {worst:.2e}"),
    )
}

fn random_delta(rows: usize, cols: usize, seed: u64) -> DMatrix<C64> {
    let g = gaussian_matrix(rows, cols, &mut rng_from_seed(seed)).into_matrix();
    let norm = g.norm();
    if norm == 0.0 {
        return g;
    }
    g * C64::new(C4_EPS / norm, 0.0)
}

fn criterion_4(pool: &[Instance]) -> Outcome {
    let mut worst_extract: f64 = 0.0;
    let mut min_violation = f64::INFINITY;
    let mut perturbations = 0;
    for (k, inst) in pool.iter().enumerate().step_by(4) {
        let x = inst.x_tro().unwrap();
        let e = assemble_expectation(&inst.p, &x, &inst.t).unwrap();
        let back = extract_from_expectation(&e, &x, &inst.t, opts(k as u64)).unwrap();
        worst_extract = worst_extract.max(back.distance(&inst.p).unwrap());
        let positions = [Block::B11, Block::B21, Block::B22];
        for (j, pos) in positions.iter().enumerate() {
            let b = e.block(*pos);
            let (r, c) = b.coeffs().shape();
            if r * c == 0 {
                continue;
            }
            let bumped = b.perturbed(&random_delta(r, c, inst.seed * 7 + j as u64)).unwrap();
            let e2 = e.with_block(*pos, bumped).unwrap();
            // the algebraic axioms carry the violation; a level-1 probe suffices
            let probe = VerifyOptions {
                samples: 8,
                amplification_level: 1,
                seed: k as u64,
            };
            let rep = verify_expectation(&e2, &x, &inst.t, probe).unwrap();
            min_violation = min_violation.min(rep.worst_residual());
            perturbations += 1;
        }
    }
    outcome(
        worst_extract <= C4_EXTRACT && min_violation >= C4_MIN_VIOLATION && perturbations > 0,
        format!(
            "extract deviation {worst_extract:.2e}; {perturbations} perturbations of size {C4_EPS:.0e}, smallest axiom violation {min_violation:.2e}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut pairs = 0;
    for s in 0..C5_MIN_PAIRS as u64 {
        let m = 1 + (s % C5_MAX_DIM as u64) as usize;
        let n = 1 + (s / 5 % C5_MAX_DIM as u64) as usize;
        let gens = 1 + (s % 3) as usize;
        let t = gen::random_tro(m, n, gens, 5000 + s).unwrap();
        let mut rng = rng_from_seed(6000 + s);
        let left = rng.random_bool(0.5);
        let (tt, algebra) = if left {
            (t.clone(), t.linking_blocks().unwrap().left.clone())
        } else {
            // right module: ||d|| = sup ||t d||, i.e. the left identity for T*
            let ta = t.adjoint();
            let d = ta.linking_blocks().unwrap().left.clone();
            (ta, d)
        };
        let c = algebra.random_element(&mut rng);
        let chk = module_norm_check(&c, &tt, C5_RESTARTS, 7000 + s).unwrap();
        worst = worst.max(chk.gap.abs());
        pairs += 1;
    }
    outcome(
        pairs >= C5_MIN_PAIRS && worst <= C5_GAP,
        format!("{pairs} pairs, dims <= {C5_MAX_DIM}, {C5_RESTARTS} restarts, worst gap {worst:.2e}"),
    )
}

fn criterion_6(pool: &[Instance]) -> Outcome {
    let mut instances: Vec<(Tro, Tro)> = pool.iter().map(|i| (i.x_tro().unwrap(), i.t.clone())).collect();
    let mut engineered = 0;
    for s in 0..16u64 {
        let (m, n) = (2 + (s % 3) as usize, 2 + (s / 3 % 2) as usize);
        let inst = gen::corner_instance(m, n, 1 + (s as usize % (m - 1)), n, 8000 + s).unwrap();
        engineered += usize::from(!inst.nondegenerate);
        instances.push((inst.x_tro().unwrap(), inst.t.clone()));
    }
    for kind in [DegenerateKind::MissingNondegeneracy, DegenerateKind::NoncontractiveP] {
        for s in 0..8u64 {
            let inst = gen::degenerate_instance(kind, s).unwrap();
            engineered += usize::from(!inst.nondegenerate);
            instances.push((inst.x_tro().unwrap(), inst.t.clone()));
        }
    }
    let mut disagreements = 0;
    let mut degenerate = 0;
    for (x, t) in &instances {
        let a = subtro_nondegeneracy(x, t).unwrap().nondegenerate;
        let b = linking_subalgebra_nondegenerate(x, t).unwrap().nondegenerate;
        disagreements += usize::from(a != b);
        degenerate += usize::from(!a);
    }
    outcome(
        instances.len() >= C6_MIN_INSTANCES && degenerate >= C6_MIN_DEGENERATE && disagreements == 0,
        format!(
            "{} instances, {degenerate} degenerate ({engineered} engineered), {disagreements} disagreements",
            instances.len()
        ),
    )
}

fn criterion_7(pool: &[Instance]) -> Outcome {
    let names = [YOUNGSON_1, YOUNGSON_2, YOUNGSON_3, PDAGP];
    let mut worst: f64 = 0.0;
    let mut evaluated = 0;
    for inst in pool.iter().skip(40).take(C7_MIN_INSTANCES + 10) {
        let x = inst.x_tro().unwrap();
        let rep = check_tro_expectation(&inst.p, &x, &inst.t, 1).unwrap();
        let mut ok = true;
        for name in names {
            match report::find(&rep.checks, name) {
                Some(c) if c.mandatory => worst = worst.max(c.residual),
                _ => ok = false,
            }
        }
        if ok {
            evaluated += 1;
        } else {
            worst = f64::INFINITY;
        }
    }

    // transpose on M_2: not idempotent, norm 1 at level 1, norm 2 at level 2
    let tol = ToleranceProfile::default();
    let t = Tro::new(SubspaceBasis::full(2, 2, tol)).unwrap();
    let tr = TroMap::from_fn(t.space().clone(), t.space().clone(), |a| ComplexMatrix::new(a.as_matrix().transpose()).unwrap()).unwrap();
    let rep = check_tro_expectation(&tr, &t, &t, 2).unwrap();
    let failed = |n: &str| report::find(&rep.checks, n).is_some_and(|c: &CheckRecord| !c.pass);
    let lvl1 = rep.amplified_norms[0];
    let lvl2 = rep.amplified_norms[1];
    let flagged = !rep.pass
        && failed(IDEMPOTENT)
        && failed(YOUNGSON_1)
        && failed(CONTRACTIVE)
        && (lvl1 - 1.0).abs() < 1e-9
        && (lvl2 - 2.0).abs() < 1e-6;
    outcome(
        evaluated >= C7_MIN_INSTANCES && worst <= C7_RESIDUAL && flagged,
        format!(
            "{evaluated} projections, worst Youngson/PdagP residual {worst:.2e}; transpose flagged: {flagged} (level-1 norm {lvl1:.9}, level-2 norm {lvl2:.9})"
        ),
    )
}

fn criterion_8(pool: &[Instance]) -> Outcome {
    let mut iii_checked = 0;
    let mut ii_checked = 0;
    let mut failures = 0;
    for inst in pool.iter().step_by(2) {
        let x = inst.x_tro().unwrap();
        let rep = finite_dim_wstar_check(&x, &inst.t, Some(&inst.p)).unwrap();
        let pass = |n: &str| report::find(&rep.checks, n).is_some_and(|c| c.pass);
        if rep.nondegenerately_represented {
            iii_checked += 1;
            failures += usize::from(!pass(WSTAR_III));
        }
        if rep.nondegenerate {
            ii_checked += 1;
            failures += usize::from(!(pass(WSTAR_II_LEFT) && pass(WSTAR_II_RIGHT)));
        }
    }
    let tol = ToleranceProfile::default();
    let e11 = Tro::from_spanning(&[unit(2, 2, 0, 0)], tol).unwrap();
    let rep = finite_dim_wstar_check(&e11, &e11, None).unwrap();
    let e11_fails = report::find(&rep.checks, WSTAR_III).is_some_and(|c| !c.pass);
    outcome(
        iii_checked > 0 && ii_checked > 0 && failures == 0 && e11_fails,
        format!(
            "A_T''=A_T on {iii_checked} represented T, <TX*>=<TT*>=(TT*)'' on {ii_checked} pairs, {failures} failures; uncompressed span{{E11}} fails: {e11_fails}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_tro");
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for kind in DegenerateKind::ALL {
        for seed in [0u64, 11] {
            let file = dir.path().join(format!("{kind}-{seed}.json"));
            let report = dir.path().join(format!("{kind}-{seed}.report.json"));
            let st = Proc::new(bin)
                .args(["gen", "--family", "degenerate", "--kind", kind.as_str(), "--seed", &seed.to_string(), "--out"])
                .arg(&file)
                .output()
                .unwrap();
            ok &= st.status.success();
            let run = Proc::new(bin).arg("extend").arg(&file).arg("--out").arg(&report).output().unwrap();
            let code = run.status.code();
            let first = first_failing(&report);
            let hit = code == Some(1) && first.as_deref() == Some(kind.gate());
            ok &= hit;
            if seed == 0 {
                lines.push(format!("{kind} -> exit {:?} at {:?}", code.unwrap_or(-1), first.unwrap_or_default()));
            }
        }
    }
    outcome(ok, lines.join("; "))
}

fn first_failing(report: &Path) -> Option<String> {
    let text = std::fs::read_to_string(report).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["checks"]
        .as_array()?
        .iter()
        .find(|c| c["mandatory"] == true && c["pass"] == false)
        .and_then(|c| c["name"].as_str().map(String::from))
}

fn main() {
    let start = Instant::now();
    let pool = nondegenerate_pool();
    let criteria: Vec<Criterion> = vec![
        ("expectation construction verifies", Box::new(|| criterion_1(&pool))),
        ("corner-map formula", Box::new(criterion_2)),
        ("well-definedness", Box::new(|| criterion_3(&pool))),
        ("uniqueness", Box::new(|| criterion_4(&pool))),
        ("module-norm identity", Box::new(criterion_5)),
        ("nondegeneracy equivalence", Box::new(|| criterion_6(&pool))),
        ("Youngson identities", Box::new(|| criterion_7(&pool))),
        ("von Neumann reduction", Box::new(|| criterion_8(&pool))),
        ("error paths", Box::new(criterion_9)),
    ];
    let mut all = true;
    for (k, (title, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = run();
        all &= o.pass;
        println!(
            "criterion {}: {} {title}: {} [{:.1}s]",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} in {:.1}s", if all { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
