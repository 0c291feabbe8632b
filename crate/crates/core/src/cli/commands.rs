//! Command pipelines. Each returns its check records in gate order and stops
//! at the first failing gate.

use std::fmt;
use std::str::FromStr;

use serde_json::{json, Map, Value};

use super::file::{raw, raw_dense, LoadedInstance};
use crate::error::{invalid, Error, Result};
use crate::expectation::{
    assemble_expectation, check_tro_expectation, extract_from_expectation, uniqueness_check, verify_expectation,
    welldefined_check, BlockExpectation, TroMap, VerifyOptions,
};
use crate::mats::SubspaceBasis;
use crate::report::{self, CheckRecord};
use crate::sample;
use crate::tro::{
    is_tro, linking_algebra, linking_subalgebra_nondegenerate, module_norm_check, subtro_nondegeneracy,
    ternary_closure, Tro,
};
use crate::wstar::finite_dim_wstar_check;

/// Commands that read an instance file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CheckTro,
    Closure,
    Linking,
    CheckSubtro,
    CheckProjection,
    Extend,
    Verify,
    Uniqueness,
    Wstar,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Self::CheckTro,
        Self::Closure,
        Self::Linking,
        Self::CheckSubtro,
        Self::CheckProjection,
        Self::Extend,
        Self::Verify,
        Self::Uniqueness,
        Self::Wstar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::CheckTro => "check-tro",
            Self::Closure => "closure",
            Self::Linking => "linking",
            Self::CheckSubtro => "check-subtro",
            Self::CheckProjection => "check-projection",
            Self::Extend => "extend",
            Self::Verify => "verify",
            Self::Uniqueness => "uniqueness",
            Self::Wstar => "wstar",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Settings {
    pub amp_level: usize,
    pub restarts: usize,
    pub samples: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            amp_level: 4,
            restarts: 200,
            samples: 16,
        }
    }
}

/// Result of one command: ordered checks plus command-specific data.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: String,
    pub checks: Vec<CheckRecord>,
    pub data: Map<String, Value>,
    /// Extra lines for the text report.
    pub notes: Vec<String>,
}

impl Outcome {
    fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            checks: Vec::new(),
            data: Map::new(),
            notes: Vec::new(),
        }
    }

    pub fn pass(&self) -> bool {
        report::all_pass(&self.checks)
    }

    pub fn first_failure(&self) -> Option<&CheckRecord> {
        report::first_failure(&self.checks)
    }

    /// Appends `c`; returns whether the pipeline may continue.
    fn gate(&mut self, c: CheckRecord) -> bool {
        let ok = c.pass || !c.mandatory;
        self.checks.push(c);
        ok
    }

    fn extend_gated(&mut self, checks: Vec<CheckRecord>) -> bool {
        let mut ok = true;
        for c in checks {
            ok &= self.gate(c);
        }
        ok
    }
}

pub const T_IS_TRO: &str = "t-is-tro";
pub const X_IS_TRO: &str = "x-is-tro";
pub const X_IN_T: &str = "x-in-t";
pub const ASSEMBLE: &str = "assemble";

fn tro_gate(name: &str, space: &SubspaceBasis) -> (CheckRecord, Option<Tro>) {
    let chk = is_tro(space);
    let rec = CheckRecord::bounded(name, chk.worst_residual, space.tol().residual)
        .with_details(format!("dim {}, worst relative residual of ab*c", space.dim()));
    let tro = if chk.ok { Tro::new(space.clone()).ok() } else { None };
    (rec, tro)
}

/// Runs the T, X and `X ⊆ T` gates.
fn pair_gates(out: &mut Outcome, inst: &LoadedInstance) -> Result<Option<(Tro, Tro)>> {
    let x_space = inst.require_x()?;
    let (rec, t) = tro_gate(T_IS_TRO, &inst.t_space);
    if !out.gate(rec) {
        return Ok(None);
    }
    let (rec, x) = tro_gate(X_IS_TRO, x_space);
    if !out.gate(rec) {
        return Ok(None);
    }
    let r = inst.t_space.containment_residual(x_space)?;
    if !out.gate(CheckRecord::bounded(X_IN_T, r, inst.tol.residual)) {
        return Ok(None);
    }
    Ok(t.zip(x))
}

fn failed(name: &str, err: &Error) -> CheckRecord {
    CheckRecord::new(name, false, f64::INFINITY, err.to_string())
}

pub fn run_command(cmd: Command, inst: &LoadedInstance, settings: Settings) -> Result<Outcome> {
    let mut out = Outcome::new(cmd.as_str());
    out.data.insert("dim_k".into(), json!(inst.t_space.ambient_rows()));
    out.data.insert("dim_h".into(), json!(inst.t_space.ambient_cols()));
    out.data.insert("dim_T".into(), json!(inst.t_space.dim()));
    if let Some(x) = &inst.x_space {
        out.data.insert("dim_X".into(), json!(x.dim()));
    }
    match cmd {
        Command::CheckTro => {
            let (rec, _) = tro_gate(T_IS_TRO, &inst.t_space);
            out.gate(rec);
        }
        Command::Closure => closure(&mut out, inst)?,
        Command::Linking => linking(&mut out, inst, settings)?,
        Command::CheckSubtro => check_subtro(&mut out, inst)?,
        Command::CheckProjection => check_projection(&mut out, inst, settings)?,
        Command::Extend => extend(&mut out, inst, settings)?,
        Command::Verify => verify(&mut out, inst, settings)?,
        Command::Uniqueness => uniqueness(&mut out, inst, settings)?,
        Command::Wstar => wstar(&mut out, inst)?,
    }
    Ok(out)
}

fn closure(out: &mut Outcome, inst: &LoadedInstance) -> Result<()> {
    let input = is_tro(&inst.t_space);
    out.checks.push(
        CheckRecord::bounded("input-is-tro", input.worst_residual, inst.tol.residual).informational(),
    );
    match ternary_closure(&inst.t_space) {
        Ok(c) => {
            let chk = is_tro(c.space());
            out.gate(CheckRecord::bounded("closure-is-tro", chk.worst_residual, inst.tol.residual));
            let contains = c.space().containment_residual(&inst.t_space)?;
            out.gate(CheckRecord::bounded("closure-contains-input", contains, inst.tol.residual));
            out.data.insert("closure_dim".into(), json!(c.dim()));
            out.data.insert("closure_basis".into(), json!(c.basis().iter().map(raw).collect::<Vec<_>>()));
            out.notes.push(format!("closure: dim {} -> {}", inst.t_space.dim(), c.dim()));
        }
        Err(e) => {
            out.gate(failed("closure-is-tro", &e));
        }
    }
    Ok(())
}

fn linking(out: &mut Outcome, inst: &LoadedInstance, settings: Settings) -> Result<()> {
    let (rec, t) = tro_gate(T_IS_TRO, &inst.t_space);
    if !out.gate(rec) {
        return Ok(());
    }
    let t = t.expect("gate passed");
    let tol = inst.tol;
    let blocks = match t.linking_blocks() {
        Ok(b) => b.clone(),
        Err(e) => {
            out.gate(failed("linking.blocks", &e));
            return Ok(());
        }
    };
    out.gate(CheckRecord::bounded("linking.<TT*>-star-algebra", blocks.left.star_algebra_residual(), tol.residual));
    out.gate(CheckRecord::bounded("linking.<T*T>-star-algebra", blocks.right.star_algebra_residual(), tol.residual));
    match linking_algebra(&t) {
        Ok(at) => {
            out.gate(CheckRecord::bounded("linking.A_T-star-algebra", at.space.star_algebra_residual(), tol.residual));
            out.data.insert("dim_A_T".into(), json!(at.space.dim()));
        }
        Err(e) => {
            out.gate(failed("linking.A_T-star-algebra", &e));
        }
    }
    out.data.insert("dim_C".into(), json!(blocks.left.dim()));
    out.data.insert("dim_D".into(), json!(blocks.right.dim()));

    let mut rng = sample::rng_from_seed(inst.seed);
    let c = blocks.left.random_element(&mut rng);
    let d = blocks.right.random_element(&mut rng);
    let left = module_norm_check(&c, &t, settings.restarts, inst.seed)?;
    // ||d|| = sup ||t d|| = sup ||d* s|| over s in T*
    let right = module_norm_check(&d.adjoint(), &t.adjoint(), settings.restarts, inst.seed ^ 1)?;
    for (name, m) in [("module-norm.left ||c||=sup||ct||", left), ("module-norm.right ||d||=sup||td||", right)] {
        out.gate(
            CheckRecord::bounded(name, m.gap, MODULE_NORM_GAP)
                .with_details(format!("norm {:.12}, sup bound {:.12}", m.operator_norm, m.module_sup_lower_bound)),
        );
    }
    Ok(())
}

/// Allowed gap between `||c||` and the sampled module supremum.
pub const MODULE_NORM_GAP: f64 = 1e-6;

fn check_subtro(out: &mut Outcome, inst: &LoadedInstance) -> Result<()> {
    let Some((t, x)) = pair_gates(out, inst)? else {
        return Ok(());
    };
    let rep = subtro_nondegeneracy(&x, &t)?;
    out.extend_gated(rep.checks);
    let lin = linking_subalgebra_nondegenerate(&x, &t)?;
    out.checks.push(CheckRecord::new(
        "linking-subalgebra-nondegenerate",
        lin.nondegenerate == rep.nondegenerate,
        lin.left_residual.max(lin.right_residual),
        format!(
            "A_X nondegenerate in A_T: {}, span criterion: {}",
            lin.nondegenerate, rep.nondegenerate
        ),
    ));
    out.data.insert("nondegenerate".into(), json!(rep.nondegenerate));
    Ok(())
}

fn check_projection(out: &mut Outcome, inst: &LoadedInstance, settings: Settings) -> Result<()> {
    let p = inst.require_p()?;
    let Some((t, x)) = pair_gates(out, inst)? else {
        return Ok(());
    };
    let rep = check_tro_expectation(p, &x, &t, settings.amp_level)?;
    out.extend_gated(rep.checks);
    out.data.insert("amplified_norms".into(), json!(rep.amplified_norms));
    let sub = subtro_nondegeneracy(&x, &t)?;
    for c in sub.checks {
        out.checks.push(c.informational());
    }
    if sub.nondegenerate && rep.pass {
        let wd = welldefined_check(p, &x, &t, 8, inst.seed)?;
        out.checks.push(CheckRecord::bounded("corner-formula-well-defined", wd, inst.tol.residual));
    }
    Ok(())
}

fn mask_data(out: &mut Outcome, e: &BlockExpectation, t: &Tro) -> Result<()> {
    let [a, b, c, d] = e.ambient_blocks();
    out.data.insert(
        "E_blocks".into(),
        json!({"e11": raw_dense(&a), "e12": raw_dense(&b), "e21": raw_dense(&c), "e22": raw_dense(&d)}),
    );
    let at = linking_algebra(t)?;
    if let Some(mask) = e.entry_mask(&at) {
        let kept = mask.iter().flatten().filter(|v| **v == Some(1)).count();
        out.notes.push(format!(
            "E is an entrywise mask on M_{} ({kept} positions kept; . = outside A_T):",
            e.layout.size()
        ));
        for row in &mask {
            let line: Vec<String> = row
                .iter()
                .map(|v| v.map_or_else(|| ".".to_string(), |b| b.to_string()))
                .collect();
            out.notes.push(format!("  {}", line.join(" ")));
        }
        out.data.insert("E_mask".into(), json!(mask));
        out.data.insert("E_mask_kept".into(), json!(kept));
    }
    Ok(())
}

fn verify_into(out: &mut Outcome, e: &BlockExpectation, x: &Tro, t: &Tro, inst: &LoadedInstance, settings: Settings) -> Result<bool> {
    let opts = VerifyOptions {
        samples: settings.samples,
        amplification_level: settings.amp_level,
        seed: inst.seed,
    };
    let rep = verify_expectation(e, x, t, opts)?;
    out.data.insert("E_amplified_norms".into(), json!(rep.amplified_norms));
    Ok(out.extend_gated(rep.checks))
}

fn extend(out: &mut Outcome, inst: &LoadedInstance, settings: Settings) -> Result<()> {
    let p = inst.require_p()?;
    let Some((t, x)) = pair_gates(out, inst)? else {
        return Ok(());
    };
    let sub = subtro_nondegeneracy(&x, &t)?;
    if !out.extend_gated(sub.checks) {
        return Ok(());
    }
    let rep = check_tro_expectation(p, &x, &t, settings.amp_level)?;
    out.data.insert("amplified_norms".into(), json!(rep.amplified_norms));
    if !out.extend_gated(rep.checks) {
        return Ok(());
    }
    let e = match assemble_expectation(p, &x, &t) {
        Ok(e) => e,
        Err(err) => {
            out.gate(failed(ASSEMBLE, &err));
            return Ok(());
        }
    };
    out.gate(CheckRecord::new(ASSEMBLE, true, 0.0, "E = [[PP', P], [P', P'P]]"));
    verify_into(out, &e, &x, &t, inst, settings)?;
    mask_data(out, &e, &t)
}

fn expectation_from_file(out: &mut Outcome, inst: &LoadedInstance, x: &Tro, t: &Tro) -> Option<BlockExpectation> {
    let blocks = inst.e_blocks.as_ref()?;
    match BlockExpectation::from_ambient_blocks(blocks, x, t) {
        Ok(e) => {
            out.gate(CheckRecord::new("E-blocks", true, 0.0, "each block maps its T-corner into the X-corner"));
            Some(e)
        }
        Err(err) => {
            out.gate(failed("E-blocks", &err));
            None
        }
    }
}

fn verify(out: &mut Outcome, inst: &LoadedInstance, settings: Settings) -> Result<()> {
    if inst.e_blocks.is_none() && inst.p.is_none() {
        return Err(invalid("verify needs E_blocks or P_coeffs"));
    }
    let Some((t, x)) = pair_gates(out, inst)? else {
        return Ok(());
    };
    let e = if inst.e_blocks.is_some() {
        match expectation_from_file(out, inst, &x, &t) {
            Some(e) => e,
            None => return Ok(()),
        }
    } else {
        match assemble_expectation(inst.require_p()?, &x, &t) {
            Ok(e) => {
                out.gate(CheckRecord::new(ASSEMBLE, true, 0.0, "E assembled from P"));
                e
            }
            Err(err) => {
                out.gate(failed(ASSEMBLE, &err));
                return Ok(());
            }
        }
    };
    if !verify_into(out, &e, &x, &t, inst, settings)? {
        return Ok(());
    }
    if let (Some(p), Some(_)) = (&inst.p, &inst.e_blocks) {
        let d = e.e12.distance(p)?;
        out.gate(CheckRecord::bounded("e12-equals-P", d, inst.tol.residual));
    }
    mask_data(out, &e, &t)
}

fn uniqueness(out: &mut Outcome, inst: &LoadedInstance, settings: Settings) -> Result<()> {
    let p = inst.require_p()?;
    if inst.e_blocks.is_none() {
        return Err(invalid("uniqueness needs E_blocks"));
    }
    let Some((t, x)) = pair_gates(out, inst)? else {
        return Ok(());
    };
    let Some(e) = expectation_from_file(out, inst, &x, &t) else {
        return Ok(());
    };
    let opts = VerifyOptions {
        samples: settings.samples,
        amplification_level: settings.amp_level,
        seed: inst.seed,
    };
    match uniqueness_check(&e, p, &x, &t, opts) {
        Ok(u) => {
            out.gate(CheckRecord::bounded("uniqueness.forcing E'11(tx*)=P(t)x*", u.forcing_residual, inst.tol.residual));
            out.gate(CheckRecord::new(
                "uniqueness.equal",
                u.equal,
                u.deviation,
                format!("block deviation from the assembled E {:.3e}", u.deviation),
            ));
            if let Ok(back) = extract_from_expectation(&e, &x, &t, opts) {
                let d = back.distance(p)?;
                out.gate(CheckRecord::bounded("uniqueness.extract E|_T=P", d, inst.tol.residual));
            }
        }
        Err(err) => {
            out.gate(failed("uniqueness.precondition", &err));
        }
    }
    Ok(())
}

fn wstar(out: &mut Outcome, inst: &LoadedInstance) -> Result<()> {
    let (rec, t) = tro_gate(T_IS_TRO, &inst.t_space);
    if !out.gate(rec) {
        return Ok(());
    }
    let t = t.expect("gate passed");
    let x_space = inst.x_space.clone().unwrap_or_else(|| inst.t_space.clone());
    let (rec, x) = tro_gate(X_IS_TRO, &x_space);
    if !out.gate(rec) {
        return Ok(());
    }
    let x = x.expect("gate passed");
    let r = inst.t_space.containment_residual(&x_space)?;
    if !out.gate(CheckRecord::bounded(X_IN_T, r, inst.tol.residual)) {
        return Ok(());
    }
    let p: Option<&TroMap> = inst.p.as_ref();
    let rep = finite_dim_wstar_check(&x, &t, p)?;
    out.extend_gated(rep.checks);
    out.data.insert("nondegenerate".into(), json!(rep.nondegenerate));
    out.data.insert("nondegenerately_represented".into(), json!(rep.nondegenerately_represented));
    Ok(())
}
