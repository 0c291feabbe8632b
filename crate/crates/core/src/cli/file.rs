//! Instance files: one UTF-8 JSON object, complex scalars as `[re, im]`,
//! matrices as arrays of rows.
//!
//! `P_coeffs[i][j]` is the coefficient of `X_basis[i]` in `P(T_basis[j])`.
//! `E_blocks` holds the four block maps as matrices acting on row-major
//! vectorizations of the `k×k`, `k×h`, `h×k` and `h×h` blocks.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::expectation::{BlockExpectation, TroMap};
use crate::gen::Instance;
use crate::mats::{ComplexMatrix, Decomposer, SubspaceBasis, ToleranceProfile, C64};
use crate::tro::Tro;

pub type RawMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EBlocksFile {
    pub e11: RawMatrix,
    pub e12: RawMatrix,
    pub e21: RawMatrix,
    pub e22: RawMatrix,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesFile {
    pub rank_cut: Option<f64>,
    pub residual: Option<f64>,
    pub ortho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub dim_h: usize,
    pub dim_k: usize,
    #[serde(rename = "T_basis")]
    pub t_basis: Vec<RawMatrix>,
    #[serde(rename = "X_basis", default)]
    pub x_basis: Option<Vec<RawMatrix>>,
    #[serde(rename = "P_coeffs", default)]
    pub p_coeffs: Option<RawMatrix>,
    #[serde(rename = "E_blocks", default)]
    pub e_blocks: Option<EBlocksFile>,
    #[serde(default)]
    pub tolerances: Option<TolerancesFile>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Tolerance and seed overrides from the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub tol_residual: Option<f64>,
    pub tol_rank: Option<f64>,
    pub seed: Option<u64>,
}

/// Parsed and validated instance data.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub tol: ToleranceProfile,
    pub seed: u64,
    pub t_space: SubspaceBasis,
    pub x_space: Option<SubspaceBasis>,
    pub p: Option<TroMap>,
    pub e_blocks: Option<[DMatrix<C64>; 4]>,
}

impl InstanceFile {
    /// Parses JSON text; errors name the offending field path.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                invalid(format!("instance file: {inner}"))
            } else {
                invalid(format!("instance file field {path}: {inner}"))
            }
        })
    }

    /// Validates shapes and builds the numerical objects.
    pub fn load(&self, overrides: Overrides) -> Result<LoadedInstance> {
        let tol = self.tolerances(overrides)?;
        let (k, h) = (self.dim_k, self.dim_h);
        if k == 0 || h == 0 {
            return Err(invalid("dim_k and dim_h must be positive"));
        }
        if self.t_basis.is_empty() {
            return Err(invalid("T_basis must contain at least one matrix"));
        }
        let t_list = matrices("T_basis", &self.t_basis, k, h)?;
        let t_space = SubspaceBasis::span(k, h, &t_list, tol)?;
        let x_list = match &self.x_basis {
            Some(list) => Some(matrices("X_basis", list, k, h)?),
            None => None,
        };
        let x_space = match &x_list {
            Some(list) => Some(SubspaceBasis::span(k, h, list, tol)?),
            None => None,
        };
        let p = match (&self.p_coeffs, &x_list, &x_space) {
            (None, _, _) => None,
            (Some(_), None, _) | (Some(_), _, None) => return Err(invalid("P_coeffs requires X_basis")),
            (Some(raw), Some(xl), Some(xs)) => Some(map_from_coeffs(raw, &t_list, &t_space, xl, xs)?),
        };
        let e_blocks = match &self.e_blocks {
            None => None,
            Some(b) => {
                if x_space.is_none() {
                    return Err(invalid("E_blocks requires X_basis"));
                }
                Some([
                    dense("E_blocks.e11", &b.e11)?,
                    dense("E_blocks.e12", &b.e12)?,
                    dense("E_blocks.e21", &b.e21)?,
                    dense("E_blocks.e22", &b.e22)?,
                ])
            }
        };
        Ok(LoadedInstance {
            tol,
            seed: overrides.seed.or(self.seed).unwrap_or(0),
            t_space,
            x_space,
            p,
            e_blocks,
        })
    }

    fn tolerances(&self, o: Overrides) -> Result<ToleranceProfile> {
        let d = ToleranceProfile::default();
        let f = self.tolerances.unwrap_or_default();
        let tol = ToleranceProfile {
            rank_cut: o.tol_rank.or(f.rank_cut).unwrap_or(d.rank_cut),
            residual: o.tol_residual.or(f.residual).unwrap_or(d.residual),
            ortho: f.ortho.unwrap_or(d.ortho),
        };
        tol.validate().map_err(|e| invalid(format!("tolerances: {e}")))?;
        Ok(tol)
    }

    /// File for a generated instance, with the expectation blocks when given.
    pub fn from_instance(inst: &Instance, e: Option<&BlockExpectation>) -> Self {
        let (k, h) = (inst.t.dim_k(), inst.t.dim_h());
        let x_in_p = inst.p.target();
        let coeffs = inst.p.coeffs();
        // P's target basis is X's basis for generated instances; re-express if not
        let p_coeffs = if x_in_p.basis() == inst.x.basis() {
            coeffs.clone()
        } else {
            DMatrix::from_fn(inst.x.dim(), inst.t.dim(), |i, j| {
                let img = inst.p.apply(&inst.t.basis()[j]);
                inst.x.coordinates(&img)[i]
            })
        };
        Self {
            dim_h: h,
            dim_k: k,
            t_basis: inst.t.basis().iter().map(raw).collect(),
            x_basis: Some(inst.x.basis().iter().map(raw).collect()),
            p_coeffs: Some(raw_dense(&p_coeffs)),
            e_blocks: e.map(|e| {
                let [a, b, c, d] = e.ambient_blocks();
                EBlocksFile {
                    e11: raw_dense(&a),
                    e12: raw_dense(&b),
                    e21: raw_dense(&c),
                    e22: raw_dense(&d),
                }
            }),
            tolerances: None,
            seed: Some(inst.seed),
        }
    }

    /// JSON text with every scalar written to 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        let _ = writeln!(out, "  \"dim_h\": {},", self.dim_h);
        let _ = write!(out, "  \"dim_k\": {}", self.dim_k);
        out.push_str(",\n  \"T_basis\": ");
        write_list(&mut out, &self.t_basis);
        if let Some(x) = &self.x_basis {
            out.push_str(",\n  \"X_basis\": ");
            write_list(&mut out, x);
        }
        if let Some(p) = &self.p_coeffs {
            out.push_str(",\n  \"P_coeffs\": ");
            write_matrix(&mut out, p, "  ");
        }
        if let Some(e) = &self.e_blocks {
            out.push_str(",\n  \"E_blocks\": {");
            for (i, (name, m)) in [("e11", &e.e11), ("e12", &e.e12), ("e21", &e.e21), ("e22", &e.e22)]
                .into_iter()
                .enumerate()
            {
                let sep = if i == 0 { "" } else { "," };
                let _ = write!(out, "{sep}\n    \"{name}\": ");
                write_matrix(&mut out, m, "    ");
            }
            out.push_str("\n  }");
        }
        if let Some(t) = &self.tolerances {
            out.push_str(",\n  \"tolerances\": {");
            let fields: Vec<String> = [("rank_cut", t.rank_cut), ("residual", t.residual), ("ortho", t.ortho)]
                .into_iter()
                .filter_map(|(n, v)| v.map(|v| format!("\"{n}\": {}", float(v))))
                .collect();
            out.push_str(&fields.join(", "));
            out.push('}');
        }
        if let Some(s) = self.seed {
            let _ = write!(out, ",\n  \"seed\": {s}");
        }
        out.push_str("\n}\n");
        out
    }
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_matrix(out: &mut String, m: &RawMatrix, indent: &str) {
    out.push('[');
    for (i, row) in m.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str(indent);
        out.push_str("  [");
        for (j, z) in row.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "[{}, {}]", float(z[0]), float(z[1]));
        }
        out.push(']');
    }
    out.push('\n');
    out.push_str(indent);
    out.push(']');
}

fn write_list(out: &mut String, list: &[RawMatrix]) {
    out.push('[');
    for (i, m) in list.iter().enumerate() {
        out.push_str(if i == 0 { "\n    " } else { ",\n    " });
        write_matrix(out, m, "    ");
    }
    out.push_str("\n  ]");
}

pub fn raw(m: &ComplexMatrix) -> RawMatrix {
    raw_dense(m.as_matrix())
}

pub fn raw_dense(m: &DMatrix<C64>) -> RawMatrix {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn dense(field: &str, m: &RawMatrix) -> Result<DMatrix<C64>> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(invalid(format!("{field}: empty matrix")));
    }
    if let Some(i) = m.iter().position(|r| r.len() != cols) {
        return Err(invalid(format!("{field}[{i}]: ragged row (expected {cols} entries)")));
    }
    let mut out = DMatrix::zeros(rows, cols);
    for (i, row) in m.iter().enumerate() {
        for (j, z) in row.iter().enumerate() {
            if !(z[0].is_finite() && z[1].is_finite()) {
                return Err(invalid(format!("{field}[{i}][{j}]: non-finite entry")));
            }
            out[(i, j)] = C64::new(z[0], z[1]);
        }
    }
    Ok(out)
}

fn matrices(field: &str, list: &[RawMatrix], k: usize, h: usize) -> Result<Vec<ComplexMatrix>> {
    list.iter()
        .enumerate()
        .map(|(n, m)| {
            let name = format!("{field}[{n}]");
            let d = dense(&name, m)?;
            if d.shape() != (k, h) {
                return Err(invalid(format!(
                    "{name}: expected {k}x{h} matrix, got {}x{}",
                    d.nrows(),
                    d.ncols()
                )));
            }
            ComplexMatrix::new(d)
        })
        .collect()
}

/// Builds P on the orthonormal basis of T from coefficients against the
/// user's spanning lists, rejecting coefficients that disagree on linear
/// relations among the `T_basis` entries.
fn map_from_coeffs(
    raw_coeffs: &RawMatrix,
    t_list: &[ComplexMatrix],
    t_space: &SubspaceBasis,
    x_list: &[ComplexMatrix],
    x_space: &SubspaceBasis,
) -> Result<TroMap> {
    let c = dense("P_coeffs", raw_coeffs)?;
    if c.shape() != (x_list.len(), t_list.len()) {
        return Err(invalid(format!(
            "P_coeffs: expected {}x{} (len X_basis x len T_basis), got {}x{}",
            x_list.len(),
            t_list.len(),
            c.nrows(),
            c.ncols()
        )));
    }
    let tol = t_space.tol();
    let (k, h) = t_space.ambient_shape();
    let images: Vec<ComplexMatrix> = (0..t_list.len())
        .map(|j| {
            x_list
                .iter()
                .enumerate()
                .fold(ComplexMatrix::zeros(k, h), |acc, (i, x)| &acc + &x.scale(c[(i, j)]))
        })
        .collect();
    let combine = |coeffs: &DVector<C64>| {
        images
            .iter()
            .zip(coeffs.iter())
            .fold(ComplexMatrix::zeros(k, h), |acc, (img, &z)| &acc + &img.scale(z))
    };
    let dec = Decomposer::new(t_list, tol)?;
    let null = dec.null_space();
    for z in null.column_iter() {
        let r = combine(&z.into_owned()).hs_norm();
        if r > tol.bound(1.0) {
            return Err(invalid(format!(
                "P_coeffs: inconsistent on linearly dependent T_basis entries (residual {r:.3e})"
            )));
        }
    }
    TroMap::try_from_fn(t_space.clone(), x_space.clone(), |b| Ok(combine(&dec.coefficients(b)?)))
        .map_err(|e| invalid(format!("P_coeffs: {e}")))
}

impl LoadedInstance {
    pub fn t_tro(&self) -> Result<Tro> {
        Tro::new(self.t_space.clone())
    }

    pub fn require_x(&self) -> Result<&SubspaceBasis> {
        self.x_space.as_ref().ok_or_else(|| invalid("this command needs X_basis"))
    }

    pub fn require_p(&self) -> Result<&TroMap> {
        self.p.as_ref().ok_or_else(|| invalid("this command needs P_coeffs"))
    }
}
