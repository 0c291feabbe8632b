use serde::Serialize;

/// One named check with its measured residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub pass: bool,
    pub residual: f64,
    pub details: String,
    /// Informational checks never affect the overall verdict.
    pub mandatory: bool,
}

impl CheckRecord {
    pub fn new(name: impl Into<String>, pass: bool, residual: f64, details: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            residual,
            details: details.into(),
            mandatory: true,
        }
    }

    /// Residual check: passes iff `residual <= bound`.
    pub fn bounded(name: impl Into<String>, residual: f64, bound: f64) -> Self {
        Self::new(name, residual <= bound, residual, format!("bound {bound:.1e}"))
    }

    pub fn informational(mut self) -> Self {
        self.mandatory = false;
        self
    }

    pub fn with_details(mut self, details: impl Into<String>) -> Self {
        self.details = details.into();
        self
    }
}

pub fn all_pass(checks: &[CheckRecord]) -> bool {
    checks.iter().all(|c| c.pass || !c.mandatory)
}

pub fn first_failure(checks: &[CheckRecord]) -> Option<&CheckRecord> {
    checks.iter().find(|c| c.mandatory && !c.pass)
}

pub fn find<'a>(checks: &'a [CheckRecord], name: &str) -> Option<&'a CheckRecord> {
    checks.iter().find(|c| c.name == name)
}
