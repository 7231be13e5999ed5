//! Teacher/student correction of the BEV feature: the masked-view branch is
//! pulled toward the complete-view branch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::tensor::{Graph, Var};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionKind {
    L2,
    L1,
    /// Per-cell channel softmax on both sides, then `KL(teacher ‖ student)`.
    Kl,
}

impl CorrectionKind {
    pub const ALL: [CorrectionKind; 3] = [Self::L2, Self::L1, Self::Kl];

    pub fn name(self) -> &'static str {
        match self {
            Self::L2 => "l2",
            Self::L1 => "l1",
            Self::Kl => "kl",
        }
    }
}

impl fmt::Display for CorrectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown correction loss {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    pub kind: CorrectionKind,
    pub weight: f64,
    /// Block gradients through the teacher branch.
    pub detach_teacher: bool,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self { kind: CorrectionKind::L2, weight: 5.0, detach_teacher: true }
    }
}

/// Divergence of `student` from `teacher` (`cells × C` each).
///
/// The caller decides whether `teacher` is detached; with
/// [`CorrectionConfig::detach_teacher`] set this function detaches it.
pub fn correction_loss<T: Scalar>(g: &mut Graph<T>, teacher: Var, student: Var, cfg: &CorrectionConfig) -> Result<Var> {
    if g.shape(teacher) != g.shape(student) {
        return contract(format!(
            "correction loss between BEV features of shapes {:?} and {:?}",
            g.shape(teacher),
            g.shape(student)
        ));
    }
    let teacher = if cfg.detach_teacher { g.detach(teacher) } else { teacher };
    Ok(match cfg.kind {
        CorrectionKind::L2 => g.mse(student, teacher),
        CorrectionKind::L1 => g.l1(student, teacher),
        CorrectionKind::Kl => {
            let t = g.softmax_rows(teacher);
            let s = g.softmax_rows(student);
            g.kl(t, s)
        }
    })
}
