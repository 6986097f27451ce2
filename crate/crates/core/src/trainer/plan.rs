use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};

/// Ordered subject groups; group `t` is trained at step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u32>>", into = "Vec<Vec<u32>>")]
pub struct StepPlan {
    groups: Vec<Vec<u32>>,
}

impl StepPlan {
    pub fn new(groups: Vec<Vec<u32>>) -> Result<Self> {
        if groups.is_empty() {
            return Err(CobraError::Plan("plan has no steps".into()));
        }
        let mut seen = BTreeSet::new();
        for (t, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(CobraError::Plan(format!("step {} has no subjects", t + 1)));
            }
            for &s in g {
                if !seen.insert(s) {
                    return Err(CobraError::Plan(format!(
                        "subject {s} appears in more than one step"
                    )));
                }
            }
        }
        Ok(StepPlan { groups })
    }

    pub fn groups(&self) -> &[Vec<u32>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.groups.iter().flatten().copied().collect()
    }
}

/// `"3,4|6,8|1,2|5,7"`: steps separated by `|`, subjects by `,`.
impl FromStr for StepPlan {
    type Err = CobraError;

    fn from_str(s: &str) -> Result<Self> {
        let groups = s
            .split('|')
            .map(|g| {
                g.split(',')
                    .map(|id| {
                        let id = id.trim();
                        id.parse::<u32>().map_err(|_| {
                            CobraError::Plan(format!("bad subject id {id:?} in plan {s:?}"))
                        })
                    })
                    .collect::<Result<Vec<u32>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        StepPlan::new(groups)
    }
}

impl fmt::Display for StepPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .groups
            .iter()
            .map(|g| g.iter().map(u32::to_string).collect::<Vec<_>>().join(","))
            .collect();
        f.write_str(&parts.join("|"))
    }
}

impl TryFrom<Vec<Vec<u32>>> for StepPlan {
    type Error = CobraError;

    fn try_from(groups: Vec<Vec<u32>>) -> Result<Self> {
        StepPlan::new(groups)
    }
}

impl From<StepPlan> for Vec<Vec<u32>> {
    fn from(p: StepPlan) -> Self {
        p.groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_step_plan_parses() {
        let p: StepPlan = "3,4|6,8|1,2|5,7".parse().unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.groups()[1], vec![6, 8]);
        assert_eq!(p.to_string(), "3,4|6,8|1,2|5,7");
    }

    #[test]
    fn duplicate_subject_is_named() {
        let err = "1,2|2,3".parse::<StepPlan>().unwrap_err();
        assert!(matches!(err, CobraError::Plan(ref m) if m.contains("subject 2")));
    }

    #[test]
    fn malformed_plans() {
        assert!("1,,2".parse::<StepPlan>().is_err());
        assert!("".parse::<StepPlan>().is_err());
        assert!("a|b".parse::<StepPlan>().is_err());
    }
}
