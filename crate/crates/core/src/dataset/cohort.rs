use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One subject: a `v×t` signal matrix and its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct BoldSample {
    pub x: Tensor,
    pub label: usize,
}

impl BoldSample {
    pub fn new(x: Tensor, label: usize) -> Result<Self> {
        let (v, t) = x.dims2()?;
        if v < 2 || t < 2 {
            return Err(Error::Data(format!("sample must be at least 2×2, got {v}×{t}")));
        }
        x.check_finite("sample signal")?;
        Ok(Self { x, label })
    }

    pub fn rois(&self) -> usize {
        self.x.rows()
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// ROI → functional module assignment. `None` marks ROIs outside every module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulePartition {
    pub names: Vec<String>,
    pub assignment: Vec<Option<usize>>,
}

impl ModulePartition {
    pub fn new(names: Vec<String>, assignment: Vec<Option<usize>>) -> Result<Self> {
        let p = Self { names, assignment };
        p.validate()?;
        Ok(p)
    }

    /// Every ROI in its own unnamed pool: no modules at all.
    pub fn unassigned(v: usize) -> Self {
        Self {
            names: Vec::new(),
            assignment: vec![None; v],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (roi, a) in self.assignment.iter().enumerate() {
            if let Some(m) = a {
                if *m >= self.names.len() {
                    return Err(Error::Data(format!(
                        "ROI {roi} assigned to unknown module {m}"
                    )));
                }
            }
        }
        for (m, name) in self.names.iter().enumerate() {
            if self.members(m).is_empty() {
                return Err(Error::Data(format!("module '{name}' has no ROIs")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn module_count(&self) -> usize {
        self.names.len()
    }

    pub fn members(&self, module: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Some(module))
            .map(|(i, _)| i)
            .collect()
    }

    /// Assigned ROIs ordered by module, then by ROI index.
    pub fn grouped_order(&self) -> Vec<usize> {
        (0..self.module_count()).flat_map(|m| self.members(m)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub samples: Vec<BoldSample>,
    pub class_names: Vec<String>,
    pub partition: ModulePartition,
    /// Generator settings when the cohort is synthetic.
    pub generator: Option<SyntheticConfig>,
}

impl Cohort {
    pub fn new(
        samples: Vec<BoldSample>,
        class_names: Vec<String>,
        partition: ModulePartition,
    ) -> Result<Self> {
        let c = Self {
            samples,
            class_names,
            partition,
            generator: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Data("cohort has no samples".into()))?;
        let (v, t) = (first.rois(), first.len());
        for (i, s) in self.samples.iter().enumerate() {
            if s.rois() != v || s.len() != t {
                return Err(Error::Data(format!(
                    "sample {i} is {}×{}, cohort is {v}×{t}",
                    s.rois(),
                    s.len()
                )));
            }
            if s.label >= self.class_names.len() {
                return Err(Error::Data(format!(
                    "sample {i} has label {} but only {} classes",
                    s.label,
                    self.class_names.len()
                )));
            }
        }
        if self.partition.len() != v {
            return Err(Error::Data(format!(
                "partition covers {} ROIs, samples have {v}",
                self.partition.len()
            )));
        }
        self.partition.validate()
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn v(&self) -> usize {
        self.samples.first().map_or(0, BoldSample::rois)
    }

    pub fn t(&self) -> usize {
        self.samples.first().map_or(0, BoldSample::len)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_rejects_empty_module() {
        let r = ModulePartition::new(vec!["a".into(), "b".into()], vec![Some(0), None]);
        assert!(r.is_err());
    }

    #[test]
    fn grouped_order_skips_unassigned() {
        let p = ModulePartition::new(
            vec!["a".into(), "b".into()],
            vec![Some(1), None, Some(0), Some(1)],
        )
        .unwrap();
        assert_eq!(p.grouped_order(), vec![2, 0, 3]);
    }

    #[test]
    fn cohort_rejects_mixed_shapes() {
        let a = BoldSample::new(Tensor::zeros([2, 3]), 0).unwrap();
        let b = BoldSample::new(Tensor::zeros([2, 4]), 0).unwrap();
        let r = Cohort::new(vec![a, b], vec!["c".into()], ModulePartition::unassigned(2));
        assert!(r.is_err());
    }
}
