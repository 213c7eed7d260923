use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Stuff,
    Thing,
}

/// Partition of the class ids `0..num_classes` into stuff and thing classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub num_classes: usize,
    pub stuff: Vec<u32>,
    pub thing: Vec<u32>,
}

impl ClassSplit {
    pub fn new(stuff: Vec<u32>, thing: Vec<u32>) -> Result<Self> {
        let num_classes = stuff.len() + thing.len();
        let split = Self { num_classes, stuff, thing };
        split.validate()?;
        Ok(split)
    }

    /// Stuff ids `0..n_stuff`, thing ids `n_stuff..n_stuff + n_thing`.
    pub fn contiguous(n_stuff: usize, n_thing: usize) -> Self {
        Self {
            num_classes: n_stuff + n_thing,
            stuff: (0..n_stuff as u32).collect(),
            thing: (n_stuff as u32..(n_stuff + n_thing) as u32).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_classes];
        for &c in self.stuff.iter().chain(&self.thing) {
            let slot = seen
                .get_mut(c as usize)
                .ok_or_else(|| Error::InvalidClassConfig(format!("class {c} >= {}", self.num_classes)))?;
            if *slot {
                return Err(Error::InvalidClassConfig(format!("class {c} listed twice")));
            }
            *slot = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidClassConfig(format!("class {c} is neither stuff nor thing")));
        }
        Ok(())
    }

    pub fn kind(&self, class_id: u32) -> Option<ClassKind> {
        if self.thing.contains(&class_id) {
            Some(ClassKind::Thing)
        } else if self.stuff.contains(&class_id) {
            Some(ClassKind::Stuff)
        } else {
            None
        }
    }

    pub fn is_thing(&self, class_id: u32) -> bool {
        self.thing.contains(&class_id)
    }

    pub fn is_stuff(&self, class_id: u32) -> bool {
        self.stuff.contains(&class_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ClassSplit::new(vec![0, 1], vec![2]).is_ok());
        assert!(ClassSplit::new(vec![0, 0], vec![1]).is_err());
        assert!(ClassSplit::new(vec![0], vec![5]).is_err());
        let s = ClassSplit::contiguous(3, 2);
        assert_eq!(s.kind(4), Some(ClassKind::Thing));
        assert_eq!(s.kind(0), Some(ClassKind::Stuff));
        assert_eq!(s.kind(9), None);
    }
}
