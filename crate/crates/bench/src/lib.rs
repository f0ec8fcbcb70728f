//! Fixtures shared by the benchmarks.

use biharm_core::experiments::{example1, Problem, StudyOptions};
use biharm_core::{MeshHierarchy, Result};

/// Example 1 assembled on the structured `n × n` square with degree `m`,
/// together with its multigrid hierarchy.
pub struct Fixture {
    pub hier: MeshHierarchy,
    pub problem: Problem,
}

impl Fixture {
    pub fn square(n: usize, m: usize) -> Result<Self> {
        let opts = StudyOptions::new(m);
        let hier = MeshHierarchy::structured(2, n, opts.max_coarse_dofs)?;
        let problem = Problem::setup(&example1(), hier.finest().clone(), &opts)?;
        Ok(Self { hier, problem })
    }
}
