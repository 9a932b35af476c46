//! Fixed-size worker pools. Every parallel reduction in the crate collects
//! per-item results in item order before summing, so results do not depend
//! on the pool size.

use crate::error::{LabError, Result};

/// Runs `f` on a pool of `workers` threads (`None`: rayon's default).
pub fn with_workers<T, F>(workers: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(LabError::Domain("worker count must be >= 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| LabError::Precondition(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoupling::{estimate_constant, DecouplingInstance, SearchMode};

    #[test]
    fn pool_size_does_not_change_results() {
        let inst = DecouplingInstance::new(2, 4.0, 8.0, 2).unwrap();
        let run = |w| with_workers(Some(w), || estimate_constant(&inst, 4, 3, SearchMode::Full).unwrap()).unwrap();
        let a = run(1);
        let b = run(4);
        assert_eq!(a.best_ratio.to_bits(), b.best_ratio.to_bits());
        assert!(with_workers(Some(0), || ()).is_err());
    }
}
