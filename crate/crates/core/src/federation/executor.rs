use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::FederationError;

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "FEDSEMI_WORKERS";

/// Runs per-client work either inline or on a rayon pool.
///
/// Results always come back in input order, so the choice never changes
/// what is aggregated.
#[derive(Clone, Default)]
pub enum Executor {
    #[default]
    Sequential,
    Pool(Arc<rayon::ThreadPool>),
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Executor::Sequential => f.write_str("Sequential"),
            Executor::Pool(p) => write!(f, "Pool({})", p.current_num_threads()),
        }
    }
}

impl Executor {
    pub fn pool(threads: usize) -> Result<Self, FederationError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map(|p| Executor::Pool(Arc::new(p)))
            .map_err(|e| FederationError::Pool(e.to_string()))
    }

    /// A pool sized by [`WORKERS_ENV`], or sequential when it is unset or 1.
    pub fn from_env() -> Result<Self, FederationError> {
        match std::env::var(WORKERS_ENV) {
            Err(_) => Ok(Executor::Sequential),
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(0) | Err(_) => Err(FederationError::Config {
                    key: "FEDSEMI_WORKERS",
                    message: format!("{v:?} is not a positive integer"),
                }),
                Ok(1) => Ok(Executor::Sequential),
                Ok(n) => Executor::pool(n),
            },
        }
    }

    pub fn map<I, T, F>(&self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        match self {
            Executor::Sequential => items.iter().map(f).collect(),
            Executor::Pool(pool) => pool.install(|| items.par_iter().map(f).collect()),
        }
    }
}
