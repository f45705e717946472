use warpnorm_core::train::Executor;

pub const THREADS_ENV: &str = "WARPNORM_THREADS";

/// Scoped-thread executor; job `i` runs on worker `i % threads` and results
/// are returned in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Threads(pub usize);

impl Threads {
    /// `WARPNORM_THREADS` if set to a positive integer, otherwise the
    /// available parallelism.
    pub fn from_env() -> Self {
        let env = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok());
        match env {
            Some(n) if n > 0 => Threads(n),
            _ => Threads(std::thread::available_parallelism().map_or(1, usize::from)),
        }
    }
}

impl Executor for Threads {
    fn map<R: Send>(&self, n: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        let t = self.0.min(n);
        if t <= 1 {
            return (0..n).map(f).collect();
        }
        std::thread::scope(|s| {
            let workers: Vec<_> = (0..t)
                .map(|k| s.spawn(move || (k..n).step_by(t).map(|i| (i, f(i))).collect::<Vec<_>>()))
                .collect();
            let mut out: Vec<Option<R>> = (0..n).map(|_| None).collect();
            for w in workers {
                for (i, r) in w.join().expect("worker panicked") {
                    out[i] = Some(r);
                }
            }
            out.into_iter()
                .map(|r| r.expect("every index computed"))
                .collect()
        })
    }
}
