/// Slack on fractional credits, so ten additions of 0.1 make a whole grant.
pub(crate) const CREDIT_EPS: f64 = 1e-9;

/// Shared memory path. Each cycle it hands out up to its capacity in
/// cacheline grants, round-robin over the cores with pending requests.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryController {
    /// Lines per cycle; `None` grants every pending request at once.
    capacity: Option<f64>,
    credit: f64,
    next: usize,
}

impl MemoryController {
    pub fn new(capacity_lines_per_cycle: Option<f64>) -> Self {
        MemoryController { capacity: capacity_lines_per_cycle, credit: 0.0, next: 0 }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn capacity(&self) -> Option<f64> {
        self.capacity
    }

    /// Fill `grants[i]` for each core from its pending request count.
    pub fn grant(&mut self, pending: &[u32], grants: &mut [u32]) {
        grants.iter_mut().for_each(|g| *g = 0);
        let Some(c) = self.capacity else {
            grants.copy_from_slice(pending);
            return;
        };
        self.credit = (self.credit + c).min(c.max(1.0));
        let n = pending.len();
        if n == 0 {
            return;
        }
        let mut left: Vec<u32> = pending.to_vec();
        let mut idle_rounds = 0;
        while self.credit >= 1.0 - CREDIT_EPS && idle_rounds < n {
            let i = self.next % n;
            self.next = (i + 1) % n;
            if left[i] > 0 {
                left[i] -= 1;
                grants[i] += 1;
                self.credit -= 1.0;
                idle_rounds = 0;
            } else {
                idle_rounds += 1;
            }
        }
    }
}
