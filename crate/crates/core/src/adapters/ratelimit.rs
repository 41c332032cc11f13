use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Process-wide token bucket. Holds at most `burst` tokens and refills at
/// `rate` tokens per second; `acquire` blocks until a token is available.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    /// `None` when `rate` is not a positive finite number.
    pub fn new(rate: f64, burst: u32) -> Option<TokenBucket> {
        if !(rate.is_finite() && rate > 0.0) {
            return None;
        }
        let burst = f64::from(burst.max(1));
        Some(TokenBucket { rate, burst, state: Mutex::new((burst, Instant::now())) })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().expect("rate limiter lock poisoned");
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
                st.0 = (st.0 + refill).min(self.burst);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn rejects_bad_rates() {
        assert!(TokenBucket::new(0.0, 1).is_none());
        assert!(TokenBucket::new(f64::NAN, 1).is_none());
    }

    #[test]
    fn spacing_is_honoured_across_threads() {
        let bucket = Arc::new(TokenBucket::new(50.0, 1).unwrap());
        let start = Instant::now();
        let stamps = Arc::new(Mutex::new(Vec::new()));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let (b, s) = (bucket.clone(), stamps.clone());
                std::thread::spawn(move || {
                    for _ in 0..10 {
                        b.acquire();
                        s.lock().unwrap().push(start.elapsed().as_secs_f64());
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let mut t = stamps.lock().unwrap().clone();
        t.sort_by(f64::total_cmp);
        // 40 acquisitions at 50/s with one initial token take at least 39/50 s
        assert!(t[39] >= 0.78 - 1e-3, "{}", t[39]);
        // no one-second window holds more than rate + 1 grants
        for (i, &s) in t.iter().enumerate() {
            let n = t[i..].iter().take_while(|&&u| u < s + 1.0).count();
            assert!(n <= 51);
        }
    }
}
