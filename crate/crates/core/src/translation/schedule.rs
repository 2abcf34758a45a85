use crate::error::{Error, Result};

/// Learning rate for a 1-based epoch: constant through `decay_start`, then
/// linear to zero at `epochs`.
pub fn lr_schedule(epoch: usize, lr0: f64, epochs: usize, decay_start: usize) -> Result<f64> {
    if epoch < 1 || epoch > epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside 1..={epochs}")));
    }
    if decay_start >= epochs {
        return Err(Error::invalid(format!("decay start {decay_start} must precede the last epoch {epochs}")));
    }
    if epoch <= decay_start {
        return Ok(lr0);
    }
    Ok(lr0 * (epochs - epoch) as f64 / (epochs - decay_start) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_schedule() {
        assert_eq!(lr_schedule(10, 2e-4, 50, 25).unwrap(), 2e-4);
        assert_eq!(lr_schedule(25, 2e-4, 50, 25).unwrap(), 2e-4);
        assert_eq!(lr_schedule(50, 2e-4, 50, 25).unwrap(), 0.0);
        assert!((lr_schedule(40, 2e-4, 50, 25).unwrap() - 8e-5).abs() < 1e-20);
        assert!(lr_schedule(0, 2e-4, 50, 25).is_err());
        assert!(lr_schedule(51, 2e-4, 50, 25).is_err());
    }

    #[test]
    fn monotone_and_continuous() {
        let lrs: Vec<f64> = (1..=50).map(|e| lr_schedule(e, 2e-4, 50, 25).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        // one step past the boundary drops by exactly one decay increment
        assert!((lrs[24] - lrs[25] - 2e-4 / 25.0).abs() < 1e-18);
    }
}
