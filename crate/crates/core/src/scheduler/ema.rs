use crate::error::ScheduleError;

/// Exponential moving average of observed losses.
///
/// The first observation initialises the average; afterwards
/// `value = alpha * value + (1 - alpha) * loss`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaTracker {
    alpha: f64,
    value: Option<f64>,
    count: u64,
}

impl EmaTracker {
    pub fn new(alpha: f64) -> Result<Self, ScheduleError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ScheduleError::InvalidParameter {
                name: "alpha",
                reason: format!("must lie in (0, 1), got {alpha}"),
            });
        }
        Ok(Self {
            alpha,
            value: None,
            count: 0,
        })
    }

    pub(crate) fn from_parts(alpha: f64, value: Option<f64>, count: u64) -> Self {
        Self {
            alpha,
            value,
            count,
        }
    }

    pub fn observe(&mut self, loss: f64) -> f64 {
        let v = match self.value {
            None => loss,
            Some(prev) => self.alpha * prev + (1.0 - self.alpha) * loss,
        };
        self.value = Some(v);
        self.count += 1;
        v
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}
