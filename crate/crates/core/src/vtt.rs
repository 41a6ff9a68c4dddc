//! Voltage Threshold Tracker.
//!
//! Counts dirty blocks (`n_d`) and maintains the checkpoint threshold
//! `V_ths = V_min + n_d * lambda` without multiplication: a shadow counter
//! walks one step per update toward `n_d`, adding or subtracting `lambda`
//! from `V_ths` each time.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VttMode {
    /// Decrement `n_d` by the stack-index delta on SP increase, as the
    /// hardware counter does. Can undercount when popped blocks were clean.
    Faithful,
    /// Decrement `n_d` by the number of bits the cleaner actually cleared.
    #[default]
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VttState {
    n_d: i64,
    nd_shadow: i64,
    v_ths: f64,
    lambda: f64,
    v_min: f64,
    prev_id_sp: usize,
    mode: VttMode,
}

impl VttState {
    pub fn new(v_min: f64, lambda: f64, mode: VttMode, id_sp: usize) -> Self {
        VttState {
            n_d: 0,
            nd_shadow: 0,
            v_ths: v_min,
            lambda,
            v_min,
            prev_id_sp: id_sp,
            mode,
        }
    }

    pub fn n_d(&self) -> i64 {
        self.n_d
    }

    pub fn nd_shadow(&self) -> i64 {
        self.nd_shadow
    }

    pub fn v_ths(&self) -> f64 {
        self.v_ths
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn mode(&self) -> VttMode {
        self.mode
    }

    pub fn prev_id_sp(&self) -> usize {
        self.prev_id_sp
    }

    pub fn on_write(&mut self, newly_set: bool, w_en: bool) {
        if newly_set && w_en {
            self.n_d += 1;
            self.settle();
        }
    }

    pub fn on_sp_change(&mut self, id_sp_now: usize, cleared_count: usize) {
        match self.mode {
            VttMode::Faithful => {
                let id_d = id_sp_now as i64 - self.prev_id_sp as i64;
                if id_d > 0 {
                    self.n_d = (self.n_d - id_d).max(0);
                }
            }
            VttMode::Exact => self.n_d -= cleared_count as i64,
        }
        self.prev_id_sp = id_sp_now;
        self.settle();
    }

    /// Clears the counters. `id_sp` is the stack index after the reboot.
    pub fn on_reset(&mut self, id_sp: usize) {
        self.n_d = 0;
        self.nd_shadow = 0;
        self.v_ths = self.v_min;
        self.prev_id_sp = id_sp;
    }

    /// Installs a new `lambda`; only legal while `n_d` is zero (at boot).
    pub fn set_lambda(&mut self, lambda: f64) {
        assert_eq!(self.nd_shadow, 0, "lambda changed with blocks outstanding");
        self.lambda = lambda;
    }

    pub fn check_interrupt(&self, v_supply: f64) -> bool {
        v_supply < self.v_ths
    }

    fn settle(&mut self) {
        while self.nd_shadow != self.n_d {
            if self.n_d > self.nd_shadow {
                self.nd_shadow += 1;
                self.v_ths += self.lambda;
            } else {
                self.nd_shadow -= 1;
                self.v_ths -= self.lambda;
            }
        }
        if self.nd_shadow == 0 {
            self.v_ths = self.v_min;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vtt(mode: VttMode) -> VttState {
        VttState::new(2.0, 0.0125, mode, 64)
    }

    #[test]
    fn one_write_raises_threshold_by_lambda() {
        let mut v = vtt(VttMode::Exact);
        v.on_write(true, true);
        assert_eq!(v.n_d(), 1);
        assert!((v.v_ths() - 2.0125).abs() < 1e-12);
        v.on_write(false, true);
        assert_eq!(v.n_d(), 1);
    }

    #[test]
    fn ten_new_blocks() {
        let mut v = vtt(VttMode::Exact);
        for _ in 0..10 {
            v.on_write(true, true);
        }
        assert!((v.v_ths() - 2.125).abs() < 1e-9 * 2.125);
    }

    #[test]
    fn faithful_decrements_by_index_delta() {
        let mut v = VttState::new(2.0, 0.0125, VttMode::Faithful, 48);
        for _ in 0..5 {
            v.on_write(true, true);
        }
        v.on_sp_change(51, 3);
        assert_eq!(v.n_d(), 2);
        // only two of three popped blocks dirty: still decrements by three
        let mut v = VttState::new(2.0, 0.0125, VttMode::Faithful, 48);
        for _ in 0..5 {
            v.on_write(true, true);
        }
        v.on_sp_change(51, 2);
        assert_eq!(v.n_d(), 2);
    }

    #[test]
    fn exact_decrements_by_cleared() {
        let mut v = VttState::new(2.0, 0.0125, VttMode::Exact, 48);
        for _ in 0..5 {
            v.on_write(true, true);
        }
        v.on_sp_change(51, 2);
        assert_eq!(v.n_d(), 3);
    }

    #[test]
    fn faithful_ignores_sp_decrease_and_clamps() {
        let mut v = VttState::new(2.0, 0.0125, VttMode::Faithful, 50);
        v.on_write(true, true);
        v.on_sp_change(40, 0);
        assert_eq!(v.n_d(), 1);
        v.on_sp_change(60, 0);
        assert_eq!(v.n_d(), 0);
        assert_eq!(v.v_ths(), 2.0);
    }

    #[test]
    fn reset_restores_v_min_exactly() {
        let mut v = vtt(VttMode::Exact);
        for _ in 0..7 {
            v.on_write(true, true);
        }
        v.on_reset(64);
        assert_eq!(v.n_d(), 0);
        assert_eq!(v.nd_shadow(), 0);
        assert_eq!(v.v_ths(), 2.0);
        v.on_reset(64);
        assert_eq!(v.v_ths(), 2.0);
        v.on_write(true, true);
        assert!((v.v_ths() - 2.0125).abs() < 1e-12);
    }

    #[test]
    fn interrupt_is_strict() {
        let mut v = vtt(VttMode::Exact);
        for _ in 0..10 {
            v.on_write(true, true);
        }
        let ths = v.v_ths();
        assert!(v.check_interrupt(2.1));
        assert!(!v.check_interrupt(ths));
        assert!(!v.check_interrupt(3.6));
    }

    #[test]
    fn back_to_zero_is_exactly_v_min() {
        let mut v = VttState::new(2.0, 0.0032 * 1.05, VttMode::Exact, 64);
        for _ in 0..37 {
            v.on_write(true, true);
        }
        v.on_sp_change(64, 37);
        assert_eq!(v.v_ths(), 2.0);
    }
}
