//! Boolean model of the event-driven power circuit.
//!
//! The watchdog accelerometer interrupt is active high, the RTC alarm active
//! low. A universal gate plus inverter combine them into the latch input D.
//! While LE is high the latch is transparent; the MCU pulls LE low for the
//! whole active period so Q (and therefore the MCU supply) stays high even
//! after the trigger pulse ends.

use serde::{Deserialize, Serialize};

use super::{SensorConfig, TriggerCause, MS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdsState {
    pub vib_trigger: bool,
    /// Active low: `false` means the alarm fired.
    pub rtc_trigger_n: bool,
    pub latch_enable: bool,
    pub latch_out: bool,
    pub mcu_on: bool,
}

impl Default for EdsState {
    /// Idle: LE pulled up, no trigger, MCU off.
    fn default() -> Self {
        Self {
            vib_trigger: false,
            rtc_trigger_n: true,
            latch_enable: true,
            latch_out: false,
            mcu_on: false,
        }
    }
}

/// Gate and inverter chain: D = vib OR NOT rtc_n.
pub fn eds_combine(vib: bool, rtc_n: bool) -> bool {
    // The gate output is active low (low when either source fires) and is
    // then inverted before reaching D.
    let gate_out = !(vib || !rtc_n);
    !gate_out
}

/// Transparent latch: Q follows D while LE is high, holds otherwise.
pub fn latch_step(state: EdsState, d: bool) -> EdsState {
    let latch_out = if state.latch_enable {
        d
    } else {
        state.latch_out
    };
    EdsState {
        latch_out,
        mcu_on: latch_out,
        ..state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub cause: TriggerCause,
    /// Epoch ms of the watchdog sample that powered the MCU.
    pub t_ms: i64,
    pub sample_index: usize,
}

/// Timestamps of the watchdog stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WatchdogClock {
    pub start_ms: i64,
    pub period_ms: f64,
}

impl WatchdogClock {
    pub fn at(&self, i: usize) -> i64 {
        self.start_ms + (i as f64 * self.period_ms).round() as i64
    }
}

fn crosses(prev_ms: i64, cur_ms: i64, instant_of_day: i64) -> bool {
    (cur_ms - instant_of_day).div_euclid(MS_PER_DAY)
        > (prev_ms - instant_of_day).div_euclid(MS_PER_DAY)
}

/// Steps the circuit once per watchdog sample and reports every MCU power-up.
///
/// `vib_mg` is the watchdog accelerometer reading in mg; its absolute value is
/// compared with the threshold. The timer fires when the clock passes one of
/// the scheduled daily instants. After a power-up the latch is held for
/// `active_time_s`, during which triggers are absorbed.
pub fn run_trigger_loop(
    cfg: &SensorConfig,
    vib_mg: &[f64],
    clock: &WatchdogClock,
) -> Vec<TriggerEvent> {
    let schedule = cfg.schedule_ms().unwrap_or_default();
    let active_ms = (cfg.active_time_s * 1e3).round() as i64;
    let mut state = EdsState::default();
    let mut busy_until: Option<i64> = None;
    let mut events = Vec::new();

    for (i, sample) in vib_mg.iter().enumerate() {
        let now = clock.at(i);
        let prev = if i == 0 {
            now - clock.period_ms.round().max(1.0) as i64
        } else {
            clock.at(i - 1)
        };
        if let Some(until) = busy_until {
            if now >= until {
                // process finished: MCU releases LE
                state.latch_enable = true;
                busy_until = None;
            }
        }
        state.vib_trigger = sample.abs() >= cfg.vib_threshold_mg;
        state.rtc_trigger_n = !schedule.iter().any(|&s| crosses(prev, now, s));
        let d = eds_combine(state.vib_trigger, state.rtc_trigger_n);
        let was_on = state.mcu_on;
        state = latch_step(state, d);
        let powered_up = state.mcu_on && (!was_on || state.latch_enable);
        if powered_up && busy_until.is_none() {
            let cause = if state.vib_trigger {
                TriggerCause::Vibration
            } else {
                TriggerCause::Timer
            };
            events.push(TriggerEvent {
                cause,
                t_ms: now,
                sample_index: i,
            });
            state.latch_enable = false;
            busy_until = Some(now + active_ms);
        }
    }
    events
}
