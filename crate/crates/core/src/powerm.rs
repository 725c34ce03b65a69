//! Battery-life and solar break-even budget for a duty-cycled node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("invalid power profile: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
}

const SECONDS_PER_DAY: f64 = 86_400.0;

/// How a ledger row's current relates to its quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentBasis {
    /// `current_ma` already covers all `quantity` devices.
    #[default]
    RowTotal,
    /// `current_ma` is per device and is multiplied by `quantity`.
    PerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerEntry {
    pub device: String,
    #[serde(default = "one")]
    pub quantity: u32,
    pub current_ma: f64,
    #[serde(default)]
    pub basis: CurrentBasis,
}

fn one() -> u32 {
    1
}

impl LedgerEntry {
    pub fn total_ma(&self) -> f64 {
        match self.basis {
            CurrentBasis::RowTotal => self.current_ma,
            CurrentBasis::PerUnit => self.current_ma * self.quantity as f64,
        }
    }
}

fn row(device: &str, quantity: u32, current_ma: f64) -> LedgerEntry {
    LedgerEntry {
        device: device.into(),
        quantity,
        current_ma,
        basis: CurrentBasis::RowTotal,
    }
}

/// Sleep-mode current draw of the reference node, one row per board part.
pub fn reference_ledger() -> Vec<LedgerEntry> {
    vec![
        row("ZS-042 (DS3231)", 1, 0.200),
        row("SN74AUP1G58", 2, 0.0018),
        row("SN74LVC1G373DCKR", 1, 0.010),
        row("ADXL362", 1, 0.0018),
        row("TPL5110_timer", 1, 0.000035),
        row("TPS22919", 1, 0.008),
        row("MCP1725-3302E/SN", 3, 0.360),
        row("TPS22860", 3, 0.000006),
        row("LT3652", 1, 2.5),
        row("LTC2990", 1, 1.1),
        row("SN74AUP1G58", 2, 0.0018),
        row("TPS22919", 1, 0.008),
        row("ADG734", 2, 0.00004),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerProfile {
    pub capacity_mah: f64,
    pub derate: f64,
    pub i_inactive_ma: f64,
    pub i_active_ma: f64,
    /// Active time per event, s.
    pub sensing_time_s: f64,
    pub events_per_day: f64,
    pub solar_rate_ma: f64,
    pub ledger: Vec<LedgerEntry>,
    /// Externally quoted average current, reported beside the computed one.
    pub stated_i_avg_ma: Option<f64>,
}

impl Default for PowerProfile {
    fn default() -> Self {
        Self {
            capacity_mah: 10_350.0,
            derate: 0.8,
            i_inactive_ma: 4.191,
            i_active_ma: 300.0,
            sensing_time_s: 230.0,
            events_per_day: 6.0,
            solar_rate_ma: 550.0,
            ledger: reference_ledger(),
            stated_i_avg_ma: Some(214.02),
        }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<(), PowerError> {
        let bad = |m: &str| Err(PowerError::Config(m.to_string()));
        if !(self.capacity_mah > 0.0) {
            return bad("capacity_mah must be positive");
        }
        if !(self.derate > 0.0 && self.derate <= 1.0) {
            return bad("derate must lie in (0, 1]");
        }
        if !(self.i_inactive_ma >= 0.0 && self.i_active_ma > self.i_inactive_ma) {
            return bad("need i_active_ma > i_inactive_ma >= 0");
        }
        if !(self.sensing_time_s >= 0.0 && self.events_per_day >= 0.0) {
            return bad("sensing_time_s and events_per_day must be non-negative");
        }
        if !(self.solar_rate_ma > 0.0) {
            return bad("solar_rate_ma must be positive");
        }
        if self.stated_i_avg_ma.is_some_and(|i| !(i > 0.0)) {
            return bad("stated_i_avg_ma must be positive");
        }
        let d = self.duty();
        if d > 1.0 {
            return Err(PowerError::Config(format!(
                "duty fraction {d:.4} exceeds 1 ({} events × {} s per day)",
                self.events_per_day, self.sensing_time_s
            )));
        }
        Ok(())
    }

    /// Fraction of the day spent active, `n·T_s / 86400`.
    pub fn duty(&self) -> f64 {
        self.events_per_day * self.sensing_time_s / SECONDS_PER_DAY
    }

    pub fn from_json_str(text: &str) -> Result<Self, PowerError> {
        let p: PowerProfile =
            serde_json::from_str(text).map_err(|e| PowerError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// Duty-weighted mean current, mA.
pub fn avg_current(p: &PowerProfile) -> Result<f64, PowerError> {
    p.validate()?;
    let d = p.duty();
    Ok(p.i_inactive_ma * (1.0 - d) + p.i_active_ma * d)
}

/// Hours of operation from a full battery at `i_avg_ma`.
pub fn battery_life(p: &PowerProfile, i_avg_ma: f64) -> Result<f64, PowerError> {
    if !(i_avg_ma > 0.0) {
        return Err(PowerError::Domain(format!(
            "average current {i_avg_ma} mA must be positive"
        )));
    }
    Ok(p.capacity_mah / i_avg_ma * p.derate)
}

/// Hours of charging per day needed to replace what the node draws.
pub fn solar_breakeven(p: &PowerProfile, i_avg_ma: f64) -> f64 {
    i_avg_ma * 24.0 / p.solar_rate_ma
}

pub fn ledger_total(p: &PowerProfile) -> f64 {
    p.ledger.iter().map(LedgerEntry::total_ma).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLine {
    pub label: String,
    pub i_avg_ma: f64,
    pub battery_hours: f64,
    pub battery_days: f64,
    pub solar_breakeven_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub duty: f64,
    pub ledger_total_ma: f64,
    /// Relative gap between the ledger sum and `i_inactive_ma`.
    pub ledger_mismatch: f64,
    pub computed: BudgetLine,
    pub stated: Option<BudgetLine>,
    /// `stated / computed` average current, when a stated value is given.
    pub stated_to_computed: Option<f64>,
}

fn line(p: &PowerProfile, label: &str, i: f64) -> Result<BudgetLine, PowerError> {
    let hours = battery_life(p, i)?;
    Ok(BudgetLine {
        label: label.into(),
        i_avg_ma: i,
        battery_hours: hours,
        battery_days: hours / 24.0,
        solar_breakeven_hours: solar_breakeven(p, i),
    })
}

/// Both readings of the average current side by side.
pub fn budget(p: &PowerProfile) -> Result<BudgetReport, PowerError> {
    let computed = avg_current(p)?;
    let total = ledger_total(p);
    let stated = p
        .stated_i_avg_ma
        .map(|i| line(p, "stated", i))
        .transpose()?;
    Ok(BudgetReport {
        duty: p.duty(),
        ledger_total_ma: total,
        ledger_mismatch: if p.i_inactive_ma > 0.0 {
            (total - p.i_inactive_ma).abs() / p.i_inactive_ma
        } else {
            0.0
        },
        computed: line(p, "computed (duty-weighted)", computed)?,
        stated_to_computed: p.stated_i_avg_ma.map(|s| s / computed),
        stated,
    })
}
