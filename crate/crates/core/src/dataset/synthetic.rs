//! Seeded occupant-behavior simulator.
//!
//! One office is simulated at one-minute resolution: weather, weekday
//! occupancy, a well-mixed CO₂ balance, a lumped thermal node and indoor
//! humidity. Windows open through three planted rules (occupant arrival,
//! CO₂ above a threshold, steep indoor temperature rise while overheated) and
//! stay open for a log-normal duration or until the room empties. Every
//! opening is written to a trigger log with the rule that caused it.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ClimateRecord, Dataset, FeatureSchema};
use crate::error::{Error, Result};

/// Non-indoor static features produced by the generator, in column order.
pub const EXTRA_STATIC_NAMES: [&str; 18] = [
    "t_out_station",
    "t_out_site",
    "rain",
    "hour_sin",
    "hour_cos",
    "dow_sin",
    "dow_cos",
    "solar",
    "wind_speed",
    "wind_dir_sin",
    "wind_dir_cos",
    "rh_out",
    "cloud_cover",
    "pressure",
    "doy_sin",
    "doy_cos",
    "is_weekend",
    "t_out_24h",
];

/// Monday 2017-01-02 00:00 UTC in minutes since the epoch.
pub const DEFAULT_START: i64 = 17_168 * 1440;

const MINUTES_PER_DAY: i64 = 1440;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeOfDay {
    pub mean_minute: f64,
    pub std_minutes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Co2Dynamics {
    pub baseline_ppm: f64,
    /// ppm per minute added by each present occupant.
    pub generation_ppm_per_min: f64,
    /// Fractional approach to baseline per minute with closed windows.
    pub ventilation_decay: f64,
    /// Extra decay per minute while a window is open.
    pub window_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalDynamics {
    pub setpoint: f64,
    pub hvac_decay: f64,
    /// °C per minute per present occupant.
    pub occupant_gain: f64,
    /// °C per minute at 1000 W/m² irradiance.
    pub solar_gain: f64,
    /// Fractional approach to outdoor temperature per minute while open.
    pub window_exchange: f64,
    /// Expected internal heat events per occupied hour.
    pub heat_event_rate_per_hour: f64,
    /// °C per minute added during a heat event.
    pub heat_event_gain: f64,
    pub heat_event_minutes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HumidityDynamics {
    pub baseline: f64,
    pub relax_decay: f64,
    pub occupant_gain: f64,
    pub window_exchange: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeningRules {
    /// Chance that an arriving occupant opens a closed window.
    pub arrival_probability: f64,
    pub co2_threshold_ppm: f64,
    /// Indoor temperature rise in °C over `temp_rise_window_minutes`.
    pub temp_rise_threshold: f64,
    pub temp_rise_window_minutes: u32,
    /// The rise rule only fires above `setpoint + overheat_margin`.
    pub overheat_margin: f64,
    /// Minutes after a closing during which the CO₂ and temperature rules are muted.
    pub refractory_minutes: u32,
}

/// Log-normal opening duration in minutes: `exp(log_mean + log_std · z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogNormalMinutes {
    pub log_mean: f64,
    pub log_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelNoise {
    pub co2: f64,
    pub t_indoor: f64,
    pub rh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub series_id: String,
    pub n_days: u32,
    pub start_timestamp: i64,
    pub occupants: u32,
    /// Chance that a given occupant shows up on a weekday.
    pub presence_probability: f64,
    pub arrival: TimeOfDay,
    pub departure: TimeOfDay,
    pub co2: Co2Dynamics,
    pub thermal: ThermalDynamics,
    pub humidity: HumidityDynamics,
    pub rules: OpeningRules,
    pub opening_duration: LogNormalMinutes,
    pub noise: ChannelNoise,
    /// Open-state fraction the defaults are tuned to; see [`calibrate_open_fraction`].
    pub target_open_fraction: f64,
    /// Expected sensor dropouts per day (each 5–120 missing minutes).
    pub dropouts_per_day: f64,
    pub seed: u64,
}

impl Default for TimeOfDay {
    fn default() -> Self {
        Self {
            mean_minute: 8.5 * 60.0,
            std_minutes: 30.0,
        }
    }
}

impl Default for Co2Dynamics {
    fn default() -> Self {
        Self {
            baseline_ppm: 420.0,
            generation_ppm_per_min: 9.0,
            ventilation_decay: 0.02,
            window_decay: 0.15,
        }
    }
}

impl Default for ThermalDynamics {
    fn default() -> Self {
        Self {
            setpoint: 23.2,
            hvac_decay: 0.02,
            occupant_gain: 0.004,
            solar_gain: 0.02,
            window_exchange: 0.01,
            heat_event_rate_per_hour: 0.06,
            heat_event_gain: 0.06,
            heat_event_minutes: 35,
        }
    }
}

impl Default for HumidityDynamics {
    fn default() -> Self {
        Self {
            baseline: 37.5,
            relax_decay: 0.01,
            occupant_gain: 0.02,
            window_exchange: 0.03,
        }
    }
}

impl Default for OpeningRules {
    fn default() -> Self {
        Self {
            arrival_probability: 0.3,
            co2_threshold_ppm: 1150.0,
            temp_rise_threshold: 1.0,
            temp_rise_window_minutes: 30,
            overheat_margin: 0.5,
            refractory_minutes: 30,
        }
    }
}

impl Default for LogNormalMinutes {
    fn default() -> Self {
        // median 30 min, quartiles ≈ 9.5 and 94 min
        Self {
            log_mean: 30f64.ln(),
            log_std: 1.7,
        }
    }
}

impl Default for ChannelNoise {
    fn default() -> Self {
        Self {
            co2: 5.0,
            t_indoor: 0.05,
            rh: 0.3,
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            series_id: "synthetic".into(),
            n_days: 30,
            start_timestamp: DEFAULT_START,
            occupants: 2,
            presence_probability: 0.7,
            arrival: TimeOfDay::default(),
            departure: TimeOfDay {
                mean_minute: 17.0 * 60.0,
                std_minutes: 45.0,
            },
            co2: Co2Dynamics::default(),
            thermal: ThermalDynamics::default(),
            humidity: HumidityDynamics::default(),
            rules: OpeningRules::default(),
            opening_duration: LogNormalMinutes::default(),
            noise: ChannelNoise::default(),
            target_open_fraction: 0.07,
            dropouts_per_day: 0.0,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    /// Openings are driven only by the CO₂ threshold, with a fixed duration.
    /// Indoor temperature and humidity do not react to the window.
    pub fn co2_rule_only() -> Self {
        let mut c = Self {
            series_id: "synthetic-co2".into(),
            presence_probability: 1.0,
            opening_duration: LogNormalMinutes {
                log_mean: 45f64.ln(),
                log_std: 0.0,
            },
            ..Self::default()
        };
        c.rules.arrival_probability = 0.0;
        c.rules.temp_rise_threshold = f64::INFINITY;
        c.rules.co2_threshold_ppm = 900.0;
        c.rules.refractory_minutes = 1;
        c.thermal.window_exchange = 1e-9;
        c.humidity.window_exchange = 1e-9;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_days == 0 {
            return bad("n_days must be at least 1".into());
        }
        if self.occupants == 0 {
            return bad("occupants must be at least 1".into());
        }
        let probabilities = [
            ("presence_probability", self.presence_probability),
            ("rules.arrival_probability", self.rules.arrival_probability),
            ("target_open_fraction", self.target_open_fraction),
        ];
        for (name, p) in probabilities {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let positive = [
            ("co2.baseline_ppm", self.co2.baseline_ppm),
            ("co2.generation_ppm_per_min", self.co2.generation_ppm_per_min),
            ("co2.ventilation_decay", self.co2.ventilation_decay),
            ("co2.window_decay", self.co2.window_decay),
            ("thermal.hvac_decay", self.thermal.hvac_decay),
            ("thermal.window_exchange", self.thermal.window_exchange),
            ("humidity.relax_decay", self.humidity.relax_decay),
            ("humidity.window_exchange", self.humidity.window_exchange),
            ("rules.co2_threshold_ppm", self.rules.co2_threshold_ppm),
            ("rules.temp_rise_threshold", self.rules.temp_rise_threshold),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return bad(format!("{name} must be strictly positive, got {v}"));
            }
        }
        let decays = [
            self.co2.ventilation_decay + self.co2.window_decay,
            self.thermal.hvac_decay + self.thermal.window_exchange,
            self.humidity.relax_decay + self.humidity.window_exchange,
        ];
        if decays.iter().any(|d| *d >= 1.0) {
            return bad("per-minute decay constants must sum to less than 1".into());
        }
        let non_negative = [
            ("thermal.occupant_gain", self.thermal.occupant_gain),
            ("thermal.solar_gain", self.thermal.solar_gain),
            ("thermal.heat_event_rate_per_hour", self.thermal.heat_event_rate_per_hour),
            ("thermal.heat_event_gain", self.thermal.heat_event_gain),
            ("humidity.occupant_gain", self.humidity.occupant_gain),
            ("rules.overheat_margin", self.rules.overheat_margin),
            ("opening_duration.log_std", self.opening_duration.log_std),
            ("noise.co2", self.noise.co2),
            ("noise.t_indoor", self.noise.t_indoor),
            ("noise.rh", self.noise.rh),
            ("dropouts_per_day", self.dropouts_per_day),
            ("arrival.std_minutes", self.arrival.std_minutes),
            ("departure.std_minutes", self.departure.std_minutes),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.opening_duration.log_mean.is_finite() {
            return bad("opening_duration.log_mean must be finite".into());
        }
        if self.rules.temp_rise_window_minutes == 0 {
            return bad("rules.temp_rise_window_minutes must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerCause {
    Arrival,
    Co2,
    TempRise,
}

impl TriggerCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerCause::Arrival => "arrival",
            TriggerCause::Co2 => "co2",
            TriggerCause::TempRise => "temp_rise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "arrival" => Some(TriggerCause::Arrival),
            "co2" => Some(TriggerCause::Co2),
            "temp_rise" => Some(TriggerCause::TempRise),
            _ => None,
        }
    }
}

/// One closed→open transition and the rule that caused it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    /// First open minute.
    pub timestamp: i64,
    pub cause: TriggerCause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOutput {
    pub dataset: Dataset,
    pub triggers: Vec<TriggerEvent>,
}

struct DayPlan {
    /// (arrival, departure) minute-of-day for each present occupant.
    stays: Vec<(i64, i64)>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn plan_day(cfg: &SyntheticConfig, weekday: bool, rng: &mut ChaCha8Rng) -> DayPlan {
    let mut stays = Vec::new();
    for _ in 0..cfg.occupants {
        let present = rng.random::<f64>() < cfg.presence_probability;
        let za = normal(rng);
        let zd = normal(rng);
        if !(weekday && present) {
            continue;
        }
        let arrival = (cfg.arrival.mean_minute + cfg.arrival.std_minutes * za)
            .round()
            .clamp(300.0, 720.0) as i64;
        let departure = (cfg.departure.mean_minute + cfg.departure.std_minutes * zd)
            .round()
            .clamp(arrival as f64 + 60.0, 1380.0) as i64;
        stays.push((arrival, departure));
    }
    DayPlan { stays }
}

/// Slowly varying outdoor conditions.
struct Weather {
    temp_anomaly: f64,
    cloud_latent: f64,
    wind: f64,
    wind_dir: f64,
    pressure: f64,
    t_out_24h: f64,
    rain_left: u32,
}

struct WeatherSample {
    t_station: f64,
    t_site: f64,
    rain: f64,
    solar: f64,
    wind: f64,
    wind_dir: f64,
    rh_out: f64,
    cloud: f64,
    pressure: f64,
    t_out_24h: f64,
}

impl Weather {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            temp_anomaly: 2.0 * normal(rng),
            cloud_latent: normal(rng),
            wind: 3.0,
            wind_dir: 2.0 * PI * rng.random::<f64>(),
            pressure: 1013.0,
            t_out_24h: f64::NAN,
            rain_left: 0,
        }
    }

    fn step(&mut self, timestamp: i64, rng: &mut ChaCha8Rng) -> WeatherSample {
        let day = timestamp.div_euclid(MINUTES_PER_DAY) as f64;
        let minute = timestamp.rem_euclid(MINUTES_PER_DAY) as f64;
        let year_phase = 2.0 * PI * (day % 365.2425) / 365.2425;
        let summer = (year_phase - 2.0 * PI * 172.0 / 365.0).cos();

        self.temp_anomaly = 0.999 * self.temp_anomaly + 0.09 * normal(rng);
        self.cloud_latent = 0.998 * self.cloud_latent + 0.063 * normal(rng);
        self.wind = (self.wind + 0.01 * (3.5 - self.wind) + 0.15 * normal(rng)).max(0.0);
        self.wind_dir += 0.02 * normal(rng);
        self.pressure += 0.005 * (1013.0 - self.pressure) + 0.08 * normal(rng);

        let cloud = 1.0 / (1.0 + (-self.cloud_latent).exp());
        let day_len = 12.0 + 4.0 * summer;
        let sunrise = 720.0 - 30.0 * day_len;
        let elevation = ((minute - sunrise) / (60.0 * day_len) * PI).sin().max(0.0);
        let solar = elevation * (550.0 + 350.0 * summer) * (1.0 - 0.75 * cloud);

        let diurnal = -4.0 * (2.0 * PI * (minute - 240.0) / 1440.0).cos();
        let t_station = 10.0 + 8.0 * summer + diurnal + self.temp_anomaly;
        let t_site = t_station + 0.6 + 0.002 * solar + 0.1 * normal(rng);

        if self.rain_left == 0 && cloud > 0.8 && rng.random::<f64>() < 0.003 {
            self.rain_left = rng.random_range(20..180);
        }
        let rain = if self.rain_left > 0 {
            self.rain_left -= 1;
            (0.02 + 0.05 * rng.random::<f64>()) * cloud
        } else {
            0.0
        };

        self.t_out_24h = if self.t_out_24h.is_nan() {
            t_station
        } else {
            self.t_out_24h + (t_station - self.t_out_24h) / 1440.0
        };
        let rh_out = (75.0 + 15.0 * cloud - 0.02 * solar - 1.0 * diurnal
            + if rain > 0.0 { 10.0 } else { 0.0 })
        .clamp(15.0, 100.0);

        WeatherSample {
            t_station,
            t_site,
            rain,
            solar,
            wind: self.wind,
            wind_dir: self.wind_dir,
            rh_out,
            cloud,
            pressure: self.pressure,
            t_out_24h: self.t_out_24h,
        }
    }
}

fn static_features(timestamp: i64, w: &WeatherSample) -> Vec<f64> {
    let day = timestamp.div_euclid(MINUTES_PER_DAY);
    let minute = timestamp.rem_euclid(MINUTES_PER_DAY) as f64;
    let weekday_index = (day + 3).rem_euclid(7) as f64; // 0 = Monday
    let hour_phase = 2.0 * PI * minute / 1440.0;
    let dow_phase = 2.0 * PI * weekday_index / 7.0;
    let doy_phase = 2.0 * PI * (day as f64 % 365.2425) / 365.2425;
    vec![
        w.t_station,
        w.t_site,
        w.rain,
        hour_phase.sin(),
        hour_phase.cos(),
        dow_phase.sin(),
        dow_phase.cos(),
        w.solar,
        w.wind,
        w.wind_dir.sin(),
        w.wind_dir.cos(),
        w.rh_out,
        w.cloud,
        w.pressure,
        doy_phase.sin(),
        doy_phase.cos(),
        if weekday_index >= 5.0 { 1.0 } else { 0.0 },
        w.t_out_24h,
    ]
}

/// Simulates `config.n_days` of one office. Pure function of the config.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticOutput> {
    config.validate()?;
    let cfg = config;
    // Separate streams keep duration draws aligned when only durations change.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut duration_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    duration_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2);

    let schema = FeatureSchema::default_synthetic();
    let mut weather = Weather::new(&mut rng);
    let mut co2 = cfg.co2.baseline_ppm;
    let mut t_in = cfg.thermal.setpoint;
    let mut rh = cfg.humidity.baseline;
    let rise_window = cfg.rules.temp_rise_window_minutes as usize;
    let mut t_history = std::collections::VecDeque::with_capacity(rise_window + 1);

    let mut open = false;
    let mut open_until = i64::MIN;
    let mut closed_since = i64::MIN / 2;
    let mut heat_left = 0u32;
    let mut dropout_left = 0u32;

    let total_minutes = cfg.n_days as i64 * MINUTES_PER_DAY;
    let mut records = Vec::with_capacity(total_minutes as usize);
    let mut triggers = Vec::new();
    let mut plan = DayPlan { stays: vec![] };

    for offset in 0..total_minutes {
        let ts = cfg.start_timestamp + offset;
        let minute = ts.rem_euclid(MINUTES_PER_DAY);
        if offset == 0 || minute == 0 {
            let weekday = (ts.div_euclid(MINUTES_PER_DAY) + 3).rem_euclid(7) < 5;
            plan = plan_day(cfg, weekday, &mut rng);
        }
        let occupants = plan
            .stays
            .iter()
            .filter(|(a, d)| (*a..*d).contains(&minute))
            .count();
        let arrivals = plan.stays.iter().filter(|(a, _)| *a == minute).count();
        let w = weather.step(ts, &mut rng);

        if occupants > 0 && heat_left == 0 {
            let p = cfg.thermal.heat_event_rate_per_hour / 60.0;
            if rng.random::<f64>() < p {
                heat_left = cfg.thermal.heat_event_minutes;
            }
        }

        // Window decisions use the true state at this minute.
        if open && (ts >= open_until || occupants == 0) {
            open = false;
            closed_since = ts;
        }
        let arrival_draws: Vec<f64> = (0..arrivals).map(|_| rng.random::<f64>()).collect();
        if !open && occupants > 0 {
            let rested = ts - closed_since >= cfg.rules.refractory_minutes as i64;
            let rise = t_history
                .front()
                .filter(|_| t_history.len() > rise_window)
                .map(|old: &f64| t_in - old);
            let cause = if arrival_draws.iter().any(|u| *u < cfg.rules.arrival_probability) {
                Some(TriggerCause::Arrival)
            } else if rested && co2 >= cfg.rules.co2_threshold_ppm {
                Some(TriggerCause::Co2)
            } else if rested
                && t_in > cfg.thermal.setpoint + cfg.rules.overheat_margin
                && rise.is_some_and(|r| r >= cfg.rules.temp_rise_threshold)
            {
                Some(TriggerCause::TempRise)
            } else {
                None
            };
            if let Some(cause) = cause {
                let z: f64 = normal(&mut duration_rng);
                let minutes = (cfg.opening_duration.log_mean + cfg.opening_duration.log_std * z)
                    .exp()
                    .round()
                    .max(1.0);
                open = true;
                open_until = ts.saturating_add(minutes.min(1e9) as i64);
                triggers.push(TriggerEvent { timestamp: ts, cause });
            }
        }

        if dropout_left == 0 && rng.random::<f64>() < cfg.dropouts_per_day / 1440.0 {
            dropout_left = rng.random_range(5..=120);
        }
        let noise = [normal(&mut noise_rng), normal(&mut noise_rng), normal(&mut noise_rng)];
        if dropout_left > 0 {
            dropout_left -= 1;
        } else {
            records.push(ClimateRecord {
                timestamp: ts,
                co2: (co2 + cfg.noise.co2 * noise[0]).max(0.0),
                t_indoor: t_in + cfg.noise.t_indoor * noise[1],
                rh: (rh + cfg.noise.rh * noise[2]).clamp(0.0, 100.0),
                static_features: static_features(ts, &w),
                window_open: open,
            });
        }

        // Advance the physical state to the next minute.
        t_history.push_back(t_in);
        if t_history.len() > rise_window + 1 {
            t_history.pop_front();
        }
        let occ = occupants as f64;
        let open_f = if open { 1.0 } else { 0.0 };
        co2 += cfg.co2.generation_ppm_per_min * occ
            - (cfg.co2.ventilation_decay + cfg.co2.window_decay * open_f)
                * (co2 - cfg.co2.baseline_ppm);
        let heat = if heat_left > 0 {
            heat_left -= 1;
            cfg.thermal.heat_event_gain
        } else {
            0.0
        };
        t_in += cfg.thermal.hvac_decay * (cfg.thermal.setpoint - t_in)
            + cfg.thermal.occupant_gain * occ
            + cfg.thermal.solar_gain * w.solar / 1000.0
            + heat
            + cfg.thermal.window_exchange * open_f * (w.t_station - t_in);
        rh += cfg.humidity.relax_decay * (cfg.humidity.baseline - rh)
            + cfg.humidity.occupant_gain * occ
            + cfg.humidity.window_exchange * open_f * (0.5 * w.rh_out - rh);
    }

    let dataset = Dataset::new(cfg.series_id.clone(), schema, records)?;
    // Openings that fell into a dropout are not observable.
    triggers.retain(|e| dataset.index_of(e.timestamp).is_some());
    Ok(SyntheticOutput { dataset, triggers })
}

/// Adjusts `opening_duration.log_mean` by bisection until the generated
/// open-state fraction is within `tolerance` of `target_open_fraction`.
pub fn calibrate_open_fraction(config: &SyntheticConfig, tolerance: f64) -> Result<SyntheticConfig> {
    config.validate()?;
    let fraction = |log_mean: f64| -> Result<f64> {
        let mut c = config.clone();
        c.opening_duration.log_mean = log_mean;
        Ok(super::summary_stats(&generate_synthetic(&c)?.dataset)?.open_fraction)
    };
    let target = config.target_open_fraction;
    let (mut lo, mut hi) = (
        config.opening_duration.log_mean - 5.0,
        config.opening_duration.log_mean + 5.0,
    );
    let mut best = (f64::INFINITY, config.opening_duration.log_mean);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let f = fraction(mid)?;
        if (f - target).abs() < best.0 {
            best = ((f - target).abs(), mid);
        }
        if (f - target).abs() <= tolerance {
            break;
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > tolerance {
        return Err(Error::Config(format!(
            "cannot reach open fraction {target} within {tolerance} by adjusting opening durations"
        )));
    }
    let mut out = config.clone();
    out.opening_duration.log_mean = best.1;
    Ok(out)
}

pub fn write_trigger_log(events: &[TriggerEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "timestamp,cause")?;
        for e in events {
            writeln!(out, "{},{}", e.timestamp, e.cause.as_str())?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

pub fn read_trigger_log(path: impl AsRef<Path>) -> Result<Vec<TriggerEvent>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |column: &str, value: &str| Error::ParseCell {
            row: k + 1,
            column: column.into(),
            value: value.into(),
        };
        let ts = row.get(0).unwrap_or("");
        let cause = row.get(1).unwrap_or("");
        out.push(TriggerEvent {
            timestamp: ts.parse().map_err(|_| bad("timestamp", ts))?,
            cause: TriggerCause::parse(cause).ok_or_else(|| bad("cause", cause))?,
        });
    }
    Ok(out)
}
