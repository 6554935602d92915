//! Solar geometry: sun position, incidence angle, clear-sky irradiance and
//! plane-of-array composition.
//!
//! Angles are in degrees throughout. Azimuths are measured clockwise from
//! true north and wrapped to `[0, 360)`.

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Solar constant in W/m².
pub const SOLAR_CONSTANT: f64 = 1361.0;

/// Default atmospheric transmittance for the simple clear-sky model.
pub const DEFAULT_TRANSMITTANCE: f64 = 0.75;

/// Default Linke turbidity for the Ineichen model.
pub const DEFAULT_LINKE_TURBIDITY: f64 = 3.0;

/// Fraction of simple-model clear-sky GHI attributed to diffuse irradiance.
pub const SIMPLE_DIFFUSE_FRACTION: f64 = 0.10;

const MIN_YEAR: i32 = 1950;
const MAX_YEAR: i32 = 2100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoLocation {
    latitude: f64,
    longitude: f64,
}

impl GeoLocation {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(Error::invalid(format!("latitude {latitude} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::invalid(format!(
                "longitude {longitude} outside [-180, 180]"
            )));
        }
        Ok(Self {
            latitude,
            longitude,
        })
    }

    pub fn latitude(&self) -> f64 {
        self.latitude
    }

    pub fn longitude(&self) -> f64 {
        self.longitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarAngles {
    pub zenith: f64,
    pub azimuth: f64,
}

impl SolarAngles {
    /// Builds angles from raw values, wrapping the azimuth into `[0, 360)`.
    pub fn new(zenith: f64, azimuth: f64) -> Result<Self> {
        if !zenith.is_finite() || !(0.0..=180.0).contains(&zenith) {
            return Err(Error::invalid(format!("zenith {zenith} outside [0, 180]")));
        }
        if !azimuth.is_finite() {
            return Err(Error::invalid("non-finite azimuth"));
        }
        Ok(Self {
            zenith,
            azimuth: wrap_degrees(azimuth),
        })
    }

    pub fn cos_zenith(&self) -> f64 {
        self.zenith.to_radians().cos()
    }

    pub fn is_daytime(&self) -> bool {
        self.zenith < 90.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PanelOrientation {
    tilt: f64,
    azimuth: f64,
}

impl PanelOrientation {
    pub fn new(tilt: f64, azimuth: f64) -> Result<Self> {
        if !(0.0..=90.0).contains(&tilt) {
            return Err(Error::invalid(format!("panel tilt {tilt} outside [0, 90]")));
        }
        if !azimuth.is_finite() {
            return Err(Error::invalid("non-finite panel azimuth"));
        }
        Ok(Self {
            tilt,
            azimuth: wrap_degrees(azimuth),
        })
    }

    pub fn horizontal() -> Self {
        Self {
            tilt: 0.0,
            azimuth: 180.0,
        }
    }

    pub fn tilt(&self) -> f64 {
        self.tilt
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearSkyIrradiance {
    pub ghi: f64,
    pub dni: f64,
    pub dhi: f64,
}

impl ClearSkyIrradiance {
    pub const ZERO: Self = Self {
        ghi: 0.0,
        dni: 0.0,
        dhi: 0.0,
    };
}

/// Clear-sky model selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", deny_unknown_fields)]
pub enum ClearSkyConfig {
    /// `GHI = I0 * tau * cos(zenith)` with a fixed diffuse fraction.
    #[serde(rename = "appendix-simple")]
    AppendixSimple { transmittance: f64 },
    /// Ineichen-Perez with a Linke turbidity and site altitude.
    #[serde(rename = "ineichen")]
    Ineichen { linke_turbidity: f64, altitude_m: f64 },
}

impl Default for ClearSkyConfig {
    fn default() -> Self {
        ClearSkyConfig::Ineichen {
            linke_turbidity: DEFAULT_LINKE_TURBIDITY,
            altitude_m: 0.0,
        }
    }
}

impl ClearSkyConfig {
    /// Looks up a model by name with its default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "appendix-simple" => Ok(ClearSkyConfig::AppendixSimple {
                transmittance: DEFAULT_TRANSMITTANCE,
            }),
            "ineichen" => Ok(ClearSkyConfig::default()),
            other => Err(Error::Config(format!("unknown clear-sky model '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClearSkyConfig::AppendixSimple { .. } => "appendix-simple",
            ClearSkyConfig::Ineichen { .. } => "ineichen",
        }
    }
}

fn wrap_degrees(x: f64) -> f64 {
    let w = x.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

fn check_supported(ts: &DateTime<Utc>) -> Result<()> {
    let year = ts.year();
    if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
        return Err(Error::invalid(format!(
            "timestamp {ts} outside supported years {MIN_YEAR}-{MAX_YEAR}"
        )));
    }
    Ok(())
}

/// Sun position from the NOAA low-precision ephemeris (declination, equation
/// of time and hour angle). No refraction correction.
pub fn solar_position(ts: DateTime<Utc>, loc: GeoLocation) -> Result<SolarAngles> {
    check_supported(&ts)?;

    let unix = ts.timestamp() as f64 + f64::from(ts.timestamp_subsec_nanos()) * 1e-9;
    let julian_day = unix / 86_400.0 + 2_440_587.5;
    let jc = (julian_day - 2_451_545.0) / 36_525.0;

    let mean_long = (280.46646 + jc * (36_000.76983 + jc * 0.0003032)).rem_euclid(360.0);
    let mean_anom = 357.52911 + jc * (35_999.05029 - 0.0001537 * jc);
    let ecc = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc);
    let m = mean_anom.to_radians();
    let center = m.sin() * (1.914602 - jc * (0.004817 + 0.000014 * jc))
        + (2.0 * m).sin() * (0.019993 - 0.000101 * jc)
        + (3.0 * m).sin() * 0.000289;
    let true_long = mean_long + center;
    let omega = (125.04 - 1934.136 * jc).to_radians();
    let app_long = (true_long - 0.00569 - 0.00478 * omega.sin()).to_radians();

    let mean_obliq = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0;
    let obliq = (mean_obliq + 0.00256 * omega.cos()).to_radians();
    let decl = (obliq.sin() * app_long.sin()).asin();

    let y = (obliq / 2.0).tan().powi(2);
    let l0 = mean_long.to_radians();
    let eot_minutes = 4.0
        * (y * (2.0 * l0).sin() - 2.0 * ecc * m.sin()
            + 4.0 * ecc * y * m.sin() * (2.0 * l0).cos()
            - 0.5 * y * y * (4.0 * l0).sin()
            - 1.25 * ecc * ecc * (2.0 * m).sin())
        .to_degrees();

    let minutes_utc = f64::from(ts.num_seconds_from_midnight()) / 60.0
        + f64::from(ts.timestamp_subsec_nanos()) * 1e-9 / 60.0;
    let true_solar = minutes_utc + eot_minutes + 4.0 * loc.longitude;
    let hour_angle = (true_solar / 4.0 - 180.0).to_radians();

    let lat = loc.latitude.to_radians();
    let cos_zen = (lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    let zenith = cos_zen.acos().to_degrees();

    let azimuth = (hour_angle.sin())
        .atan2(hour_angle.cos() * lat.sin() - decl.tan() * lat.cos())
        .to_degrees()
        + 180.0;

    Ok(SolarAngles {
        zenith,
        azimuth: wrap_degrees(azimuth),
    })
}

/// Cosine of the angle between the sun direction and the panel normal.
/// Not clamped; negative values mean the sun is behind the panel.
pub fn cos_incidence(sun: SolarAngles, panel: PanelOrientation) -> f64 {
    let tz = sun.zenith.to_radians();
    let tilt = panel.tilt.to_radians();
    let daz = (sun.azimuth - panel.azimuth).to_radians();
    tz.cos() * tilt.cos() + tz.sin() * tilt.sin() * daz.cos()
}

/// Extraterrestrial normal irradiance with Spencer's eccentricity correction.
pub fn extraterrestrial_irradiance(day_of_year: u32) -> f64 {
    let b = 2.0 * std::f64::consts::PI * (f64::from(day_of_year) - 1.0) / 365.0;
    let e0 = 1.00011 + 0.034221 * b.cos() + 0.00128 * b.sin() + 0.000719 * (2.0 * b).cos()
        + 0.000077 * (2.0 * b).sin();
    SOLAR_CONSTANT * e0
}

/// Kasten-Young relative air mass; `None` below the horizon.
pub fn relative_airmass(zenith: f64) -> Option<f64> {
    if zenith >= 90.0 {
        return None;
    }
    Some(1.0 / (zenith.to_radians().cos() + 0.50572 * (96.07995 - zenith).powf(-1.6364)))
}

/// Clear-sky irradiance for a known sun position. `day_of_year` only matters
/// for the Ineichen backend (extraterrestrial irradiance).
pub fn clearsky_for_sun(sun: SolarAngles, day_of_year: u32, model: ClearSkyConfig) -> ClearSkyIrradiance {
    if sun.zenith >= 90.0 {
        return ClearSkyIrradiance::ZERO;
    }
    let cos_z = sun.cos_zenith().max(0.0);
    match model {
        ClearSkyConfig::AppendixSimple { transmittance } => {
            let ghi = SOLAR_CONSTANT * transmittance * cos_z;
            let dhi_nominal = SIMPLE_DIFFUSE_FRACTION * ghi;
            let dni = (ghi - dhi_nominal) / cos_z.max(0.01);
            // recomputing DHI from the composition keeps GHI = DNI cos + DHI
            // exact even where the cosine floor kicks in
            let dhi = (ghi - dni * cos_z).max(0.0);
            ClearSkyIrradiance { ghi, dni, dhi }
        }
        ClearSkyConfig::Ineichen {
            linke_turbidity: tl,
            altitude_m: alt,
        } => {
            let Some(am_rel) = relative_airmass(sun.zenith) else {
                return ClearSkyIrradiance::ZERO;
            };
            // absolute air mass via the standard-atmosphere pressure ratio
            let pressure_ratio = (1.0 - 2.25577e-5 * alt).powf(5.25588);
            let am = am_rel * pressure_ratio;
            let dni_extra = extraterrestrial_irradiance(day_of_year);

            let fh1 = (-alt / 8000.0).exp();
            let fh2 = (-alt / 1250.0).exp();
            let cg1 = 5.09e-5 * alt + 0.868;
            let cg2 = 3.92e-5 * alt + 0.0387;

            let ghi = cg1 * dni_extra * cos_z * (-cg2 * am * (fh1 + fh2 * (tl - 1.0))).exp().max(0.0);
            let b = 0.664 + 0.163 / fh1;
            let bnci = dni_extra * (b * (-0.09 * am * (tl - 1.0)).exp()).max(0.0);
            let corr = ((1.0 - (0.1 - 0.2 * (-tl).exp()) / (0.1 + 0.882 / fh1)) / cos_z).clamp(0.0, 1e20);
            let dni = bnci.min(ghi * corr);
            let dhi = (ghi - dni * cos_z).max(0.0);
            ClearSkyIrradiance { ghi, dni, dhi }
        }
    }
}

/// Clear-sky irradiance at a timestamp and location.
pub fn clearsky_irradiance(
    ts: DateTime<Utc>,
    loc: GeoLocation,
    model: ClearSkyConfig,
) -> Result<ClearSkyIrradiance> {
    let sun = solar_position(ts, loc)?;
    Ok(clearsky_for_sun(sun, ts.ordinal(), model))
}

/// Isotropic-sky plane-of-array irradiance without ground reflection.
pub fn plane_of_array(cs: ClearSkyIrradiance, sun: SolarAngles, panel: PanelOrientation) -> f64 {
    let beam = cs.dni * cos_incidence(sun, panel).max(0.0);
    (beam + cs.dhi).max(0.0)
}

/// `GHI = DNI * cos(zenith) + DHI`, with the beam term clamped at the horizon.
pub fn compose_ghi(dni: f64, dhi: f64, zenith: f64) -> Result<f64> {
    if dni < 0.0 || dhi < 0.0 || !dni.is_finite() || !dhi.is_finite() {
        return Err(Error::invalid(format!(
            "irradiance components must be finite and non-negative (dni {dni}, dhi {dhi})"
        )));
    }
    Ok(dni * zenith.to_radians().cos().max(0.0) + dhi)
}
