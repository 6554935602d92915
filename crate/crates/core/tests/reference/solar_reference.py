"""Regenerates the frozen solar-geometry reference table used by the Rust tests.

Uses pvlib's NREL SPA implementation (no refraction) and its Ineichen-Perez
clear-sky routine with Kasten-Young air mass and Spencer extraterrestrial
irradiance scaled to a 1361 W/m^2 solar constant.
"""
import pandas as pd
import pvlib

POINTS = [
    (39.74, -105.18, "2020-06-21T19:00:00Z"),
    (39.74, -105.18, "2020-12-21T19:00:00Z"),
    (39.74, -105.18, "2021-03-15T16:30:00Z"),
    (37.43, -122.17, "2017-07-04T20:00:00Z"),
    (37.43, -122.17, "2017-10-10T17:15:00Z"),
    (32.88, -117.23, "2020-09-01T21:00:00Z"),
    (0.0, 0.0, "2021-03-20T12:00:00Z"),
    (-33.87, 151.21, "2019-01-15T02:00:00Z"),
    (51.48, 0.0, "2000-06-01T11:00:00Z"),
    (64.84, -147.72, "2022-05-20T22:00:00Z"),
]

for lat, lon, ts in POINTS:
    t = pd.DatetimeIndex([pd.Timestamp(ts)])
    pos = pvlib.solarposition.spa_python(t, lat, lon, altitude=0, pressure=101325,
                                         temperature=12, delta_t=67.0, atmos_refract=0.0)
    zen = pos["zenith"].iloc[0]
    azi = pos["azimuth"].iloc[0]
    am = pvlib.atmosphere.get_relative_airmass(pd.Series([zen]), model="kastenyoung1989")
    dni_extra = pvlib.irradiance.get_extra_radiation(t, solar_constant=1361.0, method="spencer")
    cs = pvlib.clearsky.ineichen(pd.Series([zen]), am, 3.0, altitude=0,
                                 dni_extra=pd.Series(dni_extra.values))
    print(f"({float(lat)!r}, {float(lon)!r}, \"{ts}\", {zen:.6f}, {azi:.6f}, "
          f"{cs['ghi'][0]:.6f}, {cs['dni'][0]:.6f}, {cs['dhi'][0]:.6f}),")
