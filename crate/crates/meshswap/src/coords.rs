//! Coordinate conversions between the consumer's curvilinear dipole frame and
//! the producer's local tangent plane.
//!
//! The chain runs dipole -> spherical ECEF -> Cartesian ECEF -> ENU; each
//! stage has an exact inverse on its domain. The Earth is treated as a sphere
//! and the dipole is centered and untilted, so the magnetic and geographic
//! frames coincide.

use crate::error::{Error, Result};
use crate::forest::Tree;
use serde::{Deserialize, Serialize};

/// Mean Earth radius in km (spherical model).
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Absolute residual tolerance for the dipole radial inversion.
pub const DIPOLE_INVERSION_TOL: f64 = 1e-13;

const DIPOLE_MAX_ITER: usize = 100;

/// Smallest invertible radius as a fraction of the Earth radius; roots below
/// this sit far underground and are treated as outside the dipole domain.
pub const DIPOLE_MIN_R_HAT: f64 = 1e-3;

/// Spherical ECEF: radius (km), colatitude (rad, [0, pi]), longitude (rad).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalEcef {
    pub r: f64,
    pub theta: f64,
    pub lambda: f64,
}

/// Cartesian ECEF in km.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianEcef {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// East-North-Up point in the local tangent plane of an [`EnuOrigin`], km.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnuPoint {
    pub e: f64,
    pub n: f64,
    pub u: f64,
}

/// Centered-dipole coordinates: q field-aligned, p L-shell-like (> 0),
/// lambda longitude (rad). With r_hat = r / R_E:
/// q = cos(theta) / r_hat^2, p = r_hat / sin^2(theta).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipolePoint {
    pub q: f64,
    pub p: f64,
    pub lambda: f64,
}

/// Anchor of the ENU tangent plane: geographic latitude/longitude (rad) and
/// radial distance of the plane origin (km).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnuOrigin {
    pub lat0: f64,
    pub lon0: f64,
    pub r0: f64,
}

impl EnuOrigin {
    pub fn ecef(&self) -> CartesianEcef {
        spherical_to_ecef(&SphericalEcef {
            r: self.r0,
            theta: std::f64::consts::FRAC_PI_2 - self.lat0,
            lambda: self.lon0,
        })
    }
}

pub fn spherical_to_ecef(p: &SphericalEcef) -> CartesianEcef {
    let (st, ct) = p.theta.sin_cos();
    let (sl, cl) = p.lambda.sin_cos();
    CartesianEcef {
        x: p.r * st * cl,
        y: p.r * st * sl,
        z: p.r * ct,
    }
}

pub fn ecef_to_spherical(p: &CartesianEcef) -> Result<SphericalEcef> {
    let r = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
    if r == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    let rho = p.x.hypot(p.y);
    Ok(SphericalEcef {
        r,
        theta: rho.atan2(p.z),
        lambda: if rho == 0.0 { 0.0 } else { p.y.atan2(p.x) },
    })
}

/// Rows of the ECEF-to-ENU rotation at the origin: east, north, up.
fn enu_axes(o: &EnuOrigin) -> [[f64; 3]; 3] {
    let (sp, cp) = o.lat0.sin_cos();
    let (sl, cl) = o.lon0.sin_cos();
    [
        [-sl, cl, 0.0],
        [-sp * cl, -sp * sl, cp],
        [cp * cl, cp * sl, sp],
    ]
}

pub fn ecef_to_enu(p: &CartesianEcef, o: &EnuOrigin) -> EnuPoint {
    let oe = o.ecef();
    let d = [p.x - oe.x, p.y - oe.y, p.z - oe.z];
    let ax = enu_axes(o);
    let dot = |row: &[f64; 3]| row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
    EnuPoint {
        e: dot(&ax[0]),
        n: dot(&ax[1]),
        u: dot(&ax[2]),
    }
}

pub fn enu_to_ecef(p: &EnuPoint, o: &EnuOrigin) -> CartesianEcef {
    let oe = o.ecef();
    let ax = enu_axes(o);
    let comp = |i: usize| ax[0][i] * p.e + ax[1][i] * p.n + ax[2][i] * p.u;
    CartesianEcef {
        x: oe.x + comp(0),
        y: oe.y + comp(1),
        z: oe.z + comp(2),
    }
}

pub fn spherical_to_dipole(s: &SphericalEcef) -> Result<DipolePoint> {
    let st = s.theta.sin();
    if st == 0.0 || s.theta <= 0.0 || s.theta >= std::f64::consts::PI {
        return Err(Error::OnDipoleAxis(s.theta));
    }
    let r_hat = s.r / EARTH_RADIUS_KM;
    Ok(DipolePoint {
        q: s.theta.cos() / (r_hat * r_hat),
        p: r_hat / (st * st),
        lambda: s.lambda,
    })
}

/// Invert the dipole map: solve q^2 r^4 + r / p - 1 = 0 for r_hat in (0, p],
/// then recover the colatitude from sin^2(theta) = r_hat / p with the
/// hemisphere chosen by the sign of q.
pub fn dipole_to_spherical(d: &DipolePoint) -> Result<SphericalEcef> {
    // Negated comparison also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(d.p > 0.0) {
        return Err(Error::OutsideDipoleDomain { q: d.q, p: d.p });
    }
    let q2 = d.q * d.q;
    let residual = |r: f64| q2 * r.powi(4) + r / d.p - 1.0;
    // residual(0) = -1 and residual is strictly increasing on r > 0, so a
    // unique positive root exists; residual(p) = q^2 p^4 >= 0 brackets it
    // inside (0, p].
    let mut lo = 0.0f64;
    let mut hi = d.p;
    let mut r = d.p.min(1.0);
    let mut converged = false;
    for _ in 0..DIPOLE_MAX_ITER {
        let f = residual(r);
        if f.abs() < DIPOLE_INVERSION_TOL {
            converged = true;
            break;
        }
        if f > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let df = 4.0 * q2 * r.powi(3) + 1.0 / d.p;
        let newton = r - f / df;
        // Bisection safeguard when Newton leaves the bracket.
        r = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    if !converged && residual(r).abs() >= DIPOLE_INVERSION_TOL {
        return Err(Error::InversionFailed(DIPOLE_MAX_ITER));
    }
    if r < DIPOLE_MIN_R_HAT {
        // Root collapses toward Earth's center: |q| is too large for this p.
        return Err(Error::OutsideDipoleDomain { q: d.q, p: d.p });
    }
    let sin2 = (r / d.p).clamp(0.0, 1.0);
    let st = sin2.sqrt();
    let theta = if d.q >= 0.0 {
        st.asin()
    } else {
        std::f64::consts::PI - st.asin()
    };
    Ok(SphericalEcef {
        r: r * EARTH_RADIUS_KM,
        theta,
        lambda: d.lambda,
    })
}

/// Full consumer-to-producer chain: dipole -> spherical -> Cartesian -> ENU.
pub fn dipole_to_enu(d: &DipolePoint, o: &EnuOrigin) -> Result<EnuPoint> {
    let s = dipole_to_spherical(d)?;
    Ok(ecef_to_enu(&spherical_to_ecef(&s), o))
}

/// Producer-to-consumer chain: ENU -> Cartesian -> spherical -> dipole.
pub fn enu_to_dipole(p: &EnuPoint, o: &EnuOrigin) -> Result<DipolePoint> {
    let c = enu_to_ecef(p, o);
    spherical_to_dipole(&ecef_to_spherical(&c)?)
}

/// Physical to tree-reference coordinates: ref = (phys - origin) / extent.
/// Out-of-range results are legal and mean "outside this tree".
pub fn physical_to_reference(phys: &[f64], tree: &Tree, dim: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..dim {
        out[i] = (phys[i] - tree.origin[i]) / tree.extent[i];
    }
    out
}

pub fn reference_to_physical(reference: &[f64], tree: &Tree, dim: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..dim {
        out[i] = tree.origin[i] + reference[i] * tree.extent[i];
    }
    out
}
