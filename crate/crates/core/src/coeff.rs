//! Periodic coefficient fields `A(x)` on the unit square lattice.
//!
//! Every field is `Z^2`-periodic with the unit square as fundamental cell.
//! Samples are returned as [`Herm2`], which stores only the independent
//! entries, so conjugate symmetry holds exactly by construction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// A 2x2 complex Hermitian matrix `[[a11, a12], [conj(a12), a22]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Herm2 {
    pub a11: f64,
    pub a22: f64,
    pub a12: C64,
}

impl Herm2 {
    pub fn identity() -> Self {
        Herm2 {
            a11: 1.0,
            a22: 1.0,
            a12: C64::new(0.0, 0.0),
        }
    }

    pub fn a21(&self) -> C64 {
        self.a12.conj()
    }

    pub fn to_array(&self) -> [[C64; 2]; 2] {
        [
            [C64::new(self.a11, 0.0), self.a12],
            [self.a21(), C64::new(self.a22, 0.0)],
        ]
    }

    /// Closed-form eigenvalues, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.a11 + self.a22);
        let half = 0.5 * (self.a11 - self.a22);
        let rad = (half * half + self.a12.norm_sqr()).sqrt();
        [mean - rad, mean + rad]
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Herm2 {
            a11: self.a11,
            a22: self.a22,
            a12: self.a12.conj(),
        }
    }

    /// Max-entry distance to another sample.
    pub fn max_abs_diff(&self, other: &Herm2) -> f64 {
        (self.a11 - other.a11)
            .abs()
            .max((self.a22 - other.a22).abs())
            .max((self.a12 - other.a12).norm())
    }
}

/// Parameters of the `gyro_rods` family.
///
/// `A(x) = a0(x) I + i gamma(x) J` with `J = [[0, 1], [-1, 0]]`,
/// `a0 = a_bg + a_rod * rho`, `gamma = gamma0 * rho`, and `rho` a radial
/// bump centred in the cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GyroRodsParams {
    pub a_bg: f64,
    pub a_rod: f64,
    pub gamma0: f64,
    pub r0: f64,
    pub w: f64,
}

impl GyroRodsParams {
    pub fn positivity_margin(&self) -> f64 {
        self.a_bg + self.a_rod.min(0.0) - self.gamma0.abs()
    }

    fn from_map(params: &BTreeMap<String, f64>) -> Result<Self> {
        const KEYS: [&str; 5] = ["a_bg", "a_rod", "gamma0", "r0", "w"];
        if let Some(extra) = params.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::InvalidParameter {
                name: extra.clone(),
                reason: "not a gyro_rods parameter".into(),
            });
        }
        let get = |k: &str| {
            params.get(k).copied().ok_or_else(|| Error::InvalidParameter {
                name: k.into(),
                reason: "missing".into(),
            })
        };
        Ok(GyroRodsParams {
            a_bg: get("a_bg")?,
            a_rod: get("a_rod")?,
            gamma0: get("gamma0")?,
            r0: get("r0")?,
            w: get("w")?,
        })
    }

    fn to_map(self) -> BTreeMap<String, f64> {
        [
            ("a_bg", self.a_bg),
            ("a_rod", self.a_rod),
            ("gamma0", self.gamma0),
            ("r0", self.r0),
            ("w", self.w),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn check_geometry(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| {
            Err(Error::InvalidParameter {
                name: name.into(),
                reason: reason.into(),
            })
        };
        for (name, v) in [
            ("a_bg", self.a_bg),
            ("a_rod", self.a_rod),
            ("gamma0", self.gamma0),
            ("r0", self.r0),
            ("w", self.w),
        ] {
            if !v.is_finite() {
                return bad(name, "must be finite");
            }
        }
        if self.w <= 0.0 {
            return bad("w", "smoothing width must be positive");
        }
        if self.r0 <= 0.0 {
            return bad("r0", "rod radius must be positive");
        }
        if self.r0 + self.w > 0.5 {
            return bad("r0", "rod plus smoothing annulus must fit in the cell (r0 + w <= 0.5)");
        }
        Ok(())
    }
}

/// Smooth radial bump centred at `(0.5, 0.5)` of the unit cell: 1 inside
/// `r0 - w`, 0 outside `r0 + w`, blended by `3s^2 - 2s^3`.
pub fn rod_profile(x: [f64; 2], r0: f64, w: f64) -> f64 {
    let dx = x[0].rem_euclid(1.0) - 0.5;
    let dy = x[1].rem_euclid(1.0) - 0.5;
    let r = dx.hypot(dy);
    let s = ((r0 + w - r) / (2.0 * w)).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientField {
    Identity,
    GyroRods(GyroRodsParams),
}

impl CoefficientField {
    pub const FAMILIES: [&'static str; 2] = ["identity", "gyro_rods"];

    pub fn family_id(&self) -> &'static str {
        match self {
            CoefficientField::Identity => "identity",
            CoefficientField::GyroRods(_) => "gyro_rods",
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        match self {
            CoefficientField::Identity => BTreeMap::new(),
            CoefficientField::GyroRods(p) => p.to_map(),
        }
    }

    /// Builds a `gyro_rods` field without the positivity-margin check, for
    /// exercising [`verify_field`] on invalid media.
    pub fn gyro_rods_unchecked(params: GyroRodsParams) -> Self {
        CoefficientField::GyroRods(params)
    }

    /// The same medium with the gyrotropy flipped, `gamma0 -> -gamma0`.
    pub fn time_reversed(&self) -> Self {
        match self {
            CoefficientField::Identity => CoefficientField::Identity,
            CoefficientField::GyroRods(p) => CoefficientField::GyroRods(GyroRodsParams {
                gamma0: -p.gamma0,
                ..*p
            }),
        }
    }

    /// True when `A` is real everywhere.
    pub fn is_real(&self) -> bool {
        match self {
            CoefficientField::Identity => true,
            CoefficientField::GyroRods(p) => p.gamma0 == 0.0,
        }
    }

    /// Samples `A(x)`; `x` is reduced modulo the lattice.
    pub fn sample(&self, x: [f64; 2]) -> Herm2 {
        match self {
            CoefficientField::Identity => Herm2::identity(),
            CoefficientField::GyroRods(p) => {
                let rho = rod_profile(x, p.r0, p.w);
                let a0 = p.a_bg + p.a_rod * rho;
                let gamma = p.gamma0 * rho;
                // i * gamma * J = [[0, i gamma], [-i gamma, 0]]
                Herm2 {
                    a11: a0,
                    a22: a0,
                    a12: C64::new(0.0, gamma),
                }
            }
        }
    }
}

/// Constructs a built-in family from its name and named parameters.
pub fn builtin_family(name: &str, params: &BTreeMap<String, f64>) -> Result<CoefficientField> {
    match name {
        "identity" => {
            if let Some(k) = params.keys().next() {
                return Err(Error::InvalidParameter {
                    name: k.clone(),
                    reason: "identity family takes no parameters".into(),
                });
            }
            Ok(CoefficientField::Identity)
        }
        "gyro_rods" => gyro_rods(GyroRodsParams::from_map(params)?),
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

/// Checked constructor for the `gyro_rods` family.
pub fn gyro_rods(p: GyroRodsParams) -> Result<CoefficientField> {
    p.check_geometry()?;
    let margin = p.positivity_margin();
    if margin <= 0.0 {
        return Err(Error::PositivityMargin { margin });
    }
    Ok(CoefficientField::GyroRods(p))
}

pub fn sample_matrix(field: &CoefficientField, x: [f64; 2]) -> Herm2 {
    field.sample(x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldReport {
    pub grid_n: usize,
    pub min_eigenvalue: f64,
    pub max_hermiticity_residual: f64,
    pub max_periodicity_residual: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Samples the field on a `grid_n x grid_n` grid of the unit cell and
/// reports positivity, Hermiticity and periodicity. Failures are carried in
/// the report.
pub fn verify_field(field: &CoefficientField, grid_n: usize, tol: f64) -> Result<FieldReport> {
    if grid_n < 2 {
        return Err(Error::GridTooSmall { n: grid_n, min: 2 });
    }
    let shifts: [[f64; 2]; 3] = [[1.0, 0.0], [0.0, 1.0], [-2.0, 3.0]];
    let mut min_eig = f64::INFINITY;
    let mut herm = 0.0_f64;
    let mut period = 0.0_f64;
    let h = 1.0 / grid_n as f64;
    for j in 0..grid_n {
        for i in 0..grid_n {
            // offset so samples avoid the symmetric cell lines
            let x = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
            let a = field.sample(x);
            let arr = a.to_array();
            herm = herm
                .max((arr[1][0] - arr[0][1].conj()).norm())
                .max(arr[0][0].im.abs())
                .max(arr[1][1].im.abs());
            min_eig = min_eig.min(a.eigenvalues()[0]);
            for e in shifts {
                let shifted = field.sample([x[0] + e[0], x[1] + e[1]]);
                period = period.max(a.max_abs_diff(&shifted));
            }
        }
    }
    let mut failures = Vec::new();
    if min_eig <= tol {
        failures.push(format!("min eigenvalue {min_eig} is not above {tol}"));
    }
    if herm > tol {
        failures.push(format!("hermiticity residual {herm:e} exceeds {tol:e}"));
    }
    if period > tol {
        failures.push(format!("periodicity residual {period:e} exceeds {tol:e}"));
    }
    Ok(FieldReport {
        grid_n,
        min_eigenvalue: min_eig,
        max_hermiticity_residual: herm,
        max_periodicity_residual: period,
        passed: failures.is_empty(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example() -> GyroRodsParams {
        GyroRodsParams {
            a_bg: 1.0,
            a_rod: 0.5,
            gamma0: 0.4,
            r0: 0.3,
            w: 0.08,
        }
    }

    #[test]
    fn zero_gyrotropy_is_real() {
        let f = gyro_rods(GyroRodsParams {
            gamma0: 0.0,
            ..example()
        })
        .unwrap();
        assert!(f.is_real());
        for k in 0..50 {
            let x = [0.013 * k as f64, 0.5 + 0.007 * k as f64];
            assert_eq!(f.sample(x).a12, C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn rod_centre_eigenvalues_closed_form() {
        let p = example();
        let f = gyro_rods(p).unwrap();
        let a = f.sample([0.5, 0.5]);
        let ev = a.eigenvalues();
        let a0 = p.a_bg + p.a_rod;
        assert!((ev[0] - (a0 - p.gamma0)).abs() < 1e-14);
        assert!((ev[1] - (a0 + p.gamma0)).abs() < 1e-14);
    }

    #[test]
    fn far_from_rod_is_background() {
        let p = example();
        let f = gyro_rods(p).unwrap();
        let a = f.sample([0.01, 0.02]);
        assert_eq!(a, Herm2 { a11: 1.0, a22: 1.0, a12: C64::new(0.0, 0.0) });
        assert_eq!(CoefficientField::Identity.sample([0.3, 0.7]), Herm2::identity());
    }

    #[test]
    fn lattice_periodicity() {
        use rand::{Rng, SeedableRng};
        let f = gyro_rods(example()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = f.sample(x);
            let b = f.sample([x[0] + 1.0, x[1]]);
            worst = worst.max(a.max_abs_diff(&b));
        }
        assert!(worst < 1e-14, "{worst}");
    }

    #[test]
    fn identity_verifies_with_unit_eigenvalue() {
        let r = verify_field(&CoefficientField::Identity, 8, 1e-12).unwrap();
        assert!(r.passed);
        assert_eq!(r.min_eigenvalue, 1.0);
        assert_eq!(r.max_hermiticity_residual, 0.0);
    }

    #[test]
    fn verify_min_eigenvalue_matches_pointwise_formula() {
        let p = example();
        let f = gyro_rods(p).unwrap();
        let n = 40;
        let r = verify_field(&f, n, 1e-12).unwrap();
        // oracle: min over the same sample points of a0(x) - |gamma(x)|
        let h = 1.0 / n as f64;
        let mut expect = f64::INFINITY;
        for j in 0..n {
            for i in 0..n {
                let x = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                let rho = rod_profile(x, p.r0, p.w);
                expect = expect.min(p.a_bg + p.a_rod * rho - (p.gamma0 * rho).abs());
            }
        }
        assert!((r.min_eigenvalue - expect).abs() < 1e-14);
        assert!(r.passed);
    }

    #[test]
    fn margin_violation_is_rejected_and_flagged() {
        let bad = GyroRodsParams {
            a_bg: 1.0,
            a_rod: -0.5,
            gamma0: 0.6,
            r0: 0.3,
            w: 0.05,
        };
        assert!(matches!(gyro_rods(bad), Err(Error::PositivityMargin { .. })));
        let r = verify_field(&CoefficientField::gyro_rods_unchecked(bad), 32, 1e-12).unwrap();
        assert!(!r.passed);
        assert!(r.min_eigenvalue < 0.0);
    }

    #[test]
    fn unknown_family_and_bad_params() {
        assert!(matches!(
            builtin_family("photonic_graphene", &BTreeMap::new()),
            Err(Error::UnknownFamily(_))
        ));
        let mut m = example().to_map();
        m.remove("w");
        assert!(builtin_family("gyro_rods", &m).is_err());
        let mut m = example().to_map();
        m.insert("r0".into(), 0.48);
        assert!(builtin_family("gyro_rods", &m).is_err());
        assert!(builtin_family("gyro_rods", &example().to_map()).is_ok());
    }

    #[test]
    fn closed_form_eigenvalues_match_generic_solver() {
        let f = gyro_rods(example()).unwrap();
        for k in 0..20 {
            let x = [0.2 + 0.031 * k as f64, 0.45 + 0.005 * k as f64];
            let a = f.sample(x);
            let arr = a.to_array();
            let m = faer::Mat::<C64>::from_fn(2, 2, |i, j| arr[i][j]);
            let evd = m.self_adjoint_eigen(faer::Side::Lower).unwrap();
            let s = evd.S().column_vector();
            let ev = a.eigenvalues();
            assert!((s[0].re - ev[0]).abs() < 1e-13);
            assert!((s[1].re - ev[1]).abs() < 1e-13);
            // a0 - |gamma| is the smallest eigenvalue for this family
            let p = example();
            let rho = rod_profile(x, p.r0, p.w);
            assert!((ev[0] - (p.a_bg + p.a_rod * rho - (p.gamma0 * rho).abs())).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn exact_conjugate_symmetry(x in -5.0..5.0f64, y in -5.0..5.0f64, g in -0.9..0.9f64) {
            let p = GyroRodsParams { gamma0: g, ..example() };
            let f = gyro_rods(p).unwrap();
            let arr = f.sample([x, y]).to_array();
            prop_assert_eq!(arr[1][0], arr[0][1].conj());
            prop_assert_eq!(arr[0][0].im, 0.0);
            prop_assert_eq!(arr[1][1].im, 0.0);
            prop_assert!(f.sample([x, y]).eigenvalues()[0] > 0.0);
        }

        #[test]
        fn flipping_gyrotropy_conjugates(x in -2.0..2.0f64, y in -2.0..2.0f64, g in -0.9..0.9f64) {
            let f = gyro_rods(GyroRodsParams { gamma0: g, ..example() }).unwrap();
            let r = f.time_reversed();
            prop_assert_eq!(r.sample([x, y]), f.sample([x, y]).conj());
        }
    }
}
