//! Three-port scattering model of a hydraulic cylinder.
//!
//! The cylinder is driven by a stimulus wave at port 1 and observed at
//! port 2; the piston terminates the internal port 3 through a coaxial
//! transmission line of electrical length proportional to the piston
//! position. The measured transmission at one frequency is
//!
//! ```text
//! t = S21 - S23*S13 / (S33 - 1/T(L)),    T(L) = exp(2L(-eps'' + j*k))
//! ```
//!
//! with `k` the angular wavenumber in the oil. [`forward_transmission`]
//! evaluates this over a frequency grid; [`invert_position`] recovers the
//! position from a measured spectrum by full-spectrum least squares.

use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64;

use crate::math;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT_M_S: f64 = 2.997_924_58e8;

/// Number of stimulus frequencies of the standard sweep.
pub const STANDARD_GRID_LEN: usize = 121;
/// First frequency of the standard sweep, Hz.
pub const STANDARD_FREQ_START_HZ: f64 = 3.0e8;
/// Last frequency of the standard sweep, Hz.
pub const STANDARD_FREQ_STOP_HZ: f64 = 1.5e9;
/// Piston stroke of the reference cylinder, mm.
pub const DEFAULT_STROKE_MM: f64 = 1815.0;

/// Relative spacing deviation tolerated before a grid counts as non-uniform.
const GRID_UNIFORMITY_TOL: f64 = 1e-6;
/// Denominators closer to zero than this are treated as singular.
const SINGULARITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum PhysicsError {
    /// Frequency grids need at least two points.
    GridTooShort { len: usize },
    /// Grid frequencies must increase strictly.
    GridNotIncreasing { index: usize },
    /// Grid spacing deviates from uniform beyond tolerance.
    GridNotUniform { index: usize },
    /// eps_real must be > 0 and eps_imag >= 0.
    InvalidPermittivity { eps_real: f64, eps_imag: f64 },
    NonPositiveFrequency { f_hz: f64 },
    NonPositivePermeability { mu_r: f64 },
    NonPositiveWavenumber { k: f64 },
    NonPositiveStroke { stroke_mm: f64 },
    /// Calibration arrays must all share one length.
    CalibrationLengthMismatch { expected: usize, got: usize },
    /// |S33| must stay below one for the inverse to be well posed.
    ReflectionNotPassive { index: usize, magnitude: f64 },
    NegativePosition { l_mm: f64 },
    PositionOutOfRange { l_mm: f64, stroke_mm: f64 },
    /// A per-frequency denominator came within 1e-12 of zero.
    Singularity { index: usize, freq_hz: f64 },
    /// Least-squares residual exceeded the configured rejection threshold.
    NoSolution { residual: f64, reject: f64 },
    NonFiniteInput,
}

impl fmt::Display for PhysicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GridTooShort { len } => write!(f, "frequency grid needs >= 2 points, got {len}"),
            Self::GridNotIncreasing { index } => {
                write!(f, "frequency grid not strictly increasing at index {index}")
            }
            Self::GridNotUniform { index } => {
                write!(f, "frequency grid spacing non-uniform at index {index}")
            }
            Self::InvalidPermittivity { eps_real, eps_imag } => write!(
                f,
                "invalid permittivity: eps_real={eps_real} (need > 0), eps_imag={eps_imag} (need >= 0)"
            ),
            Self::NonPositiveFrequency { f_hz } => write!(f, "frequency must be > 0, got {f_hz}"),
            Self::NonPositivePermeability { mu_r } => {
                write!(f, "relative permeability must be > 0, got {mu_r}")
            }
            Self::NonPositiveWavenumber { k } => write!(f, "wavenumber must be > 0, got {k}"),
            Self::NonPositiveStroke { stroke_mm } => {
                write!(f, "stroke must be > 0, got {stroke_mm} mm")
            }
            Self::CalibrationLengthMismatch { expected, got } => {
                write!(f, "calibration array length {got}, expected {expected}")
            }
            Self::ReflectionNotPassive { index, magnitude } => write!(
                f,
                "|S33| = {magnitude} >= 1 at index {index}; network must be passive"
            ),
            Self::NegativePosition { l_mm } => write!(f, "position must be >= 0, got {l_mm} mm"),
            Self::PositionOutOfRange { l_mm, stroke_mm } => {
                write!(f, "position {l_mm} mm outside [0, {stroke_mm}] mm")
            }
            Self::Singularity { index, freq_hz } => write!(
                f,
                "singular denominator at frequency index {index} ({freq_hz} Hz)"
            ),
            Self::NoSolution { residual, reject } => write!(
                f,
                "inversion residual {residual} exceeds rejection threshold {reject}"
            ),
            Self::NonFiniteInput => write!(f, "non-finite value in input"),
        }
    }
}

impl core::error::Error for PhysicsError {}

/// Uniformly spaced stimulus frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    freqs_hz: Vec<f64>,
}

impl FrequencyGrid {
    /// The 121-point sweep from 300 MHz to 1.5 GHz.
    pub fn standard() -> Self {
        Self::uniform(
            STANDARD_FREQ_START_HZ,
            STANDARD_FREQ_STOP_HZ,
            STANDARD_GRID_LEN,
        )
        .expect("standard grid is valid")
    }

    /// `len` uniformly spaced frequencies from `start_hz` to `stop_hz` inclusive.
    pub fn uniform(start_hz: f64, stop_hz: f64, len: usize) -> Result<Self, PhysicsError> {
        if len < 2 {
            return Err(PhysicsError::GridTooShort { len });
        }
        let step = (stop_hz - start_hz) / (len - 1) as f64;
        let freqs = (0..len)
            .map(|i| {
                if i == len - 1 {
                    stop_hz
                } else {
                    start_hz + step * i as f64
                }
            })
            .collect();
        Self::new(freqs)
    }

    /// Validates length, monotonicity and uniform spacing.
    pub fn new(freqs_hz: Vec<f64>) -> Result<Self, PhysicsError> {
        if freqs_hz.len() < 2 {
            return Err(PhysicsError::GridTooShort { len: freqs_hz.len() });
        }
        if !freqs_hz.iter().all(|f| f.is_finite()) {
            return Err(PhysicsError::NonFiniteInput);
        }
        if freqs_hz[0] <= 0.0 {
            return Err(PhysicsError::NonPositiveFrequency { f_hz: freqs_hz[0] });
        }
        for i in 1..freqs_hz.len() {
            if freqs_hz[i] <= freqs_hz[i - 1] {
                return Err(PhysicsError::GridNotIncreasing { index: i });
            }
        }
        let nominal = (freqs_hz[freqs_hz.len() - 1] - freqs_hz[0]) / (freqs_hz.len() - 1) as f64;
        for i in 1..freqs_hz.len() {
            let spacing = freqs_hz[i] - freqs_hz[i - 1];
            if ((spacing - nominal) / nominal).abs() >= GRID_UNIFORMITY_TOL {
                return Err(PhysicsError::GridNotUniform { index: i });
            }
        }
        Ok(Self { freqs_hz })
    }

    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    /// Frequencies uniformly scaled to [0, 1].
    pub fn normalized(&self) -> Vec<f64> {
        let f0 = self.freqs_hz[0];
        let span = self.freqs_hz[self.freqs_hz.len() - 1] - f0;
        self.freqs_hz.iter().map(|f| (f - f0) / span).collect()
    }
}

/// Complex relative permittivity of the oil, `eps_r = eps' + j*eps''`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Permittivity {
    eps_real: f64,
    eps_imag: f64,
}

impl Permittivity {
    pub fn new(eps_real: f64, eps_imag: f64) -> Result<Self, PhysicsError> {
        if !(eps_real.is_finite() && eps_imag.is_finite()) || eps_real <= 0.0 || eps_imag < 0.0 {
            return Err(PhysicsError::InvalidPermittivity { eps_real, eps_imag });
        }
        Ok(Self { eps_real, eps_imag })
    }

    /// Energy-storing part, > 0.
    pub fn eps_real(&self) -> f64 {
        self.eps_real
    }

    /// Dissipative part, >= 0.
    pub fn eps_imag(&self) -> f64 {
        self.eps_imag
    }
}

/// Per-cylinder calibration: the three scattering quantities of the reduced
/// network plus the material constants they were measured with. `S23*S13`
/// is calibrated as a single product.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    s21: Vec<Complex64>,
    s33: Vec<Complex64>,
    s23s13: Vec<Complex64>,
    permittivity: Permittivity,
    mu_r: f64,
    stroke_mm: f64,
}

impl CalibrationSet {
    pub fn new(
        s21: Vec<Complex64>,
        s33: Vec<Complex64>,
        s23s13: Vec<Complex64>,
        permittivity: Permittivity,
        mu_r: f64,
        stroke_mm: f64,
    ) -> Result<Self, PhysicsError> {
        let n = s21.len();
        for arr in [&s33, &s23s13] {
            if arr.len() != n {
                return Err(PhysicsError::CalibrationLengthMismatch {
                    expected: n,
                    got: arr.len(),
                });
            }
        }
        for arr in [&s21, &s33, &s23s13] {
            if !arr.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(PhysicsError::NonFiniteInput);
            }
        }
        if let Some((i, z)) = s33.iter().enumerate().find(|(_, z)| z.norm() >= 1.0) {
            return Err(PhysicsError::ReflectionNotPassive {
                index: i,
                magnitude: z.norm(),
            });
        }
        if !mu_r.is_finite() || mu_r <= 0.0 {
            return Err(PhysicsError::NonPositivePermeability { mu_r });
        }
        if !stroke_mm.is_finite() || stroke_mm <= 0.0 {
            return Err(PhysicsError::NonPositiveStroke { stroke_mm });
        }
        Ok(Self {
            s21,
            s33,
            s23s13,
            permittivity,
            mu_r,
            stroke_mm,
        })
    }

    pub fn len(&self) -> usize {
        self.s21.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s21.is_empty()
    }

    pub fn s21(&self) -> &[Complex64] {
        &self.s21
    }

    pub fn s33(&self) -> &[Complex64] {
        &self.s33
    }

    pub fn s23s13(&self) -> &[Complex64] {
        &self.s23s13
    }

    pub fn permittivity(&self) -> Permittivity {
        self.permittivity
    }

    pub fn mu_r(&self) -> f64 {
        self.mu_r
    }

    pub fn stroke_mm(&self) -> f64 {
        self.stroke_mm
    }
}

/// One measured (or simulated) transmission sweep, stored as parallel
/// real/imaginary arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSpectrum {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl TransmissionSpectrum {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self, PhysicsError> {
        if re.len() != im.len() {
            return Err(PhysicsError::CalibrationLengthMismatch {
                expected: re.len(),
                got: im.len(),
            });
        }
        if !re.iter().chain(im.iter()).all(|v| v.is_finite()) {
            return Err(PhysicsError::NonFiniteInput);
        }
        Ok(Self { re, im })
    }

    pub fn from_complex(values: &[Complex64]) -> Result<Self, PhysicsError> {
        Self::new(
            values.iter().map(|z| z.re).collect(),
            values.iter().map(|z| z.im).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn get(&self, i: usize) -> Complex64 {
        Complex64::new(self.re[i], self.im[i])
    }
}

/// Angular wavenumber `k = 2*pi*f*sqrt(eps'*mu_r)/c0`, rad/m.
pub fn wavenumber(f_hz: f64, perm: &Permittivity, mu_r: f64) -> Result<f64, PhysicsError> {
    if !f_hz.is_finite() || f_hz <= 0.0 {
        return Err(PhysicsError::NonPositiveFrequency { f_hz });
    }
    if !mu_r.is_finite() || mu_r <= 0.0 {
        return Err(PhysicsError::NonPositivePermeability { mu_r });
    }
    Ok(2.0 * core::f64::consts::PI * f_hz * math::sqrt(perm.eps_real() * mu_r) / SPEED_OF_LIGHT_M_S)
}

/// Transmission-line factor `T(L) = exp(2L(-eps'' + j*k))` for a piston at
/// `l_mm`. Positions are millimetres at every interface; the single mm -> m
/// conversion of the crate happens here (`k` is per metre).
pub fn transmission_line_factor(
    l_mm: f64,
    eps_imag: f64,
    k: f64,
) -> Result<Complex64, PhysicsError> {
    if !l_mm.is_finite() || l_mm < 0.0 {
        return Err(PhysicsError::NegativePosition { l_mm });
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(PhysicsError::NonPositiveWavenumber { k });
    }
    if !(eps_imag.is_finite() && eps_imag >= 0.0) {
        return Err(PhysicsError::InvalidPermittivity {
            eps_real: 1.0,
            eps_imag,
        });
    }
    let l_m = l_mm * 1e-3;
    let magnitude = math::exp(-2.0 * l_m * eps_imag);
    let phase = 2.0 * l_m * k;
    Ok(Complex64::new(
        magnitude * math::cos(phase),
        magnitude * math::sin(phase),
    ))
}

/// Per-frequency wavenumbers for a calibration over a grid.
fn wavenumbers(calib: &CalibrationSet, grid: &FrequencyGrid) -> Result<Vec<f64>, PhysicsError> {
    if calib.len() != grid.len() {
        return Err(PhysicsError::CalibrationLengthMismatch {
            expected: grid.len(),
            got: calib.len(),
        });
    }
    let perm = calib.permittivity();
    grid.freqs_hz()
        .iter()
        .map(|&f| wavenumber(f, &perm, calib.mu_r()))
        .collect()
}

fn transmission_at(
    calib: &CalibrationSet,
    grid: &FrequencyGrid,
    index: usize,
    t_factor: Complex64,
) -> Result<Complex64, PhysicsError> {
    let denom = calib.s33()[index] - t_factor.inv();
    if denom.norm() <= SINGULARITY_EPS {
        return Err(PhysicsError::Singularity {
            index,
            freq_hz: grid.freqs_hz()[index],
        });
    }
    Ok(calib.s21()[index] - calib.s23s13()[index] / denom)
}

/// Transmission spectrum of a piston at `l_mm` over the whole grid.
pub fn forward_transmission(
    l_mm: f64,
    calib: &CalibrationSet,
    grid: &FrequencyGrid,
) -> Result<TransmissionSpectrum, PhysicsError> {
    if !l_mm.is_finite() || l_mm < 0.0 || l_mm > calib.stroke_mm() {
        return Err(PhysicsError::PositionOutOfRange {
            l_mm,
            stroke_mm: calib.stroke_mm(),
        });
    }
    let ks = wavenumbers(calib, grid)?;
    let eps_imag = calib.permittivity().eps_imag();
    let mut values = Vec::with_capacity(grid.len());
    for (i, &k) in ks.iter().enumerate() {
        let t_factor = transmission_line_factor(l_mm, eps_imag, k)?;
        values.push(transmission_at(calib, grid, i, t_factor)?);
    }
    TransmissionSpectrum::from_complex(&values)
}

/// Options for [`invert_position`].
#[derive(Debug, Clone)]
pub struct InversionOptions {
    /// Coarse search step over [0, stroke], mm.
    pub grid_step_mm: f64,
    /// Width of the refined bracket at which the search stops, mm.
    pub tol_mm: f64,
    /// Residuals above this value are reported as "no solution".
    pub residual_reject: f64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            grid_step_mm: 1.0,
            tol_mm: 1e-6,
            residual_reject: f64::INFINITY,
        }
    }
}

/// Result of the analytic inversion.
#[derive(Debug, Clone)]
pub struct Inversion {
    /// Least-squares position estimate, mm.
    pub position_mm: f64,
    /// Objective value at the estimate: sum over frequencies of |t_model - t|^2.
    pub residual: f64,
    /// Median of the per-frequency magnitude-channel estimates
    /// `-ln|T_hat| / (2*eps'')`, mm. Only available for dissipative oil.
    pub magnitude_position_mm: Option<f64>,
}

/// Recovers the piston position from a measured spectrum.
///
/// A coarse sweep of the full-spectrum least-squares objective over
/// [0, stroke] locates the global basin; golden-section search refines it.
/// The 2*pi*n ambiguity of the per-frequency phase is resolved implicitly by
/// the sweep, so no branch bookkeeping is needed.
pub fn invert_position(
    t: &TransmissionSpectrum,
    calib: &CalibrationSet,
    grid: &FrequencyGrid,
    opts: &InversionOptions,
) -> Result<Inversion, PhysicsError> {
    if t.len() != grid.len() {
        return Err(PhysicsError::CalibrationLengthMismatch {
            expected: grid.len(),
            got: t.len(),
        });
    }
    if !(opts.grid_step_mm > 0.0 && opts.tol_mm > 0.0) {
        return Err(PhysicsError::NonPositiveStroke {
            stroke_mm: opts.grid_step_mm.min(opts.tol_mm),
        });
    }
    let ks = wavenumbers(calib, grid)?;
    let eps_imag = calib.permittivity().eps_imag();
    let stroke = calib.stroke_mm();

    // Per-frequency inversion of Eq. t = S21 - P/(S33 - 1/T):
    // T_hat = 1/(S33 - P/(S21 - t)); its magnitude carries an unambiguous
    // (if noisy) position estimate whenever eps'' > 0.
    let mut magnitude_position_mm = None;
    if eps_imag > 0.0 {
        let mut estimates = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let num = calib.s21()[i] - t.get(i);
            if num.norm() <= SINGULARITY_EPS {
                return Err(PhysicsError::Singularity {
                    index: i,
                    freq_hz: grid.freqs_hz()[i],
                });
            }
            let d = calib.s33()[i] - calib.s23s13()[i] / num;
            if d.norm() <= SINGULARITY_EPS {
                return Err(PhysicsError::Singularity {
                    index: i,
                    freq_hz: grid.freqs_hz()[i],
                });
            }
            // |T_hat| = 1/|d|, so -ln|T_hat| = ln|d|; metres -> mm.
            estimates.push(math::ln(d.norm()) / (2.0 * eps_imag) * 1e3);
        }
        magnitude_position_mm = Some(median(&mut estimates));
    }

    let objective = |l_mm: f64| -> Result<f64, PhysicsError> {
        let mut sum = 0.0;
        for (i, &k) in ks.iter().enumerate() {
            let tf = transmission_line_factor(l_mm, eps_imag, k)?;
            let model = transmission_at(calib, grid, i, tf)?;
            sum += (model - t.get(i)).norm_sqr();
        }
        Ok(sum)
    };

    // Coarse sweep. T(L + step) = T(L) * T(step) per frequency, so the sweep
    // advances by one complex multiply per frequency per step instead of a
    // fresh exponential. Accumulated rounding (~1e-13 over the sweep) is
    // irrelevant for locating the basin; refinement re-evaluates exactly.
    let step_m = opts.grid_step_mm * 1e-3;
    let q: Vec<Complex64> = ks
        .iter()
        .map(|&k| {
            let mag = math::exp(-2.0 * step_m * eps_imag);
            let ph = 2.0 * step_m * k;
            Complex64::new(mag * math::cos(ph), mag * math::sin(ph))
        })
        .collect();
    let n_steps = math::floor(stroke / opts.grid_step_mm) as usize;
    let mut t_factors: Vec<Complex64> = ks.iter().map(|_| Complex64::new(1.0, 0.0)).collect();
    let mut best_l = 0.0;
    let mut best_j = f64::INFINITY;
    for step in 0..=n_steps {
        let l_mm = step as f64 * opts.grid_step_mm;
        let mut sum = 0.0;
        for i in 0..ks.len() {
            let model = transmission_at(calib, grid, i, t_factors[i])?;
            sum += (model - t.get(i)).norm_sqr();
        }
        if sum < best_j {
            best_j = sum;
            best_l = l_mm;
        }
        for (tf, qi) in t_factors.iter_mut().zip(&q) {
            *tf *= *qi;
        }
    }
    if n_steps as f64 * opts.grid_step_mm < stroke {
        let j_end = objective(stroke)?;
        if j_end < best_j {
            best_j = j_end;
            best_l = stroke;
        }
    }

    // Golden-section refinement on the bracketing interval.
    let lo = (best_l - opts.grid_step_mm).max(0.0);
    let hi = (best_l + opts.grid_step_mm).min(stroke);
    let (mut l_hat, mut j_hat) = golden_section(&objective, lo, hi, opts.tol_mm, 60)?;
    if best_j < j_hat {
        l_hat = best_l;
        j_hat = best_j;
    }

    if j_hat > opts.residual_reject {
        return Err(PhysicsError::NoSolution {
            residual: j_hat,
            reject: opts.residual_reject,
        });
    }
    Ok(Inversion {
        position_mm: l_hat,
        residual: j_hat,
        magnitude_position_mm,
    })
}

/// Golden-section minimization of `f` on `[a, b]` down to bracket width
/// `tol` or `max_iters` shrink steps, whichever comes first.
fn golden_section<F>(
    f: &F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(f64, f64), PhysicsError>
where
    F: Fn(f64) -> Result<f64, PhysicsError>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..max_iters {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 < f2 { (x1, f1) } else { (x2, f2) })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// The calibration bundled with the toolkit: smooth synthetic S-curves over
/// the standard grid with |S33| between roughly 0.3 and 0.6, eps' = 2.2,
/// eps'' = 0.01 and the 1815 mm reference stroke. These are not measured
/// values; they are chosen to keep the inversion well conditioned.
pub fn default_calibration() -> (FrequencyGrid, CalibrationSet) {
    use core::f64::consts::PI;
    let grid = FrequencyGrid::standard();
    let xs = grid.normalized();
    let polar = |mag: f64, ph: f64| Complex64::new(mag * math::cos(ph), mag * math::sin(ph));
    let s21: Vec<Complex64> = xs
        .iter()
        .map(|&x| {
            let mag = 0.70 - 0.25 * x + 0.05 * math::sin(2.0 * PI * x);
            let ph = -1.8 * PI * x + 0.3 * math::cos(2.0 * PI * x);
            polar(mag, ph)
        })
        .collect();
    let s33: Vec<Complex64> = xs
        .iter()
        .map(|&x| {
            let mag = 0.45 + 0.14 * math::sin(2.0 * PI * x - 0.5 * PI);
            let ph = -1.2 * PI * x + 0.2 * math::sin(3.0 * PI * x);
            polar(mag, ph)
        })
        .collect();
    let s23s13: Vec<Complex64> = xs
        .iter()
        .map(|&x| {
            let mag = 0.30 - 0.10 * x + 0.04 * math::cos(3.0 * PI * x);
            let ph = -2.4 * PI * x + 0.25 * math::sin(2.0 * PI * x);
            polar(mag, ph)
        })
        .collect();
    let perm = Permittivity::new(2.2, 0.01).expect("valid default permittivity");
    let calib = CalibrationSet::new(s21, s33, s23s13, perm, 1.0, DEFAULT_STROKE_MM)
        .expect("default calibration is valid");
    (grid, calib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn standard_grid_shape() {
        let g = FrequencyGrid::standard();
        assert_eq!(g.len(), 121);
        assert_eq!(g.freqs_hz()[0], 3.0e8);
        assert_eq!(g.freqs_hz()[120], 1.5e9);
        let norm = g.normalized();
        assert_eq!(norm[0], 0.0);
        assert!((norm[60] - 0.5).abs() < 1e-12);
        assert_eq!(norm[120], 1.0);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(matches!(
            FrequencyGrid::new(vec![1.0e9]),
            Err(PhysicsError::GridTooShort { .. })
        ));
        assert!(matches!(
            FrequencyGrid::new(vec![2.0e9, 1.0e9]),
            Err(PhysicsError::GridNotIncreasing { .. })
        ));
        assert!(matches!(
            FrequencyGrid::new(vec![1.0e9, 2.0e9, 2.5e9]),
            Err(PhysicsError::GridNotUniform { .. })
        ));
    }

    #[test]
    fn wavenumber_eps_scaling() {
        let p1 = Permittivity::new(1.0, 0.0).unwrap();
        let p4 = Permittivity::new(4.0, 0.0).unwrap();
        let k1 = wavenumber(3.0e8, &p1, 1.0).unwrap();
        let k4 = wavenumber(3.0e8, &p4, 1.0).unwrap();
        assert!((k4 - 2.0 * k1).abs() < 1e-12);
        assert!(matches!(
            wavenumber(-1.0, &p1, 1.0),
            Err(PhysicsError::NonPositiveFrequency { .. })
        ));
        assert!(matches!(
            wavenumber(3.0e8, &p1, 0.0),
            Err(PhysicsError::NonPositivePermeability { .. })
        ));
    }

    #[test]
    fn line_factor_trivial_cases() {
        // L = 0 -> exactly 1.
        let t = transmission_line_factor(0.0, 0.3, 7.0).unwrap();
        assert_eq!(t, Complex64::new(1.0, 0.0));
        // Lossless half-turn: L = 0.5 m, k = pi -> phase pi, magnitude 1.
        let t = transmission_line_factor(500.0, 0.0, core::f64::consts::PI).unwrap();
        assert!((t.re - (-1.0)).abs() < 1e-12);
        assert!(t.im.abs() < 1e-9);
        assert!(matches!(
            transmission_line_factor(-1.0, 0.0, 1.0),
            Err(PhysicsError::NegativePosition { .. })
        ));
    }

    #[test]
    fn forward_reduces_to_s21_when_product_vanishes() {
        let (grid, calib) = default_calibration();
        let zero = vec![Complex64::new(0.0, 0.0); grid.len()];
        let calib0 = CalibrationSet::new(
            calib.s21().to_vec(),
            calib.s33().to_vec(),
            zero,
            calib.permittivity(),
            calib.mu_r(),
            calib.stroke_mm(),
        )
        .unwrap();
        for &l in &[0.0, 123.0, 1815.0] {
            let t = forward_transmission(l, &calib0, &grid).unwrap();
            for i in 0..grid.len() {
                assert_eq!(t.get(i), calib.s21()[i]);
            }
        }
    }

    #[test]
    fn forward_at_zero_matches_closed_form() {
        let (grid, calib) = default_calibration();
        let t = forward_transmission(0.0, &calib, &grid).unwrap();
        for i in 0..grid.len() {
            let expect =
                calib.s21()[i] - calib.s23s13()[i] / (calib.s33()[i] - Complex64::new(1.0, 0.0));
            assert!((t.get(i) - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_out_of_range() {
        let (grid, calib) = default_calibration();
        assert!(matches!(
            forward_transmission(-0.5, &calib, &grid),
            Err(PhysicsError::PositionOutOfRange { .. })
        ));
        assert!(matches!(
            forward_transmission(1815.1, &calib, &grid),
            Err(PhysicsError::PositionOutOfRange { .. })
        ));
    }

    #[test]
    fn default_calibration_is_passive_and_bounded() {
        let (_, calib) = default_calibration();
        for z in calib.s33() {
            let m = z.norm();
            assert!(m < 0.62 && m > 0.28, "|s33| = {m}");
        }
    }
}
