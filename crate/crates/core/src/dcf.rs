//! Baseline dual correlation filter: Fourier-domain training, response
//! maps, peak localization, and exponential model updating.

use num_complex::Complex64;

use crate::coding::FeatureStack;
use crate::error::{Error, Result};
use crate::signal::{dft2, idft2, wrap_signed, Grid2D, Plane, Spectrum};

/// Default ridge weight of the filter.
pub const DEFAULT_LAMBDA: f64 = 0.5;
/// Default learning rate of every exponentially averaged model.
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

/// Dual variable `u` together with its spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct DualFilter {
    u: Plane,
    u_hat: Spectrum,
}

impl DualFilter {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { u: Plane::zeros(grid), u_hat: Spectrum::zeros(grid) }
    }

    pub fn from_spatial(u: Plane) -> Self {
        let u_hat = dft2(&u);
        Self { u, u_hat }
    }

    pub fn from_spectrum(u_hat: Spectrum) -> Result<Self> {
        let u = idft2(&u_hat)?;
        Ok(Self { u, u_hat })
    }

    #[inline]
    pub fn spatial(&self) -> &Plane {
        &self.u
    }

    #[inline]
    pub fn spectrum(&self) -> &Spectrum {
        &self.u_hat
    }

    #[inline]
    pub fn grid(&self) -> Grid2D {
        self.u.grid()
    }

    /// `(1 - rate) * self + rate * other` in both domains.
    pub fn blend(&mut self, other: &DualFilter, rate: f64) -> Result<()> {
        self.u_hat.blend(&other.u_hat, rate)?;
        for (a, b) in self.u.values_mut().iter_mut().zip(other.u.values()) {
            *a = (1.0 - rate) * *a + rate * b;
        }
        Ok(())
    }
}

/// `sum_d |s_d|^2` per frequency.
pub fn spectral_energy(spectra: &[Spectrum]) -> Vec<f64> {
    let n = spectra.first().map_or(0, |s| s.grid().len());
    let mut out = vec![0.0; n];
    for s in spectra {
        for (o, v) in out.iter_mut().zip(s.values()) {
            *o += v.norm_sqr();
        }
    }
    out
}

/// Solves the dual ridge regression in closed form:
/// `u_hat = y_hat / (sum_d |x_hat_{c,d}|^2 / (2 lambda) + 1/2)`.
pub fn dcf_train(x: &FeatureStack, y: &Plane, c: &Plane, lambda: f64) -> Result<DualFilter> {
    x.grid().ensure_same(y.grid())?;
    x.grid().ensure_same(c.grid())?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let spectra = x.windowed(c)?.spectra();
    train_from_spectra(&spectra, &dft2(y), lambda)
}

pub(crate) fn train_from_spectra(spectra: &[Spectrum], y_hat: &Spectrum, lambda: f64) -> Result<DualFilter> {
    let energy = spectral_energy(spectra);
    let inv = 1.0 / (2.0 * lambda);
    let values: Vec<Complex64> =
        y_hat.values().iter().zip(&energy).map(|(y, e)| y / (inv * e + 0.5)).collect();
    DualFilter::from_spectrum(Spectrum::from_vec(y_hat.grid(), values)?)
}

/// Appearance template (spectra of the windowed features) plus filter.
#[derive(Clone, Debug)]
pub struct CfModel {
    template: Vec<Spectrum>,
    filter: DualFilter,
    lambda: f64,
}

impl CfModel {
    /// Model from raw features `x`, windowed by `c` before transforming.
    pub fn new(x: &FeatureStack, c: &Plane, filter: DualFilter, lambda: f64) -> Result<Self> {
        x.grid().ensure_same(filter.grid())?;
        Ok(Self { template: x.windowed(c)?.spectra(), filter, lambda })
    }

    /// Trains a fresh filter on `x` and wraps it in a model.
    pub fn train(x: &FeatureStack, y: &Plane, c: &Plane, lambda: f64) -> Result<Self> {
        let filter = dcf_train(x, y, c, lambda)?;
        Self::new(x, c, filter, lambda)
    }

    pub fn grid(&self) -> Grid2D {
        self.filter.grid()
    }

    pub fn channels(&self) -> usize {
        self.template.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn filter(&self) -> &DualFilter {
        &self.filter
    }

    pub fn template(&self) -> &[Spectrum] {
        &self.template
    }
}

/// Confidence map for new features `x`:
/// `idft2(u_hat * sum_d x_hat_{c,d} * conj(xbar_hat_{c,d}) / (2 lambda))`.
///
/// A target displaced by `(a, b)` relative to the template produces a peak
/// at `(a, b)`.
pub fn response_map(model: &CfModel, x: &FeatureStack, c: &Plane) -> Result<Plane> {
    if x.channels() != model.channels() {
        return Err(Error::DimensionMismatch(format!(
            "features have {} channels, model has {}",
            x.channels(),
            model.channels()
        )));
    }
    x.grid().ensure_same(model.grid())?;
    let spectra = x.windowed(c)?.spectra();
    response_from_spectra(model, &spectra)
}

pub(crate) fn response_from_spectra(model: &CfModel, spectra: &[Spectrum]) -> Result<Plane> {
    let grid = model.grid();
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (s, t) in spectra.iter().zip(&model.template) {
        for ((a, x), z) in acc.iter_mut().zip(s.values()).zip(t.values()) {
            *a += x * z.conj();
        }
    }
    let scale = 1.0 / (2.0 * model.lambda);
    for (a, u) in acc.iter_mut().zip(model.filter.spectrum().values()) {
        *a *= u * scale;
    }
    idft2(&Spectrum::from_vec(grid, acc)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Peak {
    pub dy: isize,
    pub dx: isize,
    pub score: f64,
}

/// Response maximum as a signed displacement. Equal maxima resolve to the
/// lexicographically smallest `(dy, dx)`.
pub fn localize(resp: &Plane) -> Peak {
    let grid = resp.grid();
    let mut best = Peak { dy: 0, dx: 0, score: f64::NEG_INFINITY };
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let v = resp.get(r, c);
            let (dy, dx) = (wrap_signed(r, grid.rows), wrap_signed(c, grid.cols));
            if v > best.score || (v == best.score && (dy, dx) < (best.dy, best.dx)) {
                best = Peak { dy, dx, score: v };
            }
        }
    }
    best
}

/// Exponential averaging of template and filter spectra with rate `eta`.
pub fn update_model(
    model: &mut CfModel,
    x_new: &FeatureStack,
    c: &Plane,
    u_new: &DualFilter,
    eta: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("learning rate must be in [0, 1], got {eta}")));
    }
    if x_new.channels() != model.channels() {
        return Err(Error::DimensionMismatch("update features change the channel count".into()));
    }
    if eta == 0.0 {
        return Ok(());
    }
    let fresh = x_new.windowed(c)?.spectra();
    for (t, f) in model.template.iter_mut().zip(&fresh) {
        t.blend(f, eta)?;
    }
    model.filter.blend(u_new, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{gaussian_labels, hann_window, Grid2D};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(grid: Grid2D, channels: usize, amp: f64, seed: u64) -> FeatureStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len() * channels).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
        FeatureStack::from_vec(grid, channels, values).unwrap()
    }

    #[test]
    fn zero_features_give_twice_the_labels() {
        let g = Grid2D::square(6).unwrap();
        let y = gaussian_labels(g, 1.0).unwrap();
        let c = hann_window(g).unwrap();
        let u = dcf_train(&FeatureStack::zeros(g, 2), &y, &c, 0.5).unwrap();
        for (a, b) in u.spatial().values().iter().zip(y.values()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_channel_doubles_data_term() {
        let g = Grid2D::new(4, 5).unwrap();
        let x = random_stack(g, 1, 1.0, 3);
        let c = hann_window(g).unwrap();
        let x2 = FeatureStack::from_planes(&[x.channel_plane(0), x.channel_plane(0)]).unwrap();
        let e1 = spectral_energy(&x.windowed(&c).unwrap().spectra());
        let e2 = spectral_energy(&x2.windowed(&c).unwrap().spectra());
        for (a, b) in e1.iter().zip(&e2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn self_response_peaks_at_origin_near_one() {
        let g = Grid2D::square(32).unwrap();
        let x = random_stack(g, 3, 10.0, 5);
        let y = gaussian_labels(g, 2.0).unwrap();
        let c = hann_window(g).unwrap();
        let model = CfModel::train(&x, &y, &c, 0.5).unwrap();
        let peak = localize(&response_map(&model, &x, &c).unwrap());
        assert_eq!((peak.dy, peak.dx), (0, 0));
        assert!((peak.score - 1.0).abs() <= 0.02, "peak {}", peak.score);
    }

    #[test]
    fn shifted_input_moves_the_peak() {
        let g = Grid2D::new(16, 20).unwrap();
        let ones = Plane::constant(g, 1.0);
        let y = gaussian_labels(g, 1.5).unwrap();
        let template = random_stack(g, 2, 1.0, 8);
        let model = CfModel::train(&template, &y, &ones, 0.5).unwrap();
        for (dm, dn) in [(0isize, 3isize), (2, -4), (-5, 0), (7, 9)] {
            let moved = template.circshift(dm, dn);
            let peak = localize(&response_map(&model, &moved, &ones).unwrap());
            assert_eq!((peak.dy, peak.dx), (dm, dn));
        }
    }

    #[test]
    fn zero_filter_gives_zero_response() {
        let g = Grid2D::square(8).unwrap();
        let c = hann_window(g).unwrap();
        let x = random_stack(g, 2, 1.0, 1);
        let model = CfModel::new(&x, &c, DualFilter::zeros(g), 0.5).unwrap();
        let r = response_map(&model, &x, &c).unwrap();
        assert!(r.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn localize_rules() {
        let g = Grid2D::new(5, 4).unwrap();
        let mut p = Plane::zeros(g);
        p.set(0, 0, 1.0);
        assert_eq!(localize(&p), Peak { dy: 0, dx: 0, score: 1.0 });
        let mut p = Plane::zeros(g);
        p.set(4, 0, 0.7);
        assert_eq!(localize(&p), Peak { dy: -1, dx: 0, score: 0.7 });
        let mut p = Plane::zeros(g);
        p.set(1, 1, 2.0);
        p.set(4, 3, 2.0);
        assert_eq!(localize(&p), Peak { dy: -1, dx: -1, score: 2.0 });
    }

    #[test]
    fn model_update_rates() {
        let g = Grid2D::square(8).unwrap();
        let c = hann_window(g).unwrap();
        let y = gaussian_labels(g, 1.0).unwrap();
        let a = random_stack(g, 2, 1.0, 1);
        let b = random_stack(g, 2, 1.0, 2);
        let ua = dcf_train(&a, &y, &c, 0.5).unwrap();
        let ub = dcf_train(&b, &y, &c, 0.5).unwrap();

        let mut m = CfModel::new(&a, &c, ua.clone(), 0.5).unwrap();
        update_model(&mut m, &b, &c, &ub, 0.0).unwrap();
        assert_eq!(m.template(), CfModel::new(&a, &c, ua.clone(), 0.5).unwrap().template());

        update_model(&mut m, &b, &c, &ub, 1.0).unwrap();
        let target = CfModel::new(&b, &c, ub.clone(), 0.5).unwrap();
        for (s, t) in m.template().iter().zip(target.template()) {
            for (p, q) in s.values().iter().zip(t.values()) {
                assert!((p - q).norm() < 1e-12);
            }
        }

        let mut m = CfModel::new(&a, &c, ua.clone(), 0.5).unwrap();
        let eta = 0.2;
        let initial: f64 = (m.filter().spectrum().values().iter())
            .zip(ub.spectrum().values())
            .map(|(p, q)| (p - q).norm())
            .sum();
        for step in 1..=10 {
            update_model(&mut m, &b, &c, &ub, eta).unwrap();
            let err: f64 = (m.filter().spectrum().values().iter())
                .zip(ub.spectrum().values())
                .map(|(p, q)| (p - q).norm())
                .sum();
            let expected = (1.0 - eta).powi(step) * initial;
            assert!((err - expected).abs() <= 1e-9 * initial);
            assert!(m.filter().spectrum().hermitian_defect() < 1e-9);
        }
        assert!(update_model(&mut m, &b, &c, &ub, 1.5).is_err());
    }
}
