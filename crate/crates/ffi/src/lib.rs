//! C ABI over the `aggal` core: a random-feature basis and an incrementally
//! updated aggregated-output model, both behind opaque handles.
//!
//! Every function returns an [`AggalStatus`]; on failure the message is
//! available from [`aggal_last_error_message`] on the same thread. Feature
//! buffers are instance-major: a bag of `n` instances in a `K`-dimensional
//! basis is `n * K` doubles with each instance's `K` values contiguous.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use aggal::acquisition::{
    score_agg_entropy, score_agg_mi, score_emcm, score_qbc, score_random, score_sum_entropy,
    score_sum_mi, Method,
};
use aggal::model::{log_marginal, optimize_hyperparams, AdamConfig, AggregatedData, HyperParams, PosteriorState};
use aggal::{BasisSpec, Error};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Parse = 5,
    Unsupported = 6,
    Panic = 7,
}

/// Opaque feature map.
pub struct AggalBasis {
    spec: BasisSpec,
}

/// Opaque model: labeled aggregated data, precisions and the current posterior.
pub struct AggalModel {
    data: AggregatedData,
    posterior: PosteriorState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AggalStatus {
    match err {
        Error::Dimension { .. } => AggalStatus::DimensionMismatch,
        Error::Numerical(_) => AggalStatus::Numerical,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => AggalStatus::Parse,
        _ => AggalStatus::InvalidArgument,
    }
}

struct Fail(AggalStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AggalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AggalStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_owned());
            AggalStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AggalStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn bag_matrix(phi: &[f64], k: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(k, n, phi)
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AggalStatus::InvalidArgument, msg.into())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aggal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn aggal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Samples a random-feature basis of output dimension `k` on `d` inputs.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free
/// with [`aggal_basis_free`].
#[no_mangle]
pub unsafe extern "C" fn aggal_basis_random_features(
    d: usize,
    k: usize,
    seed: u64,
    out: *mut *mut AggalBasis,
) -> AggalStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let spec = BasisSpec::random_features(d, k, seed)?;
        *out = Box::into_raw(Box::new(AggalBasis { spec }));
        Ok(())
    })
}

/// # Safety
/// `basis` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn aggal_basis_free(basis: *mut AggalBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Output dimension `K`, or 0 for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aggal_basis_dim(basis: *const AggalBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.spec.dim())
}

/// Evaluates the basis on `n` row-major inputs of dimension `d`, writing
/// `n * K` values (instance-major) to `out`.
///
/// # Safety
/// `x` must hold `n * d` doubles and `out` room for `n * K`.
#[no_mangle]
pub unsafe extern "C" fn aggal_basis_eval(
    basis: *const AggalBasis,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> AggalStatus {
    guard(|| {
        let basis = deref(basis, "basis")?;
        let xs = slice_in(x, n * d, "x")?;
        let k = basis.spec.dim();
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        let phi = basis.spec.eval(&DMatrix::from_row_slice(n, d, xs))?;
        if n > 0 {
            slice::from_raw_parts_mut(out, n * k).copy_from_slice(phi.as_slice());
        }
        Ok(())
    })
}

/// A model in a `k`-dimensional basis with prior precision `lambda` and
/// noise precision `beta`, holding no data.
///
/// # Safety
/// `out` must be a valid pointer; free the handle with [`aggal_model_free`].
#[no_mangle]
pub unsafe extern "C" fn aggal_model_new(
    k: usize,
    lambda: f64,
    beta: f64,
    out: *mut *mut AggalModel,
) -> AggalStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        if k < 1 {
            return Err(invalid("basis dimension must be at least 1"));
        }
        let hyper = HyperParams::new(lambda, beta)?;
        *out = Box::into_raw(Box::new(AggalModel {
            data: AggregatedData::new(k),
            posterior: PosteriorState::prior(k, hyper),
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_free(model: *mut AggalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Adds a labeled bag (`n` instances, weights `theta`, aggregated output
/// `y`) and refits the posterior at the current precisions.
///
/// # Safety
/// `phi` must hold `n * K` doubles and `theta` `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_add_bag(
    model: *mut AggalModel,
    phi: *const f64,
    n: usize,
    theta: *const f64,
    y: f64,
) -> AggalStatus {
    guard(|| {
        let model = deref_mut(model, "model")?;
        let k = model.data.k();
        let phi = bag_matrix(slice_in(phi, n * k, "phi")?, k, n);
        let theta = slice_in(theta, n, "theta")?;
        let mut data = model.data.clone();
        data.push_bag(&phi, theta, y)?;
        let posterior = PosteriorState::fit(&data, model.posterior.hyper())?;
        model.data = data;
        model.posterior = posterior;
        Ok(())
    })
}

/// Runs Adam on the log marginal likelihood from the current precisions,
/// then refits. `steps == 0` or `learning_rate <= 0` selects the defaults
/// (1000, 1e-3). The final objective goes to `out_log_marginal` if non-null.
///
/// # Safety
/// `model` must be a live handle; `out_log_marginal` null or writable.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_optimize(
    model: *mut AggalModel,
    steps: usize,
    learning_rate: f64,
    out_log_marginal: *mut f64,
) -> AggalStatus {
    guard(|| {
        let model = deref_mut(model, "model")?;
        let mut adam = AdamConfig::default();
        if steps > 0 {
            adam.steps = steps;
        }
        if learning_rate > 0.0 {
            adam.learning_rate = learning_rate;
        }
        if model.data.is_empty() {
            return Err(invalid("no labeled bags to optimize on"));
        }
        let fit = optimize_hyperparams(&model.data, model.posterior.hyper(), &adam)?;
        model.posterior = PosteriorState::fit(&model.data, fit.hyper)?;
        if let Some(o) = out_log_marginal.as_mut() {
            *o = fit.log_marginal;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; the outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_hyper(
    model: *const AggalModel,
    lambda: *mut f64,
    beta: *mut f64,
) -> AggalStatus {
    guard(|| {
        let h = deref(model, "model")?.posterior.hyper();
        if let Some(l) = lambda.as_mut() {
            *l = h.lambda;
        }
        if let Some(b) = beta.as_mut() {
            *b = h.beta;
        }
        Ok(())
    })
}

/// Number of labeled bags, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_len(model: *const AggalModel) -> usize {
    model.as_ref().map_or(0, |m| m.data.len())
}

/// Log marginal likelihood of the labeled bags at the current precisions.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_log_marginal(model: *const AggalModel, out: *mut f64) -> AggalStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let out = deref_mut(out, "out")?;
        *out = log_marginal(&model.data, model.posterior.hyper())?;
        Ok(())
    })
}

/// Predictive mean and variance of one instance's output.
///
/// # Safety
/// `phi` must hold `K` doubles; `mean` and `variance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_predict(
    model: *const AggalModel,
    phi: *const f64,
    mean: *mut f64,
    variance: *mut f64,
) -> AggalStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let phi = DVector::from_column_slice(slice_in(phi, model.data.k(), "phi")?);
        let p = model.posterior.predict_individual(&phi)?;
        *deref_mut(mean, "mean")? = p.mean;
        *deref_mut(variance, "variance")? = p.variance;
        Ok(())
    })
}

/// Predictive mean and variance of a bag's aggregated output.
///
/// # Safety
/// `phi` must hold `n * K` doubles, `theta` `n` doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_predict_aggregated(
    model: *const AggalModel,
    phi: *const f64,
    n: usize,
    theta: *const f64,
    mean: *mut f64,
    variance: *mut f64,
) -> AggalStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let k = model.data.k();
        let phi = bag_matrix(slice_in(phi, n * k, "phi")?, k, n);
        let p = model.posterior.predict_aggregated(&phi, slice_in(theta, n, "theta")?)?;
        *deref_mut(mean, "mean")? = p.mean;
        *deref_mut(variance, "variance")? = p.variance;
        Ok(())
    })
}

/// Acquisition score of one bag under `method` (a NUL-terminated name:
/// aggmi, aggent, mi, ent, qbc, emcm, maxn, minn, rand). `seed` and
/// `committee` are used by qbc, emcm and rand. `var` needs raw inputs and
/// returns [`AggalStatus::Unsupported`].
///
/// # Safety
/// `method` must be a valid C string, `phi` hold `n * K` doubles, `theta`
/// `n` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_score(
    model: *const AggalModel,
    method: *const c_char,
    phi: *const f64,
    n: usize,
    theta: *const f64,
    seed: u64,
    committee: usize,
    out: *mut f64,
) -> AggalStatus {
    guard(|| {
        let model = deref(model, "model")?;
        if method.is_null() {
            return Err(null("method"));
        }
        let name = CStr::from_ptr(method)
            .to_str()
            .map_err(|_| invalid("method name is not UTF-8"))?;
        let method: Method = name.parse()?;
        let k = model.data.k();
        let phi = bag_matrix(slice_in(phi, n * k, "phi")?, k, n);
        let theta = slice_in(theta, n, "theta")?;
        if theta.len() != phi.ncols() || n == 0 {
            return Err(invalid("a bag needs at least one instance"));
        }
        let post = &model.posterior;
        let score = match method {
            Method::AggMi => score_agg_mi(post, &phi, theta)?,
            Method::AggEnt => score_agg_entropy(post, &phi, theta)?,
            Method::Mi => score_sum_mi(post, &phi)?,
            Method::Ent => score_sum_entropy(post, &phi)?,
            Method::Qbc => score_qbc(post, &phi, theta, committee, seed)?,
            Method::Emcm => score_emcm(post, &phi, theta, committee, seed)?,
            Method::MaxN => n as f64,
            Method::MinN => -(n as f64),
            Method::Rand => score_random(1, seed, 0)[0],
            Method::Var => {
                return Err(Fail(
                    AggalStatus::Unsupported,
                    "var scores raw inputs, which the model does not hold".to_owned(),
                ))
            }
        };
        *deref_mut(out, "out")? = score;
        Ok(())
    })
}

/// Serializes the posterior (`m`, precision factor, `lambda`, `beta`) to a
/// JSON string to free with [`aggal_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn aggal_model_to_json(model: *const AggalModel, out: *mut *mut c_char) -> AggalStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let out = deref_mut(out, "out")?;
        let json = serde_json::to_string(&model.posterior).map_err(Error::from)?;
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}
