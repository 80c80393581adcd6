//! C ABI for the entropy-based adaptive HMC sampler.
//!
//! Every function returns an [`EhmcStatus`]; on failure a human-readable
//! message is stored per thread and can be read with
//! [`ehmc_last_error_message`]. Objects are handed out as opaque pointers and
//! must be released with the matching `*_free` function. Panics never cross
//! the boundary; they are reported as `EHMC_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_void};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use entropy_hmc::cli::VERSION;
use entropy_hmc::objective::Objective;
use entropy_hmc::sampler::{run_experiment, Kernel, RunOutput, SamplerConfig};
use entropy_hmc::target::{anisotropic_gaussian, GaussianTarget, PrecisionSpec, TargetModel};
use entropy_hmc::{Error, PrecondKind, Preconditioner};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EhmcStatus {
    Ok = 0,
    InvalidArgument = 1,
    DimensionMismatch = 2,
    ModelConstruction = 3,
    Divergence = 4,
    Numerical = 5,
    Ingestion = 6,
    Config = 7,
    Io = 8,
    NullPointer = 9,
    Panic = 10,
}

pub const EHMC_PRECOND_DIAGONAL: u32 = 0;
pub const EHMC_PRECOND_DENSE_CHOLESKY: u32 = 1;
pub const EHMC_PRECOND_BANDED_INVERSE: u32 = 2;

pub const EHMC_OBJECTIVE_GSM: u32 = 0;
pub const EHMC_OBJECTIVE_ESJD: u32 = 1;
pub const EHMC_OBJECTIVE_L2HMC: u32 = 2;

pub const EHMC_KERNEL_ADAPTIVE: u32 = 0;
pub const EHMC_KERNEL_FIXED_METRIC: u32 = 1;

/// Potential callback: returns `U(q)` for `q` of length `dim`.
pub type EhmcPotentialFn =
    Option<unsafe extern "C" fn(user: *mut c_void, q: *const f64, dim: usize) -> f64>;

/// Gradient callback: writes `∇U(q)` into `out` (length `dim`); non-zero
/// return values signal failure and are treated as a non-finite gradient.
pub type EhmcGradientFn = Option<
    unsafe extern "C" fn(user: *mut c_void, q: *const f64, out: *mut f64, dim: usize) -> i32,
>;

/// Opaque target density.
pub struct EhmcTarget {
    inner: Box<dyn TargetModel>,
}

/// Opaque preconditioner `C`.
pub struct EhmcPreconditioner {
    inner: Preconditioner,
}

/// Opaque completed run.
pub struct EhmcRun {
    inner: RunOutput,
}

/// Sampler settings. Obtain defaults from [`ehmc_run_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EhmcRunConfig {
    pub h: f64,
    pub steps: usize,
    pub chains: usize,
    pub adapt_steps: u64,
    pub sample_steps: u64,
    pub thin: u64,
    pub seed: u64,
    pub precond_kind: u32,
    pub init_scale: f64,
    pub objective: u32,
    pub kernel: u32,
    /// Learning rate for `θ`; non-positive selects the structure default.
    pub lr_theta: f64,
    pub target_accept: f64,
}

/// Run summary; statistics that are not defined are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EhmcSummary {
    pub min_ess: f64,
    pub mean_ess: f64,
    pub median_ess: f64,
    pub max_rhat: f64,
    pub median_rhat: f64,
    pub acceptance_rate: f64,
    pub divergences: u64,
    pub wall_seconds: f64,
    pub cond_number: f64,
    pub step_size: f64,
    pub dim: usize,
    pub chains: usize,
    pub draws_per_chain: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> EhmcStatus {
    match e {
        Error::InvalidArgument(_) => EhmcStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => EhmcStatus::DimensionMismatch,
        Error::ModelConstruction(_) => EhmcStatus::ModelConstruction,
        Error::Divergence { .. } => EhmcStatus::Divergence,
        Error::Numerical(_) => EhmcStatus::Numerical,
        Error::Ingestion { .. } => EhmcStatus::Ingestion,
        Error::Config { .. } => EhmcStatus::Config,
        Error::Io { .. } => EhmcStatus::Io,
    }
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult = std::result::Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> EhmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EhmcStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer passed as `{name}`"));
            EhmcStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            EhmcStatus::InvalidArgument
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EhmcStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn in_slice<'a>(
    p: *const f64,
    len: usize,
    name: &'static str,
) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(
    p: *mut f64,
    len: usize,
    name: &'static str,
) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T, name: &'static str) -> FfiResult {
    if out.is_null() {
        return Err(Failure::Null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> FfiResult {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got }.into())
    }
}

fn precond_kind(k: u32) -> Result<PrecondKind, Failure> {
    match k {
        EHMC_PRECOND_DIAGONAL => Ok(PrecondKind::Diagonal),
        EHMC_PRECOND_DENSE_CHOLESKY => Ok(PrecondKind::DenseCholesky),
        EHMC_PRECOND_BANDED_INVERSE => Ok(PrecondKind::BandedInverse),
        _ => Err(Failure::Arg(format!("unknown preconditioner kind {k}"))),
    }
}

fn objective(k: u32) -> Result<Objective, Failure> {
    match k {
        EHMC_OBJECTIVE_GSM => Ok(Objective::Gsm),
        EHMC_OBJECTIVE_ESJD => Ok(Objective::Esjd),
        EHMC_OBJECTIVE_L2HMC => Ok(Objective::L2hmc),
        _ => Err(Failure::Arg(format!("unknown objective {k}"))),
    }
}

fn kernel(k: u32) -> Result<Kernel, Failure> {
    match k {
        EHMC_KERNEL_ADAPTIVE => Ok(Kernel::Adaptive),
        EHMC_KERNEL_FIXED_METRIC => Ok(Kernel::FixedMetric),
        _ => Err(Failure::Arg(format!("unknown kernel {k}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ehmc_version() -> *const c_char {
    static V: std::sync::OnceLock<std::ffi::CString> = std::sync::OnceLock::new();
    V.get_or_init(|| std::ffi::CString::new(VERSION).unwrap())
        .as_ptr()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
#[no_mangle]
pub unsafe extern "C" fn ehmc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

// -- targets --------------------------------------------------------------------

/// Gaussian `N(mean, diag(variance))`.
#[no_mangle]
pub unsafe extern "C" fn ehmc_target_gaussian_diag(
    mean: *const f64,
    variance: *const f64,
    dim: usize,
    out: *mut *mut EhmcTarget,
) -> EhmcStatus {
    guard(|| {
        let m = in_slice(mean, dim, "mean")?.to_vec();
        let v = in_slice(variance, dim, "variance")?.to_vec();
        let g = GaussianTarget::new(m, PrecisionSpec::DiagonalCovariance(v))?;
        put(out, EhmcTarget { inner: Box::new(g) }, "out")
    })
}

/// Gaussian `N(mean, Σ)` with `Σ` given row-major (`dim × dim`).
#[no_mangle]
pub unsafe extern "C" fn ehmc_target_gaussian_dense(
    mean: *const f64,
    covariance: *const f64,
    dim: usize,
    out: *mut *mut EhmcTarget,
) -> EhmcStatus {
    guard(|| {
        let m = in_slice(mean, dim, "mean")?.to_vec();
        let c = in_slice(covariance, dim * dim, "covariance")?;
        let cov = entropy_hmc::nalgebra::DMatrix::from_row_slice(dim, dim, c);
        let g = GaussianTarget::new(m, PrecisionSpec::DenseCovariance(cov))?;
        put(out, EhmcTarget { inner: Box::new(g) }, "out")
    })
}

/// Zero-mean diagonal Gaussian with variances `10^{c(i−1)/(d−1)}`.
#[no_mangle]
pub unsafe extern "C" fn ehmc_target_anisotropic(
    dim: usize,
    c: f64,
    out: *mut *mut EhmcTarget,
) -> EhmcStatus {
    guard(|| {
        let g = anisotropic_gaussian(dim, c)?;
        put(out, EhmcTarget { inner: Box::new(g) }, "out")
    })
}

struct CallbackTarget {
    dim: usize,
    user: *mut c_void,
    potential: unsafe extern "C" fn(*mut c_void, *const f64, usize) -> f64,
    gradient: unsafe extern "C" fn(*mut c_void, *const f64, *mut f64, usize) -> i32,
}

// The caller guarantees that the callbacks may be invoked concurrently.
unsafe impl Send for CallbackTarget {}
unsafe impl Sync for CallbackTarget {}

impl TargetModel for CallbackTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, q: &[f64]) -> f64 {
        unsafe { (self.potential)(self.user, q.as_ptr(), self.dim) }
    }

    fn grad(&self, q: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        let rc = unsafe { (self.gradient)(self.user, q.as_ptr(), g.as_mut_ptr(), self.dim) };
        if rc != 0 {
            g.fill(f64::NAN);
        }
        g
    }

    fn name(&self) -> &str {
        "callback"
    }
}

/// Target defined by user callbacks. Chains run on several threads, so both
/// callbacks must be safe to call concurrently with the same `user` pointer,
/// which must stay valid until the target is freed.
#[no_mangle]
pub unsafe extern "C" fn ehmc_target_from_callbacks(
    dim: usize,
    user: *mut c_void,
    potential: EhmcPotentialFn,
    gradient: EhmcGradientFn,
    out: *mut *mut EhmcTarget,
) -> EhmcStatus {
    guard(|| {
        if dim == 0 {
            return Err(Failure::Arg("dimension must be positive".into()));
        }
        let potential = potential.ok_or(Failure::Null("potential"))?;
        let gradient = gradient.ok_or(Failure::Null("gradient"))?;
        let t = CallbackTarget {
            dim,
            user,
            potential,
            gradient,
        };
        put(out, EhmcTarget { inner: Box::new(t) }, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_target_dim(target: *const EhmcTarget, out: *mut usize) -> EhmcStatus {
    guard(|| {
        let t = as_ref(target, "target")?;
        *out.as_mut().ok_or(Failure::Null("out"))? = t.inner.dim();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_target_potential(
    target: *const EhmcTarget,
    q: *const f64,
    dim: usize,
    out: *mut f64,
) -> EhmcStatus {
    guard(|| {
        let t = as_ref(target, "target")?;
        check_dim(t.inner.dim(), dim)?;
        let q = in_slice(q, dim, "q")?;
        *out.as_mut().ok_or(Failure::Null("out"))? = t.inner.potential(q);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_target_gradient(
    target: *const EhmcTarget,
    q: *const f64,
    dim: usize,
    out: *mut f64,
) -> EhmcStatus {
    guard(|| {
        let t = as_ref(target, "target")?;
        check_dim(t.inner.dim(), dim)?;
        let g = t.inner.grad(in_slice(q, dim, "q")?);
        out_slice(out, dim, "out")?.copy_from_slice(&g);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_target_free(target: *mut EhmcTarget) {
    if !target.is_null() {
        drop(Box::from_raw(target));
    }
}

// -- preconditioners ------------------------------------------------------------

/// New preconditioner equal to `init_scale · I`.
#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_new(
    kind: u32,
    dim: usize,
    init_scale: f64,
    out: *mut *mut EhmcPreconditioner,
) -> EhmcStatus {
    guard(|| {
        let p = Preconditioner::new(precond_kind(kind)?, dim, init_scale)?;
        put(out, EhmcPreconditioner { inner: p }, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_param_len(
    p: *const EhmcPreconditioner,
    out: *mut usize,
) -> EhmcStatus {
    guard(|| {
        let p = as_ref(p, "precond")?;
        *out.as_mut().ok_or(Failure::Null("out"))? = p.inner.param_len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_get_theta(
    p: *const EhmcPreconditioner,
    out: *mut f64,
    len: usize,
) -> EhmcStatus {
    guard(|| {
        let p = as_ref(p, "precond")?;
        check_dim(p.inner.param_len(), len)?;
        out_slice(out, len, "out")?.copy_from_slice(p.inner.theta());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_set_theta(
    p: *mut EhmcPreconditioner,
    theta: *const f64,
    len: usize,
) -> EhmcStatus {
    guard(|| {
        let p = p.as_mut().ok_or(Failure::Null("precond"))?;
        let t = in_slice(theta, len, "theta")?;
        if !t.iter().all(|x| x.is_finite()) {
            return Err(Failure::Arg("parameters must be finite".into()));
        }
        p.inner.set_theta(t)?;
        Ok(())
    })
}

unsafe fn apply(
    p: *const EhmcPreconditioner,
    w: *const f64,
    out: *mut f64,
    dim: usize,
    f: fn(&Preconditioner, &[f64]) -> entropy_hmc::Result<Vec<f64>>,
) -> EhmcStatus {
    guard(|| {
        let p = as_ref(p, "precond")?;
        check_dim(p.inner.dim(), dim)?;
        let r = f(&p.inner, in_slice(w, dim, "w")?)?;
        out_slice(out, dim, "out")?.copy_from_slice(&r);
        Ok(())
    })
}

/// `out = C w`
#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_apply_c(
    p: *const EhmcPreconditioner,
    w: *const f64,
    out: *mut f64,
    dim: usize,
) -> EhmcStatus {
    apply(p, w, out, dim, Preconditioner::apply_c)
}

/// `out = Cᵀ w`
#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_apply_ct(
    p: *const EhmcPreconditioner,
    w: *const f64,
    out: *mut f64,
    dim: usize,
) -> EhmcStatus {
    apply(p, w, out, dim, Preconditioner::apply_ct)
}

/// `out = C⁻¹ w`
#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_apply_c_inv(
    p: *const EhmcPreconditioner,
    w: *const f64,
    out: *mut f64,
    dim: usize,
) -> EhmcStatus {
    apply(p, w, out, dim, Preconditioner::apply_c_inv)
}

/// `out = C⁻ᵀ w`
#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_apply_c_inv_t(
    p: *const EhmcPreconditioner,
    w: *const f64,
    out: *mut f64,
    dim: usize,
) -> EhmcStatus {
    apply(p, w, out, dim, Preconditioner::apply_c_inv_t)
}

/// `log |det C|`
#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_logdet(
    p: *const EhmcPreconditioner,
    out: *mut f64,
) -> EhmcStatus {
    guard(|| {
        let p = as_ref(p, "precond")?;
        *out.as_mut().ok_or(Failure::Null("out"))? = p.inner.logdet();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_precond_free(p: *mut EhmcPreconditioner) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// -- runs -----------------------------------------------------------------------

/// Fills `out` with the defaults: `h = 0.1`, `L = 5`, 10 chains, 1000
/// adaptation and 1000 sampling steps, diagonal `C`, GSM objective.
#[no_mangle]
pub unsafe extern "C" fn ehmc_run_config_default(out: *mut EhmcRunConfig) -> EhmcStatus {
    guard(|| {
        *out.as_mut().ok_or(Failure::Null("out"))? = EhmcRunConfig {
            h: 0.1,
            steps: 5,
            chains: 10,
            adapt_steps: 1000,
            sample_steps: 1000,
            thin: 1,
            seed: 0,
            precond_kind: EHMC_PRECOND_DIAGONAL,
            init_scale: 1.0,
            objective: EHMC_OBJECTIVE_GSM,
            kernel: EHMC_KERNEL_ADAPTIVE,
            lr_theta: 0.0,
            target_accept: 0.67,
        };
        Ok(())
    })
}

/// Adapts and samples from `target`; chains start at the origin. The
/// fixed-metric kernel requires a Gaussian target and uses its precision.
#[no_mangle]
pub unsafe extern "C" fn ehmc_run(
    target: *const EhmcTarget,
    config: *const EhmcRunConfig,
    out: *mut *mut EhmcRun,
) -> EhmcStatus {
    guard(|| {
        let t = as_ref(target, "target")?;
        let c = as_ref(config, "config")?;
        let model = t.inner.as_ref();
        let d = model.dim();
        let kern = kernel(c.kernel)?;
        let precond = match kern {
            Kernel::Adaptive => {
                Preconditioner::new(precond_kind(c.precond_kind)?, d, c.init_scale)?
            }
            Kernel::FixedMetric => {
                let m = model.gaussian_precision().ok_or_else(|| {
                    Failure::Arg("fixed-metric kernel needs a Gaussian target".into())
                })?;
                entropy_hmc::sampler::fixed_metric_preconditioner(&m)?
            }
        };
        let mut sc = SamplerConfig::new(precond, c.h, c.steps, objective(c.objective)?);
        sc.chains = c.chains;
        sc.adapt_steps = c.adapt_steps;
        sc.sample_steps = c.sample_steps;
        sc.thin = c.thin;
        sc.seed = c.seed;
        sc.kernel = kern;
        if c.lr_theta > 0.0 {
            sc.adapt.lr_theta = c.lr_theta;
        }
        sc.adapt.target_accept = c.target_accept;
        let r = run_experiment(sc, model)?;
        put(out, EhmcRun { inner: r }, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_run_summary(
    run: *const EhmcRun,
    out: *mut EhmcSummary,
) -> EhmcStatus {
    guard(|| {
        let r = &as_ref(run, "run")?.inner;
        let rep = &r.report;
        let nan = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *out.as_mut().ok_or(Failure::Null("out"))? = EhmcSummary {
            min_ess: nan(rep.min_ess),
            mean_ess: nan(rep.mean_ess),
            median_ess: nan(rep.median_ess),
            max_rhat: nan(rep.max_rhat),
            median_rhat: nan(rep.median_rhat),
            acceptance_rate: nan(rep.acceptance_rate),
            divergences: rep.divergences,
            wall_seconds: rep.wall_seconds,
            cond_number: nan(rep.cond_number),
            step_size: r.session.h,
            dim: r.session.state.precond.dim(),
            chains: rep.draws.len(),
            draws_per_chain: rep.draws.first().map_or(0, |c| c.len()),
        };
        Ok(())
    })
}

/// Per-dimension ESS (`len` = dimension); undefined entries are NaN.
#[no_mangle]
pub unsafe extern "C" fn ehmc_run_ess(
    run: *const EhmcRun,
    out: *mut f64,
    len: usize,
) -> EhmcStatus {
    guard(|| {
        let rep = &as_ref(run, "run")?.inner.report;
        check_dim(rep.ess_per_dim.len(), len)?;
        let o = out_slice(out, len, "out")?;
        for (o, e) in o.iter_mut().zip(&rep.ess_per_dim) {
            *o = e.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Per-dimension split-R̂ (`len` = dimension); undefined entries are NaN.
#[no_mangle]
pub unsafe extern "C" fn ehmc_run_rhat(
    run: *const EhmcRun,
    out: *mut f64,
    len: usize,
) -> EhmcStatus {
    guard(|| {
        let rep = &as_ref(run, "run")?.inner.report;
        check_dim(rep.split_rhat_per_dim.len(), len)?;
        let o = out_slice(out, len, "out")?;
        for (o, e) in o.iter_mut().zip(&rep.split_rhat_per_dim) {
            *o = e.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Copies the draws of `chain` row-major into `out`
/// (`len` = draws_per_chain · dim).
#[no_mangle]
pub unsafe extern "C" fn ehmc_run_draws(
    run: *const EhmcRun,
    chain: usize,
    out: *mut f64,
    len: usize,
) -> EhmcStatus {
    guard(|| {
        let rep = &as_ref(run, "run")?.inner.report;
        let draws = rep
            .draws
            .get(chain)
            .ok_or_else(|| Failure::Arg(format!("chain {chain} out of range")))?;
        let d = rep.ess_per_dim.len();
        check_dim(draws.len() * d, len)?;
        let o = out_slice(out, len, "out")?;
        for (row, q) in o.chunks_mut(d.max(1)).zip(draws) {
            row.copy_from_slice(q);
        }
        Ok(())
    })
}

/// Copy of the adapted preconditioner; free with [`ehmc_precond_free`].
#[no_mangle]
pub unsafe extern "C" fn ehmc_run_preconditioner(
    run: *const EhmcRun,
    out: *mut *mut EhmcPreconditioner,
) -> EhmcStatus {
    guard(|| {
        let r = &as_ref(run, "run")?.inner;
        put(
            out,
            EhmcPreconditioner {
                inner: r.session.state.precond.clone(),
            },
            "out",
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn ehmc_run_free(run: *mut EhmcRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
