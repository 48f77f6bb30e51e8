//! C ABI over `hiergibbs`.
//!
//! Every function returns an [`HgStatus`]; results go through out-pointers.
//! On failure the message is available from [`hg_last_error_message`] on the
//! same thread until the next failing call. Handles are opaque and must be
//! released with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hiergibbs::asymptotics::{cv_normal, gap_closed_normal, gap_from_matrices, mixing_bound, GapVariant};
use hiergibbs::diagnostics::max_iat;
use hiergibbs::gibbs::{default_init, run_chain, Blocking, ChainOutput, KernelSpec};
use hiergibbs::models::{simulate_data, Dataset, GammaPrior, GlobalParams, ModelSpec, MuPrior, PriorSpec};
use hiergibbs::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidParameter = 3,
    Numerical = 4,
    NotLogConcave = 5,
    Domain = 6,
    Singular = 7,
    Optimization = 8,
    RadiusTooLarge = 9,
    Degenerate = 10,
    UndefinedEss = 11,
    Config = 12,
    Io = 13,
    Internal = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgGapVariant {
    P1 = 0,
    P2P3 = 1,
    Extended = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgModel {
    NormalKnownTau0 = 0,
    NormalUnknownTau0 = 1,
    BinomialLogit = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgBlocking {
    P1 = 0,
    P2 = 1,
    P3 = 2,
    TwoBlock = 3,
    Extended = 4,
    FixedDim = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgMuPrior {
    Flat = 0,
    /// `mu | tau1 ~ N(mean, scale / tau1)`.
    NormalOverTau = 1,
    /// `mu ~ N(mean, scale)`.
    NormalFixedVar = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HgPrior {
    pub mu_kind: HgMuPrior,
    pub mu_mean: f64,
    pub mu_scale: f64,
    pub tau1_shape: f64,
    pub tau1_rate: f64,
    /// Used only by models with unknown `tau0`.
    pub tau0_shape: f64,
    pub tau0_rate: f64,
}

/// Simulated dataset together with the model that generated it.
pub struct HgDataset {
    model: ModelSpec,
    data: Dataset,
}

/// Recorded chain trace.
pub struct HgChain {
    output: ChainOutput,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HgStatus {
    match e {
        Error::InvalidParameter(_) => HgStatus::InvalidParameter,
        Error::InvalidArgument(_) => HgStatus::InvalidArgument,
        Error::Numerical { .. } => HgStatus::Numerical,
        Error::NotLogConcave(_) => HgStatus::NotLogConcave,
        Error::Internal(_) => HgStatus::Internal,
        Error::Domain(_) => HgStatus::Domain,
        Error::Singular(_) => HgStatus::Singular,
        Error::Optimization(_) => HgStatus::Optimization,
        Error::RadiusTooLarge(_) => HgStatus::RadiusTooLarge,
        Error::Degenerate(_) => HgStatus::Degenerate,
        Error::UndefinedEss(_) => HgStatus::UndefinedEss,
        Error::Sweep { source, .. } => status_of(source),
        Error::Config(_) => HgStatus::Config,
        Error::Io { .. } => HgStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HgStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            HgStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("panic inside hiergibbs");
            HgStatus::Panic
        }
    }
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn variant(v: HgGapVariant) -> GapVariant {
    match v {
        HgGapVariant::P1 => GapVariant::P1,
        HgGapVariant::P2P3 => GapVariant::P2P3,
        HgGapVariant::Extended => GapVariant::Extended,
    }
}

fn model_spec(model: HgModel, m: usize) -> hiergibbs::Result<ModelSpec> {
    match model {
        HgModel::NormalKnownTau0 => ModelSpec::normal_known_tau0(m),
        HgModel::NormalUnknownTau0 => ModelSpec::normal_unknown_tau0(m),
        HgModel::BinomialLogit => ModelSpec::binomial_logit(m),
    }
}

fn blocking(b: HgBlocking) -> Blocking {
    match b {
        HgBlocking::P1 => Blocking::P1KnownTau1,
        HgBlocking::P2 => Blocking::P2JointThetaMu,
        HgBlocking::P3 => Blocking::P3SequentialMuTau,
        HgBlocking::TwoBlock => Blocking::TwoBlockThetaVsPsi,
        HgBlocking::Extended => Blocking::ExtendedThetaMuTau0Tau1,
        HgBlocking::FixedDim => Blocking::FixedDimMuTau,
    }
}

fn prior_spec(p: &HgPrior, model: &ModelSpec) -> PriorSpec {
    let mu = match p.mu_kind {
        HgMuPrior::Flat => MuPrior::Flat,
        HgMuPrior::NormalOverTau => MuPrior::NormalOverTau { mean: p.mu_mean, scale: p.mu_scale },
        HgMuPrior::NormalFixedVar => MuPrior::NormalFixedVar { mean: p.mu_mean, var: p.mu_scale },
    };
    let tau0 = (model.kind == hiergibbs::models::ModelKind::NormalUnknownTau0)
        .then(|| GammaPrior::new(p.tau0_shape, p.tau0_rate));
    PriorSpec { mu, tau1: GammaPrior::new(p.tau1_shape, p.tau1_rate), tau0 }
}

/// Message of the last failing call on this thread (empty if none). The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn hg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Closed-form asymptotic gap of a normal blocking.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn hg_gap_closed_normal(m: usize, tau0: f64, tau1: f64, v: HgGapVariant, out: *mut f64) -> HgStatus {
    guard(|| {
        let g = gap_closed_normal(m, tau0, tau1, variant(v))?;
        write_out(out, g, "out")
    })
}

/// Gap from the coupling, conditional-variance and Fisher matrices at
/// `(mu, tau1, tau0)`.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn hg_gap_matrix_normal(
    mu: f64,
    tau1: f64,
    tau0: f64,
    m: usize,
    v: HgGapVariant,
    out: *mut f64,
) -> HgStatus {
    guard(|| {
        let inputs = cv_normal(&GlobalParams::new(mu, tau1, tau0), m, variant(v))?;
        write_out(out, gap_from_matrices(&inputs, None)?.gamma, "out")
    })
}

/// Upper bound on the mixing time from a gap, warm-start constant `m_warm`
/// and tolerance `eps`.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn hg_mixing_bound(gamma: f64, m_warm: f64, eps: f64, out: *mut f64) -> HgStatus {
    guard(|| write_out(out, mixing_bound(gamma, m_warm, eps)?, "out"))
}

/// Simulates `j` groups of `m` observations at `(mu, tau1, tau0)`.
///
/// # Safety
/// `out` must be null or valid for writing one pointer. The handle written
/// there must be released with [`hg_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn hg_dataset_simulate(
    model: HgModel,
    m: usize,
    mu: f64,
    tau1: f64,
    tau0: f64,
    j: usize,
    seed: u64,
    out: *mut *mut HgDataset,
) -> HgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let spec = model_spec(model, m)?;
        let data = simulate_data(&spec, &GlobalParams::new(mu, tau1, tau0), j, seed)?;
        write_out(out, Box::into_raw(Box::new(HgDataset { model: spec, data })), "out")
    })
}

/// # Safety
/// `ds` must be a live dataset handle; `out` must be valid for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn hg_dataset_num_groups(ds: *const HgDataset, out: *mut usize) -> HgStatus {
    guard(|| write_out(out, deref(ds, "dataset")?.data.num_groups(), "out"))
}

/// # Safety
/// `ds` must be null or a handle from [`hg_dataset_simulate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hg_dataset_free(ds: *mut HgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Runs a chain on `ds`. Components not sampled by the blocking are fixed at
/// `(mu, tau1, tau0)`; sampled ones start at the default initial state.
///
/// # Safety
/// `ds` and `prior` must be valid; `out` must be valid for writing one
/// pointer. Release the chain with [`hg_chain_free`].
#[no_mangle]
pub unsafe extern "C" fn hg_chain_run(
    ds: *const HgDataset,
    block: HgBlocking,
    prior: *const HgPrior,
    mu: f64,
    tau1: f64,
    tau0: f64,
    iters: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    out: *mut *mut HgChain,
) -> HgStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        let prior = deref(prior, "prior")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let spec = KernelSpec::new(ds.model.clone(), prior_spec(prior, &ds.model), blocking(block))?;
        let fixed = GlobalParams::new(mu, tau1, tau0);
        let init = default_init(&spec, &ds.data, &fixed)?;
        let output = run_chain(&spec, &ds.data, &init, iters, burn_in, thin, seed)?;
        let names = output.names().iter().map(|n| CString::new(n.as_str()).unwrap_or_default()).collect();
        write_out(out, Box::into_raw(Box::new(HgChain { output, names })), "out")
    })
}

/// # Safety
/// `ch` must be a live chain handle; `out` must be valid for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn hg_chain_rows(ch: *const HgChain, out: *mut usize) -> HgStatus {
    guard(|| write_out(out, deref(ch, "chain")?.output.rows(), "out"))
}

/// # Safety
/// `ch` must be a live chain handle; `out` must be valid for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn hg_chain_cols(ch: *const HgChain, out: *mut usize) -> HgStatus {
    guard(|| write_out(out, deref(ch, "chain")?.output.cols(), "out"))
}

/// Name of column `k`, owned by the chain and valid until it is freed.
///
/// # Safety
/// `ch` must be a live chain handle; `out` must be valid for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hg_chain_column_name(ch: *const HgChain, k: usize, out: *mut *const c_char) -> HgStatus {
    guard(|| {
        let ch = deref(ch, "chain")?;
        let name = ch
            .names
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("column {k} out of range ({} columns)", ch.names.len())))?;
        write_out(out, name.as_ptr(), "out")
    })
}

/// Copies column `k` into `buf`, which must hold `len >= rows` doubles.
///
/// # Safety
/// `ch` must be a live chain handle; `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hg_chain_column(ch: *const HgChain, k: usize, buf: *mut f64, len: usize) -> HgStatus {
    guard(|| {
        let ch = deref(ch, "chain")?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if k >= ch.output.cols() {
            return Err(Error::InvalidArgument(format!("column {k} out of range")).into());
        }
        let col = ch.output.column(k);
        if len < col.len() {
            return Err(Error::InvalidArgument(format!("buffer holds {len} values, column has {}", col.len())).into());
        }
        ptr::copy_nonoverlapping(col.as_ptr(), buf, col.len());
        Ok(())
    })
}

/// Largest integrated autocorrelation time over the recorded columns.
///
/// # Safety
/// `ch` must be a live chain handle; `out` must be valid for one `double`.
#[no_mangle]
pub unsafe extern "C" fn hg_chain_max_iat(ch: *const HgChain, out: *mut f64) -> HgStatus {
    guard(|| write_out(out, max_iat(&deref(ch, "chain")?.output)?.max_iat, "out"))
}

/// # Safety
/// `ch` must be null or a handle from [`hg_chain_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hg_chain_free(ch: *mut HgChain) {
    if !ch.is_null() {
        drop(Box::from_raw(ch));
    }
}

/// Copies the last error message into Rust; for tests and Rust callers.
pub fn last_error() -> String {
    // SAFETY: the pointer comes from a live thread-local CString.
    unsafe { CStr::from_ptr(hg_last_error_message()) }.to_string_lossy().into_owned()
}
