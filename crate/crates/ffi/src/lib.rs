//! C interface.
//!
//! Maps and policies are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`MapfStatus`]; on failure the
//! message is available from [`mapf_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use mapf_egt::baselines::astar;
use mapf_egt::bench::{evaluate, generate_map, Solver};
use mapf_egt::egt::{train, TrainConfig};
use mapf_egt::gridworld::{parse_map, Action, Cell, EnvConfig, GridMap};
use mapf_egt::policy::{PolicyError, TabularPolicy};

/// Opaque grid map.
pub struct MapfMap(Arc<GridMap>);

/// Opaque tabular policy.
pub struct MapfPolicy(TabularPolicy);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IoError = 4,
    TrainError = 5,
    DimensionMismatch = 6,
    Unreachable = 7,
    Panic = 8,
}

/// Training options; zero horizon means `2 * (width + height)`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MapfTrainOptions {
    pub num_agents: u32,
    pub horizon: u32,
    pub batch_size: u32,
    pub max_iterations: u32,
    pub patience: u32,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Evaluation summary. Undefined averages are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MapfMetrics {
    pub success_rate: f64,
    pub mean_timesteps: f64,
    pub obstacle_distance: f64,
    pub collisions_per_episode: f64,
    pub eval_seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: MapfStatus, msg: impl Into<String>) -> MapfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MapfStatus) -> MapfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == MapfStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(MapfStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, MapfStatus> {
    if ptr.is_null() {
        return Err(fail(MapfStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(MapfStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn policy_status(e: &PolicyError) -> MapfStatus {
    match e {
        PolicyError::Io(_) => MapfStatus::IoError,
        PolicyError::DimensionMismatch { .. } | PolicyError::MissingRow(_) => MapfStatus::DimensionMismatch,
        _ => MapfStatus::ParseError,
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mapf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn mapf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a map from its text form (`.` free, `#` obstacle, `G` goal,
/// `S` start).
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mapf_map_parse(text: *const c_char, out: *mut *mut MapfMap) -> MapfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MapfStatus::NullPointer, "out is null");
        }
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_map(text) {
            Ok(map) => {
                *out = Box::into_raw(Box::new(MapfMap(Arc::new(map))));
                MapfStatus::Ok
            }
            Err(e) => fail(MapfStatus::ParseError, e.to_string()),
        }
    })
}

/// Random connected map with the given obstacle density.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mapf_map_generate(
    width: u32,
    height: u32,
    density: f64,
    seed: u64,
    out: *mut *mut MapfMap,
) -> MapfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MapfStatus::NullPointer, "out is null");
        }
        match generate_map(width as usize, height as usize, density, seed) {
            Ok(map) => {
                *out = Box::into_raw(Box::new(MapfMap(Arc::new(map))));
                MapfStatus::Ok
            }
            Err(e) => fail(MapfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mapf_map_free(map: *mut MapfMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mapf_map_width(map: *const MapfMap) -> u32 {
    map.as_ref().map_or(0, |m| m.0.width() as u32)
}

/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mapf_map_height(map: *const MapfMap) -> u32 {
    map.as_ref().map_or(0, |m| m.0.height() as u32)
}

/// Length in moves of the A* path from `(x, y)` to the nearest goal.
///
/// # Safety
/// `map` must be a live handle and `out_len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mapf_astar_length(map: *const MapfMap, x: u32, y: u32, out_len: *mut u32) -> MapfStatus {
    guard(|| {
        let (Some(map), false) = (map.as_ref(), out_len.is_null()) else {
            return fail(MapfStatus::NullPointer, "map or out_len is null");
        };
        let cell = Cell::new(x as usize, y as usize);
        if !map.0.contains(x as isize, y as isize) {
            return fail(MapfStatus::InvalidArgument, format!("{cell} is outside the map"));
        }
        match astar(&map.0, cell) {
            Some(path) => {
                *out_len = path.len() as u32;
                MapfStatus::Ok
            }
            None => fail(MapfStatus::Unreachable, format!("no goal reachable from {cell}")),
        }
    })
}

#[no_mangle]
pub extern "C" fn mapf_train_options_default() -> MapfTrainOptions {
    MapfTrainOptions {
        num_agents: 1,
        horizon: 0,
        batch_size: 64,
        max_iterations: 500,
        patience: 1,
        learning_rate: 0.5,
        seed: 0,
    }
}

/// Trains a shared policy and returns it without the exploration mixture.
///
/// # Safety
/// `map` must be a live handle; `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mapf_train_egt(
    map: *const MapfMap,
    options: *const MapfTrainOptions,
    out: *mut *mut MapfPolicy,
) -> MapfStatus {
    guard(|| {
        let (Some(map), Some(opts), false) = (map.as_ref(), options.as_ref(), out.is_null()) else {
            return fail(MapfStatus::NullPointer, "map, options or out is null");
        };
        let mut env = EnvConfig::new(map.0.clone(), opts.num_agents as usize).with_seed(opts.seed);
        if opts.horizon > 0 {
            env.horizon = opts.horizon as usize;
        }
        let mut config = TrainConfig::new(env);
        config.batch_size = opts.batch_size as usize;
        config.max_iterations = opts.max_iterations as usize;
        config.patience = opts.patience as usize;
        config.learning_rate = opts.learning_rate;
        match train(config, opts.seed) {
            Ok(report) => {
                *out = Box::into_raw(Box::new(MapfPolicy(report.exploit_policy())));
                MapfStatus::Ok
            }
            Err(e) => fail(MapfStatus::TrainError, e.to_string()),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mapf_policy_load(path: *const c_char, out: *mut *mut MapfPolicy) -> MapfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MapfStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) => return fail(MapfStatus::IoError, format!("{path}: {e}")),
        };
        match TabularPolicy::read_from(BufReader::new(file)) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(MapfPolicy(p)));
                MapfStatus::Ok
            }
            Err(e) => fail(policy_status(&e), format!("{path}: {e}")),
        }
    })
}

/// # Safety
/// `policy` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mapf_policy_save(policy: *const MapfPolicy, path: *const c_char) -> MapfStatus {
    guard(|| {
        let Some(policy) = policy.as_ref() else {
            return fail(MapfStatus::NullPointer, "policy is null");
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let result = File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            policy.0.write_to(&mut w, &[])?;
            w.flush()
        });
        match result {
            Ok(()) => MapfStatus::Ok,
            Err(e) => fail(MapfStatus::IoError, format!("{path}: {e}")),
        }
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mapf_policy_free(policy: *mut MapfPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Writes the action distribution at `(x, y)` in the order up, down, left,
/// right, stay.
///
/// # Safety
/// `policy` must be a live handle and `out` point to 5 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mapf_policy_probabilities(
    policy: *const MapfPolicy,
    x: u32,
    y: u32,
    out: *mut f64,
) -> MapfStatus {
    guard(|| {
        let (Some(policy), false) = (policy.as_ref(), out.is_null()) else {
            return fail(MapfStatus::NullPointer, "policy or out is null");
        };
        let p = &policy.0;
        if x as usize >= p.width() || y as usize >= p.height() {
            return fail(
                MapfStatus::InvalidArgument,
                format!("({x},{y}) is outside the {}x{} policy", p.width(), p.height()),
            );
        }
        let row = p.row(Cell::new(x as usize, y as usize));
        std::slice::from_raw_parts_mut(out, Action::COUNT).copy_from_slice(row);
        MapfStatus::Ok
    })
}

/// Evaluates `policy`, or the A* planner when `policy` is null.
///
/// # Safety
/// `map` must be a live handle, `policy` null or a live handle, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mapf_evaluate(
    map: *const MapfMap,
    policy: *const MapfPolicy,
    num_agents: u32,
    horizon: u32,
    episodes: u32,
    seed: u64,
    out: *mut MapfMetrics,
) -> MapfStatus {
    guard(|| {
        let (Some(map), false) = (map.as_ref(), out.is_null()) else {
            return fail(MapfStatus::NullPointer, "map or out is null");
        };
        if episodes == 0 {
            return fail(MapfStatus::InvalidArgument, "episodes must be at least 1");
        }
        let mut env = EnvConfig::new(map.0.clone(), num_agents as usize);
        if horizon > 0 {
            env.horizon = horizon as usize;
        }
        let solver = match policy.as_ref() {
            Some(p) => {
                if let Err(e) = p.0.check_map(&map.0) {
                    return fail(policy_status(&e), e.to_string());
                }
                Solver::Policy(&p.0)
            }
            None => Solver::AStar,
        };
        match evaluate(solver, &env, episodes as usize, seed) {
            Ok(m) => {
                *out = MapfMetrics {
                    success_rate: m.success_rate,
                    mean_timesteps: m.mean_timesteps.unwrap_or(f64::NAN),
                    obstacle_distance: m.obstacle_distance.unwrap_or(f64::NAN),
                    collisions_per_episode: m.collisions_per_episode,
                    eval_seconds: m.eval_seconds,
                };
                MapfStatus::Ok
            }
            Err(e) => fail(MapfStatus::InvalidArgument, e.to_string()),
        }
    })
}
