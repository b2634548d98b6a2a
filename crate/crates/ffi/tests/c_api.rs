use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use pdns_core::approximator::{read_checkpoint, write_checkpoint, Checkpoint, ParamStore};
use pdns_core::config::{Problem, RunConfig};
use pdns_core::rng::seeded;
use pdns_core::targets::{DiscreteKind, DiscreteTarget};
use pdns_core::trainer::SamplerProblem;
use pdns_ffi::*;

const GAUSS: &str = r#"
[target]
kind = "gmm"
centers = [[2.0, -1.0]]
std = 0.5
beta = 1.0
[process]
steps = 20
sigma_bar = 2.0
alpha_min = 0.5
alpha_max = 12.0
[net]
hidden = [8]
[train]
inner_steps = 1
batch_size = 4
buffer_size = 8
schedule = { mode = "linear", stages = 1 }
"#;

const ISING: &str = r#"
[target]
kind = "ising"
side = 3
coupling = 1.0
beta = 0.6
[process]
steps = 9
[net]
hidden = [8]
[train]
inner_steps = 1
batch_size = 4
buffer_size = 8
schedule = { mode = "linear", stages = 1 }
"#;

fn last_error() -> String {
    let p = pdns_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Writes a config and a checkpoint with random (nonzero) output weights and
/// returns the parameters as stored, after their round trip through f32.
fn fixture(dir: &Path, text: &str, hash_override: Option<&str>) -> (CString, CString, RunConfig, ParamStore) {
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, text).unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let mlp = match cfg.problem().unwrap() {
        Problem::Continuous(p) => p.net.mlp(),
        Problem::Discrete(p) => p.net.mlp(),
    };
    let store = ParamStore::new(mlp.init(&mut seeded(3), false));
    let hash = hash_override.map(str::to_string).unwrap_or_else(|| cfg.hash().unwrap());
    let ck_path = dir.join("final.pdns");
    write_checkpoint(
        &ck_path,
        &Checkpoint {
            store,
            config_hash: hash,
        },
    )
    .unwrap();
    let stored = read_checkpoint(&ck_path).unwrap().store;
    (c(cfg_path.to_str().unwrap()), c(ck_path.to_str().unwrap()), cfg, stored)
}

#[test]
fn ess_of_log_weights() {
    let mut out = 0.0;
    assert_eq!(unsafe { pdns_ess([1.5; 4].as_ptr(), 4, &mut out) }, PdnsStatus::Ok);
    assert!((out - 1.0).abs() < 1e-12);
    let lw = [0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    assert_eq!(unsafe { pdns_ess(lw.as_ptr(), 4, &mut out) }, PdnsStatus::Ok);
    assert_eq!(out, 0.25);
    assert_eq!(unsafe { pdns_ess(ptr::null(), 4, &mut out) }, PdnsStatus::NullPointer);
    assert!(last_error().contains("log_w"));
    assert_eq!(
        unsafe { pdns_ess(lw.as_ptr(), 0, &mut out) },
        PdnsStatus::InvalidArgument
    );
}

#[test]
fn discrete_target_density_matches_direct_evaluation() {
    let text = c("kind = \"ising\"\nside = 3\ncoupling = 1.0\nbeta = 0.6\n");
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { pdns_target_from_toml(text.as_ptr(), &mut t) }, PdnsStatus::Ok);
    let (mut dim, mut discrete) = (0usize, false);
    unsafe {
        assert_eq!(pdns_target_dim(t, &mut dim), PdnsStatus::Ok);
        assert_eq!(pdns_target_is_discrete(t, &mut discrete), PdnsStatus::Ok);
    }
    assert_eq!((dim, discrete), (9, true));

    // All spins aligned: 18 satisfied bonds on the periodic 3x3 lattice.
    let mut out = 0.0;
    let x = [0u8; 9];
    assert_eq!(
        unsafe { pdns_target_log_density_discrete(t, x.as_ptr(), 9, &mut out) },
        PdnsStatus::Ok
    );
    assert!((out - 0.6 * 18.0).abs() < 1e-12, "{out}");
    let direct = DiscreteTarget::new(DiscreteKind::Ising { side: 3, coupling: 1.0 }, 0.6).unwrap();
    let y = [0u8, 1, 0, 1, 1, 0, 0, 0, 1];
    assert_eq!(
        unsafe { pdns_target_log_density_discrete(t, y.as_ptr(), 9, &mut out) },
        PdnsStatus::Ok
    );
    assert_eq!(out, direct.log_target(&y).unwrap());

    assert_eq!(
        unsafe { pdns_target_log_density_discrete(t, y.as_ptr(), 4, &mut out) },
        PdnsStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { pdns_target_log_density(t, [0.0; 9].as_ptr(), 9, &mut out) },
        PdnsStatus::InvalidArgument
    );
    assert!(last_error().contains("discrete"));
    unsafe { pdns_target_free(t) };
}

#[test]
fn continuous_target_density() {
    let text = c("kind = \"gmm\"\ncenters = [[0.0]]\nstd = 1.0\nbeta = 1.0\n");
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { pdns_target_from_toml(text.as_ptr(), &mut t) }, PdnsStatus::Ok);
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(pdns_target_log_density(t, [0.0].as_ptr(), 1, &mut a), PdnsStatus::Ok);
        assert_eq!(pdns_target_log_density(t, [1.0].as_ptr(), 1, &mut b), PdnsStatus::Ok);
        pdns_target_free(t);
    }
    assert!((a - b - 0.5).abs() < 1e-12, "{a} {b}");
}

#[test]
fn bad_targets_are_config_errors() {
    let mut t = ptr::null_mut();
    for text in ["kind = \"nope\"", "kind = \"ising\"\nside = 3", "not toml ["] {
        let text = c(text);
        assert_eq!(
            unsafe { pdns_target_from_toml(text.as_ptr(), &mut t) },
            PdnsStatus::Config
        );
        assert!(t.is_null());
        assert!(!last_error().is_empty());
    }
    assert_eq!(
        unsafe { pdns_target_from_toml(ptr::null(), &mut t) },
        PdnsStatus::NullPointer
    );
    unsafe { pdns_target_free(ptr::null_mut()) };
}

#[test]
fn continuous_sampler_reproduces_library_rollouts() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, ck_path, cfg, store) = fixture(tmp.path(), GAUSS, None);
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { pdns_sampler_load(cfg_path.as_ptr(), ck_path.as_ptr(), &mut s) },
        PdnsStatus::Ok
    );
    let (mut dim, mut discrete) = (0usize, true);
    unsafe {
        assert_eq!(pdns_sampler_dim(s, &mut dim), PdnsStatus::Ok);
        assert_eq!(pdns_sampler_is_discrete(s, &mut discrete), PdnsStatus::Ok);
    }
    assert_eq!((dim, discrete), (2, false));

    let n = 64;
    let (mut states, mut log_w, mut written) = (vec![0.0; n * dim], vec![0.0; n], 0usize);
    let st = unsafe { pdns_sampler_sample(s, n, 11, states.as_mut_ptr(), log_w.as_mut_ptr(), &mut written) };
    assert_eq!(st, PdnsStatus::Ok);
    assert_eq!(written, n);

    let Problem::Continuous(p) = cfg.problem().unwrap() else {
        unreachable!()
    };
    let batch = p.rollout(&store.ema, n, &mut seeded(11)).unwrap();
    let flat: Vec<f64> = batch.states.concat();
    assert_eq!(states, flat);
    assert_eq!(log_w, batch.log_weights());
    assert!(log_w.iter().any(|&w| w != 0.0));

    let mut bytes = vec![0u8; n * dim];
    let st = unsafe { pdns_sampler_sample_discrete(s, n, 11, bytes.as_mut_ptr(), log_w.as_mut_ptr(), &mut written) };
    assert_eq!(st, PdnsStatus::InvalidArgument);
    unsafe { pdns_sampler_free(s) };
}

#[test]
fn discrete_sampler_fills_valid_states() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, ck_path, cfg, store) = fixture(tmp.path(), ISING, None);
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { pdns_sampler_load(cfg_path.as_ptr(), ck_path.as_ptr(), &mut s) },
        PdnsStatus::Ok
    );
    let n = 100;
    let (mut states, mut log_w, mut written) = (vec![9u8; n * 9], vec![0.0; n], 0usize);
    let st = unsafe { pdns_sampler_sample_discrete(s, n, 5, states.as_mut_ptr(), log_w.as_mut_ptr(), &mut written) };
    assert_eq!(st, PdnsStatus::Ok);
    assert_eq!(written, n);
    assert!(states.iter().all(|&v| v < 2));
    let Problem::Discrete(p) = cfg.problem().unwrap() else {
        unreachable!()
    };
    let batch = p.rollout(&store.ema, n, &mut seeded(5)).unwrap();
    assert_eq!(states, batch.states.concat());

    let st = unsafe { pdns_sampler_sample_discrete(s, 0, 5, states.as_mut_ptr(), log_w.as_mut_ptr(), &mut written) };
    assert_eq!((st, written), (PdnsStatus::Ok, 0));
    let st = unsafe { pdns_sampler_sample_discrete(s, n, 5, ptr::null_mut(), log_w.as_mut_ptr(), &mut written) };
    assert_eq!(st, PdnsStatus::NullPointer);
    unsafe { pdns_sampler_free(s) };
}

#[test]
fn sampler_load_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, ck_path, _, _) = fixture(tmp.path(), ISING, Some("0000"));
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { pdns_sampler_load(cfg_path.as_ptr(), ck_path.as_ptr(), &mut s) },
        PdnsStatus::Checkpoint
    );
    assert!(last_error().contains("hashes to"));
    assert!(s.is_null());

    let missing = c(tmp.path().join("missing.pdns").to_str().unwrap());
    assert_eq!(
        unsafe { pdns_sampler_load(cfg_path.as_ptr(), missing.as_ptr(), &mut s) },
        PdnsStatus::Io
    );
    let bad = c(tmp.path().join("bad.toml").to_str().unwrap());
    std::fs::write(tmp.path().join("bad.toml"), "seed = 1\n").unwrap();
    assert_eq!(
        unsafe { pdns_sampler_load(bad.as_ptr(), ck_path.as_ptr(), &mut s) },
        PdnsStatus::Config
    );
}

#[test]
fn errors_are_per_thread() {
    let mut out = 0.0;
    assert_eq!(unsafe { pdns_ess(ptr::null(), 1, &mut out) }, PdnsStatus::NullPointer);
    let other = std::thread::spawn(|| pdns_last_error().is_null()).join().unwrap();
    assert!(other);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pdns.h")).unwrap();
    for name in [
        "PDNS_STATUS_OK",
        "PDNS_STATUS_PANIC",
        "typedef struct PdnsTarget PdnsTarget",
        "typedef struct PdnsSampler PdnsSampler",
        "pdns_last_error",
        "pdns_target_from_toml",
        "pdns_sampler_load",
        "pdns_sampler_sample_discrete",
        "pdns_ess",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(pdns_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
