use std::ffi::{CStr, CString};
use std::ptr;

use mupfl_ffi::*;

const CONFIG: &str = r#"
seed = 3
rounds = 2
clients = 3
fraction = 1.0
local_epochs = 1
lr = 0.1
hidden = 6

[data]
classes = 3
dim = 4
train_per_class = 20
test_per_class = 5

[pkcf]
m = 2
steps = 5
tau = 2
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mupfl_last_error_message()) }.to_str().unwrap().to_owned()
}

fn new_sim(toml: &str) -> (MupflStatus, *mut MupflSimulation) {
    let c = CString::new(toml).unwrap();
    let mut sim = ptr::null_mut();
    let status = unsafe { mupfl_simulation_new(c.as_ptr(), &mut sim) };
    (status, sim)
}

fn params(sim: *const MupflSimulation) -> Vec<f64> {
    let mut len = 0;
    assert_eq!(unsafe { mupfl_simulation_num_params(sim, &mut len) }, MupflStatus::Ok);
    let mut buf = vec![0.0; len];
    assert_eq!(unsafe { mupfl_simulation_global_params(sim, buf.as_mut_ptr(), len) }, MupflStatus::Ok);
    buf
}

#[test]
fn lifecycle_and_rounds() {
    let (status, sim) = new_sim(CONFIG);
    assert_eq!(status, MupflStatus::Ok);
    assert!(!sim.is_null());
    assert_eq!(unsafe { mupfl_simulation_rounds_done(sim) }, 0);
    let before = params(sim);
    // 4 -> 6 -> 3 MLP
    assert_eq!(before.len(), 4 * 6 + 6 + 6 * 3 + 3);

    let mut m = MupflRoundMetrics::default();
    assert_eq!(unsafe { mupfl_simulation_run_round(sim, &mut m) }, MupflStatus::Ok);
    assert_eq!(m.round, 1);
    assert!((0.0..=1.0).contains(&m.global_acc) && m.mean_train_loss.is_finite());
    assert_eq!(unsafe { mupfl_simulation_run_round(sim, ptr::null_mut()) }, MupflStatus::Ok);
    assert_eq!(unsafe { mupfl_simulation_rounds_done(sim) }, 2);
    assert_ne!(params(sim), before);
    unsafe { mupfl_simulation_free(sim) };
    unsafe { mupfl_simulation_free(ptr::null_mut()) };
}

#[test]
fn short_buffer_is_rejected() {
    let (_, sim) = new_sim(CONFIG);
    let mut buf = vec![0.0; 3];
    let status = unsafe { mupfl_simulation_global_params(sim, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, MupflStatus::BufferTooSmall);
    assert!(last_error().contains("3"));
    assert_eq!(buf, vec![0.0; 3]);
    unsafe { mupfl_simulation_free(sim) };
}

#[test]
fn null_arguments_are_reported() {
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { mupfl_simulation_new(ptr::null(), &mut sim) }, MupflStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert!(sim.is_null());
    let c = CString::new(CONFIG).unwrap();
    assert_eq!(unsafe { mupfl_simulation_new(c.as_ptr(), ptr::null_mut()) }, MupflStatus::NullPointer);
    assert_eq!(unsafe { mupfl_simulation_run_round(ptr::null_mut(), ptr::null_mut()) }, MupflStatus::NullPointer);
    let mut len = 0;
    assert_eq!(unsafe { mupfl_simulation_num_params(ptr::null(), &mut len) }, MupflStatus::NullPointer);
    assert_eq!(unsafe { mupfl_simulation_rounds_done(ptr::null()) }, 0);
}

#[test]
fn bad_config_maps_to_config_status() {
    let (status, sim) = new_sim("clients = \"many\"\n");
    assert_eq!(status, MupflStatus::Config);
    assert!(sim.is_null());
    assert!(last_error().contains("clients"));

    let bytes = [b'a', 0xff, 0xfe, 0];
    let mut out = ptr::null_mut();
    let status = unsafe { mupfl_simulation_new(bytes.as_ptr().cast(), &mut out) };
    assert_eq!(status, MupflStatus::InvalidUtf8);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("c.bin").to_str().unwrap()).unwrap();
    let (_, sim) = new_sim(CONFIG);
    unsafe { mupfl_simulation_run_round(sim, ptr::null_mut()) };
    assert_eq!(unsafe { mupfl_simulation_save_checkpoint(sim, path.as_ptr()) }, MupflStatus::Ok);

    let mut back = ptr::null_mut();
    assert_eq!(unsafe { mupfl_simulation_load_checkpoint(path.as_ptr(), &mut back) }, MupflStatus::Ok);
    assert_eq!(unsafe { mupfl_simulation_rounds_done(back) }, 1);
    assert_eq!(params(back), params(sim));

    // both continue identically
    let (mut a, mut b) = (MupflRoundMetrics::default(), MupflRoundMetrics::default());
    unsafe { mupfl_simulation_run_round(sim, &mut a) };
    unsafe { mupfl_simulation_run_round(back, &mut b) };
    assert_eq!(a, b);
    unsafe {
        mupfl_simulation_free(sim);
        mupfl_simulation_free(back);
    }

    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { mupfl_simulation_load_checkpoint(missing.as_ptr(), &mut out) }, MupflStatus::Io);
    std::fs::write(dir.path().join("junk.bin"), b"not a checkpoint").unwrap();
    let junk = CString::new(dir.path().join("junk.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mupfl_simulation_load_checkpoint(junk.as_ptr(), &mut out) }, MupflStatus::Malformed);
}

#[test]
fn silhouette_through_the_abi() {
    let labels = [0usize, 0, 1];
    let dist = [0.0, 1.0, 3.0, 1.0, 0.0, 2.0, 3.0, 2.0, 0.0];
    let mut s = f64::NAN;
    assert_eq!(unsafe { mupfl_silhouette(labels.as_ptr(), dist.as_ptr(), 3, &mut s) }, MupflStatus::Ok);
    assert!((s - ((2.0 / 3.0) + 0.5) / 3.0).abs() < 1e-15);
    assert_eq!(unsafe { mupfl_silhouette(labels.as_ptr(), ptr::null(), 3, &mut s) }, MupflStatus::NullPointer);
    assert_eq!(unsafe { mupfl_silhouette(labels.as_ptr(), dist.as_ptr(), 0, &mut s) }, MupflStatus::InvalidArgument);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(mupfl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mupfl.h")).unwrap();
    for name in [
        "mupfl_last_error_message",
        "mupfl_version",
        "mupfl_simulation_new",
        "mupfl_simulation_load_checkpoint",
        "mupfl_simulation_free",
        "mupfl_simulation_run_round",
        "mupfl_simulation_rounds_done",
        "mupfl_simulation_num_params",
        "mupfl_simulation_global_params",
        "mupfl_simulation_save_checkpoint",
        "mupfl_silhouette",
        "MUPFL_STATUS_BUFFER_TOO_SMALL",
        "typedef struct MupflSimulation MupflSimulation",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
