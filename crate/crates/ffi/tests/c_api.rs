use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use commrestore_ffi::*;

fn c_path(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn generate_solve_and_write() {
    unsafe {
        let mut params = cr_params_default();
        params.smax_mbps = 2000.0;
        let mut s = ptr::null_mut();
        assert_eq!(cr_scenario_generate(7, 5, 1, 4, &params, &mut s), CrStatus::Ok);
        let mut users = 0;
        assert_eq!(cr_scenario_num_users(s, &mut users), CrStatus::Ok);
        assert!(users >= 5);

        let mut plan = ptr::null_mut();
        assert_eq!(cr_solve_heuristic(s, &mut plan), CrStatus::Ok);
        let (mut value, mut bound) = (0.0, 0.0);
        assert_eq!(cr_plan_true_objective(s, plan, &mut value), CrStatus::Ok);
        assert_eq!(cr_relaxation_upper_bound(s, &mut bound), CrStatus::Ok);
        assert!(value > 0.0 && value <= bound * (1.0 + 1e-9));

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("plan.csv");
        assert_eq!(cr_plan_write_csv(s, plan, c_path(&out).as_ptr()), CrStatus::Ok);
        assert!(std::fs::read_to_string(&out).unwrap().starts_with("area_id,"));

        cr_plan_free(plan);
        cr_scenario_free(s);
        cr_plan_free(ptr::null_mut());
        cr_scenario_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = c_path(&dir.path().join("missing.csv"));
    let broken_path = dir.path().join("broken.csv");
    std::fs::write(&broken_path, "id,area_id\n").unwrap();
    let broken = c_path(&broken_path);
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(cr_scenario_load(missing.as_ptr(), ptr::null(), &mut s), CrStatus::Io);
        assert!(s.is_null());
        let msg = CStr::from_ptr(cr_last_error_message()).to_string_lossy().into_owned();
        assert!(msg.contains("missing.csv"), "{msg}");
        assert_eq!(cr_scenario_load(broken.as_ptr(), ptr::null(), &mut s), CrStatus::Parse);

        let mut params = cr_params_default();
        params.theta = -1.0;
        let mut g = ptr::null_mut();
        assert_eq!(cr_scenario_generate(1, 2, 1, 2, &params, &mut g), CrStatus::Validation);
    }
}

#[test]
fn mismatched_plan_is_rejected() {
    unsafe {
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(cr_scenario_generate(1, 2, 2, 2, ptr::null(), &mut a), CrStatus::Ok);
        assert_eq!(cr_scenario_generate(1, 5, 2, 2, ptr::null(), &mut b), CrStatus::Ok);
        let mut plan = ptr::null_mut();
        assert_eq!(cr_solve_heuristic(a, &mut plan), CrStatus::Ok);
        let mut v = 0.0;
        assert_eq!(cr_plan_true_objective(b, plan, &mut v), CrStatus::InvalidArgument);
        cr_plan_free(plan);
        cr_scenario_free(a);
        cr_scenario_free(b);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/commrestore.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["cr_scenario_load", "cr_solve_heuristic", "cr_plan_free", "cr_last_error_message", "CR_STATUS_SOLVER = 6"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"commrestore.h\"\nint main(void) { CrParams p = cr_params_default(); CrScenario *s = 0;\n\
         CrStatus st = cr_scenario_generate(1, 2, 1, 2, &p, &s); cr_scenario_free(s); return st; }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(header.parent().unwrap())
            .arg(&src)
            .output()
        else {
            eprintln!("{compiler} not available; skipped");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
