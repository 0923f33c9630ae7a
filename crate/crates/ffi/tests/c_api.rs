use std::ffi::{CStr, CString};
use std::ptr;

use polydecouple_ffi::*;

const RUNNING_EXAMPLE: &str = include_str!("../../core/tests/fixtures/running_example.json");
const RUNNING_EXAMPLE_MODEL: &str = include_str!("../../core/tests/fixtures/running_example.model.json");
const ZERO: &str = include_str!("../../core/tests/fixtures/zero.json");

fn last_error() -> String {
    unsafe { CStr::from_ptr(pd_last_error_message()) }.to_str().unwrap().to_owned()
}

fn load_system(json: &str) -> *mut PdSystem {
    let text = CString::new(json).unwrap();
    let mut sys = ptr::null_mut();
    let status = unsafe { pd_system_from_json(text.as_ptr(), &mut sys) };
    assert_eq!(status, PdStatus::Ok, "{}", last_error());
    sys
}

fn load_model(json: &str) -> *mut PdModel {
    let text = CString::new(json).unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { pd_model_from_json(text.as_ptr(), &mut model) };
    assert_eq!(status, PdStatus::Ok, "{}", last_error());
    model
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { pd_string_free(p) };
    s
}

/// Hand-written W g(Vᵀu) for V = [[-2,3],[-2,-1]], W = [[1,2],[-3,-1]],
/// g1(x) = 1 - 3x + 2x², g2(x) = -x + x³.
fn running_example_oracle(u: [f64; 2]) -> [f64; 2] {
    let x1 = -2.0 * u[0] - 2.0 * u[1];
    let x2 = 3.0 * u[0] - u[1];
    let g1 = 1.0 - 3.0 * x1 + 2.0 * x1 * x1;
    let g2 = -x2 + x2 * x2 * x2;
    [g1 + 2.0 * g2, -3.0 * g1 - g2]
}

#[test]
fn system_shape_and_evaluation() {
    let sys = load_system(RUNNING_EXAMPLE);
    unsafe {
        assert_eq!(pd_system_num_vars(sys), 2);
        assert_eq!(pd_system_num_outputs(sys), 2);
        for u in [[0.3, -0.7], [1.0, 2.0], [-0.25, 0.5]] {
            let mut y = [0.0; 2];
            assert_eq!(pd_system_eval(sys, u.as_ptr(), 2, y.as_mut_ptr(), 2), PdStatus::Ok);
            let expected = running_example_oracle(u);
            for (a, b) in y.iter().zip(expected) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
        pd_system_free(sys);
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let sys = load_system(RUNNING_EXAMPLE);
    let u = [0.4, -0.3];
    let h = 1e-6;
    let mut jac = [0.0; 4];
    unsafe {
        assert_eq!(pd_system_jacobian(sys, u.as_ptr(), 2, jac.as_mut_ptr(), 4), PdStatus::Ok);
        pd_system_free(sys);
    }
    for j in 0..2 {
        let mut up = u;
        let mut dn = u;
        up[j] += h;
        dn[j] -= h;
        let (fp, fm) = (running_example_oracle(up), running_example_oracle(dn));
        for i in 0..2 {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            assert!((jac[i * 2 + j] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }
}

#[test]
fn system_json_round_trips() {
    let sys = load_system(RUNNING_EXAMPLE);
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(pd_system_to_json(sys, &mut out), PdStatus::Ok);
        let again = load_system(&take_string(out));
        let mut dist = [f64::NAN; 2];
        assert_eq!(pd_coeff_distance(again, sys, dist.as_mut_ptr(), 2), PdStatus::Ok);
        assert_eq!(dist, [0.0, 0.0]);
        pd_system_free(again);
        pd_system_free(sys);
    }
}

#[test]
fn model_expansion_reproduces_the_system() {
    let sys = load_system(RUNNING_EXAMPLE);
    let model = load_model(RUNNING_EXAMPLE_MODEL);
    unsafe {
        assert_eq!(pd_model_num_branches(model), 2);
        let mut expanded = ptr::null_mut();
        assert_eq!(pd_model_expand(model, &mut expanded), PdStatus::Ok);
        let mut dist = [f64::NAN; 2];
        assert_eq!(pd_coeff_distance(expanded, sys, dist.as_mut_ptr(), 2), PdStatus::Ok);
        assert!(dist.iter().all(|&d| d <= 1e-14), "{dist:?}");

        let u = [0.7, 0.1];
        let mut y = [0.0; 2];
        assert_eq!(pd_model_eval(model, u.as_ptr(), 2, y.as_mut_ptr(), 2), PdStatus::Ok);
        let expected = running_example_oracle(u);
        assert!((y[0] - expected[0]).abs() <= 1e-12 && (y[1] - expected[1]).abs() <= 1e-12);

        let mut out = ptr::null_mut();
        assert_eq!(pd_model_to_json(model, &mut out), PdStatus::Ok);
        let text = take_string(out);
        let reparsed = load_model(&text);
        assert_eq!(pd_model_num_branches(reparsed), 2);
        pd_model_free(reparsed);
        pd_system_free(expanded);
        pd_model_free(model);
        pd_system_free(sys);
    }
}

#[test]
fn decouple_running_example() {
    let sys = load_system(RUNNING_EXAMPLE);
    unsafe {
        let mut report = ptr::null_mut();
        assert_eq!(pd_decouple(sys, ptr::null(), &mut report), PdStatus::Ok, "{}", last_error());
        assert_eq!(pd_report_rank(report), 2);
        assert_eq!(pd_report_num_coeff_points(report), 4);
        assert_eq!(pd_report_null_dimension(report), 0);
        assert!(pd_report_max_error(report) <= 1e-8);
        assert!(pd_report_cpd_error(report) <= 1e-10);

        let mut model = ptr::null_mut();
        assert_eq!(pd_report_model(report, &mut model), PdStatus::Ok);
        let mut expanded = ptr::null_mut();
        assert_eq!(pd_model_expand(model, &mut expanded), PdStatus::Ok);
        let u = [-0.6, 0.9];
        let mut y = [0.0; 2];
        assert_eq!(pd_system_eval(expanded, u.as_ptr(), 2, y.as_mut_ptr(), 2), PdStatus::Ok);
        let expected = running_example_oracle(u);
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }

        let mut out = ptr::null_mut();
        assert_eq!(pd_report_to_json(report, &mut out), PdStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
        assert_eq!(json["diagnostics"]["r"], 2);

        pd_system_free(expanded);
        pd_model_free(model);
        pd_report_free(report);
        pd_system_free(sys);
    }
}

#[test]
fn decouple_is_deterministic_for_a_seed() {
    let sys = load_system(RUNNING_EXAMPLE);
    let mut opts = pd_options_default();
    opts.seed = 5;
    let mut texts = Vec::new();
    unsafe {
        for _ in 0..2 {
            let mut report = ptr::null_mut();
            assert_eq!(pd_decouple(sys, &opts, &mut report), PdStatus::Ok);
            let mut out = ptr::null_mut();
            assert_eq!(pd_report_to_json(report, &mut out), PdStatus::Ok);
            texts.push(take_string(out));
            pd_report_free(report);
        }
        pd_system_free(sys);
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn generated_instances_decouple() {
    unsafe {
        let mut sys = ptr::null_mut();
        let mut truth = ptr::null_mut();
        assert_eq!(pd_generate_instance(3, 2, 3, 2, 3, 1, &mut sys, &mut truth), PdStatus::Ok);
        assert_eq!(pd_system_num_vars(sys), 3);
        assert_eq!(pd_system_num_outputs(sys), 2);
        assert_eq!(pd_model_num_branches(truth), 3);
        let mut report = ptr::null_mut();
        assert_eq!(pd_decouple(sys, ptr::null(), &mut report), PdStatus::Ok, "{}", last_error());
        assert_eq!(pd_report_rank(report), 3);
        assert!(pd_report_max_error(report) <= 1e-8);
        pd_report_free(report);
        pd_model_free(truth);
        pd_system_free(sys);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut sys = ptr::null_mut();
        assert_eq!(pd_system_from_json(ptr::null(), &mut sys), PdStatus::NullPointer);
        assert!(last_error().contains("json"));

        let bad = CString::new("{\"num_vars\": 2, \"polys\": [[{\"exps\": [1], \"coef\": 1}]]").unwrap();
        assert_eq!(pd_system_from_json(bad.as_ptr(), &mut sys), PdStatus::ParseError);
        assert!(sys.is_null());
        assert!(!last_error().is_empty());

        let sys = load_system(RUNNING_EXAMPLE);
        let u = [0.0; 3];
        let mut y = [0.0; 2];
        assert_eq!(pd_system_eval(sys, u.as_ptr(), 3, y.as_mut_ptr(), 2), PdStatus::DimensionMismatch);
        assert_eq!(pd_system_eval(sys, u.as_ptr(), 2, y.as_mut_ptr(), 1), PdStatus::DimensionMismatch);
        assert_eq!(pd_system_eval(sys, ptr::null(), 2, y.as_mut_ptr(), 2), PdStatus::NullPointer);

        let mut opts = pd_options_default();
        opts.num_points_coeff = 3;
        let mut report = ptr::null_mut();
        assert_eq!(pd_decouple(sys, &opts, &mut report), PdStatus::InsufficientPoints);
        assert!(report.is_null());
        pd_system_free(sys);

        let zero = load_system(ZERO);
        assert_eq!(pd_decouple(zero, ptr::null(), &mut report), PdStatus::ConstantSystem);
        pd_system_free(zero);

        let mut truth = ptr::null_mut();
        assert_eq!(
            pd_generate_instance(2, 2, 2, 2, 0, 1, ptr::null_mut(), &mut truth),
            PdStatus::InvalidArgument
        );
        assert_eq!(pd_system_eval(ptr::null(), u.as_ptr(), 2, y.as_mut_ptr(), 2), PdStatus::NullPointer);
    }
}

#[test]
fn default_options_are_usable() {
    let opts = pd_options_default();
    assert!(opts.num_points_tensor > 0);
    assert_eq!(opts.num_points_coeff, 0);
    assert!(opts.fit_tol > 0.0 && opts.fit_tol < 1e-3);
    assert!(opts.num_restarts > 0 && opts.max_iters > 0);
    assert!(!opts.normal_points);
}

#[test]
fn header_declares_the_public_api() {
    let header = include_str!("../include/polydecouple.h");
    assert!(header.contains("#ifndef POLYDECOUPLE_H"));
    for decl in [
        "typedef struct PdSystem PdSystem;",
        "typedef struct PdModel PdModel;",
        "typedef struct PdReport PdReport;",
        "PD_STATUS_OK = 0",
        "PD_STATUS_PANIC = 99",
        "typedef struct PdOptions {",
        "const char *pd_last_error_message(void);",
        "void pd_string_free(char *s);",
        "struct PdOptions pd_options_default(void);",
        "enum PdStatus pd_system_from_json(const char *json, struct PdSystem **out);",
        "enum PdStatus pd_decouple(const struct PdSystem *sys,",
        "size_t pd_report_rank(const struct PdReport *report);",
        "enum PdStatus pd_model_expand(const struct PdModel *model, struct PdSystem **out);",
        "enum PdStatus pd_generate_instance(size_t m,",
    ] {
        assert!(header.contains(decl), "header lacks `{decl}`");
    }
}
