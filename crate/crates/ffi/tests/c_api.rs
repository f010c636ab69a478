use std::ffi::CStr;
use std::ptr;

use urbe_ffi::*;

fn last_error() -> String {
    let p = urbe_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn worst_case_matches_hand_solution() {
    let nominal = [0.5, 0.3, 0.2];
    let values = [1.0, 2.0, 0.0];
    let mut value = f64::NAN;
    let mut p = [0.0; 3];
    let st = unsafe { urbe_worst_case_l1(nominal.as_ptr(), values.as_ptr(), 3, 0.4, &mut value, p.as_mut_ptr()) };
    assert_eq!(st, UrbeStatus::Ok);
    // 0.2 of mass moves from the 2.0 coordinate onto the 0.0 coordinate.
    assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.1).abs() < 1e-12 && (p[2] - 0.4).abs() < 1e-12);
    assert!((value - 0.7).abs() < 1e-12);
}

#[test]
fn worst_case_accepts_null_minimizer() {
    let nominal = [1.0, 0.0];
    let values = [3.0, 1.0];
    let mut value = 0.0;
    let st = unsafe { urbe_worst_case_l1(nominal.as_ptr(), values.as_ptr(), 2, 2.0, &mut value, ptr::null_mut()) };
    assert_eq!(st, UrbeStatus::Ok);
    assert!((value - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_inputs_set_codes_and_messages() {
    let nominal = [0.7, 0.7];
    let values = [0.0, 1.0];
    let mut value = 0.0;
    let st = unsafe { urbe_worst_case_l1(nominal.as_ptr(), values.as_ptr(), 2, 0.1, &mut value, ptr::null_mut()) };
    assert_eq!(st, UrbeStatus::InvalidInput);
    assert!(!last_error().is_empty());

    let st = unsafe { urbe_worst_case_l1(ptr::null(), values.as_ptr(), 2, 0.1, &mut value, ptr::null_mut()) };
    assert_eq!(st, UrbeStatus::NullPointer);
    assert!(last_error().contains("nominal"));

    let bad = [0.0, f64::NAN];
    let nominal = [0.5, 0.5];
    let st = unsafe { urbe_worst_case_l1(nominal.as_ptr(), bad.as_ptr(), 2, 0.1, &mut value, ptr::null_mut()) };
    assert_eq!(st, UrbeStatus::NonFinite);
}

#[test]
fn sherman_morrison_in_place_matches_inverse() {
    // sigma = I, phi = e1 + e2  =>  (I + phi phi^T)^-1 = I - phi phi^T / 3.
    let mut sigma = [1.0, 0.0, 0.0, 1.0];
    let phi = [1.0, 1.0];
    assert_eq!(unsafe { urbe_sherman_morrison_update(sigma.as_mut_ptr(), 2, phi.as_ptr()) }, UrbeStatus::Ok);
    let expect = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0];
    for (a, b) in sigma.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(unsafe { urbe_sherman_morrison_update(sigma.as_mut_ptr(), 0, phi.as_ptr()) }, UrbeStatus::InvalidInput);
    assert_eq!(unsafe { urbe_sherman_morrison_update(ptr::null_mut(), 2, phi.as_ptr()) }, UrbeStatus::NullPointer);
}

#[test]
fn posterior_handle_lifecycle() {
    let mut post = ptr::null_mut();
    assert_eq!(unsafe { urbe_posterior_new(3, 2, 1.0, &mut post) }, UrbeStatus::Ok);
    assert!(!post.is_null());
    for _ in 0..3 {
        assert_eq!(unsafe { urbe_posterior_observe(post, 0, 1, 2) }, UrbeStatus::Ok);
    }
    let mut mean = [0.0; 3];
    assert_eq!(unsafe { urbe_posterior_mean(post, 0, 1, mean.as_mut_ptr(), 3) }, UrbeStatus::Ok);
    assert_eq!(mean, [1.0 / 6.0, 1.0 / 6.0, 4.0 / 6.0]);
    let mut n = 0;
    assert_eq!(unsafe { urbe_posterior_total_observations(post, &mut n) }, UrbeStatus::Ok);
    assert_eq!(n, 3);
    assert_eq!(unsafe { urbe_posterior_mean(post, 0, 1, mean.as_mut_ptr(), 2) }, UrbeStatus::InvalidInput);
    assert_eq!(unsafe { urbe_posterior_observe(post, 5, 0, 0) }, UrbeStatus::InvalidInput);
    unsafe { urbe_posterior_free(post) };
    unsafe { urbe_posterior_free(ptr::null_mut()) };
}

#[test]
fn planner_lifecycle_and_range_checks() {
    let rewards = [0.5, 1.0, 0.0, 0.0];
    let terminal = [0u8, 1];
    let mut options = urbe_planner_options_default();
    options.psi = 2.0;
    options.explore = 0;
    options.gamma = 1.0;
    let mut pl = ptr::null_mut();
    let st = unsafe { urbe_planner_new(2, 2, 2, rewards.as_ptr(), terminal.as_ptr(), ptr::null(), options, &mut pl) };
    assert_eq!(st, UrbeStatus::Ok, "{}", last_error());
    let mut a = 7;
    assert_eq!(unsafe { urbe_planner_act(pl, 1, 0, &mut a) }, UrbeStatus::Usage);
    assert_eq!(unsafe { urbe_planner_solve(pl) }, UrbeStatus::Ok);
    let (mut q, mut w) = ([0.0; 2], [0.0; 2]);
    assert_eq!(unsafe { urbe_planner_values(pl, 1, 0, q.as_mut_ptr(), w.as_mut_ptr(), 2) }, UrbeStatus::Ok);
    assert!(q.iter().all(|x| x.is_finite()));
    assert!(w.iter().all(|&x| x >= 0.0));
    assert_eq!(unsafe { urbe_planner_observe(pl, 1, 0, 0, 0) }, UrbeStatus::Ok);
    assert_eq!(unsafe { urbe_planner_act(pl, 1, 0, &mut a) }, UrbeStatus::Ok);
    assert!(a < 2);
    assert_eq!(unsafe { urbe_planner_values(pl, 9, 0, q.as_mut_ptr(), w.as_mut_ptr(), 2) }, UrbeStatus::InvalidInput);
    assert_eq!(unsafe { urbe_planner_values(pl, 1, 0, q.as_mut_ptr(), w.as_mut_ptr(), 3) }, UrbeStatus::InvalidInput);
    unsafe { urbe_planner_free(pl) };
}

#[test]
fn planner_rejects_bad_options() {
    let rewards = [0.0; 4];
    let mut options = urbe_planner_options_default();
    options.psi = 5.0;
    let mut pl = ptr::null_mut();
    let st = unsafe { urbe_planner_new(2, 2, 1, rewards.as_ptr(), ptr::null(), ptr::null(), options, &mut pl) };
    assert_eq!(st, UrbeStatus::Config);
    assert!(pl.is_null());
    assert!(last_error().contains("psi"));
}

#[test]
fn planner_matches_core_agent() {
    use rand::SeedableRng;
    use urbe_core::envs::{SimpleMdpEnv, TabularEnv};
    use urbe_core::mdp::SimRng;
    use urbe_core::posterior::PosteriorState;
    use urbe_core::urbe_agent::{UrbeAgent, UrbeAgentConfig};

    let rmdp = SimpleMdpEnv::new(0.5).unwrap().tabular_model(1.0).unwrap();
    let ns = SimpleMdpEnv::NUM_STATES;
    let na = SimpleMdpEnv::NUM_ACTIONS;
    let rewards: Vec<f64> = (0..ns).flat_map(|s| (0..na).map(move |a| (s, a))).map(|(s, a)| rmdp.reward(s, a)).collect();
    let terminal: Vec<u8> = (0..ns).map(|s| rmdp.is_terminal(s) as u8).collect();
    let entry: Vec<f64> = (0..ns).map(|s| rmdp.terminal_reward(s)).collect();
    let options = urbe_planner_options_default();
    let mut pl = ptr::null_mut();
    let st = unsafe {
        urbe_planner_new(ns, na, SimpleMdpEnv::HORIZON, rewards.as_ptr(), terminal.as_ptr(), entry.as_ptr(), options, &mut pl)
    };
    assert_eq!(st, UrbeStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { urbe_planner_solve(pl) }, UrbeStatus::Ok);

    let post = PosteriorState::uniform(ns, na, 1.0).unwrap().per_step(SimpleMdpEnv::HORIZON);
    let mut agent = UrbeAgent::from_model(rmdp, post, UrbeAgentConfig::default()).unwrap();
    let plan = agent.replan(&mut SimRng::seed_from_u64(0)).unwrap().clone();
    for h in 1..=SimpleMdpEnv::HORIZON {
        for s in 0..ns {
            let (mut q, mut w) = (vec![0.0; na], vec![0.0; na]);
            assert_eq!(unsafe { urbe_planner_values(pl, h, s, q.as_mut_ptr(), w.as_mut_ptr(), na) }, UrbeStatus::Ok);
            assert_eq!(q, plan.q.row(h, s));
            assert_eq!(w, plan.w.row(h, s));
        }
    }
    unsafe { urbe_planner_free(pl) };
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/urbe.h")).unwrap();
    for sym in [
        "URBE_H",
        "typedef struct UrbePlanner UrbePlanner",
        "typedef struct UrbePosterior UrbePosterior",
        "URBE_STATUS_OK = 0",
        "URBE_STATUS_PANIC",
        "urbe_worst_case_l1",
        "urbe_sherman_morrison_update",
        "urbe_posterior_new",
        "urbe_planner_new",
        "urbe_planner_free",
        "urbe_last_error_message",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"urbe.h\"\nint main(void) { UrbePlannerOptions o = urbe_planner_options_default(); return o.explore > 1; }\n").unwrap();
    let out = std::process::Command::new(cc)
        .args(["-std=c99", "-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
