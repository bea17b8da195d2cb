//! The committed arm file carries a home effector pose computed offline by
//! `scripts/golden_fk.py`; forward kinematics must reproduce it.

use std::path::PathBuf;

use bodylink::arm::ArmDescription;

#[test]
fn home_pose_matches_offline_value() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/gen3_like.json");
    let desc: ArmDescription = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let golden = desc.home_effector.expect("golden pose present");
    let arm = desc.build::<f64>().unwrap();
    let fk = arm.forward_kinematics(&desc.home_state());
    assert!(fk.max_abs_diff(&golden) < 1e-12, "{fk} vs {golden}");

    let arm32 = desc.build::<f32>().unwrap();
    let fk32 = arm32.forward_kinematics(&desc.home_state());
    assert!(fk32.cast::<f64>().max_abs_diff(&golden) < 1e-5);
}
