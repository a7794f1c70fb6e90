use hgmt_demo::{product_json, profile_json, regions_json};
use serde_json::Value;

#[test]
fn product_of_inverse_pair_is_origin() {
    let v: Value = serde_json::from_str(&product_json(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap()).unwrap();
    for c in v["product"].as_array().unwrap() {
        assert!(c.as_f64().unwrap().abs() < 1e-12);
    }
    assert!(v["distance"].as_f64().unwrap() > 0.0);
    assert!(product_json(&[1.0, 2.0], &[0.0, 0.0, 0.0]).is_err());
}

#[test]
fn flat_profile_sits_below_the_bound() {
    let v: Value = serde_json::from_str(&profile_json("plane", 0.0, 0).unwrap()).unwrap();
    let betas = v["betas"].as_array().unwrap();
    let bounds = v["bounds"].as_array().unwrap();
    assert!(!betas.is_empty());
    for (b, m) in betas.iter().zip(bounds) {
        assert!(b.as_f64().unwrap() <= m.as_f64().unwrap());
    }
    assert!(profile_json("spiral", 0.0, 0).is_err());
}

#[test]
fn plane_is_one_region() {
    let v: Value = serde_json::from_str(&regions_json("plane", 0.0, 0.05, 0.1, 0).unwrap()).unwrap();
    assert_eq!(v["regions"], 1);
    assert!(v["point_region"].as_array().unwrap().iter().all(|r| r == 0));
}
