use indexmap::IndexMap;
use proptest::prelude::*;

use super::*;
use crate::envkit::TaskId;

fn push() -> RewardTemplate {
    builtin(TaskId::Push, TemplateVariant::Proposed)
}

fn touch() -> RewardTemplate {
    builtin(TaskId::Touch, TemplateVariant::Proposed)
}

fn push_features(d_target: f64, d_goal: f64, collision: bool) -> RewardFeatures {
    RewardFeatures::new()
        .with(Feature::DistanceToTarget, d_target)
        .with(Feature::DistanceToGoal, d_goal)
        .with(Feature::CollisionDetected, if collision { 1.0 } else { 0.0 })
}

#[test]
fn push_at_goal_earns_maintain_bonus() {
    // 0 - 0 + 5.0 + 0
    assert_eq!(push().evaluate(&push_features(0.0, 0.0, false)), 5.0);
}

#[test]
fn touch_hand_evaluation() {
    let f = RewardFeatures::new()
        .with(Feature::DistanceToTarget, 0.5)
        .with(Feature::ForceMagnitude, 2.0)
        .with(Feature::CollisionDetected, 0.0);
    // -1.0 * 0.5 + 10.0 (2.0 > 1.0) + 0 (2.0 <= 5.0) + 0
    assert!((touch().evaluate(&f) - 9.5).abs() < 1e-12);
}

#[test]
fn touch_force_penalty_and_collision() {
    let f = RewardFeatures::new()
        .with(Feature::DistanceToTarget, 0.0)
        .with(Feature::ForceMagnitude, 6.0)
        .with(Feature::CollisionDetected, 1.0);
    assert!((touch().evaluate(&f) - (10.0 - 5.0 - 10.0)).abs() < 1e-12);
}

#[test]
fn zero_weights_give_zero() {
    let mut params = IndexMap::new();
    params.insert("w".to_string(), 0.0);
    params.insert("b".to_string(), 0.0);
    let mut ranges = IndexMap::new();
    ranges.insert("w".to_string(), ParamRange::unbounded());
    ranges.insert("b".to_string(), ParamRange::unbounded());
    let t = RewardTemplate::new(
        "zero",
        vec![
            RewardTerm::weighted_distance(Feature::DistanceToTarget, "w", Sign::Minus),
            RewardTerm::flag(TermKind::ConditionalConstant, Feature::Contacted, "b", Sign::Plus),
        ],
        params,
        ranges,
    )
    .unwrap();
    let f = RewardFeatures::new()
        .with(Feature::DistanceToTarget, 0.37)
        .with(Feature::Contacted, 0.0);
    assert_eq!(t.evaluate(&f), 0.0);
}

#[test]
fn grasp_template_initial_params() {
    let t = builtin(TaskId::Grasp, TemplateVariant::Proposed);
    let want = [
        ("distance_weight", 1.0),
        ("contact_bonus", 5.0),
        ("height_weight", 2.0),
        ("collision_penalty", -10.0),
    ];
    assert_eq!(t.num_params(), want.len());
    for (name, v) in want {
        assert_eq!(t.param(name), Some(v), "{name}");
    }
    // resting object: 2 * (0.025 - 0.01)
    let f = RewardFeatures::new()
        .with(Feature::DistanceToTarget, 0.0)
        .with(Feature::Contacted, 0.0)
        .with(Feature::ObjectHeight, 0.025)
        .with(Feature::CollisionDetected, 0.0);
    assert!((t.evaluate(&f) - 0.03).abs() < 1e-12);
}

#[test]
fn all_builtins_parse() {
    for task in TaskId::ALL {
        for variant in [TemplateVariant::Proposed, TemplateVariant::Sparse] {
            let t = builtin(task, variant);
            let names = task_features(task);
            for f in t.referenced_features() {
                assert!(names.contains(&f), "{task}: {f}");
            }
        }
    }
}

#[test]
fn set_params_values_from_reported_updates() {
    let t = push().set_params([("push_weight", 21.05)]).unwrap();
    assert_eq!(t.param("push_weight"), Some(21.05));
    let t = touch().set_params([("min_contact_force", 0.127)]).unwrap();
    assert_eq!(t.param("min_contact_force"), Some(0.127));
}

#[test]
fn set_params_clips_and_leaves_original() {
    let original = push();
    let t = original.set_params([("collision_penalty", 5.0)]).unwrap();
    assert_eq!(t.param("collision_penalty"), Some(-0.1));
    assert_eq!(original.param("collision_penalty"), Some(-10.0));
}

#[test]
fn set_params_rejects_unknown_name() {
    let err = push().set_params([("grip_weight", 1.0)]).unwrap_err();
    assert!(matches!(err, TemplateError::UnknownParam(ref n) if n == "grip_weight"));
}

#[test]
fn round_trip_push() {
    let t = push().set_params([("push_weight", 3.1609988615863727)]).unwrap();
    let text = serialize_template(&t).unwrap();
    assert_eq!(parse_template(&text).unwrap(), t);
}

#[test]
fn undeclared_parameter_is_rejected() {
    let text = r#"
name = "bad"
[params]
w = 1.0
[ranges]
w = [0.0, inf]
[[terms]]
kind = "weighted-distance"
feature = "distance_to_target"
param = "v"
sign = "-"
"#;
    let err = parse_template(text).unwrap_err();
    assert!(
        matches!(err, TemplateError::UndeclaredParam { ref name, term: 0 } if name == "v"),
        "{err}"
    );
}

#[test]
fn malformed_spec_reports_line() {
    let text = "name = \"bad\"\n[params]\nw = oops\n";
    match parse_template(text).unwrap_err() {
        TemplateError::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other}"),
    }
    let text = "name = \"bad\"\n[params]\nw = 1.0\n[ranges]\nw = [0.0, 1.0]\n[[terms]]\nkind = \"weighted-distance\"\nfeature = \"joint_velocity\"\nparam = \"w\"\nsign = \"-\"\n";
    match parse_template(text).unwrap_err() {
        TemplateError::Parse { line, message, .. } => {
            assert_eq!(line, 8);
            assert!(message.contains("joint_velocity"));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn value_outside_range_is_rejected() {
    let text = "name = \"bad\"\nterms = []\n[params]\nw = -1.0\n[ranges]\nw = [0.0, 1.0]\n";
    assert!(matches!(
        parse_template(text).unwrap_err(),
        TemplateError::OutOfRange { .. }
    ));
}

#[test]
fn arity_is_checked() {
    let text = r#"
name = "bad"
[params]
w = 1.0
t = 1.0
[ranges]
w = [0.0, inf]
t = [0.0, inf]
[[terms]]
kind = "weighted-distance"
feature = "distance_to_target"
param = "w"
aux_param = "t"
sign = "-"
"#;
    assert!(matches!(
        parse_template(text).unwrap_err(),
        TemplateError::InvalidTerm { index: 0, .. }
    ));
}

#[test]
fn weight_derivative_is_minus_feature() {
    // Δreward / Δw = -feature, exactly, for the reach term.
    let t = push();
    let f = push_features(0.0235, 0.1833, false);
    let base = t.evaluate(&f);
    let bumped = t
        .set_params([("reach_weight", t.param("reach_weight").unwrap() + 1.0)])
        .unwrap()
        .evaluate(&f);
    assert!((bumped - base + 0.0235).abs() < 1e-15);
}

#[test]
fn compiled_matches_direct_bitwise() {
    let t = touch();
    let c = t.compile();
    let f = RewardFeatures::new()
        .with(Feature::DistanceToTarget, 0.1234)
        .with(Feature::ForceMagnitude, 0.7)
        .with(Feature::CollisionDetected, 1.0);
    assert_eq!(c.evaluate(&t.values(), &f).to_bits(), t.evaluate(&f).to_bits());
}

#[test]
fn linear_params_excludes_thresholds() {
    let t = touch();
    let c = t.compile();
    let names: Vec<&str> = t.param_names().collect();
    let linear: Vec<&str> = c.linear_params().iter().map(|&i| names[i]).collect();
    assert_eq!(linear, vec!["distance_weight"]);
    let p = push().compile();
    assert_eq!(p.linear_params(), vec![0, 1]);
}

fn arb_push_features() -> impl Strategy<Value = RewardFeatures> {
    (0.0..0.5f64, 0.0..0.5f64, any::<bool>()).prop_map(|(a, b, c)| push_features(a, b, c))
}

proptest! {
    #[test]
    fn set_params_always_within_range(values in proptest::collection::vec(-1e6..1e6f64, 4)) {
        let t = push();
        let names: Vec<String> = t.param_names().map(String::from).collect();
        let out = t.set_params(names.iter().map(String::as_str).zip(values.iter().copied())).unwrap();
        for name in &names {
            let r = out.range(name).unwrap();
            prop_assert!(r.contains(out.param(name).unwrap()));
        }
    }

    #[test]
    fn serialization_is_lossless(
        reach in 0.1..50.0f64,
        push_w in 0.1..50.0f64,
        maintain in 0.1..50.0f64,
        collision in -50.0..-0.1f64,
    ) {
        let t = push().set_params([
            ("reach_weight", reach),
            ("push_weight", push_w),
            ("maintain_weight", maintain),
            ("collision_penalty", collision),
        ]).unwrap();
        let back = parse_template(&serialize_template(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn monotone_in_distance(f in arb_push_features(), bump in 0.0..0.2f64) {
        let t = push();
        let farther = push_features(
            f.get(Feature::DistanceToTarget).unwrap() + bump,
            f.get(Feature::DistanceToGoal).unwrap(),
            f.flag(Feature::CollisionDetected).unwrap(),
        );
        prop_assert!(t.evaluate(&farther) <= t.evaluate(&f));
    }
}
