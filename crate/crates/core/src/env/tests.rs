use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::anatomy::test_support::synthetic;
use crate::testutil::{ensemble, settings};

fn env(episode: EpisodeConfig) -> ProbeEnv {
    ProbeEnv::new(settings(episode)).unwrap()
}

fn features_with(visible: &[EntityLabel], phi: f64) -> AnatomyFeatures {
    let mut f = synthetic([0.0; 4], [0.0; 4], [1.0; 3]);
    f.visible = [false; EntityLabel::COUNT];
    for e in visible {
        f.visible[e.index()] = true;
    }
    f.phi_all = phi;
    f
}

#[test]
fn success_predicate() {
    use EntityLabel::*;
    assert!(is_success(&features_with(&[LV, RV, LA, RA], 0.1), 0.2));
    assert!(!is_success(&features_with(&[LV, RV, LA, RA], 0.25), 0.2));
    assert!(!is_success(&features_with(&[LV, RV, LA], 0.0), 0.2));
    assert!(is_success(&features_with(&[LV, RV, LA, RA], -0.2), 0.2));
}

#[test]
fn deviation_examples() {
    use EntityLabel::*;
    assert_eq!(
        classify_deviation(&features_with(&[LV, RV, LA, RA], 0.3), 0.5),
        DeviationClass::Mild
    );
    assert_eq!(
        classify_deviation(&features_with(&[LV, RV, LA], 0.3), 0.5),
        DeviationClass::Moderate
    );
    assert_eq!(
        classify_deviation(&features_with(&[LV, RV], 0.7), 0.5),
        DeviationClass::Severe
    );
    assert_eq!(
        classify_deviation(&features_with(&[LV, RV, LA, RA], -0.7), 0.5),
        DeviationClass::Moderate
    );
    // one or two visible but centred falls to moderate
    assert_eq!(
        classify_deviation(&features_with(&[LV], 0.1), 0.5),
        DeviationClass::Moderate
    );
}

#[test]
fn action_table() {
    assert_eq!(ActionId::all().count(), 7);
    assert_eq!(ActionId::new(0).unwrap().rotation(), Some((Axis::X, 1.0)));
    assert_eq!(ActionId::new(1).unwrap().rotation(), Some((Axis::X, -1.0)));
    assert_eq!(ActionId::new(2).unwrap().rotation(), Some((Axis::Y, 1.0)));
    assert_eq!(ActionId::new(5).unwrap().rotation(), Some((Axis::Z, -1.0)));
    assert_eq!(ActionId::HOLD.rotation(), None);
    assert!(ActionId::new(7).is_err());
}

#[test]
fn zero_jitter_starts_at_standard_view() {
    let mut e = env(EpisodeConfig {
        init_jitter_deg: 0.0,
        ..EpisodeConfig::default()
    });
    let vol = ensemble().0[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, class) = e.reset(vol.clone(), &mut rng).unwrap();
    assert_eq!(e.pose(), vol.standard_pose());
    assert!(e.current_success());
    assert_eq!(class, DeviationClass::Mild);
    let r = e.step(ActionId::HOLD).unwrap();
    assert!(r.done && r.info.success);
    assert_eq!(r.info.step_index, 1);
}

#[test]
fn reset_is_deterministic_per_seed() {
    let vol = ensemble().0[1].clone();
    let mut a = env(EpisodeConfig::default());
    let mut b = env(EpisodeConfig::default());
    let sa = a
        .reset(vol.clone(), &mut ChaCha8Rng::seed_from_u64(42))
        .unwrap();
    let sb = b.reset(vol, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(a.pose(), b.pose());
}

#[test]
fn inverse_actions_restore_state() {
    let vol = ensemble().0[2].clone();
    let mut e = env(EpisodeConfig {
        init_jitter_deg: 6.0,
        ..EpisodeConfig::default()
    });
    let (s0, _) = e.reset(vol, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    for (plus, minus) in [(0, 1), (2, 3), (4, 5)] {
        e.step(ActionId::new(plus).unwrap()).unwrap();
        let r = e.step(ActionId::new(minus).unwrap()).unwrap();
        for k in 0..STATE_DIM {
            assert!(
                (r.state.0[k] - s0.0[k]).abs() < 1e-9,
                "action pair {plus}/{minus}"
            );
        }
    }
}

#[test]
fn step_cap_terminates() {
    let vol = ensemble().0[0].clone();
    let mut e = env(EpisodeConfig {
        max_steps: 3,
        init_jitter_deg: 5.0,
        ..EpisodeConfig::default()
    });
    e.reset(vol, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(!e.step(ActionId::new(0).unwrap()).unwrap().done);
    assert!(!e.step(ActionId::new(2).unwrap()).unwrap().done);
    let last = e.step(ActionId::new(4).unwrap()).unwrap();
    assert!(last.done);
    assert_eq!(last.info.step_index, 3);
    assert!(matches!(
        e.step(ActionId::new(0).unwrap()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn step_before_reset_is_contract_error() {
    let mut e = env(EpisodeConfig::default());
    assert!(matches!(e.step(ActionId::HOLD), Err(Error::Contract(_))));
}

#[test]
fn state_layout_at_standard_view() {
    let vol = ensemble().0[0].clone();
    let mut e = env(EpisodeConfig::default());
    let (s, _) = e.reset_to(vol.clone(), vol.standard_pose().clone());
    assert_eq!(s.0[0], 1.0);
    assert!(s.0[1] > 0.0 && s.0[2] > 0.0 && s.0[3] > 0.0);
    assert_eq!(s.0[4], 0.0);
    assert!(s.0[5].abs() <= 0.2);
    assert!((0.0..=1.0).contains(&s.0[6]));
}

#[test]
fn step_record_serializes() {
    let vol = ensemble().0[0].clone();
    let mut e = env(EpisodeConfig::default());
    e.reset_to(vol.clone(), vol.standard_pose().clone());
    let r = e.step(ActionId::new(3).unwrap()).unwrap();
    let line = serde_json::to_string(&StepRecord::new(ActionId::new(3).unwrap(), &r)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    for key in ["t", "action", "state", "reward", "done", "success"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["state"].as_array().unwrap().len(), 7);
}
