use loopdrive::domain::{ControlVector, InfractionKind, ScenePayload};
use loopdrive::scengen::{parse_dsl, ScenarioSpec};
use loopdrive::sim::{load_route, ObservationMode, RouteSpec, SimConfig, SimError, Waypoint, RASTER_SIZE};

fn scenario(route: &RouteSpec, dsl: &str) -> ScenarioSpec {
    parse_dsl(dsl, "s", &route.route_id).unwrap()
}

fn drive(route: &RouteSpec, scen: Option<&ScenarioSpec>, u: ControlVector, frames: usize) -> Vec<InfractionKind> {
    let cfg = SimConfig::default();
    let mut w = load_route(route, scen, 3, &cfg).unwrap();
    let mut kinds = Vec::new();
    for _ in 0..frames {
        kinds.extend(w.step(u, cfg.dt).infractions.into_iter().map(|i| i.kind));
        if w.is_finished() || w.is_fatal() {
            break;
        }
    }
    kinds
}

fn go() -> ControlVector {
    ControlVector::new(0.0, 0.5, 0.0).unwrap()
}

#[test]
fn running_a_red_light_is_an_infraction() {
    let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
    let scen = scenario(&route, "ACTOR traffic_light AT progress=0.5 offset=3 BEHAVIOR stationary red=30 green=5");
    assert_eq!(drive(&route, Some(&scen), go(), 400), vec![InfractionKind::RedLight]);
}

#[test]
fn contacts_are_classified_by_actor_kind() {
    let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
    let cases = [
        ("static_obstacle", "stationary", InfractionKind::CollisionStatic),
        ("pedestrian", "stationary", InfractionKind::CollisionPedestrian),
        ("vehicle", "stationary", InfractionKind::CollisionVehicle),
    ];
    for (kind, behavior, expected) in cases {
        let scen = scenario(&route, &format!("ACTOR {kind} AT progress=0.5 offset=0 BEHAVIOR {behavior}"));
        let got = drive(&route, Some(&scen), go(), 400);
        assert_eq!(got.first(), Some(&expected), "{kind}");
        assert_eq!(got.iter().filter(|k| **k == expected).count(), 1, "{kind} counted once per contact");
    }
}

#[test]
fn ignoring_a_bend_ends_in_deviation() {
    let mut route = RouteSpec::straight("bend", 1.0, 1.75, 8.0);
    route.waypoints = vec![Waypoint { x: 0.0, y: 0.0 }, Waypoint { x: 20.0, y: 0.0 }, Waypoint { x: 20.0, y: 60.0 }];
    let kinds = drive(&route, None, go(), 600);
    assert_eq!(kinds, vec![InfractionKind::BoundaryCrossing, InfractionKind::RouteDeviation]);
}

#[test]
fn braking_blocks_after_the_stall_window() {
    let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
    let cfg = SimConfig::default();
    let mut w = load_route(&route, None, 0, &cfg).unwrap();
    for i in 0..cfg.blocked_frames {
        assert!(!w.is_blocked(), "blocked early at {i}");
        w.step(ControlVector::FULL_BRAKE, cfg.dt);
    }
    assert!(w.is_blocked());
}

#[test]
fn scenarios_must_target_their_route() {
    let a = RouteSpec::straight("a", 100.0, 1.75, 8.0);
    let b = RouteSpec::straight("b", 100.0, 1.75, 8.0);
    let scen = scenario(&a, "ACTOR vehicle AT progress=0.5 offset=0 BEHAVIOR stationary");
    assert!(matches!(load_route(&b, Some(&scen), 0, &SimConfig::default()), Err(SimError::RouteMismatch { .. })));
}

#[test]
fn same_seed_same_world() {
    let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
    let scen = scenario(&route, "ACTOR vehicle AT progress=0.3 offset=0 BEHAVIOR constant_velocity speed=4 trigger=40");
    let cfg = SimConfig::default();
    let run = |seed| {
        let mut w = load_route(&route, Some(&scen), seed, &cfg).unwrap();
        (0..50).map(|_| w.step(go(), cfg.dt)).last().unwrap().observation
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn raster_and_text_observations() {
    let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
    let w = load_route(&route, None, 0, &SimConfig::default()).unwrap();
    match w.render(ObservationMode::Raster).scene {
        ScenePayload::Image { data, .. } => assert!(data.len() >= RASTER_SIZE * RASTER_SIZE),
        other => panic!("expected an image, got {other:?}"),
    }
    match w.render(ObservationMode::Text).scene {
        ScenePayload::Text { description } => {
            assert!(description.contains("lead_hazard: none"));
            assert!(description.contains("heading_error_deg: 0.0"));
        }
        other => panic!("expected text, got {other:?}"),
    }
}
