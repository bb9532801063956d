use super::forward::{attend, attention_setup};
use super::*;
use crate::diff::gradcheck::check_gradients;
use crate::diff::Tape;
use crate::geometry::Frame;

fn tiny(seed: u64) -> WimpModel {
    WimpModel::new(ModelConfig::tiny(), seed).unwrap()
}

fn weights_sum_to_one(ps: &PredictionSet) {
    let all = ps.traces.encoder.iter().chain(ps.traces.decoder.iter().flatten());
    for tr in all {
        let s: f64 = tr.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(tr.weights.iter().all(|&w| w >= 0.0));
        assert_eq!(tr.weights.len(), tr.current_index.abs_diff(tr.goal_index) + 1);
    }
}

#[test]
fn presets_validate() {
    for p in ["desk", "paper", "tiny"] {
        ModelConfig::preset(p).unwrap().validate().unwrap();
    }
    let mut c = ModelConfig::desk();
    c.waypoint_horizon = 16;
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    let mut c = ModelConfig::desk();
    c.dropout_layers = 2;
    assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
}

#[test]
fn zero_weights_give_zero_normalized_trajectory() {
    let model = tiny(1).zeroed();
    let (sc, lines) = fixtures::parallel_scene(3, 4, 3);
    let prep = prepare(&sc, &lines, &model.config).unwrap();
    let mut tape = Tape::new(&model.params);
    let out = build_graph(&mut tape, &model, &prep, Mode::Eval).unwrap();
    assert!(tape.value(out.trajectories).data().iter().all(|&v| v == 0.0));
    let ps = model.predict(&sc, &lines).unwrap();
    let last = *sc.focal().observed.last().unwrap();
    for traj in &ps.trajectories {
        assert_eq!(traj.len(), 3);
        for p in traj {
            assert!(p.distance(last) < 1e-12);
        }
    }
}

#[test]
fn eval_is_deterministic_and_well_formed() {
    let model = WimpModel::new(ModelConfig::desk(), 3).unwrap();
    let (sc, lines) = fixtures::parallel_scene(3, 10, 15);
    let a = model.predict(&sc, &lines).unwrap();
    let b = model.predict(&sc, &lines).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trajectories.len(), 6);
    assert!(a.trajectories.iter().all(|t| t.len() == 15));
    assert_eq!(a.traces.encoder.len(), 10);
    assert_eq!(a.traces.decoder.len(), 6);
    assert_eq!(a.traces.social.len(), 2);
    weights_sum_to_one(&a);
}

#[test]
fn identical_heads_give_identical_mixtures() {
    let mut model = tiny(2);
    let (w0, b0) = model.ids.heads[0];
    let (w1, b1) = model.ids.heads[1];
    *model.params.value_mut(w1) = model.params.value(w0).clone();
    *model.params.value_mut(b1) = model.params.value(b0).clone();
    let (sc, lines) = fixtures::parallel_scene(2, 4, 3);
    let ps = model.predict(&sc, &lines).unwrap();
    assert_eq!(ps.trajectories[0], ps.trajectories[1]);
}

#[test]
fn focal_prediction_ignores_neighbor_order() {
    let model = WimpModel::new(ModelConfig::desk(), 5).unwrap();
    let (sc, lines) = fixtures::parallel_scene(4, 10, 15);
    let base = model.predict(&sc, &lines).unwrap();
    // relabel the neighbors so their internal order reverses
    let mut sc2 = sc.clone();
    let mut lines2 = lines.clone();
    for (from, to) in [("a1", "z3"), ("a2", "z2"), ("a3", "z1")] {
        let t = sc2.actors.remove(from).unwrap();
        sc2.actors.insert(to.into(), t);
        let l = lines2.remove(from).unwrap();
        lines2.insert(to.into(), l);
    }
    let perm = model.predict(&sc2, &lines2).unwrap();
    for (a, b) in base.trajectories.iter().zip(&perm.trajectories) {
        for (p, q) in a.iter().zip(b) {
            assert!(p.distance(*q) < 1e-12);
        }
    }
}

#[test]
fn identical_actors_get_identical_encodings() {
    let model = WimpModel::new(ModelConfig::desk(), 6).unwrap();
    let (mut sc, mut lines) = fixtures::parallel_scene(2, 10, 15);
    let twin = sc.actors["a1"].clone();
    sc.actors.insert("a2".into(), twin);
    let l = lines["a1"].clone();
    lines.insert("a2".into(), l);
    let prep = prepare(&sc, &lines, &model.config).unwrap();
    let mut tape = Tape::new(&model.params);
    let out = build_graph(&mut tape, &model, &prep, Mode::Eval).unwrap();
    let social = &out.traces.social;
    assert_eq!(social.len(), 2);
    assert_eq!(social[0].weights, social[1].weights);
}

#[test]
fn single_actor_fusion_is_elu() {
    let model = tiny(7);
    let h = Tensor::from_fn(1, 8, |_, c| c as f64 - 3.5);
    let mut tape = Tape::new(&model.params);
    let hv = tape.input(h.clone());
    let (fused, alphas) = social_fusion(&mut tape, &model, &[hv]).unwrap();
    assert!(alphas.is_none());
    let expect = h.map(|x| if x > 0.0 { x } else { x.exp() - 1.0 });
    assert_eq!(tape.value(fused[0]), &expect);
}

#[test]
fn polyline_attention_ranges() {
    let model = tiny(8);
    let line: Vec<Point2> = (0..10).map(|i| Point2::new(i as f64, 0.0)).collect();
    // x at arclength 0, waypoint at arclength 5
    let a = crate::geometry::nearest_index(&line, Point2::new(0.0, 0.1)).unwrap();
    let b = crate::geometry::nearest_index(&line, Point2::new(5.0, -0.2)).unwrap();
    assert_eq!((a, b), (0, 5));
    let mut tape = Tape::new(&model.params);
    let pts = Tensor::from_fn(10, 2, |r, c| if c == 0 { line[r].x } else { 0.0 });
    let att = attention_setup(&mut tape, &model.ids.enc_attn, pts).unwrap();
    // zero query gives equal logits
    let zero = tape.input(Tensor::zeros(2, 8));
    let (w, s) = attend(&mut tape, &att, zero, &[(a, b), (3, 3)]).unwrap();
    let wv = tape.value(w).clone();
    for c in 0..10 {
        let expect0 = if c <= 5 { 1.0 / 6.0 } else { 0.0 };
        assert!((wv.get(0, c) - expect0).abs() < 1e-15);
        assert_eq!(wv.get(1, c), if c == 3 { 1.0 } else { 0.0 });
    }
    let vals = tape.value(att.values).row_slice(3).to_vec();
    assert_eq!(tape.value(s).row_slice(1), &vals[..]);
}

#[test]
fn world_predictions_follow_rigid_motions() {
    let model = WimpModel::new(ModelConfig::desk(), 9).unwrap();
    let (sc, lines) = fixtures::parallel_scene(3, 10, 15);
    let base = model.predict(&sc, &lines).unwrap();
    let motion = Frame {
        rotation_angle: 1.1,
        translation: Point2::new(-40.0, 17.0),
        direction: crate::geometry::FrameDirection::Inverse,
    };
    let sc2 = sc.map_points(|p| motion.apply_point(p));
    let lines2: ActorPolylines = lines.iter().map(|(k, l)| (k.clone(), motion.apply_polyline(l))).collect();
    let moved = model.predict(&sc2, &lines2).unwrap();
    for (a, b) in base.trajectories.iter().zip(&moved.trajectories) {
        for (p, q) in a.iter().zip(b) {
            assert!(motion.apply_point(*p).distance(*q) < 1e-6);
        }
    }
}

#[test]
fn dropout_changes_training_passes_only() {
    let model = WimpModel::new(ModelConfig::desk(), 10).unwrap();
    let (sc, lines) = fixtures::parallel_scene(2, 10, 15);
    let prep = prepare(&sc, &lines, &model.config).unwrap();
    let run = |mode| {
        let mut tape = Tape::new(&model.params);
        let out = build_graph(&mut tape, &model, &prep, mode).unwrap();
        tape.value(out.trajectories).clone()
    };
    assert_eq!(run(Mode::Train { seed: 1 }), run(Mode::Train { seed: 1 }));
    assert_ne!(run(Mode::Train { seed: 1 }), run(Mode::Train { seed: 2 }));
    assert_eq!(run(Mode::Eval), run(Mode::Eval));
}

#[test]
fn missing_inputs_are_reported() {
    let model = tiny(11);
    let (mut sc, mut lines) = fixtures::parallel_scene(2, 4, 3);
    lines.remove("a1");
    assert!(matches!(model.predict(&sc, &lines), Err(Error::MissingPolyline(id)) if id == "a1"));
    sc.focal_id = "ghost".into();
    assert!(matches!(model.predict(&sc, &lines), Err(Error::MissingFocalActor(_))));
}

#[test]
fn whole_network_gradients_match_finite_differences() {
    let mut model = tiny(12);
    // the initial waypoint reproduces straight motion exactly, which sits on the L1 kink
    let wp = model.params.id("wp.w").unwrap();
    let t = model.params.value_mut(wp);
    *t = Tensor::from_fn(t.rows(), 2, |r, c| t.get(r, c) + 0.1 * ((r * 2 + c) as f64).sin());
    let (sc, lines) = fixtures::parallel_scene(3, 4, 3);
    let prep = prepare(&sc, &lines, &model.config).unwrap();
    let truth = prep.focal_future_m().unwrap();
    let target = Tensor::from_fn(2, 6, |_, c| if c % 2 == 0 { truth[c / 2].x } else { truth[c / 2].y });
    let check = check_gradients(&model.params, 1e-5, 1e-6, |tape| {
        let out = build_graph(tape, &model, &prep, Mode::Eval)?;
        let t = tape.input(target.clone());
        let d = tape.l1_distance(out.trajectories, t)?;
        let s = tape.sum(d);
        let w = out.waypoint_loss.expect("futures present");
        tape.add(s, w)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-3, "{check:?}");
}

#[test]
fn checkpoint_with_sidecar_round_trips() {
    let mut model = tiny(13);
    model.mixture_ranks = vec![1, 0];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = WimpModel::load(&path).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(back.config, model.config);
    assert_eq!(back.mixture_ranks, vec![1, 0]);
}

