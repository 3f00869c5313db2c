use fof_core::eval::{center_error, track_frames, TrackResult};
use fof_core::synthetic::{Scenario, SyntheticSequence};
use fof_core::tracker::{Ablation, TrackerConfig};

fn run(seq: &SyntheticSequence, ablation: Ablation) -> TrackResult {
    let cfg = TrackerConfig { ablation, ..Default::default() };
    track_frames(seq.frames.len(), |i| Ok(seq.frames[i].clone()), seq.truth[0], &cfg).unwrap()
}

fn errors(seq: &SyntheticSequence, res: &TrackResult) -> Vec<f64> {
    res.boxes.iter().zip(&seq.truth).map(|(p, g)| center_error(p, g)).collect()
}

fn ablation(list: &str) -> Ablation {
    Ablation::parse_list(list).unwrap()
}

#[test]
fn stationary_target_does_not_drift() {
    let seq = Scenario::stationary(11).render();
    let res = run(&seq, Ablation::default());
    let e = errors(&seq, &res);
    let worst = e.iter().cloned().fold(0.0, f64::max);
    println!("static: worst drift {worst:.2}px");
    assert!(worst <= 1.0, "{e:?}");
}

#[test]
fn raw_filters_still_track_translation() {
    let seq = Scenario::translation(12).render();
    let res = run(&seq, ablation("noJL,noL,noTR,noSH"));
    let e = errors(&seq, &res);
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let worst = e.iter().cloned().fold(0.0, f64::max);
    println!("translate raw: mean {mean:.2}px max {worst:.2}px");
    // Never further than an eighth of the target width from the truth.
    assert!(worst <= 8.0, "{e:?}");
}

#[test]
fn trajectories_are_deterministic() {
    let seq = Scenario::translation(13).render();
    let short = SyntheticSequence { name: seq.name.clone(), frames: seq.frames[..12].to_vec(), truth: seq.truth[..12].to_vec() };
    let a = run(&short, Ablation::default());
    let b = run(&short, Ablation::default());
    assert_eq!(a.boxes, b.boxes);
    assert_eq!(a.scores, b.scores);
}

#[test]
fn scaling_layer_weights_keeps_trajectory() {
    let seq = Scenario::translation(14).render();
    let short = SyntheticSequence { name: seq.name.clone(), frames: seq.frames[..10].to_vec(), truth: seq.truth[..10].to_vec() };
    let base = TrackerConfig { ablation: ablation("noSH,noTR"), ..Default::default() };
    let mut scaled = base.clone();
    for l in &mut scaled.layers {
        l.weight *= 4.0;
    }
    let go = |cfg: &TrackerConfig| track_frames(short.frames.len(), |i| Ok(short.frames[i].clone()), short.truth[0], cfg).unwrap();
    let (a, b) = (go(&base), go(&scaled));
    for (p, q) in a.boxes.iter().zip(&b.boxes) {
        assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
    }
}
