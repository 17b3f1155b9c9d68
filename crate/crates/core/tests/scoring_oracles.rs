//! Score aggregation and vocabulary learning checked against independent
//! reference computations.

use drivesim_core::geom::Pose;
use drivesim_core::scenario::{Trajectory, DT, TRAJ_LEN};
use drivesim_core::teachers::{epdms, pdms, SubScores};
use drivesim_core::vocab::{flatten, imitation_targets, kmeans, sample_trajectories, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn straight_traj(speed: f64, y: f64) -> Trajectory {
    Trajectory::new(
        (1..=TRAJ_LEN)
            .map(|i| Pose::new(speed * DT * i as f64, y, 0.0))
            .collect(),
    )
    .unwrap()
}

fn vocab_of(trajs: Vec<Trajectory>) -> Vocabulary {
    // build directly from centers so distances are exactly as constructed
    let mut v = kmeans(&sample_trajectories(8, 0), 2, 1, 0).unwrap();
    v.k = trajs.len();
    v.trajectories = trajs;
    v
}

#[test]
fn imitation_targets_hand_values() {
    // candidate lateral offsets chosen so squared flat distances are 0, 1, 2
    let human = straight_traj(5.0, 0.0);
    let d1 = (1.0f64 / TRAJ_LEN as f64).sqrt();
    let d2 = (2.0f64 / TRAJ_LEN as f64).sqrt();
    let vocab = vocab_of(vec![
        straight_traj(5.0, 0.0),
        straight_traj(5.0, d1),
        straight_traj(5.0, d2),
    ]);
    let t = imitation_targets(&human, &vocab);
    let e: Vec<f64> = [0.0f64, 1.0, 2.0].iter().map(|d| (-d).exp()).collect();
    let z: f64 = e.iter().sum();
    assert!((t.y[0] - e[0] / z).abs() < 1e-12);
    assert!((t.y[1] - e[1] / z).abs() < 1e-12);
    assert!((t.y[2] - e[2] / z).abs() < 1e-12);
    assert!((t.y[0] - 0.66524).abs() < 1e-4);
    assert!((t.y[1] - 0.24473).abs() < 1e-4);
    assert!((t.y[2] - 0.09003).abs() < 1e-4);
}

#[test]
fn imitation_targets_match_direct_evaluation() {
    // independent evaluation straight from the definition, without the
    // numerical min-shift used by the implementation
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let trajs = sample_trajectories(12, 1000 + case);
        let human = trajs[0].clone();
        let vocab = vocab_of(trajs[1..].to_vec());
        let t = imitation_targets(&human, &vocab);

        let h = flatten(&human);
        let d2: Vec<f64> = vocab
            .trajectories
            .iter()
            .map(|c| {
                flatten(c)
                    .iter()
                    .zip(&h)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect();
        let min = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        let z: f64 = d2.iter().map(|d| (-(d - min)).exp()).sum();
        for (i, d) in d2.iter().enumerate() {
            assert!(((-(d - min)).exp() / z - t.y[i]).abs() < 1e-9);
        }

        // the most likely candidate is exactly the nearest neighbour
        let argmax = (0..t.y.len()).max_by(|a, b| t.y[*a].partial_cmp(&t.y[*b]).unwrap());
        let nearest = (0..d2.len()).min_by(|a, b| d2[*a].partial_cmp(&d2[*b]).unwrap());
        assert_eq!(argmax, nearest);
        let _ = rng.gen::<f64>();
    }
}

fn random_subscores(rng: &mut ChaCha8Rng) -> SubScores {
    let mut b = || {
        if rng.gen_bool(0.5) {
            1.0
        } else {
            rng.gen_range(0.0..1.0)
        }
    };
    SubScores {
        nc: b(),
        dac: b(),
        ep: b(),
        ttc: b(),
        c: b(),
        tl: b(),
        ddc: b(),
        lk: b(),
        ec: Some(b()),
    }
}

#[test]
fn aggregate_scores_match_reference_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let s = random_subscores(&mut rng);
        let ref_pdms = s.nc * s.dac * (5.0 * s.ttc + 2.0 * s.c + 5.0 * s.ep) / 12.0;
        let ec = s.ec.unwrap();
        let ref_epdms = s.nc
            * s.dac
            * s.ddc
            * s.tl
            * (5.0 * s.ttc + 2.0 * s.c + 5.0 * s.ep + 5.0 * s.lk + 5.0 * ec)
            / 22.0;
        assert!((pdms(&s) - ref_pdms).abs() < 1e-9);
        assert!((epdms(&s).unwrap() - ref_epdms).abs() < 1e-9);
    }

    // spot values
    let spot = SubScores {
        nc: 1.0,
        dac: 1.0,
        ep: 0.5,
        ttc: 1.0,
        c: 1.0,
        tl: 1.0,
        ddc: 1.0,
        lk: 1.0,
        ec: Some(1.0),
    };
    assert!((pdms(&spot) - 9.5 / 12.0).abs() < 1e-12);
    let spot2 = SubScores { ep: 0.8, ..spot };
    assert!((epdms(&spot2).unwrap() - 21.0 / 22.0).abs() < 1e-12);
}

#[test]
fn kmeans_sse_is_non_increasing() {
    for seed in 0..5 {
        let v = kmeans(&sample_trajectories(300, seed), 16, 15, seed).unwrap();
        for w in v.sse_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-6,
                "SSE increased: {} -> {} (seed {seed})",
                w[0],
                w[1]
            );
        }
    }
}

#[test]
fn kmeans_recovers_two_separated_clusters() {
    // two tight groups far apart; k = 2 must place one center on each mean
    let mut trajs = Vec::new();
    for i in 0..20 {
        let jitter = 1e-3 * i as f64;
        trajs.push(straight_traj(3.0, jitter));
        trajs.push(straight_traj(3.0, 100.0 + jitter));
    }
    let v = kmeans(&trajs, 2, 25, 3).unwrap();
    let mut ys: Vec<f64> = v.trajectories.iter().map(|t| t.poses()[0].y).collect();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expect = 1e-3 * 19.0 / 2.0;
    assert!((ys[0] - expect).abs() < 1e-6, "low center at {}", ys[0]);
    assert!(
        (ys[1] - (100.0 + expect)).abs() < 1e-6,
        "high center at {}",
        ys[1]
    );
}
