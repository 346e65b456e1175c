use std::fs;

use gcl_core::embed::EmbeddingModel;
use gcl_core::geom2d::CameraPose2D;
use gcl_core::geom3d::Pose6DOF;
use gcl_core::io;
use gcl_core::mining::GradedPairSet;
use gcl_core::retrieval::{fit_whitening, Match, QueryResult, RankedMatches};
use gcl_core::synth::{city2d, cloud3d, City2dConfig, Cloud3dConfig};
use gcl_core::train::FeatureStore;
use gcl_core::Error;
use serde_json::json;

fn f32_round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| *x as f32 as f64).collect()
}

#[test]
fn poses_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p2 = dir.path().join("p2.csv");
    let poses = vec![
        CameraPose2D::new("a", 1.5, -2.25, 359.9),
        CameraPose2D::new("b,quoted", 1e-7, 12345.678, 0.1),
    ];
    io::write_poses_2d(&p2, &poses).unwrap();
    assert_eq!(io::read_poses_2d(&p2).unwrap(), poses);

    let p6 = dir.path().join("p6.csv");
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let six = vec![
        Pose6DOF::new("c", [1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0]).unwrap(),
        Pose6DOF::new("d", [-1.0, 0.5, 0.0], [h, 0.0, h, 0.0]).unwrap(),
    ];
    io::write_poses_6dof(&p6, &six).unwrap();
    assert_eq!(io::read_poses_6dof(&p6).unwrap(), six);
}

#[test]
fn pairs_keep_six_decimals() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pairs.csv");
    let mut set =
        GradedPairSet::with_domain(["q1".to_string(), "q0".to_string()], ["m0".to_string()])
            .unwrap();
    set.insert("q1", "m0", 0.123_456_789).unwrap();
    io::write_pairs(&p, &set).unwrap();
    assert_eq!(
        fs::read_to_string(&p).unwrap(),
        "query_id,map_id,psi\nq1,m0,0.123457\n"
    );
    let back = io::read_pairs(&p).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].psi, 0.123457);
}

#[test]
fn descriptors_round_trip_through_f32() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.gdsc");
    let c = city2d(&City2dConfig {
        n_map: 30,
        n_query: 0,
        ..City2dConfig::default()
    })
    .unwrap();
    io::write_descriptors(&p, &c.map_features).unwrap();
    let back = io::read_descriptors(&p).unwrap();
    assert_eq!(back.ids(), c.map_features.ids());
    for ((_, a), (_, b)) in back.rows().zip(c.map_features.rows()) {
        assert_eq!(a, f32_round(b).as_slice());
    }
    // writing the read-back store again is byte-identical
    let p2 = dir.path().join("g.gdsc");
    io::write_descriptors(&p2, &back).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.gsim");
    let m = EmbeddingModel::new(&[7, 5, 3], true, 11).unwrap();
    io::write_model(&p, &m, &json!({"seed": 11})).unwrap();
    let back = io::read_model(&p).unwrap();
    assert_eq!(back.dims(), vec![7, 5, 3]);
    assert!(back.output_normalize);
    assert_eq!(back.flat_params(), f32_round(&m.flat_params()));
    assert_eq!(io::read_model_metadata(&p).unwrap()["seed"], 11);

    let mut bytes = fs::read(&p).unwrap();
    bytes.pop();
    fs::write(&p, &bytes).unwrap();
    assert!(matches!(io::read_model(&p), Err(Error::Parse { .. })));
}

#[test]
fn whitening_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.gpca");
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|i| (0..4).map(|j| ((i * 7 + j * 3) % 11) as f64).collect())
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let t = fit_whitening(&refs, 3).unwrap();
    io::write_whitening(&p, &t).unwrap();
    let back = io::read_whitening(&p).unwrap();
    assert_eq!(back.mean, f32_round(&t.mean));
    assert_eq!(back.projection, f32_round(&t.projection));
    assert_eq!(back.output_dims, 3);
    assert!(back.renormalize);
}

#[test]
fn results_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    let results = vec![
        QueryResult {
            query_id: "q0".into(),
            ranked: RankedMatches {
                matches: vec![
                    Match {
                        map_id: "m1".into(),
                        distance: 0.1 + 0.2,
                    },
                    Match {
                        map_id: "m0".into(),
                        distance: 1.0 / 3.0,
                    },
                ],
            },
        },
        QueryResult {
            query_id: "q1".into(),
            ranked: RankedMatches {
                matches: vec![Match {
                    map_id: "m0".into(),
                    distance: 0.0,
                }],
            },
        },
    ];
    io::write_results(&p, &results).unwrap();
    assert_eq!(io::read_results(&p).unwrap(), results);

    fs::write(&p, "query_id,rank,map_id,distance\nq0,2,m1,0.5\n").unwrap();
    assert!(matches!(
        io::read_results(&p),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn clouds_and_intrinsics() {
    let dir = tempfile::tempdir().unwrap();
    let s = cloud3d(&Cloud3dConfig {
        n_poses: 3,
        n_points: 100,
        ..Cloud3dConfig::default()
    })
    .unwrap();
    let xyz = dir.path().join("c.xyz");
    io::write_cloud_xyz(&xyz, &s.cloud).unwrap();
    assert_eq!(io::read_cloud(&xyz).unwrap(), s.cloud);

    let ply = dir.path().join("c.ply");
    let mut text = String::from(
        "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float y\nproperty float x\nproperty float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n",
    );
    text.push_str("2 1 3 255\n5 4 6 0\n3 0 1 1\n");
    fs::write(&ply, text).unwrap();
    assert_eq!(
        io::read_cloud(&ply).unwrap().points,
        vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]
    );

    let k = dir.path().join("k.txt");
    io::write_intrinsics(&k, &s.intrinsics).unwrap();
    assert_eq!(io::read_intrinsics(&k).unwrap(), s.intrinsics);
    fs::write(&k, "fx=1\nfy=1\ncx=0\ncy=0\nwidth=2\n").unwrap();
    assert!(io::read_intrinsics(&k).is_err());
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    fs::write(&p, "id,t0,t1,heading_deg\na,0,0,0\nb,1,x,0\n").unwrap();
    match io::read_poses_2d(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    fs::write(&p, "query_id,map_id,psi\nq,m,1.5\n").unwrap();
    assert!(io::read_pairs(&p).is_err());
    let store = FeatureStore::from_rows(vec!["a\nb".into()], &[vec![1.0]]).unwrap();
    assert!(io::write_descriptors(&dir.path().join("x.gdsc"), &store).is_err());
}
