use std::ffi::{c_char, CString};
use std::process::Command;
use std::ptr;

use egocl_ffi::*;

fn last_error() -> String {
    let mut needed = 0usize;
    unsafe {
        assert_eq!(egocl_last_error(ptr::null_mut(), 0, &mut needed), EgoclStatus::BufferTooSmall);
        let mut buf = vec![0u8; needed];
        assert_eq!(egocl_last_error(buf.as_mut_ptr().cast::<c_char>(), needed, ptr::null_mut()), EgoclStatus::Ok);
        buf.pop();
        String::from_utf8(buf).unwrap()
    }
}

#[test]
fn auc_through_the_abi() {
    let scores = [0.8, 0.7, 0.3, 0.2];
    let labels = [1u8, 0, 1, 0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(egocl_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out), EgoclStatus::Ok);
        assert!((out - 0.75).abs() < 1e-12);
        let one_class = [1u8; 4];
        assert_eq!(
            egocl_auc(scores.as_ptr(), one_class.as_ptr(), 4, &mut out),
            EgoclStatus::UndefinedMetric
        );
        assert!(!last_error().is_empty());
        assert_eq!(egocl_auc(scores.as_ptr(), labels.as_ptr(), 4, ptr::null_mut()), EgoclStatus::NullPointer);
    }
}

#[test]
fn matrix_metrics() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(egocl_auc_matrix_new(2, &mut m), EgoclStatus::Ok);
        let mut v = 0.0;
        assert_eq!(egocl_auc_matrix_avg_auc(m, &mut v), EgoclStatus::UndefinedMetric);
        for (s, t, a) in [(0, 0, 0.8), (1, 0, 0.7), (1, 1, 0.9)] {
            assert_eq!(egocl_auc_matrix_set(m, s, t, a), EgoclStatus::Ok);
        }
        assert_eq!(egocl_auc_matrix_set(m, 0, 1, 0.5), EgoclStatus::Shape);
        assert_eq!(egocl_auc_matrix_fgt(m, &mut v), EgoclStatus::Ok);
        assert!((v - 0.1).abs() < 1e-12);
        assert_eq!(egocl_auc_matrix_avg_auc(m, &mut v), EgoclStatus::Ok);
        assert!((v - 0.8).abs() < 1e-12);
        egocl_auc_matrix_free(m);
        egocl_auc_matrix_free(ptr::null_mut());

        let mut single = ptr::null_mut();
        assert_eq!(egocl_auc_matrix_new(1, &mut single), EgoclStatus::Ok);
        egocl_auc_matrix_set(single, 0, 0, 0.9);
        assert_eq!(egocl_auc_matrix_fgt(single, &mut v), EgoclStatus::UndefinedMetric);
        egocl_auc_matrix_free(single);
    }
}

#[test]
fn graph_stats_and_sampling() {
    // path 0-1-2-3 plus isolated node 4
    let src = [0usize, 1, 2];
    let dst = [1usize, 2, 3];
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(egocl_graph_from_edges(5, src.as_ptr(), dst.as_ptr(), 3, 0, &mut g), EgoclStatus::Ok);
        let mut stats = EgoclStats::default();
        assert_eq!(egocl_graph_stats(g, &mut stats), EgoclStatus::Ok);
        assert_eq!((stats.num_nodes, stats.num_links), (5, 3));
        assert!((stats.avg_degree - 1.2).abs() < 1e-12);

        let mut members = [0i64; 3];
        assert_eq!(egocl_sample_ego(g, 1, EGOCL_SAMPLER_BFS, 3, 0.0, 0, members.as_mut_ptr()), EgoclStatus::Ok);
        assert_eq!(members, [1, 0, 2]);
        assert_eq!(egocl_sample_ego(g, 4, EGOCL_SAMPLER_BFS, 3, 0.0, 0, members.as_mut_ptr()), EgoclStatus::Ok);
        assert_eq!(members, [4, EGOCL_DUMMY, EGOCL_DUMMY]);
        assert_eq!(egocl_sample_ego(g, 3, EGOCL_SAMPLER_RWR, 3, 0.5, 7, members.as_mut_ptr()), EgoclStatus::Ok);
        assert_eq!(members[0], 3);
        assert!(members.iter().all(|&m| m == EGOCL_DUMMY || (0..4).contains(&m)));
        assert_eq!(egocl_sample_ego(g, 9, EGOCL_SAMPLER_BFS, 3, 0.0, 0, members.as_mut_ptr()), EgoclStatus::UnknownNode);
        assert_eq!(egocl_sample_ego(g, 0, 5, 3, 0.0, 0, members.as_mut_ptr()), EgoclStatus::Config);
        egocl_graph_free(g);
    }
}

#[test]
fn load_reports_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let e = dir.path().join("edges.tsv");
    let f = dir.path().join("features.csv");
    let l = dir.path().join("labels.csv");
    std::fs::write(&e, "# toy\na\tb\nb\tc\n").unwrap();
    std::fs::write(&f, "node_id,f1,f2,f3\na,1,2,3\nb,0,1,0\nc,2,2,2\n").unwrap();
    std::fs::write(&l, "node_id,label\na,1\nb,0\nc,0\n").unwrap();
    let c = |p: &std::path::Path| CString::new(p.to_str().unwrap()).unwrap();
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(egocl_graph_load(c(&e).as_ptr(), c(&f).as_ptr(), c(&l).as_ptr(), 0, 1, &mut g), EgoclStatus::Ok);
        let mut stats = EgoclStats::default();
        egocl_graph_stats(g, &mut stats);
        assert_eq!((stats.num_nodes, stats.num_links), (3, 2));
        egocl_graph_free(g);

        std::fs::write(&l, "node_id,label\na,1\nb,7\nc,0\n").unwrap();
        let status = egocl_graph_load(c(&e).as_ptr(), c(&f).as_ptr(), c(&l).as_ptr(), 0, 1, &mut g);
        assert_ne!(status, EgoclStatus::Ok);
        assert!(last_error().contains("labels.csv"), "{}", last_error());
    }
}

#[test]
fn run_rejects_unknown_command() {
    let cmd = CString::new("train").unwrap();
    unsafe {
        assert_eq!(egocl_run(cmd.as_ptr(), ptr::null(), ptr::null(), 0, 0), EgoclStatus::Config);
        assert_eq!(egocl_run(ptr::null(), ptr::null(), ptr::null(), 0, 0), EgoclStatus::NullPointer);
    }
}

#[test]
fn run_writes_stats() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.toml");
    std::fs::write(&manifest, "[synth]\nnum_tasks = 2\nnodes_per_task = 200\nblocks = 2\np_in = 0.03\n").unwrap();
    let cmd = CString::new("stats").unwrap();
    let m = CString::new(manifest.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(egocl_run(cmd.as_ptr(), m.as_ptr(), out.as_ptr(), 1, 1), EgoclStatus::Ok, "{}", last_error());
    }
    let csv = std::fs::read_to_string(dir.path().join("out/stats.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/egocl.h");
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
