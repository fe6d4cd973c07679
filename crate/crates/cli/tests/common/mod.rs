#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use capire_core::synth::planted_blobs;

pub fn capire(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capire")).args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

/// Every file in `dir` by name.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .expect("dir exists")
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Three blobs, centers pairwise 10 sd apart, as a headed CSV.
pub fn write_blobs(path: &Path, n_per: usize, seed: u64) -> Vec<i64> {
    let (x, labels) = planted_blobs(3, n_per, 8, 10.0, seed);
    let mut text = (0..x.ncols()).map(|j| format!("f{j}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for row in x.row_iter() {
        text.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
    labels
}

/// Reference curriculum with every student passing the first three
/// semesters on schedule, so lag is zero for everyone.
pub fn write_on_schedule_dataset(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for f in ["curriculum.csv", "prereqs.csv"] {
        fs::copy(fixture("friction_golden").join(f), dir.join(f)).unwrap();
    }
    let dag = capire_core::curriculum::reference::civil_engineering();
    let mut students = String::from("student_id,cohort_year,age_at_entry,graduated,last_active_semester\n");
    let mut attempts = String::from("student_id,course_code,semester,outcome,grade\n");
    for id in 1..=80u64 {
        let last = if id % 2 == 0 { 3 } else { 10 };
        students.push_str(&format!("{id},{},{},{},{last}\n", 2010 + id % 4, 18 + id % 5, id % 2 == 1));
        for (s, codes) in dag.plan().iter().enumerate().take(last as usize) {
            for c in codes {
                attempts.push_str(&format!("{id},{c},{},pass,{}\n", s + 1, 6 + id % 4));
            }
        }
    }
    fs::write(dir.join("students.csv"), students).unwrap();
    fs::write(dir.join("attempts.csv"), attempts).unwrap();
}
