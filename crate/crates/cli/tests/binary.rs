use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use d3_core::GrayFrame;

fn d3(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d3")).args(args).current_dir(cwd).output().unwrap()
}

/// Two classes of PGM clips: brightness drifting up vs. flickering.
fn write_clips(root: &Path) {
    for (class, flicker) in [("calm", false), ("busy", true)] {
        for v in 0..3 {
            let dir = root.join(format!("frames/{class}{v}"));
            fs::create_dir_all(&dir).unwrap();
            for t in 0..12 {
                let level = if flicker { 60 + 120 * ((t + v) % 2) } else { 80 + 5 * t + v };
                let px = (0..16 * 16)
                    .map(|i| (level + if (i / 16) % 4 < 2 { 20 } else { 0 }) as u8)
                    .collect();
                fs::write(dir.join(format!("{t:02}.pgm")), GrayFrame::new(16, 16, px).unwrap().to_pgm()).unwrap();
            }
        }
    }
}

#[test]
fn end_to_end_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_clips(root);
    let mut manifest = String::new();
    for class in ["calm", "busy"] {
        for v in 0..3 {
            let id = format!("{class}{v}");
            let out = d3(
                &["extract", &format!("frames/{id}"), "--grid", "2", "--out", &format!("feat/{id}.d3ft")],
                root,
            );
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            manifest.push_str(&format!("{id}\t{class}\tfeat/{id}.d3ft\n"));
        }
    }
    fs::write(root.join("manifest.tsv"), manifest).unwrap();
    fs::write(
        root.join("run.cfg"),
        "# small run\nmanifest = manifest.tsv\nframes = 2\ntau = 2\ncodebook_size = 2\nseed = 5\nout = results\n",
    )
    .unwrap();

    let out = d3(&["evaluate", "run.cfg"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("d3s") && stdout.contains("accuracy"));
    for f in ["d3s.csv", "d3d.csv", "d3.csv", "d3.txt"] {
        assert!(root.join("results").join(f).is_file(), "{f}");
    }
    let first = fs::read(root.join("results/d3.csv")).unwrap();
    let again = d3(&["evaluate", "run.cfg", "--threads", "3", "--out", "again"], root);
    assert!(again.status.success());
    assert_eq!(fs::read(root.join("again/d3.csv")).unwrap(), first);

    let sel = d3(&["select", "feat/busy1.d3ft", "--frames", "3", "--tau", "2"], root);
    assert!(sel.status.success());
    assert_eq!(String::from_utf8_lossy(&sel.stdout).lines().count(), 5);

    assert!(d3(&["codebook", "run.cfg", "--out", "models"], root).status.success());
    assert!(root.join("models/static.d3gm").is_file());
    assert!(d3(&["describe", "run.cfg", "--models", "models"], root).status.success());
    assert!(root.join("results/descriptors.d3ds").is_file());

    let cmp = d3(&["compare-selection", "run.cfg", "--strategies", "uniform,medoid", "--frame-counts", "1,2"], root);
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stderr));
    assert!(root.join("results/compare.csv").is_file());
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // configuration: no manifest, odd tau, unknown config key
    assert_eq!(d3(&["evaluate"], root).status.code(), Some(2));
    fs::write(root.join("m.tsv"), "").unwrap();
    assert_eq!(d3(&["evaluate", "--manifest", "m.tsv", "--tau", "3"], root).status.code(), Some(2));
    fs::write(root.join("bad.cfg"), "flavour = vanilla\n").unwrap();
    assert_eq!(d3(&["evaluate", "bad.cfg"], root).status.code(), Some(2));

    // data: missing feature file, malformed manifest, garbage features, no frames
    fs::write(root.join("m.tsv"), "a\tx\tnowhere.d3ft\n").unwrap();
    assert_eq!(d3(&["evaluate", "--manifest", "m.tsv"], root).status.code(), Some(3));
    fs::write(root.join("m.tsv"), "a\tx\n").unwrap();
    assert_eq!(d3(&["evaluate", "--manifest", "m.tsv"], root).status.code(), Some(3));
    fs::write(root.join("junk.d3ft"), b"not a feature file").unwrap();
    let out = d3(&["select", "junk.d3ft"], root);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    fs::create_dir(root.join("empty")).unwrap();
    assert_eq!(d3(&["extract", "empty", "--out", "e.d3ft"], root).status.code(), Some(3));
}
