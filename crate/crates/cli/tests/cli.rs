//! End-to-end smoke tests: the full subcommand chain on a deliberately
//! tiny experiment, plus the documented exit codes on the common failure
//! classes (2 config, 3 numerical abort, 4 I/O).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vdu_core::eval::reports_from_csv;

fn vdu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vdu"))
        .args(args)
        .output()
        .expect("spawning the vdu binary")
}

fn ok(args: &[&str]) {
    let out = vdu(args);
    assert!(
        out.status.success(),
        "vdu {args:?} failed:\nstdout:\n{}stderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(args: &[&str]) -> i32 {
    vdu(args).status.code().expect("exit code")
}

/// A complete config small enough that every subcommand finishes in
/// seconds: 4-mode ring, two 3-epoch pretrain runs, T = 20.
fn tiny_config(dir: &Path, unlearn_overrides: &str) -> String {
    let path = dir.join(if unlearn_overrides.is_empty() {
        "tiny.toml"
    } else {
        "tiny-override.toml"
    });
    let unlearn = if unlearn_overrides.is_empty() {
        "gamma = 0.5\neta = 5e-4\nepochs = 2\nbatch_size = 64\nt_subsample = 8\nseed = 2"
            .to_string()
    } else {
        unlearn_overrides.to_string()
    };
    let text = format!(
        r#"
[dataset]
kind = "mixture"
n_train = 400
seed = 5
forget_labels = [1]
ring_modes = 4
ring_radius = 3.0
ring_std = 0.25

[schedule]
kind = "linear"
t_steps = 20
beta_start = 1e-3
beta_end = 0.15

[arch]
hidden_dims = [16]
embed_dim = 8
activation = "silu"

[pretrain]
seeds = [21, 22]
init_seed = 3
epochs = 3
eta = 2e-3
batch_size = 64

[stats]
mode = "multi_run"

[unlearn]
{unlearn}

[eval]
n_samples = 100
seed = 17
holdout_n = 400
holdout_seed = 6

[sweep]
gammas = [0.3, 0.7]

[finetune]
epochs = 1
eta = 1e-3
batch_size = 64
seed = 4

[output]
dir = "out/tiny"
"#
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn end_to_end_tiny_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let out_dir = tmp.path().join("out");
    let out = out_dir.to_str().unwrap();

    ok(&["pretrain", "--config", &cfg, "--out", out]);
    assert!(out_dir.join("checkpoints/ckpt-s000021-e0003.vdu1").exists());
    assert!(out_dir.join("checkpoints/ckpt-s000022-e0003.vdu1").exists());

    ok(&["stats", "--config", &cfg, "--out", out]);
    assert!(out_dir.join("stats.vdus").exists());

    ok(&["unlearn", "--config", &cfg, "--out", out]);
    assert!(out_dir.join("unlearned/theta-u-gamma0.5.vdu1").exists());
    assert!(out_dir.join("unlearned/trace-gamma0.5.csv").exists());

    ok(&["eval", "--config", &cfg, "--out", out]);
    let eval_csv = out_dir.join("eval/report.csv");
    let rows = reports_from_csv(&fs::read_to_string(&eval_csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].gamma, 0.5);
    assert_eq!(rows[0].n_samples, 100);
    assert!(rows[0].u_fid.is_finite());

    ok(&["finetune", "--config", &cfg, "--out", out]);
    let ft = reports_from_csv(&fs::read_to_string(out_dir.join("finetune/report.csv")).unwrap())
        .unwrap();
    assert_eq!(ft[0].gamma, -1.0, "the reference row is marked gamma = -1");

    ok(&["sweep", "--config", &cfg, "--out", out]);
    let sw =
        reports_from_csv(&fs::read_to_string(out_dir.join("sweep/report.csv")).unwrap()).unwrap();
    assert_eq!(
        sw.iter().map(|r| r.gamma).collect::<Vec<_>>(),
        vec![0.3, 0.7]
    );
    assert!(out_dir.join("sweep/scatter-gamma0.3.svg").exists());

    // Re-running an evaluation over the same directory rewrites the same
    // bytes.
    let before = fs::read(&eval_csv).unwrap();
    ok(&["eval", "--config", &cfg, "--out", out]);
    assert_eq!(before, fs::read(&eval_csv).unwrap());

    // A divergent unlearning run must abort with the numerical exit code
    // rather than write NaN artifacts. Adam bounds each update by ±eta,
    // so eta has to be large enough that one step overflows the next
    // forward pass.
    let abort_cfg = tiny_config(
        tmp.path(),
        "gamma = 0.0\neta = 1e150\nepochs = 3\nbatch_size = 64\nt_subsample = 8\n\
         grad_clip = \"off\"\nseed = 2",
    );
    assert_eq!(
        exit_code(&["unlearn", "--config", &abort_cfg, "--out", out]),
        3
    );
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "this is not a config").unwrap();
    assert_eq!(
        exit_code(&["pretrain", "--config", bad.to_str().unwrap()]),
        2
    );

    // Semantically invalid: single-run statistics need exactly one seed.
    let cfg = tiny_config(tmp.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace(
        "mode = \"multi_run\"",
        "mode = \"single_run\"\nsnapshots = 2\nspacing = 1",
    );
    let semantic = tmp.path().join("semantic.toml");
    fs::write(&semantic, text).unwrap();
    assert_eq!(
        exit_code(&["pretrain", "--config", semantic.to_str().unwrap()]),
        2
    );
}

#[test]
fn io_errors_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        exit_code(&["pretrain", "--config", "/no/such/config.toml"]),
        4
    );

    // Evaluating before anything was trained: the checkpoint is missing.
    let cfg = tiny_config(tmp.path(), "");
    let empty = tmp.path().join("empty-out");
    assert_eq!(
        exit_code(&["eval", "--config", &cfg, "--out", empty.to_str().unwrap()]),
        4
    );
}
