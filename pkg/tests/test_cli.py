"""End-to-end command tests, driven through cli.main with real files."""

import json

import pytest

from delins import cli, dp


def run_cli(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write_corpus(tmp_path, lines, name="corpus.txt"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def parse_stream(out):
    return [json.loads(line) for line in out.splitlines() if line]


VARIED = ["abcab", "bcaab", "aabbc", "cabab", "bbaac"]
FIXED4 = ["abca", "bcab", "aabb", "caba", "bbac", "acbc", "cbaa", "bacc"]


# ---------------------------------------------------------------------------
# count


def test_count_worked_example(capsys):
    code, out, _ = run_cli(["count", "bag", "babgbag"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "5"


def test_count_empty_sub_is_one(capsys):
    code, out, _ = run_cli(["count", "", "babgbag"], capsys)
    assert code == 0
    assert out.strip() == "1"


def test_count_impossible_sub_is_zero(capsys):
    code, out, _ = run_cli(["count", "xyz", "ab"], capsys)
    assert code == 0
    assert out.strip() == "0"


def test_count_log_domain_agrees(capsys):
    code, out, _ = run_cli(["count", "bag", "babgbag", "--domain", "log"], capsys)
    assert code == 0
    assert float(out.splitlines()[0]) == pytest.approx(5.0, rel=1e-9)


def test_count_grid_has_one_row_per_gap(capsys):
    code, out, _ = run_cli(["count", "bag", "babgbag", "--grid"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "5"
    rows = [json.loads(l) for l in lines[1:]]
    assert [r["gap"] for r in rows] == [0, 1, 2, 3]  # bos gap + one per token
    assert all(r["counts"][0] == 0 for r in rows)  # bos column stays empty


# ---------------------------------------------------------------------------
# usage errors


def test_unknown_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["count", "a", "b", "--bogus"])
    assert exc.value.code == 1


def test_unknown_subcommand_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1


def test_missing_checkpoint_is_runtime_error(tmp_path, capsys):
    code, _, err = run_cli(
        ["sample", "--checkpoint", str(tmp_path / "nope.ckpt")], capsys
    )
    assert code == 3
    assert "io error" in err


# ---------------------------------------------------------------------------
# train


def test_train_writes_checkpoint_vocab_and_metrics(tmp_path, capsys):
    corpus = write_corpus(tmp_path, VARIED)
    ckpt = str(tmp_path / "m.ckpt")
    code, out, _ = run_cli(
        ["train", "--corpus", corpus, "--epochs", "2", "--batch", "4",
         "--seed", "7", "--checkpoint-out", ckpt],
        capsys,
    )
    assert code == 0
    assert (tmp_path / "m.ckpt").exists()
    assert (tmp_path / "m.ckpt.vocab").exists()
    stream = parse_stream(out)
    assert "config" in stream[0]
    assert stream[0]["config"]["seed"] == 7
    steps = [r for r in stream if "step" in r]
    assert len(steps) == 4  # 5 lines, batch 4 -> 2 steps per epoch
    assert all("loss" in r and "wall_ms" in r for r in steps)
    assert stream[-1]["done"] is True


def test_train_dry_run_writes_nothing(tmp_path, capsys):
    corpus = write_corpus(tmp_path, VARIED)
    ckpt = tmp_path / "never.ckpt"
    code, out, _ = run_cli(
        ["train", "--corpus", corpus, "--dry-run", "--checkpoint-out", str(ckpt),
         "--metrics", str(tmp_path / "never.jsonl"), "--seed", "1"],
        capsys,
    )
    assert code == 0
    assert not ckpt.exists()
    assert not (tmp_path / "never.jsonl").exists()  # dry run keeps the echo on stdout
    assert any("dry_run" in r for r in parse_stream(out))


def test_train_ragged_dice_corpus_names_the_line(tmp_path, capsys):
    corpus = write_corpus(tmp_path, ["abcd", "abc", "abcd"])
    code, _, err = run_cli(
        ["train", "--corpus", corpus, "--mode", "dice", "--dry-run"], capsys
    )
    assert code == 1
    assert "line 2" in err


def test_train_dice_k_defaults_to_first_line(tmp_path, capsys):
    corpus = write_corpus(tmp_path, FIXED4)
    code, out, _ = run_cli(
        ["train", "--corpus", corpus, "--mode", "dice", "--dry-run", "--seed", "0"],
        capsys,
    )
    assert code == 0
    assert parse_stream(out)[0]["config"]["k"] == 4


def test_train_metric_stream_reproducible_without_timing(tmp_path, capsys):
    corpus = write_corpus(tmp_path, VARIED)
    metrics = tmp_path / "m.jsonl"
    argv = ["train", "--corpus", corpus, "--epochs", "2", "--seed", "13",
            "--checkpoint-out", str(tmp_path / "m.ckpt"),
            "--metrics", str(metrics), "--no-timing"]
    captured = []
    for _ in range(2):
        code, _, _ = run_cli(argv, capsys)
        assert code == 0
        captured.append((metrics.read_bytes(), (tmp_path / "m.ckpt").read_bytes()))
    assert captured[0] == captured[1]


def test_train_resume_continues_and_checks_mode(tmp_path, capsys):
    corpus = write_corpus(tmp_path, VARIED)
    first = str(tmp_path / "first.ckpt")
    code, _, _ = run_cli(
        ["train", "--corpus", corpus, "--seed", "3", "--checkpoint-out", first],
        capsys,
    )
    assert code == 0
    code, _, _ = run_cli(
        ["train", "--corpus", corpus, "--seed", "4", "--resume", first,
         "--checkpoint-out", str(tmp_path / "second.ckpt")],
        capsys,
    )
    assert code == 0
    code, _, err = run_cli(
        ["train", "--corpus", corpus, "--mode", "dice", "--k", "5",
         "--resume", first, "--dry-run"],
        capsys,
    )
    assert code == 1
    assert "mode" in err or "length" in err


def test_metrics_file_keeps_stdout_quiet(tmp_path, capsys):
    corpus = write_corpus(tmp_path, VARIED)
    metrics = tmp_path / "m.jsonl"
    code, out, _ = run_cli(
        ["train", "--corpus", corpus, "--seed", "2",
         "--checkpoint-out", str(tmp_path / "m.ckpt"), "--metrics", str(metrics)],
        capsys,
    )
    assert code == 0
    assert out == ""
    assert "config" in parse_stream(metrics.read_text())[0]


# ---------------------------------------------------------------------------
# sample


@pytest.fixture()
def trained(tmp_path, capsys):
    corpus = write_corpus(tmp_path, VARIED)
    ckpt = str(tmp_path / "t.ckpt")
    code, _, _ = run_cli(
        ["train", "--corpus", corpus, "--epochs", "2", "--seed", "7",
         "--checkpoint-out", ckpt],
        capsys,
    )
    assert code == 0
    return ckpt


def test_sample_stream_shape(trained, capsys):
    code, out, _ = run_cli(
        ["sample", "--checkpoint", trained, "--steps", "4", "--count", "3",
         "--seed", "5"],
        capsys,
    )
    assert code == 0
    stream = parse_stream(out)
    assert "config" in stream[0]
    samples = [r for r in stream if "text" in r]
    assert len(samples) == 3
    assert all(r["steps"] == 4 and r["seed"] == 5 for r in samples)
    assert all(len(r["text"]) == r["length"] for r in samples)
    summary = stream[-1]["summary"]
    assert summary["count"] == 3
    assert summary["mean_length"] == pytest.approx(
        sum(r["length"] for r in samples) / 3
    )
    assert summary["length_cdf"][-1][1] == pytest.approx(1.0)


def test_sample_count_zero_emits_empty_summary(trained, capsys):
    code, out, _ = run_cli(
        ["sample", "--checkpoint", trained, "--count", "0", "--seed", "1"], capsys
    )
    assert code == 0
    stream = parse_stream(out)
    assert stream[-1]["summary"] == {"count": 0, "mean_length": None, "length_cdf": []}
    assert not any("text" in r for r in stream)


def test_sample_same_seed_is_byte_identical(trained, tmp_path, capsys):
    path = tmp_path / "s.jsonl"
    argv = ["sample", "--checkpoint", trained, "--steps", "6", "--count", "4",
            "--seed", "11", "--out", str(path)]
    outs = []
    for _ in range(2):
        code, _, _ = run_cli(argv, capsys)
        assert code == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_sample_prompt_prefixes_every_sample(trained, capsys):
    code, out, _ = run_cli(
        ["sample", "--checkpoint", trained, "--steps", "4", "--count", "5",
         "--seed", "2", "--prompt", "ab"],
        capsys,
    )
    assert code == 0
    samples = [r for r in parse_stream(out) if "text" in r]
    assert len(samples) == 5
    assert all(r["text"].startswith("ab") for r in samples)


def test_sample_omitted_seed_is_drawn_and_logged(trained, capsys):
    code, out, _ = run_cli(
        ["sample", "--checkpoint", trained, "--steps", "2", "--count", "1"], capsys
    )
    assert code == 0
    config = parse_stream(out)[0]["config"]
    assert config["seed_drawn"] is True
    assert isinstance(config["seed"], int)


def test_sample_fixed_mode_defaults_from_dice_checkpoint(tmp_path, capsys):
    corpus = write_corpus(tmp_path, FIXED4)
    ckpt = str(tmp_path / "d.ckpt")
    code, _, _ = run_cli(
        ["train", "--corpus", corpus, "--mode", "dice", "--epochs", "30",
         "--batch", "8", "--lr", "0.1", "--seed", "5", "--checkpoint-out", ckpt],
        capsys,
    )
    assert code == 0
    code, out, _ = run_cli(
        ["sample", "--checkpoint", ckpt, "--steps", "64", "--count", "16",
         "--seed", "9"],
        capsys,
    )
    assert code == 0
    stream = parse_stream(out)
    assert stream[0]["config"]["sampler_mode"] == "fixed"
    assert stream[0]["config"]["k"] == 4
    lengths = [r["length"] for r in stream if "text" in r]
    assert lengths == [4] * 16


def test_sample_trace_file(trained, tmp_path, capsys):
    trace = tmp_path / "trace.jsonl"
    code, _, _ = run_cli(
        ["sample", "--checkpoint", trained, "--steps", "3", "--count", "2",
         "--seed", "1", "--trace", str(trace)],
        capsys,
    )
    assert code == 0
    rows = parse_stream(trace.read_text())
    assert [r["sample"] for r in rows] == [0, 1]
    for r in rows:
        times = [t for t, _ in r["trace"]]
        assert times[0] == 1.0 and times[-1] == 0.0


# ---------------------------------------------------------------------------
# config file


def test_config_file_resolution_order(tmp_path, capsys):
    corpus = write_corpus(tmp_path, VARIED)
    ini = tmp_path / "run.ini"
    ini.write_text("[train]\nepochs = 3\nlr = 0.25\n")
    code, out, _ = run_cli(
        ["train", "--corpus", corpus, "--config", str(ini), "--lr", "0.5",
         "--dry-run", "--seed", "0"],
        capsys,
    )
    assert code == 0
    config = parse_stream(out)[0]["config"]
    assert config["lr"] == 0.5  # flag beats file
    assert config["epochs"] == 3  # file beats default
    assert config["batch"] == 32  # default fills the rest


def test_config_file_missing_is_usage_error(tmp_path, capsys):
    code, _, err = run_cli(
        ["count", "a", "ab", "--config", str(tmp_path / "nope.ini")], capsys
    )
    assert code == 1
    assert "config" in err


# ---------------------------------------------------------------------------
# verify


def test_verify_quick_passes(capsys):
    code, out, _ = run_cli(["verify", "--level", "quick"], capsys)
    assert code == 0
    assert "checks passed" in out
    assert "FAIL" not in out


def test_verify_catches_corrupted_ratio_engine(monkeypatch, capsys):
    real = dp.n_ratios

    def corrupt(x_t, x_0, vocab_size, domain="exact"):
        mat = real(x_t, x_0, vocab_size, domain=domain)
        return dp.NRatioMatrix(mat.ratios * 1.01, mat.domain)

    monkeypatch.setattr(dp, "n_ratios", corrupt)
    code, out, _ = run_cli(["verify", "--level", "quick"], capsys)
    assert code == 2
    assert "FAIL ratio-grand-sum-identity" in out


# ---------------------------------------------------------------------------
# bench


def test_bench_reports_exponent(capsys):
    code, out, _ = run_cli(
        ["bench", "--lengths", "64,128,256", "--batch", "2", "--reps", "2"], capsys
    )
    assert code == 0
    stream = parse_stream(out)
    lengths = [r["length"] for r in stream if "length" in r]
    assert lengths == [64, 128, 256]
    assert all("var_ms" in r for r in stream if "length" in r)
    exponent = stream[-1]["exponent"]
    assert 0.5 < exponent < 2.5  # loose here; the acceptance run pins it down


def test_bench_single_length_is_usage_error(capsys):
    code, _, err = run_cli(["bench", "--lengths", "512"], capsys)
    assert code == 1
    assert "lengths" in err
