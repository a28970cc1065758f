import subprocess
import sys
import time

import numpy as np
import pytest

from tspformer.cli import main
from tspformer.oracle import brute_force
from tspformer.tsp import Tour, gen_instance, parse_line, read_dataset, tour_length, write_dataset, DatasetRecord

TINY_MODEL = ["--d", "16", "--layers", "1", "--heads", "2", "--ffn-dim", "32"]


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def labeled8(tmp_path):
    raw, lab = tmp_path / "raw.txt", tmp_path / "lab.txt"
    assert run("gen", "--n", 8, "--count", 24, "--seed", 1, "--out", raw) == 0
    assert run("label", "--in", raw, "--out", lab, "--method", "held_karp") == 0
    return raw, lab


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("gen", "--n", 10, "--count", 5, "--seed", 1, "--out", a)
    run("gen", "--n", 10, "--count", 5, "--seed", 1, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    recs = read_dataset(a, require_tours=False)
    assert recs[3].instance == gen_instance(10, 4)


def test_gen_zero_count(tmp_path):
    out = tmp_path / "e"
    assert run("gen", "--n", 5, "--count", 0, "--out", out) == 0
    assert out.read_bytes() == b""


def test_gen_negative_n(tmp_path, capsys):
    assert run("gen", "--n", -3, "--count", 2, "--out", tmp_path / "x") == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "--n" in err


def test_missing_flag_is_usage_error():
    with pytest.raises(SystemExit) as info:
        run("gen", "--n", 5)
    assert info.value.code == 2


def test_label_held_karp_is_optimal(labeled8):
    _, lab = labeled8
    for rec in read_dataset(lab):
        assert rec.optimal_length == pytest.approx(brute_force(rec.instance).length, abs=1e-12)
        assert rec.optimal_tour.order[0] == 0
    assert "method=held_karp" in (lab.parent / "lab.txt.meta").read_text()


def test_label_nn_sidecar(tmp_path, labeled8):
    raw, _ = labeled8
    out = tmp_path / "nn.txt"
    assert run("label", "--in", raw, "--out", out, "--method", "nn") == 0
    assert (tmp_path / "nn.txt.meta").read_text().splitlines()[0] == "method=nearest_neighbor"


def test_label_over_cap_exits_1(tmp_path, capsys):
    mixed = tmp_path / "mixed.txt"
    write_dataset(mixed, [DatasetRecord(gen_instance(8, 0)), DatasetRecord(gen_instance(17, 1))])
    assert run("label", "--in", mixed, "--out", tmp_path / "o", "--method", "held_karp") == 1
    assert "instance 1" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_train_solve_eval_pipeline(tmp_path, labeled8):
    raw, lab = labeled8
    ckpt = tmp_path / "m.ckpt"
    t0 = time.perf_counter()
    assert run("train", "--data", lab, "--out", ckpt, *TINY_MODEL, "--epochs", 2, "--batch-size", 8, "--val-frac", 0.2) == 0
    metrics = (tmp_path / "m.ckpt.metrics.csv").read_text().splitlines()
    assert metrics[0] == "epoch,train_loss,val_gap_percent" and len(metrics) == 3
    assert (tmp_path / "m.ckpt.metrics.png").stat().st_size > 0

    greedy, multi = tmp_path / "g.txt", tmp_path / "ms.txt"
    assert run("solve", "--ckpt", ckpt, "--in", raw, "--decode", "greedy", "--out", greedy) == 0
    assert run("solve", "--ckpt", ckpt, "--in", raw, "--decode", "multistart", "--out", multi) == 0
    instances = [r.instance for r in read_dataset(raw, require_tours=False)]
    g_lines, m_lines = greedy.read_text().splitlines(), multi.read_text().splitlines()
    assert len(g_lines) == len(m_lines) == len(instances)
    coords = lambda inst: " ".join(repr(float(v)) for v in inst.points.reshape(-1))
    for inst, gl, ml in zip(instances, g_lines, m_lines):
        g = parse_line(f"{coords(inst)} {gl}").optimal_tour
        m = parse_line(f"{coords(inst)} {ml}").optimal_tour
        assert tour_length(inst, m) <= tour_length(inst, g)

    report = tmp_path / "eval.csv"
    assert run("eval", "--ckpt", ckpt, "--test", lab, "--out", report) == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "method,decode,mean_length,mean_gap_percent,wall_time_s"
    rows = {tuple(l.split(",")[:2]): l.split(",") for l in lines[1:]}
    assert rows[("held_karp", "oracle")][3] == "0.0000"
    assert rows[("reference", "oracle")][3] == "0.0000"
    assert float(rows[("nearest_neighbor", "heuristic")][3]) >= 0
    assert (tmp_path / "eval.txt").exists() and (tmp_path / "eval.png").exists()
    assert time.perf_counter() - t0 < 60


def test_train_resume(tmp_path, labeled8):
    _, lab = labeled8
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    run("train", "--data", lab, "--out", a, *TINY_MODEL, "--batch-size", 8, "--no-figures")
    assert run("train", "--data", lab, "--out", b, "--resume", a, "--batch-size", 8, "--no-figures") == 0
    from tspformer.training import load_checkpoint

    assert load_checkpoint(b).step == 2 * load_checkpoint(a).step
    assert (tmp_path / "b.ckpt.metrics.csv").read_text().splitlines()[1].startswith("2,")


def test_train_on_unlabeled_fails(tmp_path, labeled8):
    raw, _ = labeled8
    assert run("train", "--data", raw, "--out", tmp_path / "m", *TINY_MODEL) == 1


def test_eval_unlabeled_exits_1(tmp_path, labeled8):
    raw, _ = labeled8
    assert run("eval", "--test", raw) == 1


def test_solve_incompatible_checkpoint(tmp_path, labeled8):
    _, lab = labeled8
    ckpt = tmp_path / "lut.ckpt"
    run("train", "--data", lab, "--out", ckpt, *TINY_MODEL, "--decoder-input", "unshared_lut",
        "--max-nodes", 8, "--no-figures")
    big = tmp_path / "big.txt"
    run("gen", "--n", 12, "--count", 2, "--out", big)
    assert run("solve", "--ckpt", ckpt, "--in", big, "--out", tmp_path / "t") == 1
    assert run("solve", "--ckpt", tmp_path / "missing.ckpt", "--in", big, "--out", tmp_path / "t") == 1


def test_ablate_three_cells(tmp_path, labeled8):
    _, lab = labeled8
    out = tmp_path / "abl.csv"
    assert run("ablate", "--data", lab, "--grid", "decoder_input", "--out", out, *TINY_MODEL,
               "--max-nodes", 8, "--batch-size", 8) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 4
    header = lines[0].split(",")
    seeds = {l.split(",")[header.index("seed")] for l in lines[1:]}
    assert seeds == {"0"}
    assert (tmp_path / "abl.png").exists()


def test_pe_dump(tmp_path):
    circ, sinu = tmp_path / "c.csv", tmp_path / "s.csv"
    assert run("pe-dump", "--kind", "circular", "--n", 50, "--d", 128, "--out", circ) == 0
    assert run("pe-dump", "--kind", "sinusoidal", "--n", 50, "--d", 128, "--out", sinu, "--no-figures") == 0
    m = np.loadtxt(circ, delimiter=",")
    s = np.loadtxt(sinu, delimiter=",")
    assert m.shape == (50, 50)
    assert np.allclose(np.diag(m), 64.0, atol=1e-6)
    assert not np.allclose(m, s)
    assert m[0, 1] > m[0, 25] < m[0, 49]
    assert (tmp_path / "c.pgm").read_bytes().startswith(b"P5\n50 50\n255\n")
    assert (tmp_path / "c.png").exists() and not (tmp_path / "s.png").exists()


@pytest.mark.parametrize("kind,d", [("circular", 7), ("spatial", 6)])
def test_pe_dump_bad_dims(tmp_path, kind, d):
    assert run("pe-dump", "--kind", kind, "--n", 10, "--d", d, "--out", tmp_path / "x.csv") == 2


def test_console_script(tmp_path):
    out = tmp_path / "g.txt"
    proc = subprocess.run(
        [sys.executable, "-m", "tspformer.cli", "gen", "--n", "5", "--count", "2", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert len(out.read_text().splitlines()) == 2
