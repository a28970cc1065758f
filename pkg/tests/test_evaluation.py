import math

import numpy as np
import pytest

from conftest import tiny_model
from tspformer import evaluation as E
from tspformer.model import ModelConfig
from tspformer.oracle import label_dataset
from tspformer.training import TrainConfig, load_checkpoint
from tspformer.tsp import DatasetRecord, gen_instances


@pytest.fixture(scope="module")
def labeled():
    return label_dataset(gen_instances(7, 5, seed=900), "held_karp")


def test_evaluate_rows(labeled):
    rows = E.evaluate(labeled, tiny_model())
    names = [(r.method, r.decode) for r in rows]
    assert names == [
        ("reference", "oracle"),
        ("nearest_neighbor", "heuristic"),
        ("nn+2opt", "heuristic"),
        ("held_karp", "oracle"),
        ("model", "greedy"),
        ("model", "multi-start"),
    ]
    opt_mean = np.mean([r.optimal_length for r in labeled])
    for r in rows:
        assert r.mean_length >= opt_mean - 1e-9
        assert r.mean_gap_percent >= -1e-9
    assert rows[0].mean_gap_percent == 0.0
    assert abs(rows[3].mean_gap_percent) < 1e-9
    assert rows[5].mean_gap_percent <= rows[4].mean_gap_percent


def test_gap_is_mean_of_per_instance_gaps(labeled):
    rows = E.evaluate(labeled, None, baselines=["nn"])
    from tspformer.oracle import nearest_neighbor

    gaps = [100 * (nearest_neighbor(r.instance).length - r.optimal_length) / r.optimal_length for r in labeled]
    assert rows[1].mean_gap_percent == pytest.approx(np.mean(gaps), abs=1e-12)


def test_evaluate_rejects_unlabeled():
    with pytest.raises(ValueError):
        E.evaluate([DatasetRecord(i) for i in gen_instances(5, 2, 0)])


def test_unknown_baseline(labeled):
    with pytest.raises(ValueError, match="lkh"):
        E.evaluate(labeled, None, baselines=["lkh"])


def test_table_golden(labeled):
    rows = [E.EvalRow(r.method, r.decode, r.mean_length, r.mean_gap_percent, 0.0, r.gap_of_means_percent)
            for r in E.evaluate(labeled, None)]
    table = E.format_table(rows)
    ref = f"{np.mean([r.optimal_length for r in labeled]):.4f}"
    lines = table.splitlines()
    assert lines[0].split() == ["method", "decode", "length", "gap", "%", "time", "s", "gap", "of", "means", "%"]
    assert set(lines[1]) <= {"-", " "}
    assert lines[2].split()[:4] == ["reference", "oracle", ref, "0.00"]
    assert lines[5].split()[:4] == ["held_karp", "oracle", ref, "0.00"]
    assert len({len(l) for l in lines[:2]}) == 1


def test_csv_header(labeled):
    text = E.rows_to_csv(E.evaluate(labeled, None, ["held_karp"]))
    assert text.splitlines()[0] == "method,decode,mean_length,mean_gap_percent,wall_time_s"
    assert text.splitlines()[2].split(",")[3] == "0.0000"


def test_parse_axes():
    assert E.parse_axes("all") == ["pe", "decoder_input", "output_head"]
    assert E.parse_axes("pe, output_head") == ["pe", "output_head"]
    with pytest.raises(ValueError):
        E.parse_axes("heads")


def test_ablation_grid_small(tmp_path):
    train_recs = label_dataset(gen_instances(6, 16, seed=1), "held_karp")
    test_recs = label_dataset(gen_instances(6, 4, seed=99), "held_karp")
    base = ModelConfig(d=8, layers=1, heads=2, ffn_dim=16, max_nodes=6)
    rows = E.run_ablation(train_recs, test_recs, base, TrainConfig(batch_size=8, epochs=1), ["decoder_input"], tmp_path)
    assert len(rows) == 3
    assert len({r.seed for r in rows}) == 1
    assert all(r.status == "ok" and math.isfinite(r.greedy_gap) for r in rows)
    for r in rows:
        ckpt = load_checkpoint(r.checkpoint)
        assert ckpt.model_config == r.config
        ckpt.to_model()
    csv_text = E.ablation_csv(rows)
    assert csv_text.splitlines()[0].startswith("axis,cell,encoder_pe")
    assert len(csv_text.splitlines()) == 4


def test_ablation_marks_failed_cells():
    train_recs = label_dataset(gen_instances(6, 8, seed=1), "held_karp")
    # lookup table too small for n=6: that cell fails, the others run
    base = ModelConfig(d=8, layers=1, heads=2, ffn_dim=16, max_nodes=4)
    rows = E.run_ablation(train_recs, train_recs, base, TrainConfig(batch_size=8, epochs=1), ["decoder_input"])
    status = {r.config.decoder_input: r.status for r in rows}
    assert status["memory"] == "ok" and status["shared_lut"] == "ok"
    assert status["unshared_lut"].startswith("failed")


def test_ablation_reuses_identical_cells():
    train_recs = label_dataset(gen_instances(6, 8, seed=1), "held_karp")
    base = ModelConfig(d=8, layers=1, heads=2, ffn_dim=16)
    rows = E.run_ablation(train_recs, train_recs, base, TrainConfig(batch_size=8, epochs=1), ["output_head", "decoder_input"])
    by_cell = {(r.axis, r.cell): r for r in rows}
    a = by_cell[("output_head", "output_head=dynamic_embedding")]
    b = by_cell[("decoder_input", "decoder_input=memory")]
    assert a.greedy_gap == b.greedy_gap
