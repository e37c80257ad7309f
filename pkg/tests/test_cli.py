import csv
import io
import json

import numpy as np
import pytest

from defg import gen
from defg.cli import (
    CSV_COLUMNS,
    ExperimentSpec,
    main,
    records_to_csv,
    run_experiment,
    scatter_svg,
    summarize,
)
from defg.exact import exact_partition_sum
from defg.graph import read_graph, save_graph


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_and_validate_cycle(tmp_path, capsys):
    path = tmp_path / "c.json"
    assert run(capsys, "gen", "cycle", "--n", 4, "--q", 2, "--seed", 1, "--out", path)[0] == 0
    code, out, _ = run(capsys, "validate", path)
    assert code == 0 and out.strip() == "OK"
    assert len(read_graph(path).factors) == 4


def test_gen_permanent_counts(tmp_path, capsys):
    path = tmp_path / "p.json"
    assert run(capsys, "gen", "permanent", "--n", 3, "--seed", 2, "--out", path)[0] == 0
    g = read_graph(path)
    assert len(g.factors) == 6 + 9
    assert run(capsys, "validate", path)[0] == 0


@pytest.mark.parametrize("case", ["diagonal", "rank-one"])
def test_gen_permanent_special_cases_validate(tmp_path, capsys, case):
    path = tmp_path / "p.json"
    assert run(capsys, "gen", "permanent", "--n", 2, "--case", case, "--out", path)[0] == 0
    assert run(capsys, "validate", path)[0] == 0


def test_gen_quantum_demo(tmp_path, capsys):
    path = tmp_path / "q.json"
    assert run(capsys, "gen", "quantum", "--demo", "--out", path)[0] == 0
    assert exact_partition_sum(read_graph(path)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("family", ["cycle-chord", "tree", "random", "quantum"])
def test_gen_other_families(tmp_path, capsys, family):
    path = tmp_path / "g.json"
    assert run(capsys, "gen", family, "--seed", 3, "--out", path)[0] == 0
    assert run(capsys, "validate", path)[0] == 0


def test_validate_broken_shape(tmp_path, capsys):
    doc = json.loads(save_graph(gen.cycle_denfg(gen.random_cycle_factor(gen.make_rng(0), 2), 3)))
    doc["factors"][1]["shape"] = [4, 4]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, "validate", path)
    assert code == 1 and "factor 'f1'" in err


def test_validate_non_psd(tmp_path, capsys):
    g = gen.quantum_chain_denfg(gen.demo_quantum_chain_spec())
    doc = json.loads(save_graph(g))
    m = [f for f in doc["factors"] if f["id"] == "M"][0]
    vals = np.array(m["values"])[:, 0] + 1j * np.array(m["values"])[:, 1]
    t = vals.reshape(m["shape"])
    # negate the positive eigenvalue of the y=1 block
    block = t[..., 1].reshape(4, 4)
    ev, v = np.linalg.eigh(block)
    ev[-1] = -ev[-1]
    t[..., 1] = ((v * ev) @ v.conj().T).reshape(2, 2, 2, 2)
    m["values"] = [[float(z.real), float(z.imag)] for z in t.ravel()]
    path = tmp_path / "np.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "validate", path)
    assert code == 1 and "factor 'M'" in out and "y=(1,)" in out


def test_io_errors(tmp_path, capsys):
    assert run(capsys, "validate", tmp_path / "missing.json")[0] == 3
    (tmp_path / "junk.json").write_text("{not json")
    assert run(capsys, "run", tmp_path / "junk.json")[0] == 3


def test_run_tree_exact(tmp_path, capsys):
    path = tmp_path / "t.json"
    run(capsys, "gen", "tree", "--factors", 5, "--seed", 4, "--out", path)
    code, out, _ = run(capsys, "run", path, "--exact", "--beliefs")
    assert code == 0 and "converged: yes" in out
    ratio = [l for l in out.splitlines() if l.startswith("Z_Bethe / Z")][0]
    assert complex(ratio.split("=")[1].strip()) == pytest.approx(1.0, abs=1e-9)
    assert "belief[" in out and "marginal[" in out


def test_run_cycle_ratio_matches_spectrum(tmp_path, capsys):
    path = tmp_path / "c.json"
    run(capsys, "gen", "cycle", "--n", 4, "--seed", 1, "--out", path)
    code, out, _ = run(capsys, "run", path, "--exact")
    F = gen.random_cycle_factor(gen.make_rng(1), 2)
    B = F.transpose(0, 2, 1, 3).reshape(4, 4)
    lam = max(np.linalg.eigvals(B), key=abs).real
    want = lam**4 / np.trace(np.linalg.matrix_power(B, 4)).real
    ratio = [l for l in out.splitlines() if l.startswith("Z_Bethe / Z")][0]
    assert code == 0 and complex(ratio.split("=")[1].strip()).real == pytest.approx(want, rel=1e-6)


def test_run_not_converged_exit_code(tmp_path, capsys):
    path = tmp_path / "c.json"
    run(capsys, "gen", "cycle", "--out", path)
    code, out, _ = run(capsys, "run", path, "--max-iters", 1)
    assert code == 4 and "converged: no" in out


def test_run_degenerate_is_hard_error(tmp_path, capsys):
    doc = {
        "edges": [{"id": "e", "kind": "double", "alphabet": 2, "ends": ["f", "h"]}],
        "factors": [
            {"id": "f", "ports": ["e"], "shape": [2, 2], "values": [[0, 0]] * 4},
            {"id": "h", "ports": ["e"], "shape": [2, 2], "values": [[1, 0], [0, 0], [0, 0], [1, 0]]},
        ],
    }
    path = tmp_path / "z.json"
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, "run", path)
    assert code == 2 and "degenerate" in err


def test_experiment_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("cycle-random", samples=0)
    with pytest.raises(ValueError):
        ExperimentSpec("cycle-random", n=1)
    with pytest.raises(ValueError):
        ExperimentSpec("permanent-random", n=8)
    with pytest.raises(ValueError):
        ExperimentSpec("grid")


def test_experiment_csv_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        code, out, _ = run(capsys, "experiment", "cycle-random", "--samples", 5, "--seed", 10, "--csv", p)
        assert code == 0 and "converged: 5" in out
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.read_text())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [int(r["seed"]) for r in rows] == list(range(10, 15))
    assert all(r["wall_time_ms"] == "" and r["error"] == "" for r in rows)


def test_single_sample_byte_identical(tmp_path, capsys):
    outs = []
    for name in ("x.csv", "y.csv"):
        run(capsys, "experiment", "cycle-chord-random", "--samples", 1, "--seed", 42, "--csv", tmp_path / name)
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_timing_flag_fills_wall_time():
    spec = ExperimentSpec("cycle-random", samples=2)
    recs = run_experiment(spec, timing=True)
    assert all(r["wall_time_ms"] > 0 for r in recs)


def test_workers_preserve_order():
    spec = ExperimentSpec("cycle-random", samples=6, base_seed=3)
    assert records_to_csv(run_experiment(spec, workers=2)) == records_to_csv(run_experiment(spec))


def test_per_sample_errors_are_recorded():
    spec = ExperimentSpec("permanent-random", samples=1, n=3, spa=__import__("defg").SpaConfig(max_iters=5))
    recs = run_experiment(spec)
    assert recs[0]["error"] == "" and not recs[0]["converged"]
    # an impossible chord never aborts the batch
    bad = ExperimentSpec("cycle-chord-random", samples=2, chord=(0, 9))
    recs = run_experiment(bad)
    assert all("ValueError" in r["error"] for r in recs)
    assert summarize(recs)["errors"] == 2


def test_csv_rows_have_real_partition_sums(tmp_path, capsys):
    path = tmp_path / "p.csv"
    run(capsys, "experiment", "permanent-random", "--samples", 3, "--n", 4, "--csv", path)
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    assert any(r["converged"] == "true" for r in rows)
    for r in rows:
        if r["converged"] != "true":
            continue
        assert abs(float(r["z_bethe_im"])) <= 1e-9 * abs(float(r["z_bethe_re"]))
        assert abs(float(r["z_exact_im"])) <= 1e-9 * abs(float(r["z_exact_re"]))
        assert float(r["ratio"]) > 0


def test_svg_regenerates_from_csv(tmp_path, capsys):
    c, s1, s2 = tmp_path / "a.csv", tmp_path / "a.svg", tmp_path / "b.svg"
    run(capsys, "experiment", "cycle-random", "--samples", 8, "--csv", c, "--svg", s1)
    assert run(capsys, "plot", c, s2)[0] == 0
    assert s1.read_bytes() == s2.read_bytes()
    text = s1.read_text()
    assert text.startswith("<svg") and text.count("<circle") == 8


def test_svg_handles_empty_csv():
    svg = scatter_svg(",".join(CSV_COLUMNS) + "\n")
    assert "<circle" not in svg and svg.endswith("</svg>\n")
