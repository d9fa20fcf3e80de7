import json
import os

import pytest

from rdsjumps.cli import run


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _tree(d):
    return {name: _read(os.path.join(d, name)) for name in sorted(os.listdir(d))}


class TestExitCodes:
    def test_validate_ok(self, tmp_path, capsys):
        assert run(["validate", "--model", "linear1d", "--seed", "1", "--out", str(tmp_path)]) == 0
        rep = json.loads(_read(tmp_path / "validation.json"))
        assert rep["passed"] and all(c["passed"] for c in rep["checks"])
        assert "validate: pass" in capsys.readouterr().out

    def test_validation_failure(self, tmp_path):
        model = tmp_path / "m.json"
        model.write_text(json.dumps({"model": {"dimension": 1, "flows": ["e^{-1 t}x"], "jumps": ["0.5*x + 1"],
                                               "probs": {"matrix": [[0.9]], "jump": [1.0]}}}))
        assert run(["validate", "--model", str(model), "--seed", "1", "--out", str(tmp_path / "o")]) == 2

    def test_check_unsatisfied(self, tmp_path):
        model = tmp_path / "m.json"
        consts = {"L": 2.0, "alpha": 0.1, "L_q": 1.0, "L_p": 0.0, "L_pbar": 0.0, "p0": 1.0, "q0": 1.0, "x_star": [0.0]}
        model.write_text(json.dumps({"model": "linear1d", "constants": consts}))
        assert run(["check", "--model", str(model), "--seed", "1", "--n-pairs", "100", "--out", str(tmp_path / "o")]) == 2
        rep = json.loads(_read(tmp_path / "o" / "check.json"))
        assert rep["criterion"]["lhs"] == pytest.approx(2.1)

    @pytest.mark.parametrize(
        "argv",
        [[], ["bogus"], ["validate"], ["validate", "--seed", "x"], ["validate", "--seed", "1", "--frobnicate"]],
    )
    def test_usage(self, argv, tmp_path):
        assert run(argv + (["--out", str(tmp_path)] if argv[:1] == ["validate"] else [])) == 64

    def test_configuration_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"bogus": 1}')
        assert run(["validate", "--seed", "1", "--config", str(bad), "--out", str(tmp_path)]) == 78
        bad.write_text("[1, 2")
        assert run(["validate", "--seed", "1", "--config", str(bad), "--out", str(tmp_path)]) == 78
        assert run(["validate", "--seed", "1", "--model", "no-such-model", "--out", str(tmp_path)]) == 78
        assert run(["simulate", "--seed", "1", "--lambda", "-1", "--out", str(tmp_path)]) == 78
        assert run(["simulate", "--seed", "1", "--threads", "0", "--out", str(tmp_path)]) == 78

    def test_runtime_error(self, tmp_path):
        a = tmp_path / "a.csv"
        a.write_text("weight,x_0\n" + "".join(f"0.1,{k}\n" for k in range(10)))
        assert run(["fm", "--a", str(a), "--b", str(a), "--cap", "5", "--out", str(tmp_path / "o")]) == 1


class TestCommands:
    def test_check_linear1d(self, tmp_path):
        assert run(["check", "--model", "linear1d", "--lambda", "1", "--seed", "1", "--out", str(tmp_path)]) == 0
        crit = json.loads(_read(tmp_path / "check.json"))["criterion"]
        assert crit["lhs"] == -0.5 and crit["beta"] == 0.25 and crit["satisfied"]

    def test_fm_identical(self, tmp_path, capsys):
        a = tmp_path / "a.csv"
        a.write_text("weight,x_0,xi\n0.25,0.0,0\n0.75,1.5,1\n")
        assert run(["fm", "--a", str(a), "--b", str(a), "--out", str(tmp_path / "o")]) == 0
        rep = json.loads(_read(tmp_path / "o" / "fm.json"))
        assert rep == {"value": 0.0, "status": "optimal", "support_sizes": [2, 2]}

    def test_fm_values(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("weight,x_0\n1,0.0\n")
        b.write_text("weight,x_0\n1,0.5\n")
        assert run(["fm", "--a", str(a), "--b", str(b), "--out", str(tmp_path / "o")]) == 0
        assert json.loads(_read(tmp_path / "o" / "fm.json"))["value"] == pytest.approx(0.5, abs=1e-9)

    def test_simulate_outputs(self, tmp_path):
        assert run(["simulate", "--model", "genetoggle", "--seed", "3", "--n", "20", "--out", str(tmp_path)]) == 0
        lines = _read(tmp_path / "trajectory.csv").decode().splitlines()
        assert lines[0] == "n,dt,t,xi_prev,eta,y_0,x_0,xi" and len(lines) == 21
        man = json.loads(_read(tmp_path / "manifest.json"))
        assert man["seed"] == 3 and man["config"]["model"] == "genetoggle" and man["config"]["lambda"] == 1.0
        assert "threads" not in man["config"] and "out" not in man["config"]
        assert set(man["versions"]) == {"rdsjumps", "numpy", "scipy", "python"}

    def test_simulate_xi0_auto(self, tmp_path):
        assert run(["simulate", "--model", "genetoggle", "--seed", "3", "--n", "5", "--xi0", "auto", "--out", str(tmp_path)]) == 0

    def test_invariant_and_fm_round_trip(self, tmp_path):
        o1, o2 = tmp_path / "i1", tmp_path / "i2"
        assert run(["invariant", "--seed", "1", "--n-keep", "1000", "--burn-in", "10", "--out", str(o1)]) == 0
        assert run(["invariant", "--seed", "2", "--n-keep", "1000", "--burn-in", "10", "--out", str(o2)]) == 0
        assert run(["fm", "--a", str(o1 / "measure.csv"), "--b", str(o2 / "measure.csv"), "--out", str(tmp_path / "f")]) == 0
        v = json.loads(_read(tmp_path / "f" / "fm.json"))["value"]
        assert 0 < v < 0.2

    def test_lln(self, tmp_path):
        argv = ["lln", "--seed", "1", "--n", "2000", "--checkpoints", "100,2000", "--seeds", "1,2", "--out", str(tmp_path)]
        assert run(argv) == 0
        rep = json.loads(_read(tmp_path / "lln.json"))
        assert rep["checkpoints"] == [100, 2000] and len(rep["per_seed"]) == 2
        assert _read(tmp_path / "lln.csv").decode().startswith("n,value,stderr")

    def test_couple(self, tmp_path):
        argv = ["couple", "--model", "genetoggle", "--seed", "1", "--pairs", "5", "--n-rep", "50", "--trace", "--out", str(tmp_path)]
        assert run(argv) == 0
        rep = json.loads(_read(tmp_path / "coupling.json"))
        assert rep["beta"] == 0.25 and rep["residual_bound_max_excess"] <= 1e-6
        assert _read(tmp_path / "trace.csv").decode().startswith("pair,rep,step,branch")

    def test_rate(self, tmp_path):
        argv = ["rate", "--seed", "1", "--a", "0@0", "--b", "10@0", "--ensemble", "1000", "--fm-cap", "500", "--n-max", "6", "--out", str(tmp_path)]
        assert run(argv) == 0
        rep = json.loads(_read(tmp_path / "rate.json"))
        assert len(rep["D"]) == 7 and rep["status"] in ("fitted", "declined")

    def test_config_overrides_flags(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 9, "model": "genetoggle", "sim": {"n": 7, "x0": [0.5]}}))
        assert run(["simulate", "--seed", "1", "--n", "3", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        man = json.loads(_read(tmp_path / "o" / "manifest.json"))
        assert man["seed"] == 9 and man["config"]["n"] == 7 and man["config"]["model"] == "genetoggle"
        assert len(_read(tmp_path / "o" / "trajectory.csv").decode().splitlines()) == 8

    def test_inline_model_in_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        body = {"dimension": 1, "flows": ["e^{-2 t}x"], "jumps": ["0.5*x + 1"], "probs": {"matrix": [[1.0]], "jump": [1.0]}}
        cfg.write_text(json.dumps({"seed": 2, "model": body}))
        assert run(["validate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0


class TestReproducibility:
    @pytest.mark.parametrize(
        "argv",
        [
            ["simulate", "--model", "genetoggle", "--n", "30", "--n-traj", "50"],
            ["invariant", "--n-keep", "500", "--burn-in", "5"],
            ["rate", "--model", "genetoggle", "--a=-5@0", "--b", "5@1", "--ensemble", "1000", "--fm-cap", "300", "--n-max", "3"],
        ],
    )
    def test_byte_identical(self, tmp_path, argv):
        outs = []
        for k, threads in enumerate(["1", "1", "8"]):
            d = tmp_path / f"run{k}"
            assert run(argv + ["--seed", "5", "--threads", threads, "--out", str(d)]) == 0
            outs.append(_tree(d))
        assert outs[0] == outs[1] == outs[2]
