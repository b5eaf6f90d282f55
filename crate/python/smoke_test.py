"""Smoke test for the qgnn_py extension.

Build first:
    cargo build --release -p qgnn-py --features extension-module
then run this script. If `qgnn_py` is not installed (e.g. via maturin), the
freshly built shared library is loaded from the cargo target directory.
"""

import importlib.util
import json
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]
DATA = ROOT / "crates" / "qgnn" / "tests" / "data"


def load_module():
    try:
        import qgnn_py

        return qgnn_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libqgnn_py.so"
        if lib.exists():
            tmp = pathlib.Path(tempfile.mkdtemp()) / "qgnn_py.so"
            shutil.copy(lib, tmp)
            spec = importlib.util.spec_from_file_location("qgnn_py", tmp)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("qgnn_py not found; build it with cargo first")


def main():
    q = load_module()

    a = q.Arithmetic("fixed:32:4")
    assert a.normalize("0.8") == "0.8000"
    assert a.mul("0.008", "100") == "0.8000"
    assert q.Arithmetic("satint:3").add("2", "2") == "3"
    assert q.Arithmetic("satint:3").activate("truncrelu", "2") == "1"

    f = q.Formula("agg(1) = 4", "satint:15")
    assert f.agg_depth == 1
    sat = f.solve("unary:5")
    assert sat["verdict"] == "sat", sat
    assert f.check(sat["model"])
    assert f.solve("unary:2")["verdict"] == "unsat"
    assert f.oracle(2)["verdict"] == "unsat"

    gnn = q.Gnn.from_json((DATA / "small_gnn.json").read_text())
    assert gnn.eval((DATA / "g_e.json").read_text()) == ["5", "0", "1"]
    assert gnn.eval((DATA / "single_node.json").read_text()) == ["0", "2", "0"]
    assert gnn.output_names == ["y1", "y2", "y3"]

    lvp = q.LvpInstance.from_json((DATA / "small_lvp.json").read_text())
    res = lvp.verify(time=10.0)
    assert res["verdict"] == "invalid", res
    assert lvp.gnn.eval(res["counterexample"]) == res["outputs"]
    assert json.loads(res["counterexample"])["point"]

    msg = q.LvpInstance.from_json((DATA / "message_lvp.json").read_text())
    assert msg.verify()["verdict"] == "invalid"
    assert "agg(x1)" in str(msg.compile())

    try:
        q.Formula("agg(x1 >= 0", "satint:3")
    except ValueError:
        pass
    else:
        raise AssertionError("parse error not raised")

    print("qgnn_py smoke test passed")


if __name__ == "__main__":
    main()
