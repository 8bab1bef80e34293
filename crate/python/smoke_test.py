"""Smoke test for the Python bindings.

Build first:  cargo build --release -p t23daqa-py --features extension-module
If `t23daqa` is not importable, the built library is copied from target/
into a temporary directory under the module's name.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_module():
    try:
        import t23daqa
        return t23daqa
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libt23daqa_py.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "t23daqa.so")
            sys.path.insert(0, str(tmp))
            import t23daqa
            return t23daqa
    sys.exit("t23daqa extension not found; build it with cargo first")


def main():
    t = import_module()

    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    y = [2.0, 1.0, 4.0, 3.0, 6.0]
    assert math.isclose(t.srcc(x, y), 0.8, abs_tol=1e-12)
    assert math.isclose(t.krcc(x, y), 0.6, abs_tol=1e-12)
    assert -1.0 <= t.plcc(x, y) <= 1.0

    pred = [-3.0 + 0.1 * i for i in range(61)]
    beta = (2.0, 1.0, 0.0, 0.5, 0.1)
    mos = [b1 * (0.5 - 1 / (1 + math.exp(b2 * (p - b3)))) + b4 * p + b5
           for p in pred for b1, b2, b3, b4, b5 in [beta]]
    _, mapped, sse, _ = t.fit_logistic(pred, mos)
    assert math.sqrt(sse / len(mos)) < 1e-4

    assert t.sample_indices(120) == list(range(0, 120, 10))
    assert t.front_back_indices(120) == (0, 60)
    assert t.linearity_loss([2 * v + 1 for v in x], x) < 1e-9
    assert t.rank_loss(x, x) == 0.0
    assert t.f_test([0.1, -0.2, 0.1, 0.0] * 50, [3.0, -2.5, 1.0, -3.5] * 50) == "superior"

    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        manifest = t.synth(str(d / "data"), assets=8, frames=12, resolution=32, subjects=6, seed=1)
        mos, rejected = t.process_ratings(str(d / "data" / "ratings.csv"), manifest, str(d / "mos.jsonl"))
        assert len(mos) == 8 and isinstance(rejected, list)
        (d / "cfg.toml").write_text("epochs = 2\nhead_hidden = [64, 16]\n")
        losses = t.train_model(manifest, str(d / "mos.jsonl"), str(d / "model.json"), config=str(d / "cfg.toml"))
        assert len(losses) == 2
        model = t.Model.load(str(d / "model.json"))
        scores = model.predict(manifest)
        assert set(scores) == set(mos)
        try:
            t.Model.load(str(d / "missing.json"))
        except OSError:
            pass
        else:
            raise AssertionError("missing checkpoint loaded")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
