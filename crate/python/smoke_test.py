#!/usr/bin/env python3
"""Smoke test for the mmsd_net extension module.

Builds nothing itself: expects `cargo build -p mmsd-python --release`
(or a debug build) to have produced the cdylib already, copies it next to a
temp directory under an importable name, and runs a small end-to-end
workflow: positional encodings, attention, data generation, training,
evaluation, and checkpoint round-trip.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def locate_cdylib() -> Path:
    names = ["libmmsd_net.so", "libmmsd_net.dylib", "mmsd_net.dll"]
    for profile in ("release", "debug"):
        for name in names:
            candidate = REPO / "target" / profile / name
            if candidate.exists():
                return candidate
    sys.exit(
        "mmsd_net cdylib not found; run `cargo build -p mmsd-python --release` first"
    )


def import_module():
    lib = locate_cdylib()
    staging = Path(tempfile.mkdtemp(prefix="mmsd_net_"))
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy2(lib, staging / f"mmsd_net{suffix}")
    sys.path.insert(0, str(staging))
    import mmsd_net

    return mmsd_net


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    m = import_module()

    # Positional encodings: row zero alternates sin(0)/cos(0).
    pe = m.positional_encoding(4, 8)
    assert len(pe) == 4 and len(pe[0]) == 8
    for i in range(4):
        approx(pe[0][2 * i], 0.0)
        approx(pe[0][2 * i + 1], 1.0)
    approx(pe[1][0], math.sin(1.0), 1e-12)

    # Attention with a single key returns the value row.
    out = m.scaled_dot_attention([[1.0, 2.0]], [[0.5, 0.5]], [[7.0, 8.0, 9.0]])
    assert out == [[7.0, 8.0, 9.0]]

    # Published-table F1 arithmetic.
    approx(m.f1_score(92.58, 87.93), 90.19, 0.01)

    # Scheduler endpoints.
    opts = m.TrainOptions()
    approx(m.lr_at(2, 100, opts), opts.peak_lr, 1e-15)
    approx(m.lr_at(100, 100, opts), 0.0, 1e-15)

    # Synthetic data: determinism, balance, rule-based separability.
    spec = m.DataSpec(n_samples=32, seed=5)
    ds = m.Dataset.generate(spec)
    assert len(ds) == 32
    assert ds.label_counts() == (16, 16)
    assert ds.detector_f1() >= 0.99

    # Dataset file round trip.
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "ds.bin"
        ds.write(path)
        again = m.Dataset.read(path, 8)
        assert len(again) == 32 and again.labels() == ds.labels()

    # Gradient check on the toy config.
    err = m.grad_check(m.Config.toy())
    assert err < 1e-4, f"grad check err {err}"

    # Short training run on a small separable set.
    config = m.Config()
    model = m.Model(config)
    probs = model.probabilities(ds, 0)
    approx(probs[0] + probs[1], 1.0, 1e-12)

    small_opts = m.TrainOptions(epochs=20, grad_accum_steps=1)
    report = m.train(model, ds, small_opts)
    assert report["optimizer_steps"] == 160
    assert report["f1"] == 1.0, f"train metrics {report}"

    post = m.evaluate(model, ds)
    assert post["f1"] == 1.0

    # Checkpoint round trip preserves behavior bit for bit.
    with tempfile.TemporaryDirectory() as tmp:
        ckpt = Path(tmp) / "model.ckpt"
        model.save(ckpt)
        loaded = m.Model.load(ckpt, config)
        for idx in (0, 17, 31):
            assert loaded.probabilities(ds, idx) == model.probabilities(ds, idx)

    print("smoke test OK")
    print(f"  grad check max rel err: {err:.3e}")
    print(f"  training steps: {report['optimizer_steps']}, final train F1: {report['f1']:.3f}")
    print(f"  parameters: {model.parameter_count()}")


if __name__ == "__main__":
    main()
