"""The packaged gradient oracle behind diag-grad."""

from __future__ import annotations

from cotransport.diagnostics import gradient_oracle


def test_gradient_oracle_passes_quickly():
    report = gradient_oracle(30, seed=7)
    assert report["max_rel_err"] < 1e-4
    assert report["coords_checked"] > 500
    assert report["elapsed_s"] < 30.0


def test_gradient_oracle_deterministic():
    a = gradient_oracle(5, seed=3)
    b = gradient_oracle(5, seed=3)
    assert a["max_rel_err"] == b["max_rel_err"]
