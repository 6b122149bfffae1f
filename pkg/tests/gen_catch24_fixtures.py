"""Regenerate the frozen catch24 parity fixtures.

Prefers the pycatch22 package (the published reference implementation) when
it is importable; otherwise falls back to the in-repo C transliteration in
reference_catch22.py. The fixture file records which generator produced it.

Usage: python tests/gen_catch24_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
OUT = HERE / "fixtures" / "catch24_fixtures.json"
N_SERIES = 50
SEED = 20240517


def make_series(rng: np.random.Generator, index: int) -> np.ndarray:
    n = int(rng.integers(100, 5001))
    kind = index % 5
    if kind == 0:
        return rng.normal(size=n)
    if kind == 1:
        return np.cumsum(rng.normal(size=n))
    if kind == 2:
        freq = rng.uniform(0.002, 0.45)
        return np.sin(2 * np.pi * freq * np.arange(n)) + 0.1 * rng.normal(size=n)
    if kind == 3:
        return rng.laplace(size=n) + 0.001 * np.arange(n)
    return np.round(rng.normal(size=n) * rng.uniform(0.5, 3.0), 2)


def reference_values(series: np.ndarray) -> tuple[list[float], str]:
    try:
        import pycatch22

        res = pycatch22.catch22_all(list(series), catch24=True)
        return [float(v) for v in res["values"]], "pycatch22"
    except ImportError:
        import reference_catch22

        return [float(v) for v in reference_catch22.ref_catch24(series)], "c-transliteration"


def main() -> None:
    rng = np.random.default_rng(SEED)
    records = []
    source = None
    for i in range(N_SERIES):
        series = make_series(rng, i)
        values, source = reference_values(series)
        # downstream consumers always see the finite-fallback output
        values = [v if np.isfinite(v) else 0.0 for v in values]
        records.append({"series": [float(v) for v in series], "expected": values})
    OUT.parent.mkdir(exist_ok=True)
    OUT.write_text(json.dumps({"source": source, "seed": SEED, "cases": records}))
    print(f"wrote {len(records)} cases from {source} to {OUT}")


if __name__ == "__main__":
    main()
