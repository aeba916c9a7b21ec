"""Smoke test for the rulefuse extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/rulefuse-*.whl
"""

import json
import tempfile
from pathlib import Path

import rulefuse


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    assert rulefuse.pirads_rule("wg") == 63
    assert rulefuse.pirads_rule("tz") == 31

    lin = rulefuse.fit_linear(31)
    assert lin.kind == "linear"
    assert close(lin.params, [0.6, 0.2, 0.2], 5e-4)
    assert close(lin.t_stats, [2.3664, 0.7888, 0.7888], 1e-3)
    assert json.loads(json.dumps(lin.to_dict()))["rule_number"] == 31

    stk = rulefuse.fit_stacking(63)
    assert stk.kind == "stacking" and stk.residual <= 1e-5

    rules = rulefuse.rejection_sample(64)
    assert 0 < rules.accepted_count == len(rules) <= 64
    assert len(rulefuse.simplex_grid(0.1)) == 66

    dims = (8, 8, 8)
    n = 8 * 8 * 8
    ramp = [i / (n - 1) for i in range(n)]
    t2w = rulefuse.ProbabilityVolume(ramp, dims)
    flat = rulefuse.ProbabilityVolume([0.5] * n, dims, (1.0, 1.0, 2.5))
    try:
        rulefuse.combine(t2w, flat, flat, rulefuse.LinearRule([1.0, 0.0, 0.0]))
    except ValueError as e:
        assert "spacing" in str(e)
    else:
        raise AssertionError("misaligned volumes accepted")

    combined = rulefuse.combine(t2w, t2w, t2w, rulefuse.LinearRule([0.2, 0.3, 0.5]))
    assert close(combined.values, ramp, 1e-12)
    mask = rulefuse.binarize(combined, threshold=0.5, min_region=0)
    assert mask.count() == n // 2
    report = rulefuse.evaluate(mask, mask)
    assert report["dsc"] == 1.0 and report["hd95_mm"] == 0.0

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "mask.json"
        mask.save(path)
        assert rulefuse.LabelVolume.load(path).values == mask.values

        spec = {"dims": [16, 16, 16], "n_lesions": 1, "radius_range": [2, 3], "fidelity": [1, 1, 0]}
        manifest = rulefuse.generate_phantom(Path(tmp) / "data", 6, seed=3, spec_json=json.dumps(spec))
        result = rulefuse.grid_search(manifest, step=0.5, split="all")
        assert len(result["rows"]) == 6
        best = result["rows"][0]
        print("best rule", best["rule"]["rule"], "mean DSC", round(best["mean_dsc"], 4))

    print("smoke test passed")


if __name__ == "__main__":
    main()
