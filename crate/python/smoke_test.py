"""Smoke test for the adgve extension module.

Build and run:
    cargo build -p adgve-py --release
    cp target/release/libadgve.so python/adgve.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import adgve


def main():
    assert len(adgve.check_ids()) == 20
    assert len(adgve.catalog_checksum()) == 64
    assert adgve.parse_response("{'answer': Yes, 'confidence': 0.8}") == (True, 0.8)
    assert math.isclose(adgve.srcc([1, 2, 3], [3, 2, 1]), -1.0)
    assert adgve.split_clips(10, 3)[0] == (0, 4, 2)

    cfg = adgve.Config()
    cfg.vlm_mode = "oracle_stub"
    cfg.set("pipeline.num_clips", "2")

    clean, truth = adgve.gen_scenario(adgve.random_spec(7, 0.0))
    bad, bad_truth = adgve.gen_scenario(adgve.random_spec(11, 1.0))
    assert clean.validate() == []
    assert bad_truth.violations

    lane = adgve.lane_scores(clean, cfg)
    assert 0.0 <= lane["s_lane"] <= 1.0

    scorer = adgve.Scorer(cfg)
    report, bundle = scorer.score(clean, truth)
    bad_report, _ = scorer.score(bad, bad_truth)
    assert "error" not in report, report
    assert math.isclose(scorer.fuse(bundle), report["s_overall"], abs_tol=1e-12)
    assert report["s_overall"] > bad_report["s_overall"]

    rt = adgve.FeatureBundle.from_json(bundle.to_json())
    assert rt.s_lane == bundle.s_lane
    assert max(bundle.without("clip_checks").s_clip) == 0.0

    print(json.dumps({
        "clean": round(report["s_overall"], 4),
        "violating": round(bad_report["s_overall"], 4),
        "instructions": adgve.gen_instructions(2, seed=3),
    }))
    print("ok")


if __name__ == "__main__":
    main()
