"""
Evaluation reports and overlays
===============================

Reports hold one row per sample and mean / std / median aggregates for the
2-D pixel error and the 3-D error after back-projection through the depth
map. Two reports on the same split can be compared as percentage changes.
"""

from probe_sensing import evaluation
from probe_sensing.evaluation import EvalReport, compare_reports


def toy_report(mean_2d, mean_3d):
    agg = {"2d": {"mean": mean_2d, "std": 0.0, "median": mean_2d},
           "3d": {"mean": mean_3d, "std": 0.0, "median": mean_3d}}
    return EvalReport([{"sample_id": "x"}], agg, "test")


image_only = toy_report(55.2, 6.0)
fusion = toy_report(43.0, 3.5)
print(evaluation.format_table([("image only", ("image",), image_only),
                               ("fusion", ("image", "depth", "axis"), fusion)]))

# 55.2 -> 43.0 px is a 22.10% drop, 6.0 -> 3.5 mm a 41.67% drop
print(evaluation.format_delta_table(compare_reports(image_only, fusion)))

# for a trained checkpoint:
#   report = evaluation.evaluate("run/best.pt", "data", "test", report_dir="run/eval_test")
# writes report.json, report.txt and overlays/<sample_id>.png
