# coding: utf-8

# # Metrics from a confusion matrix
#
# Every number in a results table can be regenerated from four counts. Here we feed
# the test-set confusion matrices of the four models through the evaluation module
# and print the same layout as the comparison tables.

# %%

from hybridct import ConfusionMatrix, report_from_confusion
from hybridct.report import class_table, performance_table, summary_row

matrices = {
    "VGG16": ConfusionMatrix(tp=161, fp=18, fn=25, tn=169),
    "DenseNet121": ConfusionMatrix(tp=170, fp=11, fn=16, tn=176),
    "MobileNetV2": ConfusionMatrix(tp=171, fp=7, fn=15, tn=180),
    "Proposed Hybrid Model": ConfusionMatrix(tp=182, fp=0, fn=4, tn=187),
}
reports = [report_from_confusion(cm, name) for name, cm in matrices.items()]

# %%

print(performance_table(reports))
print(class_table(reports))

# The hybrid row reads accuracy / weighted precision / weighted recall / weighted F1:

# %%

print(summary_row(reports[-1]))

# Weighted recall is always equal to accuracy for a two-class problem, since each
# class recall is weighted by its own support:

# %%

for r in reports:
    print(f"{r.name:24s} accuracy={r.accuracy:.6f} weighted recall={r.weighted['recall']:.6f}")
