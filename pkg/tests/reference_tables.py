"""Target metric tables for the four test-set confusion matrices.

Counts are (tp, fp, fn, tn) with COVID positive. Percentages as printed.
"""

CONFUSION = {
    "VGG16": (161, 18, 25, 169),
    "DenseNet121": (170, 11, 16, 176),
    "MobileNetV2": (171, 7, 15, 180),
    "Hybrid": (182, 0, 4, 187),
}

# accuracy, weighted precision, weighted recall, weighted F1
SUMMARY = {
    "VGG16": (88.47, 88.53, 88.47, 88.47),
    "DenseNet121": (92.76, 92.79, 92.76, 92.76),
    "MobileNetV2": (94.10, 94.18, 94.10, 94.10),
    "Hybrid": (98.93, 98.95, 98.93, 98.93),
}

# (precision, recall, f1) for COVID then non-COVID
CLASSWISE = {
    "VGG16": ((89.94, 86.56, 88.22), (87.11, 90.37, 88.71)),
    "DenseNet121": ((93.92, 91.40, 92.64), (91.67, 94.12, 92.88)),
    "MobileNetV2": ((96.07, 91.94, 93.96), (92.31, 96.26, 94.24)),
    "Hybrid": ((100.00, 97.85, 98.91), (97.91, 100.00, 98.94)),
}
