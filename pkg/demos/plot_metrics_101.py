"""
Multi-label metrics on a toy prediction set
===========================================

Average precision per category, then the counting metrics after a 0.5
threshold.  Ties in score are broken by image index.
"""

import numpy as np
from srdl.metrics import average_precision, binarize, evaluate

# three images, two categories
scores = np.array([[0.9, 0.6],
                   [0.7, 0.8],
                   [0.2, 0.3]])
labels = np.array([[1, 1],
                   [0, 1],
                   [0, 1]])

# column 0 ranks the only positive first, column 1 has all positives
print("AP per category:", [average_precision(scores[:, c], labels[:, c]) for c in range(2)])

# the third image scores 0.3 on a true category, so recall drops
print(binarize(scores).astype(int))

report = evaluate(scores, labels, report_top3=True)
print(report.headline())
print(report.to_keyvalue())

# a category nobody carries is left out of mAP, with a warning
r = evaluate([[0.9, 0.1], [0.2, 0.3]], [[1, 0], [0, 0]])
print(r.mAP, r.warnings)
