"""Reproduce the published comparison scores from their confusion counts.

The reference evaluation reports TN/FP/FN/TP counts alongside four scores
(TPR, ACC, F1, F2) for four models on two real-event datasets. The scores
are pure arithmetic on the counts, so the table regenerates exactly.

Run with: python3 demos/03_score_table.py
"""

from stnowcast import ConfusionCounts, scores

ROWS = [
    ("scearthquake", "MLP-AE", 2019, 2038, 67, 129),
    ("scearthquake", "LSTM-AE", 3572, 393, 221, 67),
    ("scearthquake", "GCN-LSTM", 2572, 1427, 139, 115),
    ("scearthquake", "GTrans", 3109, 890, 131, 123),
    ("nymotorcrash", "MLP-AE", 3802, 2778, 58, 82),
    ("nymotorcrash", "LSTM-AE", 4708, 1857, 96, 59),
    ("nymotorcrash", "GCN-LSTM", 3049, 2347, 470, 854),
    ("nymotorcrash", "GTrans", 3255, 2038, 526, 901),
]

header = (f"{'dataset':<14}{'model':<10}{'tn':>6}{'fp':>6}{'fn':>6}{'tp':>6}"
          f"{'tpr':>9}{'acc':>9}{'f1':>9}{'f2':>9}")
print(header)
print("-" * len(header))
for dataset, model, tn, fp, fn, tp in ROWS:
    s = scores(ConfusionCounts(tn=tn, fp=fp, fn=fn, tp=tp))
    print(f"{dataset:<14}{model:<10}{tn:>6}{fp:>6}{fn:>6}{tp:>6}"
          f"{s['tpr']:>9.4f}{s['acc']:>9.4f}{s['f1']:>9.4f}{s['f2']:>9.4f}")

# F2 weighs missed extremes (fn) more heavily than false alarms (fp), which
# matters when the positive class is rare and recall is the priority:
# F1 = tp / (tp + (fp + fn) / 2), F2 = tp / (tp + 0.2 fp + 0.8 fn).
print()
print("Note how GCN-LSTM on nymotorcrash trades false positives for recall:")
c = ConfusionCounts(tn=3049, fp=2347, fn=470, tp=854)
s = scores(c)
print(f"  tpr {s['tpr']:.4f} but acc only {s['acc']:.4f}; "
      f"f2 {s['f2']:.4f} rewards the recall")
