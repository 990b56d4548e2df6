"""
Why average accuracy by character
=================================

Plain accuracy is dominated by frequent characters. Averaging the
per-character accuracies gives every polyphone one vote.
"""

from polyweight.training import report_from_predictions

# Character A is seen 100 times and almost always right; B once, and wrong.
chars = ["A"] * 100 + ["B"]
gold = ["x"] * 101
pred = ["x"] * 99 + ["y", "y"]

report = report_from_predictions(chars, gold, pred)
print(f"accuracy                        {report.accuracy:.4f}")
print(f"averaged accuracy by characters {report.averaged_accuracy_by_characters:.4f}")
for ch, (count, acc) in report.per_character.items():
    print(f"  {ch}: {count:>3} samples, accuracy {acc:.2f}")
