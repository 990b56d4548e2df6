"""
The weighted softmax, step by step
==================================

A plain softmax spreads probability over every phoneme in the inventory.
The weighted softmax multiplies each exponential by a weight before
normalizing, so a zero weight removes a class and a small weight damps it.
"""

import numpy as np

from polyweight.head import conditional_weights, weighted_softmax
from polyweight.layers import softmax

labels = ["ㄨㄟ2", "ㄨㄟ4", "ㄉㄜ˙", "ㄔㄤ2", "ㄓㄤ3"]
logits = np.array([0.3, 0.1, 2.0, 1.5, -0.5])

# Unrestricted: the model could answer a reading that the character does not have.
print("plain softmax   ", np.round(softmax(logits), 3))

# Hard mask for 為: only its two readings survive.
w_h = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
print("hard mask       ", np.round(weighted_softmax(logits, w_h), 3))

# Learned soft weights pass through a sigmoid and scale the surviving classes.
# Here the context favours the second reading.
w_s = np.array([-2.0, 2.0, 0.0, 0.0, 0.0])
w_c = conditional_weights(w_s, w_h)
print("conditional w_c ", np.round(w_c, 3))
print("weighted softmax", np.round(weighted_softmax(logits, w_c), 3))

# Scaling all weights by a constant changes nothing: only ratios matter.
print("w_c * 10        ", np.round(weighted_softmax(logits, 10 * w_c), 3))

best = labels[int(np.argmax(weighted_softmax(logits, w_c)))]
print("prediction:", best)
