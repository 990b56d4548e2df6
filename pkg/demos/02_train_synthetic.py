"""
Training on the synthetic rule corpus
=====================================

The generator writes sentences in which a polyphone's reading follows from
its right neighbour's word class or from the POS tag fixed by its left
neighbour. 長 and 場 share two readings with opposite POS mappings, so only
a model that combines character and POS can get both right.

Pass a number of iterations on the command line (default 600) to trade
runtime for accuracy; the desk default is 2000.
"""

import sys
import time

from polyweight import DEFAULT_SPEC, EncoderConfig, TrainConfig, evaluate, init_model, make_synthetic_corpus
from polyweight import stratified_split, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 600

samples = make_synthetic_corpus(DEFAULT_SPEC, seed=0)
train_set, dev_set, test_set = stratified_split(samples, (10, 1, 1), seed=0)
print(f"{len(train_set)} train / {len(dev_set)} dev / {len(test_set)} test samples")
print("for example:", train_set[0])

# alphas (1,1,0): character x POS table plus character table, POS loss weight 0.1
model = init_model(train_set, EncoderConfig(), dict(alpha_cross=1, alpha_char=1, alpha_pos=0, beta=0.1),
                   seed=0, lexicon_samples=train_set + dev_set)
t0 = time.time()
result = train(model, train_set, dev_set, TrainConfig(max_iterations=iterations, validate_every=100),
               on_validate=lambda r: print(f"  iter {r['iteration']:>5}  loss {r['train_loss']:.3f}  "
                                           f"dev {100 * r['dev_accuracy']:.1f}%"))
print(f"trained in {time.time() - t0:.0f}s, best checkpoint at iteration {result.best.iteration}")

print()
print(evaluate(result.model, test_set).summary())

# The left cue decides 長 and 場: 很 marks an adjective, 會 a verb.
print()
for sentence, index in [("我很長了", 2), ("我會長了", 2), ("我很場了", 2), ("我會場了", 2)]:
    pred = result.model.predict(sentence, index)
    print(f"{sentence}  {sentence[index]} -> {pred.phoneme}  (POS {pred.pos_tag})")
