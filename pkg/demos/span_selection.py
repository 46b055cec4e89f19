# Recurring span selection: mask repeated spans, keep one, point back at it.
import numpy as np

from splat.rss import find_recurring_spans, make_instance
from splat.schema_input import tokenize
from splat.synth import gen_synth

text = ("we flew to new york in may . new york was cold , so we left new york early "
        "and took the train to boston . boston was warm .")
for c in find_recurring_spans(tokenize(text)):
    print(" ".join(c.surface), "->", c.occurrences)

inst = make_instance(text, np.random.default_rng(0))
print()
print(" ".join(inst.tokens))
for pos, s, e, cluster in inst.queries:
    print(f"query at {pos} -> answer tokens {s}..{e} ({' '.join(inst.tokens[s:e + 1])})")

# the synthetic pre-training corpus plants recurring spans on purpose
_, _, docs = gen_synth(0, 2, 4)
inst = make_instance(docs[0], np.random.default_rng(1))
print()
print(docs[0])
print("clusters:", [" ".join(c.surface) for c in inst.clusters], " queries:", len(inst.queries))
