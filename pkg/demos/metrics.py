# Fuzzy matching, joint goal accuracy and intent accuracy on hand-made turns.
from splat.dst_data import fuzzy_match, intent_accuracy, jga
from splat.schema_input import DialogueState

for a, b in [("Long Beach, CA", "long beach ca"), ("san francisco", "san fransisco"),
             ("boston", "austin"), ("", "")]:
    print(f"{a!r:>18} vs {b!r:<18} {fuzzy_match(a, b):.3f}")

gold = [DialogueState("FindRestaurants", {"city": "San Francisco", "price_range": "cheap"}),
        DialogueState("FindRestaurants", {"city": "San Francisco", "price_range": "cheap", "time": "6 pm"}),
        DialogueState("ReserveRestaurant", {"city": "Boston"})]
pred = [DialogueState("FindRestaurants", {"city": "san fransisco", "price_range": "cheap"}),
        DialogueState("FindRestaurants", {"city": "San Francisco", "price_range": "cheep", "time": "6 pm"}),
        DialogueState("FindRestaurants", {"city": "Boston", "time": "noon"})]
cats = [{"price_range"}] * 3  # categorical values must match exactly

print("jga fuzzy:", jga(pred, gold, cats), " exact:", jga(pred, gold, cats, mode="exact"))
print("intent accuracy:", intent_accuracy(pred, gold))
# turn 1: a one-letter city typo passes the 0.9 fuzzy threshold
# turn 2: "cheep" is a categorical miss; turn 3: an extra slot fails the turn
