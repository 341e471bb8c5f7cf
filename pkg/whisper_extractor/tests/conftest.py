import os

# Inference here must never touch the network: weights are expected in the
# local cache, and without this flag a cache miss stalls through retries
# instead of failing fast (the acceptance tests skip cleanly on a miss).
os.environ.setdefault("HF_HUB_OFFLINE", "1")
