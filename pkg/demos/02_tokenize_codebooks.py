"""
Per-channel codebooks: targets become tokens
============================================

The target samples of many windows, clustered with k-means channel by
channel, give each channel a codebook of K centroids. A window's target is
then described by one token per channel: the index of its nearest centroid.
"""

import os
import tempfile

import numpy as np

from lorm import (
    SynthConfig,
    WindowingConfig,
    compute_channel_stats,
    fit_codebook_set,
    generate_run,
    load_codebooks,
    normalize_window,
    save_codebooks,
    segment_windows,
    split_context_target,
    tokenize_window,
)

windowing = WindowingConfig(window_len=61, context_len=60, stride=30)
run = generate_run(
    SynthConfig(
        channels=2,
        duration_samples=20_000,
        degradation_onset=10_000,
        degradation_rate=0.0,
        seed=2,
    ),
    windowing,
)
windows = segment_windows(run.series, windowing)
stats = compute_channel_stats(run.series)

# collect every window's normalised target block
targets = [
    split_context_target(normalize_window(w, stats), windowing.context_len)[1]
    for w in windows
]

K = 6
books = fit_codebook_set(targets, k=K, seed=0, channel_names=run.series.channel_names)
for book in books.codebooks:
    cents = np.round(book.centroids.ravel(), 3)
    print(f"channel {book.channel_index}: centroids {cents}")

# tokenising a window picks the nearest centroid per channel
tokens = tokenize_window(targets[0], books)
print(f"first window tokens: {tokens.tokens}")

# token usage across the run: every centroid should earn its keep
counts = np.zeros((books.num_channels, K), dtype=int)
for t in targets:
    tv = tokenize_window(t, books)
    for c, tok in enumerate(tv.tokens):
        counts[c, tok] += 1
print("token histogram per channel:")
for c in range(books.num_channels):
    print(f"  ch{c}: {counts[c]}")

# the JSON file round-trips exactly
path = os.path.join(tempfile.mkdtemp(prefix="lorm_demo_"), "codebooks.json")
save_codebooks(books, path)
loaded = load_codebooks(path)
same = all(
    np.array_equal(a.centroids, b.centroids)
    for a, b in zip(books.codebooks, loaded.codebooks)
)
print(f"saved to {path}, reload exact: {same}")
