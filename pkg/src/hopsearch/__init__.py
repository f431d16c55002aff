"""Two-hop passage retrieval engine.

Retrieval substrates (inverted index, exact inner-product search), a
trainable hashing dual encoder, single-hop and two-hop retrieval pipelines
(BM25, rerank, dense, iterative dense, hybrid), and an EM@k evaluation
harness.
"""

__version__ = "0.1.0"
