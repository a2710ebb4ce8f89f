"""Language-based audio retrieval toolkit.

Trains a small audio embedding tower against fixed text embeddings,
ranks audio clips for free-form text queries, and scores retrieval
(R@k, mAP@10) and captioning outputs (BLEU, ROUGE-L, METEOR-lite,
CIDEr-D, SPIDEr).
"""

__version__ = "0.1.0"
