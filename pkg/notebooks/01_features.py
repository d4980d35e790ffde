"""
From review text to tf-idf vectors
==================================

Tokenize a handful of reviews into unigrams and bigrams, build a small
vocabulary and project each review onto it.
"""

import numpy as np

from tritrain.features import build_vocab, count_terms, tokenize, vectorize

reviews = [
    "a great book with a great ending",
    "boring plot and a weak ending",
    "great value , works as described",
    "stopped working after a week",
]

# Tokens are lowercase unigrams followed by adjacent-pair bigrams.
print(tokenize(reviews[0]))

# Document frequency decides which terms survive; ties go to the
# lexicographically smaller term.
docs = [count_terms(r) for r in reviews]
vocab = build_vocab(docs, max_features=8)
for term, idf in zip(vocab.terms, vocab.idf):
    print(f"{term:>12}  idf={idf:.4f}")

# Every nonempty vector has unit length; unseen terms are dropped.
for text, doc in zip(reviews, docs):
    v = vectorize(doc, vocab)
    print(f"{len(v)} terms, norm {v.norm():.3f}  <- {text!r}")

print(vectorize(count_terms("nothing in common"), vocab))
print("dense:", np.round(vectorize(docs[0], vocab).to_dense(len(vocab)), 3))
