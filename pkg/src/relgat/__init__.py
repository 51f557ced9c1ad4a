"""Relation extraction as classification over dependency sub-graphs.

A sentence with two marked entities is turned into three small graphs
derived from its dependency parse (the shortest path between the
entities plus one neighborhood graph per entity). Each graph is encoded
with a BiLSTM, updated by a graph attention (or graph convolution)
layer that can consume edge features, pooled into a fixed-length
vector, and classified into one of 19 directed relation labels.
"""

__version__ = "0.1.0"
