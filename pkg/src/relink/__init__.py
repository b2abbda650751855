"""relink: MUX-based netlist locking and an oracle-less link-prediction attack.

Lock gate-level BENCH netlists with random MUX key-gates or key-controlled
routing blocks, convert locked designs into attack graphs, train a graph
classifier on enclosing subgraphs, and recover the hidden links (and key)
without an oracle.
"""

__version__ = "0.1.0"
