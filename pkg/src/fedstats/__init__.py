"""Desk-scale simulator for interactive private federated statistics.

Devices hold event streams behind budget accountants and local randomizers;
a minimum-cohort secret-share aggregator releases only batch sums; a server-side
engine debiases histograms and drives adaptive n-gram discovery; a privacy
calculator certifies the aggregate guarantees.
"""

__version__ = "0.1.0"
