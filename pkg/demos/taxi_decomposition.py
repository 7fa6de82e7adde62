"""Communicating structure of the misspecified taxi.

The grid has 500 encoded states, but 100 of them put the passenger at their
own destination and are never reached from the start.  The diameter is then
infinite, while the diameter of the communicating part stays finite.
"""

from tucrl import decompose, make_taxi, optimal_gain

taxi = make_taxi(misspecified=True)
dec = decompose(taxi)
print(f"states: {taxi.n_states}, actions: {taxi.max_actions}")
print(f"communicating states |S^C| = {dec.communicating.size}")
print(f"transient states     |S^T| = {dec.transient.size}")
print(f"diameter D   = {dec.diameter}")
print(f"diameter D^C = {dec.diameter_c:.2f}")
print(f"max support size in S^C = {dec.gamma_c}")
print(f"optimal gain g* = {optimal_gain(taxi):.4f}")
