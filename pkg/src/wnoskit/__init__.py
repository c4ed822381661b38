"""wnoskit: centralized network-control programs compiled to distributed solvers.

The toolkit parses an abstract utility-maximization program written
against a network element schema, instantiates its set-valued elements,
splits the dualized problem per protocol layer and per entity, lifts
the result back to reusable role templates, and executes the generated
solvers on a slotted SINR network simulator.
"""

__version__ = "0.1.0"
