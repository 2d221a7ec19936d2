"""Thermal-noise analysis of switched-capacitor circuits.

Submodules: ``netlist`` (input formats), ``capnet`` (capacitor-only views),
``bode`` (three-capacitance variance estimate), ``transfer`` (cross-phase
budgets), ``oracle`` (frequency-domain reference), ``mcsim`` (transient Monte
Carlo) and ``cli``.
"""

__version__ = "0.1.0"
