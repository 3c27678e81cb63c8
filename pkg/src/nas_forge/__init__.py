"""Hardware-aware architecture search around group-convolution inverted bottlenecks.

Submodules: ``core_ir`` (block IR, lowering, counting), ``ref_exec`` (numpy
reference execution), ``cost_model`` (analytical SIMD latency/energy),
``ppe_service`` (framed socket evaluation service), ``search_space``,
``search_engine``, ``pareto``, ``analyzer``, ``report`` and ``cli``.
"""

__version__ = "0.1.0"
