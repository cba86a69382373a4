"""
sasopt: language-model agents as gradient-free optimizers.

Benchmark functions, baseline optimizers, the numeric-optimization chat
protocol, a closed-form table-tennis surrogate, and the
Summarize/Analyze/Synthesize self-improvement loop.

Licensed under the Apache License, Version 2.0
"""

__version__ = "0.1.0"
