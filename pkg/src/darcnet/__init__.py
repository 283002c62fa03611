"""Depth-aware recurrent convolutional networks on size-preserving grid tasks.

Modules: ``tensor`` (numpy autodiff), ``model`` (DARC / DAMP), ``optim``
(Muon, AdamW, schedule), ``taskgen`` (grid task families), ``trainer``,
``evaluator``, ``stats``, ``report``, ``checkpoint`` and ``cli``.
"""

__version__ = "0.1.0"
