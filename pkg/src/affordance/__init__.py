"""Visual affordances from egocentric video at desk scale.

Submodules: ``geometry`` (homographies, mixtures, smoothing), ``world``
(2D articulated-object simulator), ``extract`` (labels from human videos),
``model`` (affordance network and its losses), ``learn`` (robot-learning
paradigms) and ``cli``.
"""

__version__ = "0.1.0"
