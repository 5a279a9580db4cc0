"""Multi-domain behavioral pre-training pipeline for sequential
recommendation at desk scale: corpus construction, sequence mixing, prompt
materialization, a warmup-stable-annealing training schedule, a compact
trainable recommender, and the ranking evaluation protocol."""

__version__ = "0.1.0"
