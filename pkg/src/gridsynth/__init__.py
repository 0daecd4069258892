"""gridsynth: synthetic smart-meter data generation and privacy-utility
benchmarking."""

__version__ = "0.1.0"


def __getattr__(name):
    # lazy convenience re-exports; heavy submodules load on first use
    if name in ("FeatureTable", "build_labeled_table"):
        from . import features

        return getattr(features, name)
    if name in ("train_generator", "synthesize", "load_generator"):
        from . import generators

        return getattr(generators, name)
    if name in ("run", "load_config", "pareto_frontier"):
        from . import orchestrator

        return getattr(orchestrator, name)
    raise AttributeError(f"module 'gridsynth' has no attribute {name!r}")
