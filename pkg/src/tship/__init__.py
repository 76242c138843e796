"""Approximate uncapacitated transshipment by soft-max gradient descent."""
from .graph import ArcSystem, make_arc_system, load_instance, parse_instance
from .descent import solve, DescentConfig
from .oracle import ExactOracle, SpannerOracle
from .spanner import build_spanner
from .sssp import single_source_shortest_path
from .models import simulate_clique, simulate_stream

__all__ = ["ArcSystem", "make_arc_system", "load_instance", "parse_instance",
           "solve", "DescentConfig", "ExactOracle", "SpannerOracle", "build_spanner",
           "single_source_shortest_path", "simulate_clique", "simulate_stream"]
__version__ = "0.1.0"
