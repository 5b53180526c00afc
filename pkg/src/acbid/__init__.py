"""Strategic bidding toolkit for markets cleared by the SOCP-relaxed ACOPF."""

__version__ = "0.1.0"

from .netcase import NetworkCase, parse_case, segment_cost, hourly_demand  # noqa: F401
from .program import ConicProgram  # noqa: F401
from .mcp_primal import Bids, ScenarioFlags, build_mcp, solve_mcp  # noqa: F401
