"""
MCP Server Module

This module exposes speclora's spectral analysis and gradient verification
as Model Context Protocol tools.
"""

from .mcp_server import SpecLoraMCPServer

__all__ = ['SpecLoraMCPServer']
