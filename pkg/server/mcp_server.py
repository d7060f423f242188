"""
SpecLoRA MCP Server Implementation

This server exposes the spectral-analysis and verification operations of
speclora as Model Context Protocol tools and prompts.
"""

import asyncio
import json
import logging
from typing import Any, Dict, List

from mcp.server import NotificationOptions, Server
from mcp.server.models import InitializationOptions
from mcp.server.stdio import stdio_server
from mcp.types import (
    GetPromptResult,
    Prompt,
    PromptArgument,
    PromptMessage,
    TextContent,
    Tool,
)

from speclora.config import configure_logging
from speclora.errors import SpecLoraError
from speclora.gradcheck import run_gradcheck
from speclora.serialization import load_container
from speclora.spectral import analyze_pairs, spectrum_summary

logger = logging.getLogger(__name__)

SERVER_NAME = "speclora-server"
SERVER_VERSION = "1.0.0"

TOOLS = [
    Tool(
        name="analyze_containers",
        description="Compare singular spectra and singular-vector alignment of two weight containers",
        inputSchema={
            "type": "object",
            "properties": {
                "pre_dir": {"type": "string", "description": "Pre-trained weight container directory"},
                "ft_dir": {"type": "string", "description": "Fine-tuned weight container directory"},
                "match": {"type": "string", "description": "Glob over tensor names (e.g. layer.0.*)"},
            },
            "required": ["pre_dir", "ft_dir"],
        },
    ),
    Tool(
        name="spectrum_summary",
        description="Spectral entropy, effective rank and norms of one tensor in a container",
        inputSchema={
            "type": "object",
            "properties": {
                "container_dir": {"type": "string", "description": "Weight container directory"},
                "tensor": {"type": "string", "description": "Tensor name (e.g. layer.0.q)"},
            },
            "required": ["container_dir", "tensor"],
        },
    ),
    Tool(
        name="run_gradcheck",
        description="Check the adapter backward pass against central finite differences",
        inputSchema={
            "type": "object",
            "properties": {
                "seed": {"type": "integer", "description": "Random seed"},
                "cases": {"type": "integer", "description": "Number of random instances"},
            },
        },
    ),
]


class SpecLoraMCPServer:
    """
    A Model Context Protocol server for spectral weight analysis.

    This server provides:
    - Tools: container comparison, single-tensor summaries, gradient checks
    - Prompts: a template for interpreting a comparison report
    """

    def __init__(self):
        """Initialize the SpecLoRA MCP Server"""
        self.server = Server(SERVER_NAME)
        self._setup_request_handlers()
        logger.info("SpecLoRA MCP Server initialized")

    def analyze_containers(self, pre_dir: str, ft_dir: str, match: str = "*") -> List[Dict[str, Any]]:
        """Spectral reports for tensors present in both containers whose names match the glob"""
        pre = load_container(pre_dir)
        ft = load_container(ft_dir)
        return [report.model_dump(mode="json") for report in analyze_pairs(pre.tensors, ft.tensors, match)]

    def spectrum_summary(self, container_dir: str, tensor: str) -> Dict[str, float]:
        """Norms, entropy and effective rank of one tensor in a container"""
        container = load_container(container_dir)
        if tensor not in container:
            raise SpecLoraError(f"Unknown tensor '{tensor}'. Available: {', '.join(container.names())}")
        return spectrum_summary(container[tensor])

    def run_gradcheck(self, seed: int = 0, cases: int = 20) -> Dict[str, Any]:
        """Condensed finite-difference gradient check"""
        result = run_gradcheck(seed=seed, cases=cases)
        return {
            "seed": result.seed,
            "cases": len(result.cases),
            "max_rel_error": result.max_rel_error,
            "passed": result.passed,
        }

    async def dispatch(self, name: str, arguments: Dict[str, Any]) -> List[TextContent]:
        """
        Execute a tool with given arguments.

        Args:
            name: The name of the tool to execute
            arguments: Dictionary of arguments for the tool

        Returns:
            List containing the tool result as JSON text
        """
        logger.info(f"Calling tool: {name} with arguments: {arguments}")
        arguments = arguments or {}
        try:
            if name == "analyze_containers":
                payload = self.analyze_containers(
                    arguments["pre_dir"], arguments["ft_dir"], arguments.get("match", "*")
                )
            elif name == "spectrum_summary":
                payload = self.spectrum_summary(arguments["container_dir"], arguments["tensor"])
            elif name == "run_gradcheck":
                payload = self.run_gradcheck(int(arguments.get("seed", 0)), int(arguments.get("cases", 20)))
            else:
                return [TextContent(type="text", text=f"Error: Unknown tool '{name}'")]
        except KeyError as e:
            return [TextContent(type="text", text=f"Error: missing argument {e}")]
        except (SpecLoraError, OSError) as e:
            logger.error(f"Tool {name} failed: {e}")
            return [TextContent(type="text", text=f"Error: {e}")]

        return [TextContent(type="text", text=json.dumps(payload, indent=2))]

    def _setup_request_handlers(self):
        """Set up handlers for MCP protocol requests"""

        @self.server.list_tools()
        async def handle_list_tools() -> List[Tool]:
            """
            List available tools.

            Returns:
                List of available tools
            """
            logger.info("Listing available tools")
            return TOOLS

        @self.server.call_tool()
        async def handle_call_tool(name: str, arguments: Dict[str, Any]) -> List[TextContent]:
            """
            Handle tool calls.

            Args:
                name: The name of the tool to call
                arguments: Arguments for the tool

            Returns:
                List of content items with the tool result
            """
            return await self.dispatch(name, arguments)

        @self.server.list_prompts()
        async def handle_list_prompts() -> List[Prompt]:
            """
            List available prompts.

            Returns:
                List of available prompts
            """
            logger.info("Listing available prompts")
            return [
                Prompt(
                    name="spectral_review",
                    description="Interpret how fine-tuning changed the spectrum of a weight matrix",
                    arguments=[
                        PromptArgument(
                            name="tensor",
                            description="Tensor name the report refers to",
                            required=True,
                        )
                    ],
                ),
            ]

        @self.server.get_prompt()
        async def handle_get_prompt(name: str, arguments: Dict[str, str]) -> GetPromptResult:
            """
            Get a prompt by name.

            Args:
                name: The name of the prompt
                arguments: Arguments for the prompt

            Returns:
                Prompt result with messages
            """
            logger.info(f"Getting prompt: {name} with arguments: {arguments}")
            if name != "spectral_review":
                raise ValueError(f"Unknown prompt: {name}")

            tensor = (arguments or {}).get("tensor", "")
            return GetPromptResult(
                description=f"Spectral review of {tensor}",
                messages=[
                    PromptMessage(
                        role="user",
                        content=TextContent(
                            type="text",
                            text=(
                                f"Run analyze_containers for {tensor}. Report which singular values were "
                                "amplified, which singular directions lost alignment, and how the "
                                "effective rank moved."
                            ),
                        ),
                    )
                ],
            )

    async def run(self):
        """Run the MCP server using stdio transport"""
        logger.info("Starting SpecLoRA MCP Server...")
        async with stdio_server() as (read_stream, write_stream):
            await self.server.run(
                read_stream,
                write_stream,
                InitializationOptions(
                    server_name=SERVER_NAME,
                    server_version=SERVER_VERSION,
                    capabilities=self.server.get_capabilities(
                        notification_options=NotificationOptions(),
                        experimental_capabilities={},
                    ),
                ),
            )


async def serve():
    configure_logging()
    server = SpecLoraMCPServer()
    await server.run()


def main():
    """Main entry point for the server"""
    asyncio.run(serve())


if __name__ == "__main__":
    main()
