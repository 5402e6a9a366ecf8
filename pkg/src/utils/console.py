from __future__ import annotations

from typing import Any, Dict, Iterable

from rich.box import ROUNDED
from rich.console import Console
from rich.table import Table


class ConsoleUI:
    """Lightweight console UI utilities for the command-line runner."""

    def __init__(self, console: Console | None = None) -> None:
        self.console = console or Console()

    # Message helpers
    def success(self, msg: str) -> None:
        self.console.print(f"[green]{msg}[/green]")

    def warn(self, msg: str) -> None:
        self.console.print(f"[yellow]{msg}[/yellow]")

    def error(self, msg: str) -> None:
        self.console.print(f"[red]{msg}[/red]")

    def plain(self, text: str) -> None:
        """Pre-rendered text, written as-is"""
        self.console.file.write(text)

    # Tables
    def issues_table(self, issues: Iterable[Any], title: str = "Config issues") -> None:
        table = Table(title=title, show_header=True, header_style="bold", box=ROUNDED)
        table.add_column("Location", justify="left")
        table.add_column("Problem", justify="left")
        for issue in issues:
            table.add_row(issue.location, issue.message)
        self.console.print(table)

    def key_value_table(self, data: Dict[str, Any], title: str = "Run") -> None:
        table = Table(title=title, show_header=False, box=ROUNDED)
        table.add_column("Key", style="dim")
        table.add_column("Value")
        for k, v in data.items():
            table.add_row(str(k), str(v))
        self.console.print(table)
