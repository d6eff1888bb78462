from typing import Annotated

import typer
from bake import command
from bakelib import PythonSpace
from bakelib.space.lib import BaseLibSpace


class MyBakebook(PythonSpace, BaseLibSpace):
    @command()
    def test_python(
        self,
        slow: Annotated[
            bool, typer.Option("--slow", "-s", help="Run the acceptance-scale benchmark checks")
        ] = False,
    ):
        tests_path = "tests/python"
        coverage_path = "python/lensbench"
        if slow:
            self.ctx.run(f"uv run pytest -m slow {tests_path}")
            return
        self._test(tests_paths=tests_path, coverage_path=coverage_path)

    def test(self) -> None:
        self.test_python()

    @command()
    def bench(
        self,
        out: Annotated[str, typer.Option(help="Output directory")] = "lensbench-out",
        jobs: Annotated[int, typer.Option(help="Worker processes")] = 1,
    ):
        """Default benchmark, scorer ablation and CSA sweep."""
        for step in ("run", "ablate", "sweep"):
            self.ctx.run(f"uv run lensbench --out {out} --jobs {jobs} {step}")

    @command()
    def gen_docs(self):
        self.ctx.run("uv run typer lensbench.cli utils docs --name lensbench --output docs/CLI.md")


bakebook = MyBakebook()
