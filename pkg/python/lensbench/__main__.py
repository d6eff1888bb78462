from __future__ import annotations

from lensbench.cli import main

if __name__ == "__main__":
    main()
