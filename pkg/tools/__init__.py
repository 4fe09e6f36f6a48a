# levylab orchestration: run, sweep, check-kernel and norms
