# levylab core components: grid, Levy operator, spaces, drifts, solver, verifiers, molecules, Holder probe
