# levylab numerical lab
