# Bundled synthetic suite specs
