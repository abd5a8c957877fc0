# KGMP semiclassical lab package.
