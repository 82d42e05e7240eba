"""Optional numba acceleration; kernels run as plain Python when numba is absent."""
try:
    from numba import njit  # type: ignore
except ImportError:  # pragma: no cover - exercised only without numba

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap
