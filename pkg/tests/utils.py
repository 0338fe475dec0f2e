import typing as t

import pytest

F = t.TypeVar("F", bound=t.Callable[..., t.Any])
T = t.TypeVar("T")


def parametrize_system(**kwargs: t.Any) -> t.Callable[[F], F]:
    """A decorator to parametrize system fixture."""

    def decorator(func: F) -> F:
        return t.cast(
            F,
            pytest.mark.parametrize(
                "system",
                [kwargs],
                ids=["system/" + "-".join(sorted(kwargs)) if kwargs else "system/default"],
                indirect=True,
            )(func),
        )

    return decorator


def parametrize_mesh(**kwargs: t.Any) -> t.Callable[[F], F]:
    """A decorator to parametrize mesh fixture."""

    def decorator(func: F) -> F:
        return t.cast(
            F,
            pytest.mark.parametrize(
                "mesh",
                [kwargs],
                ids=[f"mesh/{kwargs.get('base_step', 'default')}"],
                indirect=True,
            )(func),
        )

    return decorator


def parametrize_output_storage(kind: str, **kwargs: t.Any) -> t.Callable[[F], F]:
    """A decorator to parametrize output_storage fixture."""

    def decorator(func: F) -> F:
        return t.cast(
            F,
            pytest.mark.parametrize(
                "output_storage",
                [(kind, kwargs)],
                ids=["storage/" + kind],
                indirect=True,
            )(func),
        )

    return decorator
