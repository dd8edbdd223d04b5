from hypothesis import HealthCheck, settings

settings.register_profile(
    "desk",
    deadline=None,  # single-core box; wall-time per example is noisy
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("desk")
