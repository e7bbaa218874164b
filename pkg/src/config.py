from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="PLAB_", extra="ignore")

    SERVICE_NAME: str = "p-potential-lab"
    VERSION: str = "0.1.0"
    LOG_LEVEL: str = "INFO"

    # quadrature / solver tolerances
    QUAD_TOL: float = 1e-10
    SOLVER_TOL: float = 1e-9
    MAX_ITER: int = 500
    EPS_START: float = 1e-2
    EPS_END: float = 1e-10
    EPS_FACTOR: float = 1e-2

    # 1.0 = uniform radial spacing
    GRADING_RATIO: float = 1.0

    OUTPUT_DIR: str = "out"
    SCHEMA_VERSION: int = 1

    # capacity to R: |cap_n - cap_{n+1}| < CAP_LIMIT_RTOL * cap_0
    CAP_LIMIT_RTOL: float = 1e-6

    # reverse Khas'minskii level spacing (ln of the exhaustion ratio)
    LEVEL_LOG_STEP: float = 0.25


settings = Settings()
