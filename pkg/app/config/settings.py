"""
Application settings and configuration
"""

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Settings:
    """Application settings"""

    # Toolkit metadata
    APP_TITLE: str = "Interface Averaging Toolkit"
    APP_VERSION: str = "1.0.0"

    # Execution Configuration
    WORKERS: int = int(os.getenv('WORKERS', '1'))
    BATCH_SIZE: int = int(os.getenv('BATCH_SIZE', '500'))
    OUTPUT_DIR: str = os.getenv('OUTPUT_DIR', 'results')
    MEMORY_BUDGET_MB: int = int(os.getenv('MEMORY_BUDGET_MB', '2048'))

    # Time-stepping Configuration
    STEP_SAFETY: float = float(os.getenv('STEP_SAFETY', '0.1'))
    DIVERGENCE_BOUND: float = float(os.getenv('DIVERGENCE_BOUND', '1e8'))
    EXCURSION_RESOLUTION: float = 0.02
    CENSORING_CAP_FACTOR: float = 50.0
    MAX_CENSORED_FRACTION: float = 0.01

    # Quadrature Configuration
    QUAD_ABS_TOL: float = float(os.getenv('QUAD_ABS_TOL', '1e-9'))
    MAX_TRUNCATION_RADIUS: float = float(os.getenv('MAX_TRUNCATION_RADIUS', '1e4'))
    INITIAL_TRUNCATION_RADIUS: float = 8.0
    CESARO_U_MAX: float = float(os.getenv('CESARO_U_MAX', '2000'))
    CESARO_STEP: float = float(os.getenv('CESARO_STEP', '0.01'))
    CESARO_TOLERANCE: float = 1e-3
    PSD_JITTER: float = float(os.getenv('PSD_JITTER', '1e-10'))

    # Local time Configuration
    BAND_FACTOR: float = 2.0

    # Validator Configuration
    MIN_BIN_POPULATION: int = 30
    CUTOFF_PLATEAU: float = 3.0
    CUTOFF_RADIUS: float = 5.0

    # Logging Configuration
    LOG_LEVEL: str = os.getenv('LOG_LEVEL', 'INFO')

    @classmethod
    def validate(cls) -> bool:
        """Validate settings that would make every run fail"""
        if cls.WORKERS < 1:
            print("Warning: WORKERS must be at least 1.")
            return False
        if cls.BATCH_SIZE < 1:
            print("Warning: BATCH_SIZE must be at least 1.")
            return False
        if not 0 < cls.STEP_SAFETY <= 1:
            print("Warning: STEP_SAFETY should lie in (0, 1].")
            return False
        return True


# Global settings instance
settings = Settings()
