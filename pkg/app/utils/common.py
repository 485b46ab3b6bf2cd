import logging
import logging.config
import os
from app.dependencies import get_settings

def setup_logging():
    """
    Sets up logging for the application using a configuration file.
    This ensures standardized logging across the entire application.
    """
    settings = get_settings()
    # Construct the path to the logging config, assuming it's in the project's root.
    logging_config_path = settings.logging_config
    if not os.path.isabs(logging_config_path):
        logging_config_path = os.path.join(os.path.dirname(__file__), '..', '..', logging_config_path)
    # Normalize the path to handle any '..' correctly.
    normalized_path = os.path.normpath(logging_config_path)
    if os.path.exists(normalized_path):
        logging.config.fileConfig(normalized_path, disable_existing_loggers=False)
    else:
        logging.basicConfig(format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    logging.getLogger("app").setLevel(settings.log_level.upper())
