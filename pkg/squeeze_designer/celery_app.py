"""Celery application configuration."""
from celery import Celery
from squeeze_designer.config import Config

# Create Celery instance
celery_app = Celery(
    'squeeze_designer',
    broker=Config.CELERY_BROKER_URL,
    backend=Config.CELERY_RESULT_BACKEND,
    include=['squeeze_designer.tasks']
)

# Configure Celery; optimizations are CPU bound, so one task per worker process at a time
celery_app.conf.update(
    task_serializer=Config.CELERY_TASK_SERIALIZER,
    accept_content=Config.CELERY_ACCEPT_CONTENT,
    result_serializer=Config.CELERY_RESULT_SERIALIZER,
    timezone=Config.CELERY_TIMEZONE,
    enable_utc=Config.CELERY_ENABLE_UTC,
    task_always_eager=Config.CELERY_ALWAYS_EAGER,
    task_eager_propagates=True,
    worker_prefetch_multiplier=1,
    task_acks_late=True,
)

if __name__ == '__main__':
    celery_app.start()
