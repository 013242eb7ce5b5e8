"""SQLAlchemy models.

Import all models here so Alembic can detect them for migration auto-generation.
"""
