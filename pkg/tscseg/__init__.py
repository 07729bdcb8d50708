"""tscseg: иерархическая кластеризация переходных состояний для онлайн-сегментации задач."""

__version__ = "1.0.0"
