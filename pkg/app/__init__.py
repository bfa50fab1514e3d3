# Конструктор эвристик: основной пакет приложения
