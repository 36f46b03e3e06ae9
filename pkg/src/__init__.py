# Semantic map-based camera localization
