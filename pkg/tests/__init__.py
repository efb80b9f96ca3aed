# Tests for actionforecast
