"""Reference values computed once by tests/oracles.py and frozen here."""
import math

UNIFORM_EQ_CDF_AT_1 = 0.75
EXP_START_EMPTY_X_AT_2 = 0.4323323583816936  # 0.5 (1 - e^-2)
EXP_START_EMPTY_CDF_T2_A1 = 0.3160602794142789  # int_0^1 0.5 e^-u du
EXP_FILL_TIME_RATE_2 = 0.6931471805599453  # 2 (1 - e^-t) = 1
LOGNORMAL1_FILL_TIME_RATE_2 = 0.6867408046908757
LOGNORMAL1_EQ_DEPARTURE_RATE_T07 = 0.44301673411933673
LOGNORMAL1_EQ_WORKLOAD = 1.3591409142295225  # e / 2
EXP_EQ_WORKLOAD = 1.0
LOGNORMAL1_EQ_RESIDUAL_CDF_A1 = 0.6170750774535909

# root of 2 (t - 1 + e^-t) = 1: counts departures rather than head-count
DEPARTURE_INTEGRAL_ROOT_RATE_2 = 1.1982904373156584

UNIFORM_RENEWAL_AT_1 = math.exp(0.5)
