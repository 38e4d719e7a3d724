from resokit.cli.formats import CurveFormat
from resokit.lib.resonator import FRIDGE_CHAIN

DEFAULT_OUTPUT_DIR = '.'
DEFAULT_REPORT_NAME = 'report.json'
DEFAULT_MANIFEST_NAME = 'manifest.json'
DEFAULT_CURVE_FORMAT = CurveFormat.csv.value

# NbN film
DEFAULT_T_C = 12.0
DEFAULT_ALPHA_KINETIC = 0.0974
DEFAULT_FILM_THICKNESS = 100e-9
DEFAULT_CHAIN = FRIDGE_CHAIN

# Coplanar waveguide on silicon, in SI units
DEFAULT_WIDTH = 4e-6
DEFAULT_GAP = 2e-6
DEFAULT_EPSILON_R = 11.9
DEFAULT_SUBSTRATE_THICKNESS = 525e-6
DEFAULT_RESONATOR_LENGTH = 4.688e-3
DEFAULT_KINETIC_INDUCTANCE = 4.464e-8

DEFAULT_TLS_TEMPERATURE = 0.026
DEFAULT_SYNTH_POINTS = 1601
DEFAULT_SYNTH_SPAN_LINEWIDTHS = 10.0
DEFAULT_SYNTH_NOISE = 2e-5
DEFAULT_SEED = 0
