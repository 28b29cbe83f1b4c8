# lab/serializers.py
import math

from django.conf import settings
from rest_framework import serializers

from .models import ExperimentRun
from .services.evolve import DATUM_KINDS


NULL_STRINGS = ("none", "null", "")


def _require_finite(value, label="Value"):
    if value is not None and not math.isfinite(value):
        raise serializers.ValidationError(f"{label} must be finite")
    return value


def _is_null_string(data):
    return isinstance(data, str) and data.strip().lower() in NULL_STRINGS


def _split_list(text):
    """`[a, b]` or `a, b` from a config file into its item strings"""
    text = text.strip()
    if text.startswith("[") != text.endswith("]"):
        raise serializers.ValidationError(f"Unbalanced brackets in '{text}'")
    if text.startswith("["):
        text = text[1:-1].strip()
    if not text:
        return []
    return [item.strip() for item in text.split(",")]


class FiniteFloatField(serializers.FloatField):
    """FloatField that rejects nan and inf, and reads none/null as null where allowed"""

    def validate_empty_values(self, data):
        if self.allow_null and _is_null_string(data):
            data = None
        return super().validate_empty_values(data)

    def to_internal_value(self, data):
        return _require_finite(super().to_internal_value(data))


class FloatListField(serializers.ListField):
    """ListField that also takes the string form of a config file"""

    def validate_empty_values(self, data):
        if self.allow_null and _is_null_string(data):
            data = None
        return super().validate_empty_values(data)

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = _split_list(data)
        return super().to_internal_value(data)


# ================================================================
# EXPERIMENT CONFIG
# ================================================================

class ExperimentConfigSerializer(serializers.Serializer):
    """Validates a parsed experiment config file"""
    name = serializers.CharField(max_length=200, required=False, default="experiment")
    flux = FloatListField(child=FiniteFloatField(), min_length=3,
                          help_text="Ascending flux coefficients, [0, 0, -0.5] for -u^2/2")
    alpha_minus = FiniteFloatField()
    alpha_plus = FiniteFloatField()
    nu = FiniteFloatField(required=False, default=1.0)

    L = FiniteFloatField(required=False)
    N = serializers.IntegerField(required=False)
    dt = FiniteFloatField(required=False, allow_null=True, default=None)
    t_end = FiniteFloatField()
    record_every = FiniteFloatField(required=False, default=0.1)
    dense_record_until = FiniteFloatField(required=False, default=0.0,
                                          help_text="Record every step up to this time")

    datum = serializers.ChoiceField(choices=DATUM_KINDS, default="deriv_bump")
    amplitude = FiniteFloatField()
    x0 = FiniteFloatField(required=False, default=0.0)
    w0 = FiniteFloatField(required=False, default=1.0)
    separation = FiniteFloatField(required=False, allow_null=True, default=None)

    epsilon = FiniteFloatField(required=False, default=0.05)
    trial_times = FloatListField(child=FiniteFloatField(min_value=0.0), required=False, default=lambda: [0.0])
    snapshot_times = FloatListField(child=FiniteFloatField(min_value=0.0), required=False, default=list)
    energy_window = FloatListField(child=FiniteFloatField(min_value=0.0), required=False,
                                   min_length=2, max_length=2, allow_null=True, default=None)
    output_dir = serializers.CharField(required=False, allow_null=True, allow_blank=True, default=None)

    run_picard = serializers.BooleanField(required=False, default=True)
    run_linop_checks = serializers.BooleanField(required=False, default=True)
    project_defect = serializers.BooleanField(required=False, default=True)

    def validate_flux(self, value):
        if value[-1] == 0.0:
            raise serializers.ValidationError("Leading flux coefficient must be nonzero")
        return value

    def validate_nu(self, value):
        if value <= 0:
            raise serializers.ValidationError("Viscosity must be positive")
        return value

    def validate_L(self, value):
        if value <= 0:
            raise serializers.ValidationError("Domain half-width must be positive")
        return value

    def validate_N(self, value):
        if value < 16 or value & (value - 1):
            raise serializers.ValidationError("N must be a power of two, at least 16")
        return value

    def validate_dt(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError("Time step must be positive")
        return value

    def validate_t_end(self, value):
        if value <= 0:
            raise serializers.ValidationError("t_end must be positive")
        return value

    def validate_record_every(self, value):
        if value <= 0:
            raise serializers.ValidationError("record_every must be positive")
        return value

    def validate_dense_record_until(self, value):
        if value < 0:
            raise serializers.ValidationError("dense_record_until must be non-negative")
        return value

    def validate_w0(self, value):
        if value <= 0:
            raise serializers.ValidationError("Datum width must be positive")
        return value

    def validate_epsilon(self, value):
        if not 0 < value <= 1:
            raise serializers.ValidationError("epsilon must lie in (0, 1]")
        return value

    def validate(self, data):
        if data['alpha_plus'] <= data['alpha_minus']:
            raise serializers.ValidationError({'alpha_plus': "alpha_plus must exceed alpha_minus"})
        for key in ('trial_times', 'snapshot_times'):
            late = [t for t in data.get(key) or [] if t > data['t_end']]
            if late:
                raise serializers.ValidationError({key: f"times {late} exceed t_end"})
        window = data.get('energy_window')
        if window and not window[0] < window[1]:
            raise serializers.ValidationError({'energy_window': "window must be increasing"})
        if data.get('L') is None:
            data['L'] = settings.LAB['L']
        if data.get('N') is None:
            data['N'] = settings.LAB['N']
        return data


class ExperimentRunSerializer(serializers.ModelSerializer):
    """Read-only view of a recorded run"""

    class Meta:
        model = ExperimentRun
        fields = [
            'id', 'created_at', 'name', 'status', 'exit_code', 'output_dir',
            'y0', 'omega', 'fitted_M', 'fitted_Tstar', 't_star', 'sigma_hat',
            'message', 'duration_seconds', 'sweep_axis', 'sweep_value',
        ]
        read_only_fields = fields
