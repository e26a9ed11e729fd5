from rest_framework import serializers

from .network import SUPPORTED_GLOBAL_FEATURES


class StrictSerializer(serializers.Serializer):
    """Rejects keys that are not declared fields."""

    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError({"non_field_errors": [f"Expected a mapping, got {type(data).__name__}."]})
        unknown = sorted(set(data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({unknown[0]: ["Unknown configuration key."]})
        return super().to_internal_value(data)


class ModelSectionSerializer(StrictSerializer):
    n_points = serializers.IntegerField(min_value=1)
    input_dim = serializers.ChoiceField(choices=[2, 3])
    n_cfd = serializers.IntegerField(min_value=1)
    global_feature_size = serializers.ChoiceField(choices=list(SUPPORTED_GLOBAL_FEATURES))
    tail_mlp = serializers.ListField(child=serializers.IntegerField(min_value=1), allow_null=True, min_length=1)


class TrainSectionSerializer(StrictSerializer):
    learning_rate = serializers.FloatField()
    beta1 = serializers.FloatField()
    beta2 = serializers.FloatField()
    epsilon = serializers.FloatField()
    batch_size = serializers.IntegerField(min_value=2)
    epochs = serializers.IntegerField(min_value=1)
    log_every = serializers.IntegerField(min_value=1)

    def validate_learning_rate(self, value):
        if not value > 0:
            raise serializers.ValidationError("Must be positive.")
        return value

    def validate_epsilon(self, value):
        if not value > 0:
            raise serializers.ValidationError("Must be positive.")
        return value

    def validate(self, attrs):
        for name in ("beta1", "beta2"):
            if not 0 < attrs[name] < 1:
                raise serializers.ValidationError({name: ["Must lie strictly between 0 and 1."]})
        return attrs


class DataSectionSerializer(StrictSerializer):
    samples = serializers.IntegerField(min_value=1)
    radius_min = serializers.FloatField()
    radius_max = serializers.FloatField()
    radius_step = serializers.FloatField()
    radii = serializers.ListField(child=serializers.FloatField(), required=False, allow_null=True)
    n_surface = serializers.IntegerField(min_value=8, allow_null=True)
    stretch = serializers.FloatField(min_value=1.0)
    extent = serializers.FloatField(required=False, allow_null=True)
    jitter = serializers.FloatField(min_value=0.0, max_value=0.49)
    rho = serializers.FloatField()
    u_inf = serializers.FloatField()
    p0 = serializers.FloatField()
    mu = serializers.FloatField()

    def validate(self, attrs):
        for name in ("radius_min", "radius_step", "rho", "u_inf", "mu"):
            if not attrs[name] > 0:
                raise serializers.ValidationError({name: ["Must be positive."]})
        if attrs.get("extent") is not None and not attrs["extent"] > 0:
            raise serializers.ValidationError({"extent": ["Must be positive."]})
        if attrs["radius_max"] < attrs["radius_min"]:
            raise serializers.ValidationError({"radius_max": ["Must not be smaller than radius_min."]})
        for radius in attrs.get("radii") or []:
            if not radius > 0:
                raise serializers.ValidationError({"radii": ["Every radius must be positive."]})
        return attrs


class EvalSectionSerializer(StrictSerializer):
    stencil_k = serializers.IntegerField(min_value=6)
    relative_step = serializers.FloatField()


class GridSectionSerializer(StrictSerializer):
    global_features = serializers.ListField(
        child=serializers.ChoiceField(choices=list(SUPPORTED_GLOBAL_FEATURES)), min_length=1,
    )
    batch_sizes = serializers.ListField(child=serializers.IntegerField(min_value=2), min_length=1)
    memory_limit_mb = serializers.FloatField()


class RuntimeSectionSerializer(StrictSerializer):
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1)
    precision = serializers.ChoiceField(choices=["f32", "f64"])
    n_jobs = serializers.IntegerField()
    blas_threads = serializers.IntegerField(min_value=1)
    plots = serializers.BooleanField()


class PathsSectionSerializer(StrictSerializer):
    data = serializers.CharField(allow_null=True, required=False)
    out = serializers.CharField(allow_null=True, required=False)
    checkpoint = serializers.CharField(allow_null=True, required=False)
    input = serializers.CharField(allow_null=True, required=False)


class RunConfigSerializer(StrictSerializer):
    """The complete configuration of one command run."""

    model = ModelSectionSerializer()
    train = TrainSectionSerializer()
    data = DataSectionSerializer()
    eval = EvalSectionSerializer()
    grid = GridSectionSerializer()
    runtime = RuntimeSectionSerializer()
    paths = PathsSectionSerializer()
