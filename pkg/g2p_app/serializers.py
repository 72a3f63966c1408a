from rest_framework import serializers

from .evaluation import CATEGORIES, SCHEMA_VERSION
from .noise import DEFAULT_GROUP_WEIGHTS, UNIFORM_OPS

MODES = ('baseline', 'nat', 'syn', 'adv', 'robust')


def _check_distribution(values, name):
    if abs(sum(values) - 1.0) > 1e-9:
        raise serializers.ValidationError({name: f'weights must sum to 1, got {sum(values)}'})


class ModelConfigSerializer(serializers.Serializer):
    layers = serializers.IntegerField(min_value=1, default=4)
    heads = serializers.IntegerField(min_value=1, default=4)
    d_model = serializers.IntegerField(min_value=1, default=128)
    d_ff = serializers.IntegerField(min_value=1, default=512)
    d_word = serializers.IntegerField(min_value=1, default=512)
    context_length = serializers.IntegerField(min_value=0, default=2)
    beam = serializers.IntegerField(min_value=1, default=4)
    max_decode_len = serializers.IntegerField(min_value=1, default=32)
    max_positions = serializers.IntegerField(min_value=2, default=64)
    conv_width = serializers.IntegerField(min_value=1, default=3)
    gate_bias_init = serializers.FloatField(default=-2.0)
    decoder_context_layers = serializers.ChoiceField(choices=['all', 'top'], default='all')
    length_penalty = serializers.FloatField(min_value=0.0, default=0.7)

    def validate(self, attrs):
        if attrs['d_model'] % attrs['heads']:
            raise serializers.ValidationError({'d_model': 'must be divisible by heads'})
        if attrs['conv_width'] % 2 == 0:
            raise serializers.ValidationError({'conv_width': 'must be odd'})
        return attrs


class OpWeightsSerializer(serializers.Serializer):
    vowel = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=3,
                                  max_length=3, default=list(UNIFORM_OPS))
    consonant = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=3,
                                      max_length=3, default=list(UNIFORM_OPS))

    def validate(self, attrs):
        _check_distribution(attrs['vowel'], 'vowel')
        _check_distribution(attrs['consonant'], 'consonant')
        return attrs


class NoiseConfigSerializer(serializers.Serializer):
    p = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.2)
    group_weights = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=3,
                                          max_length=3, default=list(DEFAULT_GROUP_WEIGHTS))
    op_weights = OpWeightsSerializer(required=False)

    def validate_group_weights(self, value):
        _check_distribution(value, 'group_weights')
        return value


class TrainConfigSerializer(serializers.Serializer):
    epsilon = serializers.FloatField(min_value=0.0, default=1.0)
    learning_rate = serializers.FloatField(min_value=0.0, default=1e-3)
    warmup_steps = serializers.IntegerField(min_value=1, default=100)
    batch_size = serializers.IntegerField(min_value=1, default=32)
    epochs = serializers.IntegerField(min_value=0, default=20)
    context_epochs = serializers.IntegerField(min_value=0, default=10)
    adv_mode = serializers.ChoiceField(choices=['off', 'on'], default='off')
    norm_scope = serializers.ChoiceField(choices=['sequence', 'token'], default='sequence')
    adv_weight = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    schedule = serializers.ChoiceField(choices=['two_step', 'joint', 'baseline'], default='two_step')
    beta1 = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    beta2 = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.98)
    adam_eps = serializers.FloatField(min_value=0.0, default=1e-9)
    dev_eval = serializers.BooleanField(default=True)


class PathsSerializer(serializers.Serializer):
    data_dir = serializers.CharField(allow_blank=True, default='')
    runs_dir = serializers.CharField(allow_blank=True, default='')
    misspellings = serializers.CharField(allow_blank=True, default='')


class RunConfigSerializer(serializers.Serializer):
    seed = serializers.IntegerField(min_value=0, default=0)
    mode = serializers.ChoiceField(choices=MODES, default='robust')
    model = ModelConfigSerializer()
    noise = NoiseConfigSerializer()
    train = TrainConfigSerializer()
    paths = PathsSerializer()


class EvalMetricsSerializer(serializers.Serializer):
    per = serializers.FloatField()
    wer = serializers.FloatField()
    counts = serializers.DictField(child=serializers.IntegerField())
    total_words = serializers.IntegerField()
    failures = serializers.IntegerField()
    multi_edit = serializers.IntegerField()
    noisy_words = serializers.IntegerField()
    phoneme_errors = serializers.IntegerField()
    reference_phonemes = serializers.IntegerField()
    group_wer = serializers.DictField(child=serializers.FloatField())
    group_shares = serializers.DictField(child=serializers.FloatField())

    def validate_counts(self, value):
        unknown = set(value) - set(CATEGORIES)
        if unknown:
            raise serializers.ValidationError(f'unknown categories: {sorted(unknown)}')
        return value


class EvalReportSerializer(serializers.Serializer):
    schema_version = serializers.SerializerMethodField()
    metadata = serializers.DictField()
    metrics = EvalMetricsSerializer(source='*')

    def get_schema_version(self, obj):
        return SCHEMA_VERSION


class WordResultSerializer(serializers.Serializer):
    index = serializers.IntegerField()
    clean_word = serializers.CharField()
    input_word = serializers.CharField()
    reference = serializers.ListField(child=serializers.CharField())
    hypothesis = serializers.ListField(child=serializers.CharField(), allow_empty=True)
    correct = serializers.BooleanField()
    distance = serializers.IntegerField()
    truncated = serializers.BooleanField()
